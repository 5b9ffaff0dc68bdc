#include "mvas/io.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace mvas {

namespace {

using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
}

class Writer {
 public:
  void magic(const char* m) { buf_.append(m, std::strlen(m)); }
  template <typename T>
  void put(T v) {
    const T le = to_little(v);
    buf_.append(reinterpret_cast<const char*>(&le), sizeof(T));
  }
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, fs::path path) : data_(std::move(data)), path_(std::move(path)) {}

  void magic(const char* m) {
    const std::size_t n = std::strlen(m);
    if (data_.size() < n || data_.compare(0, n, m) != 0) fail("bad magic, expected " + std::string(m));
    pos_ = n;
  }
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return to_little(v);
  }
  void bytes(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  void finish() const {
    if (pos_ != data_.size()) fail("trailing bytes");
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorCode::Format, path_.string() + ": " + what);
  }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) fail("truncated file");
  }

  std::string data_;
  fs::path path_;
  std::size_t pos_ = 0;
};

std::string read_binary(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_binary(const fs::path& path, const std::string& data) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw Error(ErrorCode::Io, "write failed: " + path.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot write " + path.string() + ": " + ec.message());
}

void check_dims(Reader& r, std::uint32_t w, std::uint32_t h) {
  if (w == 0 || h == 0 || w > 1u << 16 || h > 1u << 16) r.fail("implausible image size");
}

template <typename Map>
void write_float_map(const fs::path& path, const char* magic, bool versioned, const Map& map) {
  Writer w;
  w.magic(magic);
  if (versioned) w.put<std::uint32_t>(1);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(map.width()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(map.height()));
  for (const auto v : map.data()) w.put<float>(static_cast<float>(v));
  write_binary(path, w.str());
}

template <typename Map>
Map read_float_map(const fs::path& path, const char* magic, bool versioned) {
  Reader r(read_binary(path), path);
  r.magic(magic);
  if (versioned) {
    const auto version = r.get<std::uint32_t>();
    if (version != 1) r.fail("unsupported version " + std::to_string(version));
  }
  const auto w = r.get<std::uint32_t>();
  const auto h = r.get<std::uint32_t>();
  check_dims(r, w, h);
  Map map(static_cast<int>(w), static_cast<int>(h));
  for (auto& v : map.data()) v = r.get<float>();
  r.finish();
  return map;
}

json camera_json(const Camerad& c) {
  json j;
  j["fx"] = c.intrinsics.fx;
  j["fy"] = c.intrinsics.fy;
  j["cx"] = c.intrinsics.cx;
  j["cy"] = c.intrinsics.cy;
  j["width"] = c.intrinsics.width;
  j["height"] = c.intrinsics.height;
  std::vector<double> R(9), t(3);
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) R[static_cast<std::size_t>(3 * i + k)] = c.pose.R(i, k);
    t[static_cast<std::size_t>(i)] = c.pose.t[i];
  }
  j["R"] = R;
  j["t"] = t;
  return j;
}

Camerad camera_from(const json& j) {
  Camerad c;
  c.intrinsics.fx = j.at("fx").get<double>();
  c.intrinsics.fy = j.at("fy").get<double>();
  c.intrinsics.cx = j.at("cx").get<double>();
  c.intrinsics.cy = j.at("cy").get<double>();
  c.intrinsics.width = j.at("width").get<int>();
  c.intrinsics.height = j.at("height").get<int>();
  const auto R = j.at("R").get<std::vector<double>>();
  const auto t = j.at("t").get<std::vector<double>>();
  if (R.size() != 9 || t.size() != 3) throw Error(ErrorCode::Format, "camera: R needs 9 and t 3 entries");
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) c.pose.R(i, k) = R[static_cast<std::size_t>(3 * i + k)];
    c.pose.t[i] = t[static_cast<std::size_t>(i)];
  }
  if (!(c.intrinsics.fx > 0 && c.intrinsics.fy > 0) || c.intrinsics.width <= 0 ||
      c.intrinsics.height <= 0) {
    throw Error(ErrorCode::Format, "camera: non-positive focal length or size");
  }
  const double orth = (c.pose.R * c.pose.R.transpose() - Mat3d::Identity()).norm();
  if (!(orth < 1e-6) || !(c.pose.R.determinant() > 0.0)) {
    throw Error(ErrorCode::Format, "camera: R is not a rotation");
  }
  return c;
}

}  // namespace

std::string read_text(const fs::path& path) { return read_binary(path); }
void write_text(const fs::path& path, const std::string& text) { write_binary(path, text); }

void write_azimuth(const fs::path& path, const AzimuthMap& map) {
  write_float_map(path, "AZMP", true, map);
}
AzimuthMap read_azimuth(const fs::path& path) {
  return read_float_map<AzimuthMap>(path, "AZMP", true);
}

void write_depth(const fs::path& path, const DepthMap& depth) {
  write_float_map(path, "DEP1", false, depth);
}
DepthMap read_depth(const fs::path& path) { return read_float_map<DepthMap>(path, "DEP1", false); }

void write_mask(const fs::path& path, const SilhouetteMask& mask) {
  Writer w;
  w.magic("MSK1");
  w.put<std::uint32_t>(static_cast<std::uint32_t>(mask.width()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(mask.height()));
  w.bytes(mask.data().data(), mask.size());
  write_binary(path, w.str());
}

SilhouetteMask read_mask(const fs::path& path) {
  Reader r(read_binary(path), path);
  r.magic("MSK1");
  const auto w = r.get<std::uint32_t>();
  const auto h = r.get<std::uint32_t>();
  check_dims(r, w, h);
  SilhouetteMask mask(static_cast<int>(w), static_cast<int>(h));
  r.bytes(mask.data().data(), mask.size());
  r.finish();
  for (const auto v : mask.data()) {
    if (v > 1) r.fail("mask values must be 0 or 1");
  }
  return mask;
}

void write_normals(const fs::path& path, const NormalMap& normals) {
  Writer w;
  w.magic("NRM3");
  w.put<std::uint32_t>(static_cast<std::uint32_t>(normals.width()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(normals.height()));
  for (const auto& n : normals.data()) {
    for (int k = 0; k < 3; ++k) w.put<float>(static_cast<float>(n[k]));
  }
  write_binary(path, w.str());
}

NormalMap read_normals(const fs::path& path) {
  Reader r(read_binary(path), path);
  r.magic("NRM3");
  const auto w = r.get<std::uint32_t>();
  const auto h = r.get<std::uint32_t>();
  check_dims(r, w, h);
  NormalMap normals(static_cast<int>(w), static_cast<int>(h));
  for (auto& n : normals.data()) {
    for (int k = 0; k < 3; ++k) n[k] = r.get<float>();
  }
  r.finish();
  return normals;
}

std::string cameras_to_json(const std::vector<Camerad>& cameras) {
  json arr = json::array();
  for (const auto& c : cameras) arr.push_back(camera_json(c));
  return arr.dump(2) + "\n";
}

std::vector<Camerad> cameras_from_json(const std::string& text) {
  try {
    const json arr = json::parse(text);
    if (!arr.is_array()) throw Error(ErrorCode::Format, "cameras.json: expected an array");
    std::vector<Camerad> out;
    for (const auto& j : arr) out.push_back(camera_from(j));
    return out;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, std::string("cameras.json: ") + e.what());
  }
}

void write_cameras(const fs::path& path, const std::vector<Camerad>& cameras) {
  write_text(path, cameras_to_json(cameras));
}

std::vector<Camerad> read_cameras(const fs::path& path) {
  try {
    return cameras_from_json(read_text(path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Format) throw Error(ErrorCode::Format, path.string() + ": " + e.what());
    throw;
  }
}

void write_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  const Architecture& a = ckpt.params.arch();
  Writer w;
  w.magic("MVASCKPT");
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::int32_t>(a.num_layers);
  w.put<std::int32_t>(a.width);
  w.put<std::int32_t>(a.frequencies);
  w.put<std::int32_t>(a.skip_layer);
  w.put<double>(a.beta);
  w.put<double>(a.init_radius);
  w.put<std::uint64_t>(static_cast<std::uint64_t>(ckpt.params.size()));
  for (Eigen::Index i = 0; i < ckpt.params.size(); ++i) w.put<double>(ckpt.params.flat()[i]);
  w.put<std::int64_t>(ckpt.iteration);
  w.put<std::int32_t>(ckpt.epoch);
  w.put<std::uint8_t>(ckpt.normalization ? 1 : 0);
  if (ckpt.normalization) {
    for (int k = 0; k < 3; ++k) w.put<double>(ckpt.normalization->offset[k]);
    w.put<double>(ckpt.normalization->scale);
    w.put<double>(ckpt.normalization->scale_ratio);
  }
  write_binary(path, w.str());
}

Checkpoint read_checkpoint(const fs::path& path) {
  Reader r(read_binary(path), path);
  r.magic("MVASCKPT");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    r.fail("checkpoint version " + std::to_string(version) + ", expected " +
           std::to_string(kCheckpointVersion));
  }
  Architecture a;
  a.num_layers = r.get<std::int32_t>();
  a.width = r.get<std::int32_t>();
  a.frequencies = r.get<std::int32_t>();
  a.skip_layer = r.get<std::int32_t>();
  a.beta = r.get<double>();
  a.init_radius = r.get<double>();
  try {
    a.validate();
  } catch (const Error& e) {
    r.fail(e.what());
  }
  const auto count = r.get<std::uint64_t>();
  if (count != static_cast<std::uint64_t>(a.parameter_count())) r.fail("parameter count mismatch");
  Checkpoint ckpt;
  ckpt.params = FieldParams(a);
  for (Eigen::Index i = 0; i < ckpt.params.size(); ++i) ckpt.params.flat()[i] = r.get<double>();
  ckpt.iteration = r.get<std::int64_t>();
  ckpt.epoch = r.get<std::int32_t>();
  const auto has_norm = r.get<std::uint8_t>();
  if (has_norm > 1) r.fail("bad normalization flag");
  if (has_norm) {
    Normalization<double> n;
    for (int k = 0; k < 3; ++k) n.offset[k] = r.get<double>();
    n.scale = r.get<double>();
    n.scale_ratio = r.get<double>();
    ckpt.normalization = n;
  }
  r.finish();
  return ckpt;
}

void write_obj(const fs::path& path, const Mesh& mesh) {
  std::ostringstream out;
  out << std::setprecision(9);
  for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& f : mesh.triangles) {
    out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  }
  write_text(path, out.str());
}

Mesh read_obj(const fs::path& path) {
  std::istringstream in(read_text(path));
  Mesh mesh;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      Vec3d v;
      if (!(ls >> v.x() >> v.y() >> v.z())) {
        throw Error(ErrorCode::Format, path.string() + ":" + std::to_string(lineno) + ": bad vertex");
      }
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      Eigen::Vector3i f;
      for (int k = 0; k < 3; ++k) {
        std::string tok;
        if (!(ls >> tok)) {
          throw Error(ErrorCode::Format, path.string() + ":" + std::to_string(lineno) + ": bad face");
        }
        // accept v, v/vt, v//vn
        try {
          f[k] = std::stoi(tok.substr(0, tok.find('/'))) - 1;
        } catch (const std::exception&) {
          throw Error(ErrorCode::Format, path.string() + ":" + std::to_string(lineno) + ": bad face");
        }
      }
      mesh.triangles.push_back(f);
    }
  }
  const int nv = static_cast<int>(mesh.vertices.size());
  for (const auto& f : mesh.triangles) {
    if ((f.array() < 0).any() || (f.array() >= nv).any()) {
      throw Error(ErrorCode::Format, path.string() + ": face index out of range");
    }
  }
  return mesh;
}

}  // namespace mvas
