#include "mvas/common.hpp"
#include "mvas/geom.hpp"

namespace mvas {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BehindCamera: return "behind-camera";
    case ErrorCode::UndefinedAzimuth: return "undefined-azimuth";
    case ErrorCode::EmptyInput: return "empty-input";
    case ErrorCode::DegenerateNormal: return "degenerate-normal";
    case ErrorCode::DegenerateRig: return "degenerate-rig";
    case ErrorCode::NumericFailure: return "numeric-failure";
    case ErrorCode::InvalidStart: return "invalid-start";
    case ErrorCode::UnstableIntersection: return "unstable-intersection";
    case ErrorCode::Render: return "render";
    case ErrorCode::Io: return "io";
    case ErrorCode::Format: return "format";
    case ErrorCode::Dataset: return "dataset";
    case ErrorCode::Metric: return "metric";
    case ErrorCode::InvalidSpec: return "invalid-spec";
  }
  return "unknown";
}

const char* to_string(RankClass c) {
  switch (c) {
    case RankClass::Line: return "Line";
    case RankClass::TangentPlane: return "TangentPlane";
    case RankClass::FullSpace: return "FullSpace";
  }
  return "unknown";
}

}  // namespace mvas
