#include "crossview/error.hpp"

namespace crossview {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MalformedFile: return "MalformedFile";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::NotSymmetric: return "NotSymmetric";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::BadTargetDim: return "BadTargetDim";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::MalformedModel: return "MalformedModel";
    case ErrorCode::EmptyGallery: return "EmptyGallery";
    case ErrorCode::MissingGroundTruth: return "MissingGroundTruth";
    case ErrorCode::UnknownImage: return "UnknownImage";
    case ErrorCode::UpstreamFailure: return "UpstreamFailure";
    case ErrorCode::RateLimited: return "RateLimited";
    case ErrorCode::NoLocationFound: return "NoLocationFound";
    case ErrorCode::PlaceNotFound: return "PlaceNotFound";
    case ErrorCode::AmbiguousPlace: return "AmbiguousPlace";
    case ErrorCode::TileUnavailable: return "TileUnavailable";
    case ErrorCode::EmptyContext: return "EmptyContext";
    case ErrorCode::MissingQueryEmbedding: return "MissingQueryEmbedding";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

bool is_upstream(ErrorCode code) noexcept {
  return code == ErrorCode::UpstreamFailure || code == ErrorCode::RateLimited;
}

namespace {
std::string decorate(ErrorCode code, const std::string& message,
                     std::optional<std::size_t> record) {
  std::string out(to_string(code));
  if (record) out += " (record " + std::to_string(*record) + ")";
  out += ": ";
  out += message;
  return out;
}
}  // namespace

Error::Error(ErrorCode code, const std::string& message,
             std::optional<std::size_t> record)
    : std::runtime_error(decorate(code, message, record)),
      code_(code),
      record_(record) {}

}  // namespace crossview
