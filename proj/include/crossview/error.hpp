#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace crossview {

enum class ErrorCode {
  // embedding_store
  MalformedFile,
  DimensionMismatch,
  DuplicateId,
  NonFiniteValue,
  IoFailure,
  // linalg / whitening
  NotSymmetric,
  NoConvergence,
  InsufficientSamples,
  BadTargetDim,
  NonFiniteInput,
  MalformedModel,
  // retrieval / evaluation
  EmptyGallery,
  MissingGroundTruth,
  // service clients
  UnknownImage,
  UpstreamFailure,
  RateLimited,
  NoLocationFound,
  PlaceNotFound,
  AmbiguousPlace,
  TileUnavailable,
  // pipeline
  EmptyContext,
  MissingQueryEmbedding,
  // generic
  InvalidArgument,
  ConfigError,
};

std::string_view to_string(ErrorCode code) noexcept;

/// True for failures that originate in an external service (retries exhausted,
/// throttling, non-2xx responses). The CLI maps these to exit code 2.
bool is_upstream(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message,
        std::optional<std::size_t> record = std::nullopt);

  ErrorCode code() const noexcept { return code_; }
  /// Record (or row) index the error refers to, when it refers to one.
  std::optional<std::size_t> record() const noexcept { return record_; }

 private:
  ErrorCode code_;
  std::optional<std::size_t> record_;
};

}  // namespace crossview
