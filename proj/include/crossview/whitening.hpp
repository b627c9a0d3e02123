#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crossview/embedding_store.hpp"
#include "crossview/linalg.hpp"

namespace crossview {

/// PCA-whitening transform: out = (Λ + εI)^{-1/2} · W · (v − μ), optionally
/// L2-normalized afterwards.
struct WhiteningModel {
  std::size_t dim = 0;
  std::size_t k = 0;
  std::vector<double> mean;
  /// k×dim, rows are unit principal directions ordered by descending eigenvalue.
  Matrix components;
  std::vector<double> eigenvalues;
  /// Absolute value added to each eigenvalue under the inverse square root.
  double epsilon = 0.0;
  bool renormalize = true;

  friend bool operator==(const WhiteningModel&, const WhiteningModel&) = default;
};

/// Default regularizer, relative to the largest eigenvalue of the fit.
inline constexpr double kDefaultRelativeEpsilon = 1e-6;

struct WhiteningOptions {
  std::size_t target_dim = 0;
  /// Absolute epsilon. When unset, kDefaultRelativeEpsilon * largest eigenvalue.
  std::optional<double> epsilon;
  bool renormalize = true;
};

/// Fits on the rows of `x` (n samples × d features). The covariance uses the
/// n−1 divisor.
WhiteningModel fit_whitening(const Matrix& x, const WhiteningOptions& options);
WhiteningModel fit_whitening(const EmbeddingCollection& gallery, const WhiteningOptions& options);

std::vector<float> apply_whitening(const WhiteningModel& m, std::span<const float> v);
std::vector<double> apply_whitening(const WhiteningModel& m, std::span<const double> v);
/// Row-wise transform of an n×dim matrix into n×k.
Matrix apply_whitening(const WhiteningModel& m, const Matrix& x);
/// Same ids, labels and geo; vectors replaced by their whitened versions.
EmbeddingCollection apply_whitening(const WhiteningModel& m, const EmbeddingCollection& c);

/// Throws MalformedModel describing the first broken invariant.
void validate_model(const WhiteningModel& m);

std::string model_to_json(const WhiteningModel& m);
WhiteningModel model_from_json(const std::string& text);
void save_model(const WhiteningModel& m, const std::filesystem::path& path);
WhiteningModel load_model(const std::filesystem::path& path);

}  // namespace crossview
