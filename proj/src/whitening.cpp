#include "crossview/whitening.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "io_util.hpp"

namespace crossview {

using nlohmann::json;

namespace {

constexpr int kModelFormatVersion = 1;

void check_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw Error(ErrorCode::NonFiniteInput, std::string(what) + " has non-finite entries");
  }
}

std::vector<double> inverse_sqrt_scales(const WhiteningModel& m) {
  std::vector<double> s(m.k);
  for (std::size_t i = 0; i < m.k; ++i) {
    const double denom = m.eigenvalues[i] + m.epsilon;
    s[i] = denom > 0.0 ? 1.0 / std::sqrt(denom) : 0.0;
  }
  return s;
}

template <typename T>
std::vector<double> transform(const WhiteningModel& m, std::span<const T> v,
                              std::span<const double> scales) {
  if (v.size() != m.dim) {
    throw Error(ErrorCode::DimensionMismatch,
                "input has " + std::to_string(v.size()) + " components, model expects " +
                    std::to_string(m.dim));
  }
  std::vector<double> centered(m.dim);
  for (std::size_t j = 0; j < m.dim; ++j) {
    const double x = static_cast<double>(v[j]);
    if (!std::isfinite(x)) throw Error(ErrorCode::NonFiniteInput, "input has non-finite entries");
    centered[j] = x - m.mean[j];
  }
  std::vector<double> out(m.k);
  for (std::size_t i = 0; i < m.k; ++i) {
    const auto w = m.components.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < m.dim; ++j) acc += w[j] * centered[j];
    out[i] = acc * scales[i];
  }
  if (m.renormalize) {
    double norm = 0.0;
    for (double x : out) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (double& x : out) x /= norm;
    }
  }
  return out;
}

}  // namespace

WhiteningModel fit_whitening(const Matrix& x, const WhiteningOptions& options) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  if (n < 2) throw Error(ErrorCode::InsufficientSamples, "whitening needs at least 2 samples");
  if (d == 0) throw Error(ErrorCode::DimensionMismatch, "input has zero columns");
  if (options.target_dim == 0 || options.target_dim > d) {
    throw Error(ErrorCode::BadTargetDim, "target dimension " + std::to_string(options.target_dim) +
                                             " must be in [1, " + std::to_string(d) + "]");
  }
  if (options.epsilon && (!std::isfinite(*options.epsilon) || *options.epsilon < 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "epsilon must be finite and non-negative");
  }
  check_finite(x.data(), "embedding matrix");

  WhiteningModel m;
  m.dim = d;
  m.k = options.target_dim;
  m.renormalize = options.renormalize;
  m.mean.assign(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = x.row(r);
    for (std::size_t j = 0; j < d; ++j) m.mean[j] += row[j];
  }
  for (double& mu : m.mean) mu /= static_cast<double>(n);

  Matrix cov(d, d);
  std::vector<double> centered(d);
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = x.row(r);
    for (std::size_t j = 0; j < d; ++j) centered[j] = row[j] - m.mean[j];
    for (std::size_t i = 0; i < d; ++i) {
      const double ci = centered[i];
      auto out = cov.row(i);
      for (std::size_t j = i; j < d; ++j) out[j] += ci * centered[j];
    }
  }
  const double divisor = static_cast<double>(n - 1);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      cov(i, j) /= divisor;
      cov(j, i) = cov(i, j);
    }
  }

  const EigenResult eig = symmetric_eigen(cov);
  m.eigenvalues.resize(m.k);
  m.components = Matrix(m.k, d);
  for (std::size_t i = 0; i < m.k; ++i) {
    // Rounding can push null-space eigenvalues slightly below zero.
    m.eigenvalues[i] = std::max(0.0, eig.values[i]);
    std::copy_n(eig.vectors.row(i).begin(), d, m.components.row(i).begin());
  }
  m.epsilon = options.epsilon.value_or(kDefaultRelativeEpsilon * std::max(0.0, eig.values.front()));
  return m;
}

WhiteningModel fit_whitening(const EmbeddingCollection& gallery, const WhiteningOptions& options) {
  Matrix x(gallery.size(), gallery.dim);
  for (std::size_t r = 0; r < gallery.size(); ++r) {
    const auto& v = gallery.records[r].vector;
    if (v.size() != gallery.dim) {
      throw Error(ErrorCode::DimensionMismatch, "record vector length differs from collection dim", r);
    }
    std::copy(v.begin(), v.end(), x.row(r).begin());
  }
  return fit_whitening(x, options);
}

std::vector<double> apply_whitening(const WhiteningModel& m, std::span<const double> v) {
  const auto scales = inverse_sqrt_scales(m);
  return transform(m, v, scales);
}

std::vector<float> apply_whitening(const WhiteningModel& m, std::span<const float> v) {
  const auto scales = inverse_sqrt_scales(m);
  const auto out = transform(m, v, scales);
  return {out.begin(), out.end()};
}

Matrix apply_whitening(const WhiteningModel& m, const Matrix& x) {
  const auto scales = inverse_sqrt_scales(m);
  Matrix out(x.rows(), m.k);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto z = transform(m, x.row(r), scales);
    std::copy(z.begin(), z.end(), out.row(r).begin());
  }
  return out;
}

EmbeddingCollection apply_whitening(const WhiteningModel& m, const EmbeddingCollection& c) {
  if (c.dim != m.dim) {
    throw Error(ErrorCode::DimensionMismatch, "collection dim " + std::to_string(c.dim) +
                                                  " != model dim " + std::to_string(m.dim));
  }
  const auto scales = inverse_sqrt_scales(m);
  EmbeddingCollection out;
  out.dim = m.k;
  out.role = c.role;
  out.records.reserve(c.size());
  for (std::size_t r = 0; r < c.size(); ++r) {
    const auto& src = c.records[r];
    const auto z = transform(m, std::span<const float>(src.vector), scales);
    out.records.push_back({src.id, src.label, std::vector<float>(z.begin(), z.end()), src.geo});
  }
  return out;
}

void validate_model(const WhiteningModel& m) {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::MalformedModel, why); };
  if (m.dim == 0) fail("dim must be positive");
  if (m.k == 0 || m.k > m.dim) fail("k must be in [1, dim]");
  if (m.mean.size() != m.dim) fail("mean length must equal dim");
  if (m.eigenvalues.size() != m.k) fail("eigenvalue count must equal k");
  if (m.components.rows() != m.k || m.components.cols() != m.dim) fail("components must be k x dim");
  if (!std::isfinite(m.epsilon) || m.epsilon < 0.0) fail("epsilon must be finite and non-negative");
  for (double x : m.mean) {
    if (!std::isfinite(x)) fail("mean has non-finite entries");
  }
  for (double x : m.components.data()) {
    if (!std::isfinite(x)) fail("components have non-finite entries");
  }
  for (std::size_t i = 0; i < m.k; ++i) {
    if (!std::isfinite(m.eigenvalues[i]) || m.eigenvalues[i] < 0.0) fail("eigenvalues must be >= 0");
    if (i > 0 && m.eigenvalues[i] > m.eigenvalues[i - 1]) fail("eigenvalues must be descending");
  }
  for (std::size_t i = 0; i < m.k; ++i) {
    for (std::size_t j = i; j < m.k; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < m.dim; ++c) dot += m.components(i, c) * m.components(j, c);
      const double expected = i == j ? 1.0 : 0.0;
      if (std::abs(dot - expected) > 1e-6) {
        fail("component rows " + std::to_string(i) + " and " + std::to_string(j) +
             " are not orthonormal");
      }
    }
  }
}

std::string model_to_json(const WhiteningModel& m) {
  validate_model(m);
  json components = json::array();
  for (std::size_t i = 0; i < m.k; ++i) {
    const auto row = m.components.row(i);
    components.push_back(std::vector<double>(row.begin(), row.end()));
  }
  json doc = {
      {"format_version", kModelFormatVersion},
      {"dim", m.dim},
      {"k", m.k},
      {"epsilon", m.epsilon},
      {"renormalize", m.renormalize},
      {"mean", m.mean},
      {"eigenvalues", m.eigenvalues},
      {"components", std::move(components)},
  };
  return doc.dump() + "\n";
}

WhiteningModel model_from_json(const std::string& text) {
  WhiteningModel m;
  try {
    const json doc = json::parse(text);
    if (doc.at("format_version").get<int>() != kModelFormatVersion) {
      throw Error(ErrorCode::MalformedModel, "unsupported format_version");
    }
    m.dim = doc.at("dim").get<std::size_t>();
    m.k = doc.at("k").get<std::size_t>();
    m.epsilon = doc.at("epsilon").get<double>();
    m.renormalize = doc.at("renormalize").get<bool>();
    m.mean = doc.at("mean").get<std::vector<double>>();
    m.eigenvalues = doc.at("eigenvalues").get<std::vector<double>>();
    const auto& rows = doc.at("components");
    if (!rows.is_array() || rows.size() != m.k) {
      throw Error(ErrorCode::MalformedModel, "components must have k rows");
    }
    m.components = Matrix(m.k, m.dim);
    for (std::size_t i = 0; i < m.k; ++i) {
      const auto row = rows[i].get<std::vector<double>>();
      if (row.size() != m.dim) throw Error(ErrorCode::MalformedModel, "component row length != dim");
      std::copy(row.begin(), row.end(), m.components.row(i).begin());
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedModel, e.what());
  }
  validate_model(m);
  return m;
}

void save_model(const WhiteningModel& m, const std::filesystem::path& path) {
  detail::write_file(path, model_to_json(m));
}

WhiteningModel load_model(const std::filesystem::path& path) {
  return model_from_json(detail::read_file(path));
}

}  // namespace crossview
