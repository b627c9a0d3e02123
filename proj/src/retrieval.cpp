#include "crossview/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <json.hpp>
#include <numeric>
#include <thread>

#include "crossview/error.hpp"
#include "io_util.hpp"

namespace crossview {

namespace {

double cosine_from_parts(double ab, double na, double nb) {
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(ab / (na * nb), -1.0, 1.0);
}

void require_finite(std::span<const float> v) {
  for (float x : v) {
    if (!std::isfinite(x)) throw Error(ErrorCode::NonFiniteInput, "vector has non-finite entries");
  }
}

std::string format_score(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", s);
  std::string out(buf);
  if (out == "-0.000000") out = "0.000000";
  return out;
}

}  // namespace

double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

double l2_norm(std::span<const float> v) { return std::sqrt(dot(v, v)); }

std::vector<float> l2_normalize(std::span<const float> v) {
  require_finite(v);
  const double n = l2_norm(v);
  std::vector<float> out(v.begin(), v.end());
  if (n == 0.0) return out;
  for (float& x : out) x = static_cast<float>(x / n);
  return out;
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::DimensionMismatch, "cosine_similarity on vectors of length " +
                                                  std::to_string(a.size()) + " and " +
                                                  std::to_string(b.size()));
  }
  return cosine_from_parts(dot(a, b), l2_norm(a), l2_norm(b));
}

GalleryIndex::GalleryIndex(const EmbeddingCollection& gallery) : gallery_(&gallery) {
  norms_.reserve(gallery.size());
  for (const auto& r : gallery.records) norms_.push_back(l2_norm(r.vector));
}

RankedList GalleryIndex::search(const EmbeddingRecord& query, std::size_t k) const {
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
  if (gallery_->empty()) throw Error(ErrorCode::EmptyGallery, "gallery has no records");
  if (query.vector.size() != gallery_->dim) {
    throw Error(ErrorCode::DimensionMismatch, "query '" + query.id + "' has dim " +
                                                  std::to_string(query.vector.size()) +
                                                  ", gallery dim is " +
                                                  std::to_string(gallery_->dim));
  }
  require_finite(query.vector);

  const auto& recs = gallery_->records;
  const double qn = l2_norm(query.vector);
  std::vector<std::pair<double, std::size_t>> scored(recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    scored[i] = {cosine_from_parts(dot(query.vector, recs[i].vector), qn, norms_[i]), i};
  }
  const auto better = [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return recs[a.second].id < recs[b.second].id;
  };
  const std::size_t take = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take),
                    scored.end(), better);

  RankedList out;
  out.query_id = query.id;
  out.hits.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    out.hits.push_back({recs[scored[i].second].id, scored[i].first});
  }
  return out;
}

RankedList search_topk(const EmbeddingRecord& query, const EmbeddingCollection& gallery,
                       std::size_t k) {
  return GalleryIndex(gallery).search(query, k);
}

std::vector<RankedList> batch_search(const EmbeddingCollection& queries,
                                     const EmbeddingCollection& gallery, std::size_t k,
                                     std::size_t parallelism) {
  if (queries.empty()) return {};
  if (queries.dim != gallery.dim) {
    throw Error(ErrorCode::DimensionMismatch, "query dim " + std::to_string(queries.dim) +
                                                  " != gallery dim " + std::to_string(gallery.dim));
  }
  const GalleryIndex index(gallery);
  std::vector<RankedList> out(queries.size());
  std::vector<std::exception_ptr> errors(queries.size());

  if (parallelism == 0) parallelism = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t workers = std::min(parallelism, queries.size());
  const std::size_t chunk = (queries.size() + workers - 1) / workers;

  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      try {
        out[i] = index.search(queries.records[i], k);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    run(0, queries.size());
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(queries.size(), begin + chunk);
      if (begin < end) pool.emplace_back(run, begin, end);
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::string results_to_jsonl(std::span<const RankedList> results) {
  std::string out;
  for (const auto& r : results) {
    out += "{\"query_id\":" + nlohmann::json(r.query_id).dump() + ",\"hits\":[";
    for (std::size_t i = 0; i < r.hits.size(); ++i) {
      if (i) out += ',';
      out += "{\"id\":" + nlohmann::json(r.hits[i].id).dump() +
             ",\"score\":" + format_score(r.hits[i].score) + "}";
    }
    out += "]}\n";
  }
  return out;
}

std::vector<RankedList> results_from_jsonl(const std::string& text) {
  std::vector<RankedList> out;
  std::size_t line_no = 0;
  for (auto line : detail::split(text, '\n')) {
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      const auto doc = nlohmann::json::parse(line);
      RankedList r;
      r.query_id = doc.at("query_id").get<std::string>();
      for (const auto& h : doc.at("hits")) {
        r.hits.push_back({h.at("id").get<std::string>(), h.at("score").get<double>()});
      }
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MalformedFile, std::string("results line: ") + e.what(), line_no);
    }
    ++line_no;
  }
  return out;
}

}  // namespace crossview
