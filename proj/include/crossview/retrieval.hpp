#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "crossview/embedding_store.hpp"

namespace crossview {

struct Hit {
  std::string id;
  double score = 0.0;

  friend bool operator==(const Hit&, const Hit&) = default;
};

/// Hits ordered by descending score, ties by ascending gallery id.
struct RankedList {
  std::string query_id;
  std::vector<Hit> hits;

  friend bool operator==(const RankedList&, const RankedList&) = default;
};

double dot(std::span<const float> a, std::span<const float> b);
double l2_norm(std::span<const float> v);

/// Zero vectors map to zero vectors. Throws NonFiniteInput.
std::vector<float> l2_normalize(std::span<const float> v);

/// a·b / (‖a‖‖b‖) clamped to [-1, 1]; 0 when either norm is 0.
/// Throws DimensionMismatch on unequal lengths.
double cosine_similarity(std::span<const float> a, std::span<const float> b);

/// Read-only gallery view with per-record norms computed once, shared by
/// every search against it.
class GalleryIndex {
 public:
  explicit GalleryIndex(const EmbeddingCollection& gallery);

  const EmbeddingCollection& collection() const noexcept { return *gallery_; }
  std::size_t dim() const noexcept { return gallery_->dim; }
  std::size_t size() const noexcept { return gallery_->size(); }

  RankedList search(const EmbeddingRecord& query, std::size_t k) const;

 private:
  const EmbeddingCollection* gallery_;
  std::vector<double> norms_;
};

RankedList search_topk(const EmbeddingRecord& query, const EmbeddingCollection& gallery,
                       std::size_t k);

/// Output order follows query order; results do not depend on `parallelism`.
/// parallelism 0 means one worker per hardware thread.
std::vector<RankedList> batch_search(const EmbeddingCollection& queries,
                                     const EmbeddingCollection& gallery, std::size_t k,
                                     std::size_t parallelism);

/// JSONL: {"query_id": ..., "hits": [{"id": ..., "score": ...}]}, scores
/// printed with six decimals.
std::string results_to_jsonl(std::span<const RankedList> results);
std::vector<RankedList> results_from_jsonl(const std::string& text);

}  // namespace crossview
