#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crossview/embedding_store.hpp"
#include "crossview/geo.hpp"
#include "crossview/retrieval.hpp"

namespace crossview {

struct GroundTruth {
  /// query id -> relevant gallery label(s)
  std::map<std::string, std::vector<std::string>> query_labels;
  /// gallery id -> label
  std::map<std::string, std::string> gallery_labels;
};

/// Query labels from `queries`, gallery labels from `gallery`.
GroundTruth ground_truth_from_collections(const EmbeddingCollection& queries,
                                          const EmbeddingCollection& gallery);

/// Query file: JSONL {"query_id", "label"} where label is a string or an
/// array of strings. Gallery file: JSONL {"id", "label"}.
GroundTruth load_ground_truth(const std::filesystem::path& query_labels,
                              const std::filesystem::path& gallery_labels);

/// JSONL {"id", "lat", "lon"}.
std::map<std::string, GeoCoordinate> load_coordinates(const std::filesystem::path& path);
std::string coordinates_to_jsonl(const std::map<std::string, GeoCoordinate>& coords);

/// Mean over queries of (relevant hits in top k) / (relevant gallery items).
/// With one relevant item per query this is the hit-rate at k.
double recall_at_k(std::span<const RankedList> results, const GroundTruth& gt, std::size_t k);

/// max(1, floor(gallery_size / 100)).
std::size_t k_for_one_percent(std::size_t gallery_size);

struct RecallAt {
  std::size_t k = 0;
  double value = 0.0;

  friend bool operator==(const RecallAt&, const RecallAt&) = default;
};

struct ThresholdAccuracy {
  double threshold_km = 0.0;
  double accuracy_percent = 0.0;
  std::size_t matched = 0;

  friend bool operator==(const ThresholdAccuracy&, const ThresholdAccuracy&) = default;
};

struct LocalizationReport {
  std::size_t query_count = 0;
  std::vector<ThresholdAccuracy> rows;

  friend bool operator==(const LocalizationReport&, const LocalizationReport&) = default;
};

/// Every query in `truth` is in the denominator; queries without a
/// prediction are misses at every threshold. Distances are inclusive (<= t).
LocalizationReport localization_accuracy(const std::map<std::string, GeoCoordinate>& predicted,
                                         const std::map<std::string, GeoCoordinate>& truth,
                                         std::span<const double> thresholds_km);

struct EvaluationReport {
  std::size_t query_count = 0;
  std::size_t gallery_size = 0;
  std::vector<RecallAt> recalls;
  std::size_t k_one_percent = 0;
  double r_at_one_percent = 0.0;
  std::optional<LocalizationReport> localization;

  friend bool operator==(const EvaluationReport&, const EvaluationReport&) = default;
};

EvaluationReport evaluate_run(std::span<const RankedList> results, const GroundTruth& gt,
                              std::span<const std::size_t> ks, std::size_t gallery_size);

std::string report_to_json(const EvaluationReport& report);
EvaluationReport report_from_json(const std::string& text);

/// Aligned text tables, recall values as percentages with two decimals.
std::string format_recall_table(const EvaluationReport& report, bool include_one_percent = true);
std::string format_localization_table(const LocalizationReport& report);

}  // namespace crossview
