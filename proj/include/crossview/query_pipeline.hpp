#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "crossview/embedding_store.hpp"
#include "crossview/error.hpp"
#include "crossview/geo_clients.hpp"
#include "crossview/retrieval.hpp"
#include "crossview/whitening.hpp"

namespace crossview {

inline constexpr std::string_view kPromptTemplateVersion = "location-v1";

/// Instruction block placed ahead of the collected context.
std::string_view location_prompt_template();

/// Line separating the context of consecutive images.
inline constexpr std::string_view kContextDelimiter = "-----";

inline constexpr std::size_t kDefaultPromptBudget = 12000;

struct AggregatedPrompt {
  std::string text;
  bool truncated = false;
  std::size_t dropped_chars = 0;
};

/// Template, then per image its snippets one per line, images separated by
/// kContextDelimiter. The result is cut at `char_budget` bytes (backing off
/// to a UTF-8 boundary). Throws EmptyContext when no snippet has text.
AggregatedPrompt aggregate_context(std::span<const ContextDocuments> docs,
                                   std::size_t char_budget = kDefaultPromptBudget);

/// Fixed stage order of a query trace.
inline constexpr std::string_view kStageSearch = "search";
inline constexpr std::string_view kStageAggregate = "aggregate";
inline constexpr std::string_view kStageInfer = "infer";
inline constexpr std::string_view kStageGeocode = "geocode";
inline constexpr std::string_view kStageTile = "tile";
/// Summary key for failures after the tile exists (embedding lookup, search).
inline constexpr std::string_view kStageRetrieve = "retrieve";

struct StageOutcome {
  std::string stage;
  double duration_ms = 0.0;
  bool ok = true;
  std::optional<ErrorCode> error;
  std::string message;
};

struct SatelliteQuery {
  std::string source_image;
  std::optional<PlaceName> place;
  std::optional<GeoCoordinate> coordinate;
  std::optional<SatelliteTile> tile;
  std::vector<StageOutcome> trace;

  bool ok() const noexcept { return !trace.empty() && trace.back().ok && tile.has_value(); }
  /// Name of the stage that failed, if one did.
  std::optional<std::string> failed_stage() const;
};

struct PipelineOptions {
  TileSpec tile;
  /// Where fetched tiles are written.
  std::filesystem::path tile_dir;
  std::size_t prompt_budget = kDefaultPromptBudget;
};

/// Runs search -> aggregate -> infer -> geocode -> tile. The first image is
/// the query's source; additional images contribute context to the same
/// prompt. Stage errors end the trace; only configuration errors (ConfigError,
/// InvalidArgument) propagate as exceptions.
SatelliteQuery generate_satellite_query(std::span<const std::string> image_refs,
                                        const ServiceClients& clients,
                                        const PipelineOptions& options);
SatelliteQuery generate_satellite_query(const std::string& image_ref, const ServiceClients& clients,
                                        const PipelineOptions& options);

/// Gallery (whitened once when a model is given) plus the precomputed tile
/// embeddings, keyed by tile_key.
class TileRetriever {
 public:
  TileRetriever(const EmbeddingCollection& gallery, const EmbeddingCollection& tile_embeddings,
                std::optional<WhiteningModel> model = std::nullopt);
  TileRetriever(const TileRetriever&) = delete;
  TileRetriever& operator=(const TileRetriever&) = delete;

  /// Throws MissingQueryEmbedding when the tile has no embedding.
  RankedList retrieve(const SatelliteTile& tile, std::size_t k) const;

  const EmbeddingCollection& gallery() const noexcept { return gallery_; }

 private:
  EmbeddingCollection gallery_;
  EmbeddingCollection tile_embeddings_;
  std::unordered_map<std::string, std::size_t> by_key_;
  std::optional<WhiteningModel> model_;
  GalleryIndex index_;
};

struct LocatedQuery {
  SatelliteQuery query;
  std::optional<RankedList> hits;
  std::optional<ErrorCode> retrieval_error;
  std::string retrieval_message;

  bool ok() const noexcept { return query.ok() && hits.has_value(); }
};

LocatedQuery locate_and_retrieve(std::span<const std::string> image_refs,
                                 const ServiceClients& clients, const PipelineOptions& options,
                                 const TileRetriever& retriever, std::size_t k);

struct QueryGroup {
  std::string group_id;
  std::vector<std::string> image_refs;
};

/// JSONL {"group_id", "image_refs": [...]}.
std::vector<QueryGroup> load_query_manifest(const std::filesystem::path& path);

struct StageFailureSummary {
  std::size_t total = 0;
  std::size_t succeeded = 0;
  std::map<std::string, std::size_t> failures;

  friend bool operator==(const StageFailureSummary&, const StageFailureSummary&) = default;
};

struct GroupResult {
  std::string group_id;
  std::vector<std::string> images_used;
  LocatedQuery located;
};

struct QuerySetResult {
  std::vector<GroupResult> results;
  StageFailureSummary summary;
};

struct QuerySetOptions {
  PipelineOptions pipeline;
  /// Use every image of a group as context instead of only the first.
  bool all_images = false;
  std::size_t parallelism = 1;
  std::size_t k = 10;
};

/// One pipeline execution per group, results in group order. Retrieval runs
/// when `retriever` is non-null.
QuerySetResult run_query_set(std::span<const QueryGroup> groups, const ServiceClients& clients,
                             const QuerySetOptions& options, const TileRetriever* retriever);

std::string satellite_query_to_json(const SatelliteQuery& q);
std::string group_result_to_json(const GroupResult& r);
std::string summary_to_json(const StageFailureSummary& s);

}  // namespace crossview
