#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crossview/geo_clients.hpp"

namespace crossview {

struct ManifestEntry {
  PlaceName place;
  GeoCoordinate coordinate;
  /// Paths relative to the output root.
  std::vector<std::string> street_images;
  std::string tile;
  TileProvenance tile_provenance;
};

struct SkippedSeed {
  std::string seed;
  std::string stage;
  std::string error;
  std::string message;
};

struct PairManifest {
  std::string created_at;
  TileSpec tile_spec;
  std::size_t per_place_images = 0;
  std::vector<ManifestEntry> entries;
  std::vector<SkippedSeed> skipped;
};

struct BuildOptions {
  std::size_t per_place_images = 5;
  TileSpec tile;
  std::filesystem::path output_root;
  std::size_t parallelism = 1;
};

/// Seed names from one LLM completion: one per line, list markers and quotes
/// stripped, case/whitespace-insensitive duplicates dropped, at most `count`.
/// Throws NoLocationFound when nothing usable comes back.
std::vector<std::string> expand_seeds(LlmClient& llm, const std::string& prompt, std::size_t count);

/// Per seed: image search by name, download up to the cap of street images,
/// geocode the name, fetch one tile. Failing seeds land in the skip log;
/// entries keep seed order.
PairManifest build_pairs(std::span<const std::string> seeds, const ServiceClients& clients,
                         const BuildOptions& options);

enum class ManifestIssueKind {
  MissingStreetImages,
  MissingTile,
  InvalidCoordinate,
  DuplicatePlace,
  DanglingReference,
};

struct ManifestIssue {
  ManifestIssueKind kind;
  std::size_t entry = 0;
  std::string message;
};

std::string_view to_string(ManifestIssueKind kind) noexcept;

/// Invariants plus referential integrity of every path under `root`.
std::vector<ManifestIssue> validate_manifest(const PairManifest& m, const std::filesystem::path& root);

std::string manifest_to_json(const PairManifest& m);
PairManifest manifest_from_json(const std::string& text);

}  // namespace crossview
