#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "crossview/geo.hpp"

namespace crossview {

struct Snippet {
  std::string url;
  std::string title;
  std::string body;

  friend bool operator==(const Snippet&, const Snippet&) = default;
};

/// Text collected around one image by a reverse image search.
struct ContextDocuments {
  std::string source_image;
  std::vector<Snippet> snippets;
  std::string collected_at;
};

struct PlaceName {
  std::string name;
  std::optional<std::string> confidence_note;

  friend bool operator==(const PlaceName&, const PlaceName&) = default;
};

inline constexpr int kMinZoom = 0;
inline constexpr int kMaxZoom = 21;

struct TileSpec {
  int zoom = 18;
  int width_px = 512;
  int height_px = 512;
  std::string map_type = "satellite";

  friend bool operator==(const TileSpec&, const TileSpec&) = default;
};

/// Throws InvalidArgument when zoom is outside [min_zoom, max_zoom] or a
/// dimension is not positive.
void validate_tile_spec(const TileSpec& spec, int min_zoom = kMinZoom, int max_zoom = kMaxZoom);

struct TileProvenance {
  std::string provider;
  std::string fetched_at;
};

struct SatelliteTile {
  GeoCoordinate center;
  TileSpec spec;
  std::filesystem::path image_ref;
  TileProvenance provenance;
};

class ImageSearchClient {
 public:
  virtual ~ImageSearchClient() = default;
  /// Context for an image reference (or, for dataset construction, a place name).
  virtual ContextDocuments image_search(const std::string& image_ref) = 0;
  /// Stores the image behind a search-result reference at `dest`.
  virtual void fetch_image(const std::string& reference, const std::filesystem::path& dest) = 0;
};

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  /// Raw completion text for a prompt.
  virtual std::string complete(const std::string& prompt) = 0;
};

class GeocodeClient {
 public:
  virtual ~GeocodeClient() = default;
  virtual GeoCoordinate geocode(const PlaceName& place) = 0;
};

class TileClient {
 public:
  virtual ~TileClient() = default;
  /// Writes the tile image under `out_dir` (named by tile_key) and returns it.
  virtual SatelliteTile fetch_tile(const GeoCoordinate& center, const TileSpec& spec,
                                   const std::filesystem::path& out_dir) = 0;
};

struct ServiceClients {
  std::shared_ptr<ImageSearchClient> search;
  std::shared_ptr<LlmClient> llm;
  std::shared_ptr<GeocodeClient> geocoder;
  std::shared_ptr<TileClient> tiles;
};

/// First non-empty line of an LLM answer with surrounding quotes, list markers
/// and trailing punctuation removed. Empty when the answer carries no name.
std::string extract_place_line(const std::string& answer);

/// Asks the model for a place name. Throws NoLocationFound on an empty prompt,
/// an empty answer, or a refusal ("unknown", "none", "n/a").
PlaceName infer_location(LlmClient& llm, const std::string& prompt);

// ---------------------------------------------------------------------------
// Fixture-backed mocks.
//
// Fixture directory layout:
//   image_search/<sanitize_ref(image_ref)>.json   {"snippets": [{"url","title","body"}...]}
//   images/...                                    files referenced by snippet urls
//   llm.json                                      {"<sha256 hex of prompt>": "answer", ...}
//   geocode.json                                  {"<normalized name>": [lat, lon], ...}
//   tiles/<tile_key>.<ext>                        tile images

class MockImageSearch final : public ImageSearchClient {
 public:
  explicit MockImageSearch(std::filesystem::path fixture_dir);
  ContextDocuments image_search(const std::string& image_ref) override;
  void fetch_image(const std::string& reference, const std::filesystem::path& dest) override;

 private:
  std::filesystem::path root_;
};

class MockLlm final : public LlmClient {
 public:
  explicit MockLlm(std::filesystem::path fixture_dir);
  explicit MockLlm(std::map<std::string, std::string> answers_by_hash);
  std::string complete(const std::string& prompt) override;

 private:
  std::map<std::string, std::string> answers_;
};

class MockGeocoder final : public GeocodeClient {
 public:
  explicit MockGeocoder(std::filesystem::path fixture_dir);
  explicit MockGeocoder(std::map<std::string, GeoCoordinate> places);
  GeoCoordinate geocode(const PlaceName& place) override;

 private:
  std::map<std::string, GeoCoordinate> places_;
};

class MockTileClient final : public TileClient {
 public:
  explicit MockTileClient(std::filesystem::path fixture_dir);
  SatelliteTile fetch_tile(const GeoCoordinate& center, const TileSpec& spec,
                           const std::filesystem::path& out_dir) override;

 private:
  std::filesystem::path tiles_dir_;
};

ServiceClients make_mock_clients(const std::filesystem::path& fixture_dir);

/// Problems found in a fixture directory; empty when it is usable.
std::vector<std::string> check_fixtures(const std::filesystem::path& fixture_dir);

}  // namespace crossview
