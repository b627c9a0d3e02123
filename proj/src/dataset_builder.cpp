#include "crossview/dataset_builder.hpp"

#include <atomic>
#include <exception>
#include <json.hpp>
#include <set>
#include <sstream>
#include <thread>

#include "crossview/error.hpp"
#include "crossview/text.hpp"

namespace crossview {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::string> expand_seeds(LlmClient& llm, const std::string& prompt, std::size_t count) {
  if (count == 0) throw Error(ErrorCode::InvalidArgument, "seed count must be >= 1");
  const std::string answer = llm.complete(prompt);
  std::vector<std::string> names;
  std::set<std::string> seen;
  std::istringstream in(answer);
  std::string line;
  while (names.size() < count && std::getline(in, line)) {
    const std::string name = extract_place_line(line);
    if (name.empty()) continue;
    if (seen.insert(normalize_place_name(name)).second) names.push_back(name);
  }
  if (names.empty()) throw Error(ErrorCode::NoLocationFound, "model returned no seed names");
  return names;
}

namespace {

struct SeedOutcome {
  std::optional<ManifestEntry> entry;
  std::optional<SkippedSeed> skip;
};

SeedOutcome process_seed(const std::string& seed, const ServiceClients& clients,
                         const BuildOptions& options) {
  SeedOutcome out;
  const std::string name = trim(seed);
  std::string stage = "search";
  try {
    ManifestEntry e;
    e.place = {name, std::nullopt};
    const ContextDocuments docs = clients.search->image_search(name);
    const std::string slug = sanitize_ref(normalize_place_name(name));
    for (const auto& s : docs.snippets) {
      if (e.street_images.size() >= options.per_place_images) break;
      if (s.url.empty()) continue;
      const std::string ext = fs::path(s.url).extension().string();
      const std::string rel = "street/" + slug + "/" + std::to_string(e.street_images.size()) +
                              (ext.empty() ? ".jpg" : ext);
      try {
        clients.search->fetch_image(s.url, options.output_root / rel);
      } catch (const Error& err) {
        if (err.code() == ErrorCode::ConfigError) throw;
        continue;  // unreachable image: try the next result
      }
      e.street_images.push_back(rel);
    }
    if (e.street_images.empty()) throw Error(ErrorCode::UnknownImage, "no street images for '" + name + "'");

    stage = "geocode";
    e.coordinate = clients.geocoder->geocode(e.place);

    stage = "tile";
    const SatelliteTile tile = clients.tiles->fetch_tile(e.coordinate, options.tile, options.output_root / "tiles");
    e.tile = fs::relative(tile.image_ref, options.output_root).generic_string();
    e.tile_provenance = tile.provenance;
    out.entry = std::move(e);
  } catch (const Error& err) {
    if (err.code() == ErrorCode::ConfigError || err.code() == ErrorCode::InvalidArgument) throw;
    out.skip = SkippedSeed{seed, stage, std::string(to_string(err.code())), err.what()};
  }
  return out;
}

json coordinate_json(const GeoCoordinate& c) { return {{"lat", c.lat}, {"lon", c.lon}}; }

}  // namespace

PairManifest build_pairs(std::span<const std::string> seeds, const ServiceClients& clients,
                         const BuildOptions& options) {
  if (seeds.empty()) throw Error(ErrorCode::InvalidArgument, "no seed places given");
  if (!clients.search || !clients.geocoder || !clients.tiles) {
    throw Error(ErrorCode::ConfigError, "search, geocode and tile clients must be configured");
  }
  if (options.per_place_images == 0) throw Error(ErrorCode::InvalidArgument, "per-place image cap must be >= 1");
  validate_tile_spec(options.tile);

  PairManifest m;
  m.created_at = utc_timestamp();
  m.tile_spec = options.tile;
  m.per_place_images = options.per_place_images;

  // Duplicates are resolved up front so that concurrent seeds never share a
  // place slug.
  std::vector<SeedOutcome> outcomes(seeds.size());
  std::vector<std::size_t> todo;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const std::string key = normalize_place_name(seeds[i]);
    if (key.empty()) {
      outcomes[i].skip = SkippedSeed{seeds[i], "dedup", "InvalidArgument", "empty seed name"};
    } else if (!seen.insert(key).second) {
      outcomes[i].skip = SkippedSeed{seeds[i], "dedup", "DuplicatePlace", "duplicate of an earlier seed"};
    } else {
      todo.push_back(i);
    }
  }

  std::vector<std::exception_ptr> errors(seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t = next.fetch_add(1); t < todo.size(); t = next.fetch_add(1)) {
      const std::size_t i = todo[t];
      try {
        outcomes[i] = process_seed(seeds[i], clients, options);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(options.parallelism, todo.size()));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  for (auto& o : outcomes) {
    if (o.entry) m.entries.push_back(std::move(*o.entry));
    if (o.skip) m.skipped.push_back(std::move(*o.skip));
  }
  return m;
}

std::string_view to_string(ManifestIssueKind kind) noexcept {
  switch (kind) {
    case ManifestIssueKind::MissingStreetImages: return "MissingStreetImages";
    case ManifestIssueKind::MissingTile: return "MissingTile";
    case ManifestIssueKind::InvalidCoordinate: return "InvalidCoordinate";
    case ManifestIssueKind::DuplicatePlace: return "DuplicatePlace";
    case ManifestIssueKind::DanglingReference: return "DanglingReference";
  }
  return "Unknown";
}

std::vector<ManifestIssue> validate_manifest(const PairManifest& m, const fs::path& root) {
  std::vector<ManifestIssue> issues;
  std::set<std::string> places;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const auto& e = m.entries[i];
    if (e.street_images.empty()) {
      issues.push_back({ManifestIssueKind::MissingStreetImages, i, "entry has no street images"});
    }
    if (e.tile.empty()) issues.push_back({ManifestIssueKind::MissingTile, i, "entry has no tile"});
    if (!is_valid(e.coordinate)) {
      issues.push_back({ManifestIssueKind::InvalidCoordinate, i, "coordinate out of range"});
    }
    if (!places.insert(normalize_place_name(e.place.name)).second) {
      issues.push_back({ManifestIssueKind::DuplicatePlace, i, "place '" + e.place.name + "' repeats"});
    }
    std::vector<std::string> refs = e.street_images;
    if (!e.tile.empty()) refs.push_back(e.tile);
    for (const auto& ref : refs) {
      if (!fs::is_regular_file(root / ref)) {
        issues.push_back({ManifestIssueKind::DanglingReference, i, "missing file " + ref});
      }
    }
  }
  return issues;
}

std::string manifest_to_json(const PairManifest& m) {
  json entries = json::array();
  for (const auto& e : m.entries) {
    json place = {{"name", e.place.name}};
    if (e.place.confidence_note) place["confidence_note"] = *e.place.confidence_note;
    entries.push_back({{"place", place},
                       {"coordinate", coordinate_json(e.coordinate)},
                       {"street_images", e.street_images},
                       {"tile", {{"path", e.tile},
                                 {"center", coordinate_json(e.coordinate)},
                                 {"provider", e.tile_provenance.provider},
                                 {"fetched_at", e.tile_provenance.fetched_at}}}});
  }
  json skipped = json::array();
  for (const auto& s : m.skipped) {
    skipped.push_back({{"seed", s.seed}, {"stage", s.stage}, {"error", s.error}, {"message", s.message}});
  }
  json doc = {{"format_version", 1},
              {"created_at", m.created_at},
              {"config",
               {{"tile_spec",
                 {{"zoom", m.tile_spec.zoom},
                  {"width_px", m.tile_spec.width_px},
                  {"height_px", m.tile_spec.height_px},
                  {"map_type", m.tile_spec.map_type}}},
                {"per_place_images", m.per_place_images}}},
              {"entries", std::move(entries)},
              {"skipped", std::move(skipped)}};
  return doc.dump(2) + "\n";
}

PairManifest manifest_from_json(const std::string& text) {
  PairManifest m;
  try {
    const json doc = json::parse(text);
    m.created_at = doc.at("created_at").get<std::string>();
    const auto& cfg = doc.at("config");
    const auto& ts = cfg.at("tile_spec");
    m.tile_spec = {ts.at("zoom").get<int>(), ts.at("width_px").get<int>(), ts.at("height_px").get<int>(),
                   ts.at("map_type").get<std::string>()};
    m.per_place_images = cfg.at("per_place_images").get<std::size_t>();
    for (const auto& e : doc.at("entries")) {
      ManifestEntry entry;
      entry.place.name = e.at("place").at("name").get<std::string>();
      if (e.at("place").contains("confidence_note")) {
        entry.place.confidence_note = e["place"]["confidence_note"].get<std::string>();
      }
      entry.coordinate = {e.at("coordinate").at("lat").get<double>(), e.at("coordinate").at("lon").get<double>()};
      entry.street_images = e.at("street_images").get<std::vector<std::string>>();
      const auto& tile = e.at("tile");
      entry.tile = tile.at("path").get<std::string>();
      entry.tile_provenance = {tile.value("provider", ""), tile.value("fetched_at", "")};
      m.entries.push_back(std::move(entry));
    }
    for (const auto& s : doc.at("skipped")) {
      m.skipped.push_back({s.at("seed").get<std::string>(), s.at("stage").get<std::string>(),
                           s.value("error", ""), s.value("message", "")});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedFile, std::string("manifest: ") + e.what());
  }
  return m;
}

}  // namespace crossview
