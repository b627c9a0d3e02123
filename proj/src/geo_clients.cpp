#include "crossview/geo_clients.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <json.hpp>
#include <set>
#include <sstream>
#include <thread>

#include "crossview/error.hpp"
#include "crossview/text.hpp"
#include "io_util.hpp"

namespace crossview {

namespace fs = std::filesystem;
using nlohmann::json;

void validate_tile_spec(const TileSpec& spec, int min_zoom, int max_zoom) {
  if (spec.zoom < min_zoom || spec.zoom > max_zoom) {
    throw Error(ErrorCode::InvalidArgument, "zoom " + std::to_string(spec.zoom) + " outside [" +
                                                std::to_string(min_zoom) + ", " +
                                                std::to_string(max_zoom) + "]");
  }
  if (spec.width_px <= 0 || spec.height_px <= 0) {
    throw Error(ErrorCode::InvalidArgument, "tile dimensions must be positive");
  }
}

namespace {

template <typename Range>
bool starts_with_any(std::string_view s, const Range& prefixes,
                     std::size_t& len) {
  for (auto p : prefixes) {
    if (s.substr(0, p.size()) == p) {
      len = p.size();
      return true;
    }
  }
  return false;
}

template <typename Range>
bool ends_with_any(std::string_view s, const Range& suffixes,
                   std::size_t& len) {
  for (auto p : suffixes) {
    if (s.size() >= p.size() && s.substr(s.size() - p.size()) == p) {
      len = p.size();
      return true;
    }
  }
  return false;
}

constexpr std::array<std::string_view, 7> kQuotes = {"\"", "'", "`", "“", "”", "‘", "’"};
constexpr std::array<std::string_view, 3> kBullets = {"- ", "* ", "• "};
constexpr std::array<std::string_view, 6> kTrailingPunct = {".", ",", ";", ":", "!", "?"};

std::string strip_decorations(std::string s) {
  for (bool changed = true; changed;) {
    changed = false;
    s = trim(s);
    std::size_t n = 0;
    if (starts_with_any(s, kBullets, n) || starts_with_any(s, kQuotes, n)) {
      s.erase(0, n);
      changed = true;
      continue;
    }
    // "1. " / "12) " numbering
    std::size_t digits = 0;
    while (digits < s.size() && std::isdigit(static_cast<unsigned char>(s[digits]))) ++digits;
    if (digits > 0 && digits + 1 < s.size() && (s[digits] == '.' || s[digits] == ')') &&
        s[digits + 1] == ' ') {
      s.erase(0, digits + 2);
      changed = true;
      continue;
    }
    if (ends_with_any(s, kQuotes, n) || ends_with_any(s, kTrailingPunct, n)) {
      s.erase(s.size() - n);
      changed = true;
    }
  }
  return s;
}

json load_json_file(const fs::path& path) {
  try {
    return json::parse(detail::read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, "fixture " + path.string() + ": " + e.what());
  }
}

std::vector<Snippet> parse_snippets(const json& doc) {
  std::vector<Snippet> out;
  for (const auto& s : doc.at("snippets")) {
    out.push_back({s.value("url", ""), s.value("title", ""), s.value("body", "")});
  }
  return out;
}

std::map<std::string, GeoCoordinate> parse_geocode_fixture(const json& doc) {
  std::map<std::string, GeoCoordinate> out;
  for (const auto& [name, value] : doc.items()) {
    if (!value.is_array() || value.size() != 2) {
      throw Error(ErrorCode::ConfigError, "geocode fixture '" + name + "' must be [lat, lon]");
    }
    const GeoCoordinate c{value[0].get<double>(), value[1].get<double>()};
    if (!is_valid(c)) throw Error(ErrorCode::ConfigError, "geocode fixture '" + name + "' out of range");
    out[normalize_place_name(name)] = c;
  }
  return out;
}

// Writes via a uniquely named temporary so concurrent fetches of the same
// tile never expose a half-written file.
void copy_atomically(const fs::path& src, const fs::path& dest) {
  static std::atomic<unsigned long> counter{0};
  fs::create_directories(dest.parent_path().empty() ? fs::path(".") : dest.parent_path());
  std::ostringstream tmp_name;
  tmp_name << dest.filename().string() << ".tmp." << std::this_thread::get_id() << "."
           << counter.fetch_add(1);
  const fs::path tmp = dest.parent_path() / tmp_name.str();
  std::error_code ec;
  fs::copy_file(src, tmp, fs::copy_options::overwrite_existing, ec);
  if (!ec) fs::rename(tmp, dest, ec);
  if (ec) {
    fs::remove(tmp);
    throw Error(ErrorCode::IoFailure, "copy " + src.string() + " -> " + dest.string() + ": " + ec.message());
  }
}

}  // namespace

std::string extract_place_line(const std::string& answer) {
  std::istringstream in(answer);
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    return strip_decorations(line);
  }
  return {};
}

PlaceName infer_location(LlmClient& llm, const std::string& prompt) {
  if (trim(prompt).empty()) throw Error(ErrorCode::NoLocationFound, "empty prompt");
  const std::string answer = llm.complete(prompt);
  const std::string name = extract_place_line(answer);
  static const std::set<std::string> kRefusals = {"unknown", "none", "n/a", "null", "no location"};
  if (name.empty() || kRefusals.count(normalize_place_name(name))) {
    throw Error(ErrorCode::NoLocationFound, "model returned no place name");
  }
  PlaceName place{name, std::nullopt};
  const std::string t = trim(answer);
  if (t != name) place.confidence_note = t;
  return place;
}

MockImageSearch::MockImageSearch(fs::path fixture_dir) : root_(std::move(fixture_dir)) {}

ContextDocuments MockImageSearch::image_search(const std::string& image_ref) {
  const fs::path file = root_ / "image_search" / (sanitize_ref(image_ref) + ".json");
  if (!fs::exists(file)) throw Error(ErrorCode::UnknownImage, "no image_search fixture for '" + image_ref + "'");
  ContextDocuments docs;
  docs.source_image = image_ref;
  try {
    docs.snippets = parse_snippets(load_json_file(file));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, "fixture " + file.string() + ": " + e.what());
  }
  docs.collected_at = utc_timestamp();
  return docs;
}

void MockImageSearch::fetch_image(const std::string& reference, const fs::path& dest) {
  const fs::path src = root_ / reference;
  if (reference.empty() || !fs::is_regular_file(src)) {
    throw Error(ErrorCode::UnknownImage, "no fixture image '" + reference + "'");
  }
  copy_atomically(src, dest);
}

MockLlm::MockLlm(fs::path fixture_dir) {
  const fs::path file = fixture_dir / "llm.json";
  if (!fs::exists(file)) return;
  const json doc = load_json_file(file);
  for (const auto& [hash, answer] : doc.items()) {
    answers_[hash] = answer.get<std::string>();
  }
}

MockLlm::MockLlm(std::map<std::string, std::string> answers_by_hash)
    : answers_(std::move(answers_by_hash)) {}

std::string MockLlm::complete(const std::string& prompt) {
  const std::string key = sha256_hex(prompt);
  const auto it = answers_.find(key);
  if (it == answers_.end()) throw Error(ErrorCode::NoLocationFound, "no fixture answer for prompt " + key);
  return it->second;
}

MockGeocoder::MockGeocoder(fs::path fixture_dir) {
  const fs::path file = fixture_dir / "geocode.json";
  if (fs::exists(file)) places_ = parse_geocode_fixture(load_json_file(file));
}

MockGeocoder::MockGeocoder(std::map<std::string, GeoCoordinate> places) {
  for (auto& [name, c] : places) places_[normalize_place_name(name)] = c;
}

GeoCoordinate MockGeocoder::geocode(const PlaceName& place) {
  const auto it = places_.find(normalize_place_name(place.name));
  if (it == places_.end()) throw Error(ErrorCode::PlaceNotFound, "no geocode fixture for '" + place.name + "'");
  return it->second;
}

MockTileClient::MockTileClient(fs::path fixture_dir) : tiles_dir_(std::move(fixture_dir) / "tiles") {}

SatelliteTile MockTileClient::fetch_tile(const GeoCoordinate& center, const TileSpec& spec,
                                         const fs::path& out_dir) {
  validate_tile_spec(spec);
  if (!is_valid(center)) throw Error(ErrorCode::InvalidArgument, "tile center out of range");
  const std::string key = tile_key(center, spec.zoom);
  std::optional<fs::path> found;
  if (fs::is_directory(tiles_dir_)) {
    for (const auto& entry : fs::directory_iterator(tiles_dir_)) {
      if (entry.is_regular_file() && entry.path().stem().string() == key) {
        found = entry.path();
        break;
      }
    }
  }
  if (!found) throw Error(ErrorCode::TileUnavailable, "no tile fixture for " + key);

  SatelliteTile tile;
  tile.center = center;
  tile.spec = spec;
  tile.provenance = {"mock", utc_timestamp()};
  if (out_dir.empty()) {
    tile.image_ref = *found;
  } else {
    tile.image_ref = out_dir / found->filename();
    copy_atomically(*found, tile.image_ref);
  }
  return tile;
}

ServiceClients make_mock_clients(const fs::path& fixture_dir) {
  if (!fs::is_directory(fixture_dir)) {
    throw Error(ErrorCode::ConfigError, "fixture directory '" + fixture_dir.string() + "' does not exist");
  }
  return {std::make_shared<MockImageSearch>(fixture_dir), std::make_shared<MockLlm>(fixture_dir),
          std::make_shared<MockGeocoder>(fixture_dir), std::make_shared<MockTileClient>(fixture_dir)};
}

std::vector<std::string> check_fixtures(const fs::path& dir) {
  std::vector<std::string> problems;
  if (!fs::is_directory(dir)) return {"fixture directory '" + dir.string() + "' does not exist"};

  const fs::path search = dir / "image_search";
  if (fs::is_directory(search)) {
    for (const auto& entry : fs::directory_iterator(search)) {
      if (entry.path().extension() != ".json") continue;
      try {
        const auto snippets = parse_snippets(load_json_file(entry.path()));
        for (std::size_t i = 0; i < snippets.size(); ++i) {
          const auto& s = snippets[i];
          if (s.url.empty() && s.title.empty() && s.body.empty()) {
            problems.push_back(entry.path().string() + ": snippet " + std::to_string(i) + " is empty");
          }
        }
      } catch (const std::exception& e) {
        problems.push_back(entry.path().string() + ": " + e.what());
      }
    }
  }

  if (fs::exists(dir / "llm.json")) {
    try {
      const json doc = load_json_file(dir / "llm.json");
      for (const auto& [hash, answer] : doc.items()) {
        const bool hex = hash.size() == 64 && std::all_of(hash.begin(), hash.end(), [](char c) {
                           return std::isdigit(static_cast<unsigned char>(c)) || (c >= 'a' && c <= 'f');
                         });
        if (!hex) problems.push_back("llm.json: key '" + hash + "' is not a lowercase SHA-256 hex digest");
        if (!answer.is_string()) problems.push_back("llm.json: answer for '" + hash + "' is not a string");
      }
    } catch (const std::exception& e) {
      problems.push_back(std::string("llm.json: ") + e.what());
    }
  }

  if (fs::exists(dir / "geocode.json")) {
    try {
      parse_geocode_fixture(load_json_file(dir / "geocode.json"));
    } catch (const std::exception& e) {
      problems.push_back(std::string("geocode.json: ") + e.what());
    }
  }

  const fs::path tiles = dir / "tiles";
  if (fs::is_directory(tiles)) {
    for (const auto& entry : fs::directory_iterator(tiles)) {
      if (!entry.is_regular_file()) continue;
      const std::string stem = entry.path().stem().string();
      const auto parts = detail::split(stem, '_');
      bool ok = parts.size() == 3;
      if (ok) {
        try {
          const GeoCoordinate c{std::stod(std::string(parts[0])), std::stod(std::string(parts[1]))};
          const int zoom = std::stoi(std::string(parts[2]));
          ok = is_valid(c) && tile_key(c, zoom) == stem;
        } catch (const std::exception&) {
          ok = false;
        }
      }
      if (!ok) problems.push_back("tiles/" + entry.path().filename().string() + ": name is not a lat_lon_zoom key with 5 decimals");
    }
  }
  return problems;
}

}  // namespace crossview
