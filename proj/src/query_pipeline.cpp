#include "crossview/query_pipeline.hpp"

#include <atomic>
#include <chrono>
#include <exception>
#include <json.hpp>
#include <thread>

#include "crossview/text.hpp"
#include "io_util.hpp"

namespace crossview {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kTemplateV1 =
    "You are given text gathered from web pages where a street-level photo appears: page "
    "titles, captions, body text and links.\n"
    "Identify the single most specific physical place the photo shows, such as a landmark, a "
    "building, a street or, failing that, a neighbourhood or city.\n"
    "Prefer names of physical places over events, organisations, people or abstract topics, "
    "and prefer a name that a geocoding service can resolve.\n"
    "Answer with the place name alone on the first line. If the text names no place, answer "
    "UNKNOWN.\n"
    "\n"
    "Context:\n";

std::string flatten(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) out += (c == '\n' || c == '\r') ? ' ' : c;
  return trim(out);
}

std::string render_snippet(const Snippet& s) {
  std::string out;
  for (const auto* field : {&s.title, &s.body, &s.url}) {
    const std::string f = flatten(*field);
    if (f.empty()) continue;
    if (!out.empty()) out += " | ";
    out += f;
  }
  return out;
}

bool is_config_error(ErrorCode code) {
  return code == ErrorCode::ConfigError || code == ErrorCode::InvalidArgument;
}

/// Runs one stage, appending its outcome. Returns false when the stage failed.
template <typename Fn>
bool run_stage(SatelliteQuery& q, std::string_view stage, Fn&& fn) {
  StageOutcome outcome;
  outcome.stage = std::string(stage);
  const auto start = std::chrono::steady_clock::now();
  try {
    outcome.message = fn();
  } catch (const Error& e) {
    if (is_config_error(e.code())) throw;
    outcome.ok = false;
    outcome.error = e.code();
    outcome.message = e.what();
  } catch (const fs::filesystem_error& e) {
    outcome.ok = false;
    outcome.error = ErrorCode::IoFailure;
    outcome.message = e.what();
  }
  outcome.duration_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  const bool ok = outcome.ok;
  q.trace.push_back(std::move(outcome));
  return ok;
}

json coordinate_json(const GeoCoordinate& c) { return {{"lat", c.lat}, {"lon", c.lon}}; }

json tile_json(const SatelliteTile& t) {
  return {{"center", coordinate_json(t.center)},
          {"zoom", t.spec.zoom},
          {"width_px", t.spec.width_px},
          {"height_px", t.spec.height_px},
          {"map_type", t.spec.map_type},
          {"key", tile_key(t.center, t.spec.zoom)},
          {"image_ref", t.image_ref.string()},
          {"provider", t.provenance.provider},
          {"fetched_at", t.provenance.fetched_at}};
}

json satellite_query_json(const SatelliteQuery& q) {
  json trace = json::array();
  for (const auto& s : q.trace) {
    json entry = {{"stage", s.stage}, {"ok", s.ok}, {"duration_ms", s.duration_ms}};
    if (s.error) entry["error"] = std::string(to_string(*s.error));
    if (!s.message.empty()) entry["message"] = s.message;
    trace.push_back(std::move(entry));
  }
  json place = nullptr;
  if (q.place) {
    place = {{"name", q.place->name}};
    if (q.place->confidence_note) place["confidence_note"] = *q.place->confidence_note;
  }
  return {{"source_image", q.source_image},
          {"place", place},
          {"coordinate", q.coordinate ? coordinate_json(*q.coordinate) : json(nullptr)},
          {"tile", q.tile ? tile_json(*q.tile) : json(nullptr)},
          {"trace", std::move(trace)}};
}

}  // namespace

std::string_view location_prompt_template() { return kTemplateV1; }

AggregatedPrompt aggregate_context(std::span<const ContextDocuments> docs, std::size_t char_budget) {
  std::vector<std::string> blocks;
  for (const auto& doc : docs) {
    std::string block;
    for (const auto& s : doc.snippets) {
      const std::string line = render_snippet(s);
      if (line.empty()) continue;
      if (!block.empty()) block += '\n';
      block += line;
    }
    if (!block.empty()) blocks.push_back(std::move(block));
  }
  if (blocks.empty()) throw Error(ErrorCode::EmptyContext, "no snippet text to build a prompt from");

  AggregatedPrompt out;
  out.text = std::string(location_prompt_template());
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (i > 0) {
      out.text += '\n';
      out.text += kContextDelimiter;
      out.text += '\n';
    }
    out.text += blocks[i];
  }
  if (out.text.size() > char_budget) {
    std::size_t cut = char_budget;
    while (cut > 0 && (static_cast<unsigned char>(out.text[cut]) & 0xC0) == 0x80) --cut;
    out.dropped_chars = out.text.size() - cut;
    out.text.resize(cut);
    out.truncated = true;
  }
  return out;
}

std::optional<std::string> SatelliteQuery::failed_stage() const {
  for (const auto& s : trace) {
    if (!s.ok) return s.stage;
  }
  return std::nullopt;
}

SatelliteQuery generate_satellite_query(std::span<const std::string> image_refs,
                                        const ServiceClients& clients,
                                        const PipelineOptions& options) {
  if (!clients.search || !clients.llm || !clients.geocoder || !clients.tiles) {
    throw Error(ErrorCode::ConfigError, "all four service clients must be configured");
  }
  validate_tile_spec(options.tile);

  SatelliteQuery q;
  q.source_image = image_refs.empty() ? std::string() : image_refs.front();

  std::vector<ContextDocuments> docs;
  if (!run_stage(q, kStageSearch, [&] {
        if (image_refs.empty()) throw Error(ErrorCode::UnknownImage, "no image reference given");
        std::size_t snippets = 0;
        for (const auto& ref : image_refs) {
          docs.push_back(clients.search->image_search(ref));
          snippets += docs.back().snippets.size();
        }
        return std::to_string(snippets) + " snippets from " + std::to_string(docs.size()) + " image(s)";
      })) {
    return q;
  }

  AggregatedPrompt prompt;
  if (!run_stage(q, kStageAggregate, [&] {
        prompt = aggregate_context(docs, options.prompt_budget);
        std::string note = std::to_string(prompt.text.size()) + " chars";
        if (prompt.truncated) note += ", truncated " + std::to_string(prompt.dropped_chars) + " chars";
        return note;
      })) {
    return q;
  }

  if (!run_stage(q, kStageInfer, [&] {
        q.place = infer_location(*clients.llm, prompt.text);
        return q.place->name;
      })) {
    return q;
  }

  if (!run_stage(q, kStageGeocode, [&] {
        q.coordinate = clients.geocoder->geocode(*q.place);
        return detail::format_double(q.coordinate->lat) + "," + detail::format_double(q.coordinate->lon);
      })) {
    return q;
  }

  run_stage(q, kStageTile, [&] {
    q.tile = clients.tiles->fetch_tile(*q.coordinate, options.tile, options.tile_dir);
    return tile_key(q.tile->center, q.tile->spec.zoom);
  });
  return q;
}

SatelliteQuery generate_satellite_query(const std::string& image_ref, const ServiceClients& clients,
                                        const PipelineOptions& options) {
  return generate_satellite_query(std::span<const std::string>(&image_ref, 1), clients, options);
}

namespace {
EmbeddingCollection prepare_tile_embeddings(const EmbeddingCollection& tiles,
                                            const EmbeddingCollection& gallery,
                                            const std::optional<WhiteningModel>& model) {
  if (tiles.dim != gallery.dim) {
    throw Error(ErrorCode::DimensionMismatch, "tile embeddings have dim " + std::to_string(tiles.dim) +
                                                  ", gallery has " + std::to_string(gallery.dim));
  }
  return model ? apply_whitening(*model, tiles) : tiles;
}
}  // namespace

TileRetriever::TileRetriever(const EmbeddingCollection& gallery,
                             const EmbeddingCollection& tile_embeddings,
                             std::optional<WhiteningModel> model)
    : gallery_(model ? apply_whitening(*model, gallery) : gallery),
      tile_embeddings_(prepare_tile_embeddings(tile_embeddings, gallery, model)),
      model_(std::move(model)),
      index_(gallery_) {
  for (std::size_t i = 0; i < tile_embeddings_.size(); ++i) {
    by_key_.emplace(tile_embeddings_.records[i].id, i);
  }
}

RankedList TileRetriever::retrieve(const SatelliteTile& tile, std::size_t k) const {
  const std::string key = tile_key(tile.center, tile.spec.zoom);
  const auto it = by_key_.find(key);
  if (it == by_key_.end()) {
    throw Error(ErrorCode::MissingQueryEmbedding, "no precomputed embedding for tile " + key);
  }
  return index_.search(tile_embeddings_.records[it->second], k);
}

LocatedQuery locate_and_retrieve(std::span<const std::string> image_refs,
                                 const ServiceClients& clients, const PipelineOptions& options,
                                 const TileRetriever& retriever, std::size_t k) {
  LocatedQuery out;
  out.query = generate_satellite_query(image_refs, clients, options);
  if (!out.query.ok()) return out;
  try {
    RankedList hits = retriever.retrieve(*out.query.tile, k);
    hits.query_id = out.query.source_image;
    out.hits = std::move(hits);
  } catch (const Error& e) {
    if (is_config_error(e.code())) throw;
    out.retrieval_error = e.code();
    out.retrieval_message = e.what();
  }
  return out;
}

std::vector<QueryGroup> load_query_manifest(const fs::path& path) {
  std::vector<QueryGroup> groups;
  const auto lines = detail::read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      const auto doc = json::parse(lines[i]);
      groups.push_back({doc.at("group_id").get<std::string>(),
                        doc.at("image_refs").get<std::vector<std::string>>()});
    } catch (const json::exception& e) {
      throw Error(ErrorCode::MalformedFile, path.string() + ": " + e.what(), i);
    }
  }
  return groups;
}

QuerySetResult run_query_set(std::span<const QueryGroup> groups, const ServiceClients& clients,
                             const QuerySetOptions& options, const TileRetriever* retriever) {
  QuerySetResult out;
  out.results.resize(groups.size());
  std::vector<std::exception_ptr> errors(groups.size());

  auto process = [&](std::size_t i) {
    const auto& g = groups[i];
    GroupResult& r = out.results[i];
    r.group_id = g.group_id;
    if (!g.image_refs.empty()) {
      if (options.all_images) {
        r.images_used = g.image_refs;
      } else {
        r.images_used = {g.image_refs.front()};
      }
    }
    if (retriever) {
      r.located = locate_and_retrieve(r.images_used, clients, options.pipeline, *retriever, options.k);
      if (r.located.hits) r.located.hits->query_id = g.group_id;
    } else {
      r.located.query = generate_satellite_query(r.images_used, clients, options.pipeline);
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(options.parallelism, groups.size()));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < groups.size(); i = next.fetch_add(1)) {
      try {
        process(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  out.summary.total = groups.size();
  for (const auto& r : out.results) {
    const bool ok = retriever ? r.located.ok() : r.located.query.ok();
    if (ok) {
      ++out.summary.succeeded;
    } else if (const auto stage = r.located.query.failed_stage()) {
      ++out.summary.failures[*stage];
    } else {
      ++out.summary.failures[std::string(kStageRetrieve)];
    }
  }
  return out;
}

std::string satellite_query_to_json(const SatelliteQuery& q) {
  return satellite_query_json(q).dump();
}

std::string group_result_to_json(const GroupResult& r) {
  json doc = {{"group_id", r.group_id},
              {"images_used", r.images_used},
              {"query", satellite_query_json(r.located.query)}};
  if (r.located.hits) {
    json hits = json::array();
    for (const auto& h : r.located.hits->hits) hits.push_back({{"id", h.id}, {"score", h.score}});
    doc["hits"] = std::move(hits);
  } else {
    doc["hits"] = nullptr;
  }
  if (r.located.retrieval_error) {
    doc["retrieval_error"] = {{"error", std::string(to_string(*r.located.retrieval_error))},
                              {"message", r.located.retrieval_message}};
  }
  return doc.dump();
}

std::string summary_to_json(const StageFailureSummary& s) {
  json failures = json::object();
  for (const auto& [stage, n] : s.failures) failures[stage] = n;
  return json{{"total", s.total}, {"succeeded", s.succeeded}, {"failures", failures}}.dump(2) + "\n";
}

}  // namespace crossview
