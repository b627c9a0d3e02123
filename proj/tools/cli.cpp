#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <thread>

#include "crossview/dataset_builder.hpp"
#include "crossview/embedding_store.hpp"
#include "crossview/error.hpp"
#include "crossview/evaluation.hpp"
#include "crossview/geo_clients.hpp"
#include "crossview/live_clients.hpp"
#include "crossview/query_pipeline.hpp"
#include "crossview/retrieval.hpp"
#include "crossview/text.hpp"
#include "crossview/whitening.hpp"

namespace crossview::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string gallery;
  std::string queries;
  std::string query_embeddings;
  std::string model;
  std::string out;
  std::string summary;
  std::size_t k = 10;
  std::size_t target_dim = 0;
  std::optional<double> epsilon;
  bool no_renormalize = false;
  std::vector<std::size_t> ks{1, 5, 10};
  bool one_percent = false;
  std::vector<double> thresholds{0.5, 1.0, 2.0, 5.0};
  std::string clients = "mock";
  std::string fixtures;
  std::size_t parallelism = 0;
  bool all_images = false;
  std::string seeds;
  std::size_t per_place = 5;
  int zoom = 18;
  std::string tile_size = "512x512";
  std::string tiles_dir;
  std::vector<std::string> images;
  std::string manifest;
  std::string results;
  std::string ground_truth;
  std::string gallery_labels;
  std::string predictions;
  std::string expand_prompt;
  std::size_t expand_count = 0;
};

std::size_t workers(const Options& o) {
  return o.parallelism > 0 ? o.parallelism : std::max(1u, std::thread::hardware_concurrency());
}

void write_text(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::IoFailure, "cannot write " + path);
  f << text;
  if (!f) throw Error(ErrorCode::IoFailure, "write failed: " + path);
}

EmbeddingCollection load(const std::string& path, CollectionRole role) {
  return read_collection(path, format_from_path(path), role);
}

std::optional<WhiteningModel> maybe_model(const Options& o) {
  if (o.model.empty()) return std::nullopt;
  return load_model(o.model);
}

TileSpec tile_spec(const Options& o) {
  TileSpec spec;
  spec.zoom = o.zoom;
  const auto x = o.tile_size.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument("no 'x'");
    std::size_t used = 0;
    spec.width_px = std::stoi(o.tile_size.substr(0, x), &used);
    if (used != x) throw std::invalid_argument("width");
    const std::string h = o.tile_size.substr(x + 1);
    spec.height_px = std::stoi(h, &used);
    if (used != h.size()) throw std::invalid_argument("height");
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument, "--tile-size must look like 512x512");
  }
  validate_tile_spec(spec);
  return spec;
}

ServiceClients clients_for(const Options& o) {
  if (o.clients == "live") return make_live_clients();
  if (o.fixtures.empty()) throw Error(ErrorCode::ConfigError, "--clients mock needs --fixtures DIR");
  return make_mock_clients(o.fixtures);
}

// Accepts either coordinate records {"id","lat","lon"} or geolocate output
// lines, whose coordinate lives under query.coordinate (null on failure).
std::map<std::string, GeoCoordinate> load_predictions(const std::string& path) {
  std::map<std::string, GeoCoordinate> out;
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    try {
      const auto doc = json::parse(line);
      if (doc.contains("group_id")) {
        const auto& c = doc.at("query").at("coordinate");
        if (!c.is_null()) {
          out[doc["group_id"].get<std::string>()] = {c.at("lat").get<double>(), c.at("lon").get<double>()};
        }
      } else {
        out[doc.at("id").get<std::string>()] = {doc.at("lat").get<double>(), doc.at("lon").get<double>()};
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::MalformedFile, path + ": " + e.what(), n);
    }
    ++n;
  }
  return out;
}

int cmd_ingest(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.gallery.empty() == o.queries.empty()) {
    throw Error(ErrorCode::InvalidArgument, "ingest needs exactly one of --gallery or --queries");
  }
  const bool is_gallery = !o.gallery.empty();
  const std::string& src = is_gallery ? o.gallery : o.queries;
  const auto c = load(src, is_gallery ? CollectionRole::Gallery : CollectionRole::Query);
  err << "validated " << src << ": " << c.size() << " records, dim " << c.dim << "\n";
  if (!o.out.empty()) {
    write_collection(c, o.out, format_from_path(o.out));
    err << "wrote " << o.out << "\n";
  }
  (void)out;
  return 0;
}

int cmd_whiten_fit(const Options& o, std::ostream&, std::ostream& err) {
  const auto gallery = load(o.gallery, CollectionRole::Gallery);
  WhiteningOptions wo;
  wo.target_dim = o.target_dim == 0 ? gallery.dim : o.target_dim;
  wo.epsilon = o.epsilon;
  wo.renormalize = !o.no_renormalize;
  const auto m = fit_whitening(gallery, wo);
  save_model(m, o.out);
  err << "fitted whitening " << m.dim << " -> " << m.k << " on " << gallery.size()
      << " gallery records, epsilon " << m.epsilon << "; wrote " << o.out << "\n";
  return 0;
}

int cmd_whiten_apply(const Options& o, std::ostream&, std::ostream& err) {
  if (o.gallery.empty() == o.queries.empty()) {
    throw Error(ErrorCode::InvalidArgument, "whiten apply needs exactly one of --gallery or --queries");
  }
  const bool is_gallery = !o.gallery.empty();
  const auto m = load_model(o.model);
  const auto c = load(is_gallery ? o.gallery : o.queries,
                      is_gallery ? CollectionRole::Gallery : CollectionRole::Query);
  const auto w = apply_whitening(m, c);
  write_collection(w, o.out, format_from_path(o.out));
  err << "whitened " << w.size() << " records to dim " << w.dim << "; wrote " << o.out << "\n";
  return 0;
}

std::vector<RankedList> run_search(const Options& o, EmbeddingCollection& gallery,
                                   std::size_t k) {
  auto queries = load(o.queries, CollectionRole::Query);
  if (const auto m = maybe_model(o)) {
    gallery = apply_whitening(*m, gallery);
    queries = apply_whitening(*m, queries);
  }
  return batch_search(queries, gallery, k, workers(o));
}

int cmd_search(const Options& o, std::ostream& out, std::ostream& err) {
  auto gallery = load(o.gallery, CollectionRole::Gallery);
  const auto results = run_search(o, gallery, o.k);
  write_text(o.out, results_to_jsonl(results), out);
  err << "searched " << results.size() << " queries against " << gallery.size() << " gallery records\n";
  return 0;
}

int cmd_eval_retrieval(const Options& o, std::ostream& out, std::ostream& err) {
  std::vector<std::size_t> ks = o.ks;
  if (ks.empty()) throw Error(ErrorCode::InvalidArgument, "--ks must list at least one k");
  if (std::any_of(ks.begin(), ks.end(), [](std::size_t k) { return k == 0; })) {
    throw Error(ErrorCode::InvalidArgument, "--ks values must be >= 1");
  }
  std::vector<RankedList> results;
  GroundTruth gt;
  std::size_t gallery_size = 0;
  if (!o.results.empty()) {
    if (o.ground_truth.empty() || o.gallery_labels.empty()) {
      throw Error(ErrorCode::InvalidArgument, "--results needs --ground-truth and --gallery-labels");
    }
    std::ifstream in(o.results, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + o.results);
    std::stringstream ss;
    ss << in.rdbuf();
    results = results_from_jsonl(ss.str());
    gt = load_ground_truth(o.ground_truth, o.gallery_labels);
    gallery_size = gt.gallery_labels.size();
  } else {
    if (o.gallery.empty() || o.queries.empty()) {
      throw Error(ErrorCode::InvalidArgument, "eval retrieval needs --gallery and --queries (or --results)");
    }
    auto gallery = load(o.gallery, CollectionRole::Gallery);
    gallery_size = gallery.size();
    const std::size_t depth = std::max(*std::max_element(ks.begin(), ks.end()), k_for_one_percent(gallery_size));
    const auto queries = load(o.queries, CollectionRole::Query);
    gt = ground_truth_from_collections(queries, gallery);
    results = run_search(o, gallery, depth);
  }
  const auto report = evaluate_run(results, gt, ks, gallery_size);
  out << format_recall_table(report, o.one_percent);
  if (!o.out.empty()) {
    write_text(o.out, report_to_json(report), out);
    err << "wrote " << o.out << "\n";
  }
  return 0;
}

int cmd_eval_localize(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.predictions.empty() || o.ground_truth.empty()) {
    throw Error(ErrorCode::InvalidArgument, "eval localize needs --predictions and --ground-truth");
  }
  const auto predicted = load_predictions(o.predictions);
  const auto truth = load_coordinates(o.ground_truth);
  const auto loc = localization_accuracy(predicted, truth, o.thresholds);
  out << format_localization_table(loc);
  if (!o.out.empty()) {
    EvaluationReport report;
    report.query_count = loc.query_count;
    report.localization = loc;
    write_text(o.out, report_to_json(report), out);
    err << "wrote " << o.out << "\n";
  }
  return 0;
}

int cmd_geolocate(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.images.empty() == o.manifest.empty()) {
    throw Error(ErrorCode::InvalidArgument, "geolocate needs exactly one of --image or --manifest");
  }
  const auto clients = clients_for(o);
  QuerySetOptions qo;
  qo.pipeline.tile = tile_spec(o);
  qo.pipeline.tile_dir = !o.tiles_dir.empty() ? fs::path(o.tiles_dir)
                         : (!o.out.empty() && o.out != "-") ? fs::path(o.out).parent_path() / "tiles"
                                                            : fs::path("tiles");
  qo.all_images = o.all_images;
  qo.parallelism = workers(o);
  qo.k = o.k;

  std::vector<QueryGroup> groups;
  if (!o.manifest.empty()) {
    groups = load_query_manifest(o.manifest);
  } else {
    // --image values form one group; without --all-images only the first is used.
    groups.push_back({o.images.front(), o.images});
  }

  std::optional<EmbeddingCollection> gallery;
  std::optional<EmbeddingCollection> tile_embeddings;
  std::unique_ptr<TileRetriever> retriever;
  if (!o.gallery.empty() || !o.query_embeddings.empty()) {
    if (o.gallery.empty() || o.query_embeddings.empty()) {
      throw Error(ErrorCode::InvalidArgument, "retrieval needs both --gallery and --query-embeddings");
    }
    gallery = load(o.gallery, CollectionRole::Gallery);
    tile_embeddings = load(o.query_embeddings, CollectionRole::Query);
    retriever = std::make_unique<TileRetriever>(*gallery, *tile_embeddings, maybe_model(o));
  }

  const auto result = run_query_set(groups, clients, qo, retriever.get());
  std::string lines;
  bool upstream = false;
  for (const auto& r : result.results) {
    lines += group_result_to_json(r) + "\n";
    for (const auto& s : r.located.query.trace) {
      if (s.error && is_upstream(*s.error)) upstream = true;
    }
  }
  write_text(o.out, lines, out);
  const std::string summary = summary_to_json(result.summary);
  if (!o.summary.empty()) write_text(o.summary, summary, out);
  err << summary;

  if (upstream) return 2;
  if (!o.manifest.empty()) return 0;
  return result.summary.succeeded == result.summary.total ? 0 : 1;
}

std::vector<std::string> read_seed_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path);
  std::vector<std::string> seeds;
  std::string line;
  while (std::getline(in, line)) {
    const std::string s = trim(line);
    if (!s.empty() && s.front() != '#') seeds.push_back(s);
  }
  return seeds;
}

int cmd_build_dataset(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.out.empty()) throw Error(ErrorCode::InvalidArgument, "build-dataset needs --out ROOT");
  const auto clients = clients_for(o);
  std::vector<std::string> seeds;
  if (!o.seeds.empty()) seeds = read_seed_file(o.seeds);
  if (o.expand_count > 0) {
    if (o.expand_prompt.empty()) throw Error(ErrorCode::InvalidArgument, "--expand-count needs --expand-prompt");
    for (auto& s : expand_seeds(*clients.llm, o.expand_prompt, o.expand_count)) seeds.push_back(std::move(s));
  }
  if (seeds.empty()) throw Error(ErrorCode::InvalidArgument, "no seeds: pass --seeds FILE or --expand-count N");

  BuildOptions bo;
  bo.per_place_images = o.per_place;
  bo.tile = tile_spec(o);
  bo.output_root = o.out;
  bo.parallelism = workers(o);
  const auto manifest = build_pairs(seeds, clients, bo);
  write_text((fs::path(o.out) / "manifest.json").string(), manifest_to_json(manifest), out);

  const auto issues = validate_manifest(manifest, o.out);
  for (const auto& i : issues) {
    err << "manifest entry " << i.entry << ": " << to_string(i.kind) << ": " << i.message << "\n";
  }
  err << "built " << manifest.entries.size() << " pairs, skipped " << manifest.skipped.size() << "\n";
  for (const auto& s : manifest.skipped) err << "  skipped '" << s.seed << "' at " << s.stage << ": " << s.error << "\n";
  const bool upstream = std::any_of(manifest.skipped.begin(), manifest.skipped.end(), [](const SkippedSeed& s) {
    return s.error == "UpstreamFailure" || s.error == "RateLimited";
  });
  if (!issues.empty()) return 1;
  return upstream ? 2 : 0;
}

int cmd_fixtures_check(const Options& o, std::ostream& out, std::ostream&) {
  const auto problems = check_fixtures(o.fixtures);
  for (const auto& p : problems) out << p << "\n";
  if (problems.empty()) out << "fixtures ok\n";
  return problems.empty() ? 0 : 1;
}

int cmd_fixtures_key(const Options& o, std::ostream& out, std::ostream&) {
  if (o.images.empty()) throw Error(ErrorCode::InvalidArgument, "fixtures key needs --image");
  MockImageSearch search(o.fixtures);
  std::vector<ContextDocuments> docs;
  const std::size_t n = o.all_images ? o.images.size() : 1;
  for (std::size_t i = 0; i < n; ++i) docs.push_back(search.image_search(o.images[i]));
  out << sha256_hex(aggregate_context(docs).text) << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Training-free street-to-satellite retrieval and geolocation toolkit", "crossview"};
  app.require_subcommand(1);

  auto add_parallelism = [&](CLI::App* c) {
    c->add_option("--parallelism", o.parallelism, "Worker threads (default: hardware cores)");
  };
  auto add_tile = [&](CLI::App* c) {
    c->add_option("--zoom", o.zoom, "Tile zoom level")->capture_default_str();
    c->add_option("--tile-size", o.tile_size, "Tile size WxH")->capture_default_str();
  };
  auto add_clients = [&](CLI::App* c) {
    c->add_option("--clients", o.clients, "Service clients")->check(CLI::IsMember({"mock", "live"}))->capture_default_str();
    c->add_option("--fixtures", o.fixtures, "Fixture directory for mock clients");
  };

  auto* ingest = app.add_subcommand("ingest", "Validate an embedding file and convert between csv and emb1");
  ingest->add_option("--gallery", o.gallery, "Gallery embeddings (.emb1/.csv)");
  ingest->add_option("--queries", o.queries, "Query embeddings (.emb1/.csv)");
  ingest->add_option("--out", o.out, "Converted output (.emb1/.csv)");

  auto* whiten = app.add_subcommand("whiten", "Fit or apply PCA whitening");
  whiten->require_subcommand(1);
  auto* fit = whiten->add_subcommand("fit", "Fit a whitening model on gallery embeddings");
  fit->add_option("--gallery", o.gallery, "Gallery embeddings")->required();
  fit->add_option("--target-dim", o.target_dim, "Output dimension k (default: full)");
  fit->add_option("--epsilon", o.epsilon, "Absolute regularizer (default: 1e-6 x largest eigenvalue)");
  fit->add_flag("--no-renormalize", o.no_renormalize, "Skip the final L2 normalization");
  fit->add_option("--out", o.out, "Model JSON")->required();
  auto* apply = whiten->add_subcommand("apply", "Whiten a gallery or query file");
  apply->add_option("--model", o.model, "Model JSON")->required();
  apply->add_option("--gallery", o.gallery, "Gallery embeddings");
  apply->add_option("--queries", o.queries, "Query embeddings");
  apply->add_option("--out", o.out, "Whitened output (.emb1/.csv)")->required();

  auto* search = app.add_subcommand("search", "Exhaustive cosine top-k search");
  search->add_option("--gallery", o.gallery, "Gallery embeddings")->required();
  search->add_option("--queries", o.queries, "Query embeddings")->required();
  search->add_option("--model", o.model, "Whitening model applied to both sides");
  search->add_option("--k", o.k, "Hits per query")->capture_default_str();
  search->add_option("--out", o.out, "Results JSONL (default: stdout)");
  add_parallelism(search);

  auto* eval = app.add_subcommand("eval", "Evaluate retrieval or localization");
  eval->require_subcommand(1);
  auto* eval_r = eval->add_subcommand("retrieval", "Recall@k and R@1%");
  eval_r->add_option("--gallery", o.gallery, "Gallery embeddings (labels are ground truth)");
  eval_r->add_option("--queries", o.queries, "Query embeddings (label = relevant gallery label)");
  eval_r->add_option("--model", o.model, "Whitening model");
  eval_r->add_option("--ks", o.ks, "Recall cutoffs, e.g. 1,5,10")->delimiter(',');
  eval_r->add_flag("--one-percent", o.one_percent, "Add the R@1% column to the table");
  eval_r->add_option("--results", o.results, "Precomputed results JSONL");
  eval_r->add_option("--ground-truth", o.ground_truth, "Query labels JSONL {query_id,label}");
  eval_r->add_option("--gallery-labels", o.gallery_labels, "Gallery labels JSONL {id,label}");
  eval_r->add_option("--out", o.out, "Report JSON");
  add_parallelism(eval_r);
  auto* eval_l = eval->add_subcommand("localize", "Haversine threshold accuracy");
  eval_l->add_option("--predictions", o.predictions, "Predicted coordinates or geolocate output JSONL");
  eval_l->add_option("--ground-truth", o.ground_truth, "Ground-truth coordinates JSONL {id,lat,lon}");
  eval_l->add_option("--thresholds", o.thresholds, "Distance thresholds in km")->delimiter(',');
  eval_l->add_option("--out", o.out, "Report JSON");

  auto* geolocate = app.add_subcommand("geolocate", "Generate satellite queries (and optionally retrieve)");
  geolocate->add_option("--image", o.images, "Image reference (repeatable)");
  geolocate->add_option("--manifest", o.manifest, "Batch manifest JSONL {group_id,image_refs}");
  add_clients(geolocate);
  add_tile(geolocate);
  geolocate->add_flag("--all-images", o.all_images, "Use every image of a group as context");
  geolocate->add_option("--gallery", o.gallery, "Gallery embeddings for retrieval");
  geolocate->add_option("--query-embeddings", o.query_embeddings, "Tile embeddings keyed by lat_lon_zoom");
  geolocate->add_option("--model", o.model, "Whitening model");
  geolocate->add_option("--k", o.k, "Hits per query")->capture_default_str();
  geolocate->add_option("--out", o.out, "Output JSONL (default: stdout)");
  geolocate->add_option("--summary", o.summary, "Stage-failure summary JSON");
  geolocate->add_option("--tiles-dir", o.tiles_dir, "Where fetched tiles are written");
  add_parallelism(geolocate);

  auto* build = app.add_subcommand("build-dataset", "Build street-to-satellite pairs from seed places");
  build->add_option("--seeds", o.seeds, "Seed file, one place per line");
  build->add_option("--expand-prompt", o.expand_prompt, "Prompt asking the LLM for seed places");
  build->add_option("--expand-count", o.expand_count, "Number of LLM-generated seeds");
  build->add_option("--per-place", o.per_place, "Street images per place")->capture_default_str();
  build->add_option("--out", o.out, "Output root directory")->required();
  add_clients(build);
  add_tile(build);
  add_parallelism(build);

  auto* fixtures = app.add_subcommand("fixtures", "Fixture directory utilities");
  fixtures->require_subcommand(1);
  auto* check = fixtures->add_subcommand("check", "Validate a fixture directory");
  check->add_option("--fixtures", o.fixtures, "Fixture directory")->required();
  auto* key = fixtures->add_subcommand("key", "Print the llm.json key for the prompt built from images");
  key->add_option("--fixtures", o.fixtures, "Fixture directory")->required();
  key->add_option("--image", o.images, "Image reference (repeatable)")->required();
  key->add_flag("--all-images", o.all_images, "Aggregate every given image");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (ingest->parsed()) return cmd_ingest(o, out, err);
    if (fit->parsed()) return cmd_whiten_fit(o, out, err);
    if (apply->parsed()) return cmd_whiten_apply(o, out, err);
    if (search->parsed()) return cmd_search(o, out, err);
    if (eval_r->parsed()) return cmd_eval_retrieval(o, out, err);
    if (eval_l->parsed()) return cmd_eval_localize(o, out, err);
    if (geolocate->parsed()) return cmd_geolocate(o, out, err);
    if (build->parsed()) return cmd_build_dataset(o, out, err);
    if (check->parsed()) return cmd_fixtures_check(o, out, err);
    if (key->parsed()) return cmd_fixtures_key(o, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return is_upstream(e.code()) ? 2 : 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << app.help();
  return 1;
}

}  // namespace crossview::cli
