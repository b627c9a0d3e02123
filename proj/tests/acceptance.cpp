// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <string>

#include "crossview/embedding_store.hpp"
#include "crossview/evaluation.hpp"
#include "crossview/linalg.hpp"
#include "crossview/query_pipeline.hpp"
#include "crossview/retrieval.hpp"
#include "crossview/whitening.hpp"
#include "test_support.hpp"

using namespace crossview;
using testing_support::FixtureWriter;
using testing_support::TempDir;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void criterion(int id, const char* name, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (limit_s > 0 && secs >= limit_s) {
    o.pass = false;
    o.detail += " (runtime limit " + std::to_string(limit_s) + " s exceeded)";
  }
  if (!o.pass) ++failures;
  std::printf("%s criterion %2d: %s | %s | %.3f s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(),
              secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

Matrix random_symmetric(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) a(i, j) = a(j, i) = u(rng);
  return a;
}

Outcome whitening_identity() {
  std::mt19937_64 rng(1001);
  std::normal_distribution<double> g(0.0, 1.0);
  const std::size_t n = 500, d = 64, k = 32;
  // Correlated, shifted, anisotropic data.
  Matrix mix(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) mix(i, j) = g(rng) / std::sqrt(double(d)) * (1.0 + 0.1 * j);
  Matrix x(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<double> z(d);
    for (auto& v : z) v = g(rng);
    for (std::size_t c = 0; c < d; ++c) {
      double s = 5.0;
      for (std::size_t j = 0; j < d; ++j) s += mix(c, j) * z[j];
      x(r, c) = s;
    }
  }
  const auto m = fit_whitening(x, {k, 0.0, false});
  const auto w = apply_whitening(m, x);
  std::vector<double> mean(k, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < k; ++c) mean[c] += w(r, c) / n;
  double max_mean = 0, max_dev = 0;
  for (double v : mean) max_mean = std::max(max_mean, std::abs(v));
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b) {
      double c = 0;
      for (std::size_t r = 0; r < n; ++r) c += (w(r, a) - mean[a]) * (w(r, b) - mean[b]);
      c /= double(n - 1);
      max_dev = std::max(max_dev, std::abs(c - (a == b ? 1.0 : 0.0)));
    }
  return {max_dev <= 1e-4 && max_mean <= 1e-6,
          fmt("max |cov - I| = %.3g (tol 1e-4), max |mean| = %.3g (tol 1e-6)", max_dev, max_mean)};
}

Outcome eigen_residuals() {
  std::mt19937_64 rng(2002);
  double worst_res = 0, worst_orth = 0;
  bool descending = true;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 1 + static_cast<std::size_t>(t) * 63 / 49;
    const auto a = random_symmetric(rng, n);
    const auto r = symmetric_eigen(a);
    for (std::size_t i = 0; i < n; ++i) {
      if (i > 0 && r.values[i] > r.values[i - 1]) descending = false;
      double res = 0;
      for (std::size_t row = 0; row < n; ++row) {
        double av = 0;
        for (std::size_t c = 0; c < n; ++c) av += a(row, c) * r.vectors(i, c);
        const double e = av - r.values[i] * r.vectors(i, row);
        res += e * e;
      }
      worst_res = std::max(worst_res, std::sqrt(res) / std::max(1.0, std::abs(r.values[i])));
      for (std::size_t j = 0; j < n; ++j) {
        double dot = 0;
        for (std::size_t c = 0; c < n; ++c) dot += r.vectors(i, c) * r.vectors(j, c);
        worst_orth = std::max(worst_orth, std::abs(dot - (i == j ? 1.0 : 0.0)));
      }
    }
  }
  return {worst_res <= 1e-8 && worst_orth <= 1e-6 && descending,
          fmt("worst residual/max(1,|l|) = %.3g (tol 1e-8), worst orthonormality error = %.3g (tol 1e-6), descending=%g",
              worst_res, worst_orth, descending ? 1 : 0)};
}

Outcome retrieval_equivalence() {
  std::mt19937_64 rng(3003);
  auto gallery = testing_support::random_collection(rng, 1000, 128, false, "g");
  // Ties: exact duplicates under different ids, in both index orders.
  for (int i = 0; i < 25; ++i) gallery.records[999 - i].vector = gallery.records[i].vector;
  auto queries = testing_support::random_collection(rng, 200, 128, false, "q");
  for (int i = 0; i < 10; ++i) queries.records[i].vector = gallery.records[i].vector;
  const std::size_t k = 10;

  std::vector<RankedList> sequential;
  for (const auto& q : queries.records) sequential.push_back(search_topk(q, gallery, k));

  // Longhand scan with no shared code.
  std::size_t order_mismatch = 0;
  double max_score_diff = 0;
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    const auto& q = queries.records[qi];
    std::vector<std::pair<double, std::string>> all;
    for (const auto& g : gallery.records) {
      double dp = 0, na = 0, nb = 0;
      for (std::size_t i = 0; i < 128; ++i) {
        dp += double(q.vector[i]) * g.vector[i];
        na += double(q.vector[i]) * q.vector[i];
        nb += double(g.vector[i]) * g.vector[i];
      }
      all.emplace_back(dp / (std::sqrt(na) * std::sqrt(nb)), g.id);
    }
    std::sort(all.begin(), all.end(),
              [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
    for (std::size_t j = 0; j < k; ++j) {
      if (sequential[qi].hits[j].id != all[j].second) ++order_mismatch;
      max_score_diff = std::max(max_score_diff, std::abs(sequential[qi].hits[j].score - all[j].first));
    }
  }

  bool identical = true;
  for (std::size_t p : {1u, 2u, 8u}) identical = identical && batch_search(queries, gallery, k, p) == sequential;
  // Tie rule visible in the output: the duplicate pair appears lower id first.
  const bool tie_ok = sequential[0].hits[0].id == "g0" && sequential[0].hits[1].id == "g999";
  return {identical && order_mismatch == 0 && max_score_diff <= 1e-12 && tie_ok,
          fmt("parallelism {1,2,8} identical=%g, order mismatches vs longhand scan=%g, max score diff=%.3g",
              identical ? 1 : 0, double(order_mismatch), max_score_diff) +
              (tie_ok ? ", duplicate tie ordered by id" : ", TIE ORDER WRONG")};
}

Outcome recall_constructed() {
  GroundTruth gt;
  for (int j = 0; j < 10; ++j) gt.gallery_labels["g" + std::to_string(j)] = "L" + std::to_string(j);
  const int ranks[4] = {1, 2, 3, 7};
  std::vector<RankedList> results;
  for (int q = 0; q < 4; ++q) {
    gt.query_labels["q" + std::to_string(q)] = {"L" + std::to_string(q)};
    RankedList r{"q" + std::to_string(q), {}};
    std::vector<std::string> others;
    for (int j = 0; j < 10; ++j)
      if (j != q) others.push_back("g" + std::to_string(j));
    for (int pos = 1, o = 0; pos <= 10; ++pos)
      r.hits.push_back({pos == ranks[q] ? "g" + std::to_string(q) : others[o++], 1.0 - 0.05 * pos});
    results.push_back(r);
  }
  const std::vector<std::size_t> ks{1, 5, 10};
  const auto rep = evaluate_run(results, gt, ks, 10);
  const bool ok = rep.recalls[0].value == 0.25 && rep.recalls[1].value == 0.75 && rep.recalls[2].value == 1.0;
  return {ok, fmt("R@1=%.17g R@5=%.17g R@10=%.17g (expected 0.25, 0.75, 1 exactly)", rep.recalls[0].value,
                  rep.recalls[1].value, rep.recalls[2].value)};
}

Outcome one_percent_rule() {
  const std::size_t k951 = k_for_one_percent(951);
  std::mt19937_64 rng(5005);
  int violations = 0;
  const int fixtures = 30;
  for (int f = 0; f < fixtures; ++f) {
    auto gallery = testing_support::random_collection(rng, 951, 16, false, "g");
    std::uniform_int_distribution<int> lab(0, 950);
    for (std::size_t i = 0; i < gallery.size(); ++i) gallery.records[i].label = "B" + std::to_string(i);
    auto queries = testing_support::random_collection(rng, 60, 16, false, "q");
    std::normal_distribution<float> noise(0.0f, 1.5f);
    for (auto& q : queries.records) {
      const int t = lab(rng);
      q.label = "B" + std::to_string(t);
      for (std::size_t c = 0; c < 16; ++c) q.vector[c] = gallery.records[t].vector[c] + noise(rng);
    }
    const auto results = batch_search(queries, gallery, 10, 1);
    const std::vector<std::size_t> ks{1, 5, 10};
    const auto rep = evaluate_run(results, ground_truth_from_collections(queries, gallery), ks, 951);
    if (rep.k_one_percent != k951 || rep.r_at_one_percent > rep.recalls[2].value) ++violations;
  }
  return {k951 == 9 && violations == 0,
          fmt("k_for_one_percent(951)=%g (expected 9), R@1%% > R@10 on %g of %g random fixtures", double(k951),
              violations, fixtures)};
}

Outcome haversine_accuracy() {
  const double quarter = haversine_km({0, 0}, {0, 90});
  const double half = haversine_km({90, 0}, {-90, 0});
  std::mt19937_64 rng(6006);
  std::uniform_real_distribution<double> lat(-90, 90), lon(-179.999999, 180);
  int bad = 0;
  for (int i = 0; i < 1000; ++i) {
    const GeoCoordinate a{lat(rng), lon(rng)}, b{lat(rng), lon(rng)}, c{lat(rng), lon(rng)};
    const double ab = haversine_km(a, b), ba = haversine_km(b, a), bc = haversine_km(b, c), ac = haversine_km(a, c);
    if (haversine_km(a, a) != 0.0 || std::abs(ab - ba) > 1e-9 || ac > ab + bc + 1e-9) ++bad;
  }
  const bool ok = std::abs(quarter - 10007.543) <= 0.01 && std::abs(half - 20015.087) <= 0.01 && bad == 0;
  return {ok, fmt("quarter arc %.4f km, half arc %.4f km, metric violations %g/1000", quarter, half, bad)};
}

Outcome whitening_helps() {
  std::mt19937_64 rng(7007);
  std::normal_distribution<float> g(0.0f, 1.0f);
  const std::size_t classes = 200, informative = 16, d = 64;
  const float nuisance_sigma = 8.0f, domain_offset = 8.0f, item_noise = 0.3f, filler_noise = 0.1f;
  std::vector<std::vector<float>> centers(classes, std::vector<float>(informative));
  for (auto& c : centers)
    for (auto& v : c) v = g(rng);
  auto embed = [&](std::size_t cls, bool query) {
    std::vector<float> v(d);
    for (std::size_t i = 0; i < informative; ++i) v[i] = centers[cls][i] + item_noise * g(rng);
    for (std::size_t i = informative; i < informative + 2; ++i)
      v[i] = nuisance_sigma * g(rng) + (query ? domain_offset : 0.0f);
    for (std::size_t i = informative + 2; i < d; ++i) v[i] = filler_noise * g(rng);
    return v;
  };
  EmbeddingCollection gallery, queries;
  gallery.dim = queries.dim = d;
  queries.role = CollectionRole::Query;
  for (std::size_t c = 0; c < classes; ++c) {
    const std::string label = "C" + std::to_string(c);
    gallery.records.push_back({"g" + std::to_string(c), label, embed(c, false), std::nullopt});
    queries.records.push_back({"q" + std::to_string(c), label, embed(c, true), std::nullopt});
  }
  const auto gt = ground_truth_from_collections(queries, gallery);
  const auto raw = recall_at_k(batch_search(queries, gallery, 1, 1), gt, 1);
  const auto model = fit_whitening(gallery, {16, std::nullopt, true});
  const auto white = recall_at_k(batch_search(apply_whitening(model, queries), apply_whitening(model, gallery), 1, 1), gt, 1);
  return {(white - raw) * 100.0 >= 10.0,
          fmt("raw R@1 = %.2f%%, whitened (k=16) R@1 = %.2f%%, gain %.2f points (need >= 10)", raw * 100, white * 100,
              (white - raw) * 100)};
}

Outcome mock_pipeline() {
  TempDir dir;
  FixtureWriter fx(dir / "fixtures");
  std::mt19937_64 rng(8008);
  std::normal_distribution<float> g(0.0f, 1.0f);
  const std::size_t groups = 20, d = 32;
  EmbeddingCollection gallery, tiles;
  gallery.dim = tiles.dim = d;
  tiles.role = CollectionRole::Query;
  std::vector<QueryGroup> manifest;
  std::vector<std::string> expected;
  for (std::size_t i = 0; i < groups; ++i) {
    const GeoCoordinate c{-40.0 + 4.0 * i, 10.0 + 3.3 * i};
    const std::string place = "Building " + std::to_string(i);
    QueryGroup qg{"grp" + std::to_string(i), {}};
    for (int j = 0; j < 2; ++j) {
      const std::string ref = "street_" + std::to_string(i) + "_" + std::to_string(j) + ".jpg";
      fx.add_chain(ref, "Photo " + std::to_string(j) + " of " + place, place, c);
      qg.image_refs.push_back(ref);
    }
    manifest.push_back(qg);
    std::vector<float> v(d);
    for (auto& x : v) x = g(rng);
    gallery.records.push_back({"gt_" + std::to_string(i), place, v, std::nullopt});
    for (auto& x : v) x += 0.05f * g(rng);
    tiles.records.push_back({tile_key(c, 18), place, v, std::nullopt});
    expected.push_back("gt_" + std::to_string(i));
  }
  for (std::size_t i = 0; i < 30; ++i) {
    std::vector<float> v(d);
    for (auto& x : v) x = g(rng);
    gallery.records.push_back({"distractor_" + std::to_string(i), "none", v, std::nullopt});
  }
  fx.save();

  // Confirm the planted nearest neighbours with a longhand scan before trusting the fixture.
  std::size_t planted_ok = 0;
  for (std::size_t i = 0; i < groups; ++i) {
    double best = -2;
    std::string best_id;
    for (const auto& gr : gallery.records) {
      double dp = 0, na = 0, nb = 0;
      for (std::size_t c = 0; c < d; ++c) {
        dp += double(tiles.records[i].vector[c]) * gr.vector[c];
        na += double(tiles.records[i].vector[c]) * tiles.records[i].vector[c];
        nb += double(gr.vector[c]) * gr.vector[c];
      }
      const double s = dp / std::sqrt(na * nb);
      if (s > best) best = s, best_id = gr.id;
    }
    if (best_id == expected[i]) ++planted_ok;
  }

  const auto clients = make_mock_clients(fx.root());
  TileRetriever retriever(gallery, tiles);
  QuerySetOptions o;
  o.pipeline.tile_dir = dir / "tiles_out";
  o.k = 5;
  const auto result = run_query_set(manifest, clients, o, &retriever);
  std::size_t produced = 0, rank1 = 0, stage_failures = 0;
  for (std::size_t i = 0; i < result.results.size(); ++i) {
    const auto& r = result.results[i];
    if (r.located.query.ok()) ++produced;
    for (const auto& s : r.located.query.trace) stage_failures += s.ok ? 0 : 1;
    if (r.located.hits && !r.located.hits->hits.empty() && r.located.hits->hits[0].id == expected[i]) ++rank1;
  }
  const bool ok = planted_ok == groups && produced == groups && stage_failures == 0 && rank1 == groups &&
                  result.summary.succeeded == groups;
  return {ok, fmt("%g/20 satellite queries produced, %g stage failures, ", double(produced), double(stage_failures)) +
                  fmt("%g/20 ground-truth items at rank 1", double(rank1))};
}

Outcome localization_harness() {
  const double offsets[] = {0.0, 0.3, 0.7, 1.5, 3.0, 10.0};
  const std::vector<double> thresholds{0.5, 1.0, 2.0, 5.0};
  // Offsets cycle over 20 queries: counts per offset are 4,4,3,3,3,3.
  // <=0.5 km: 0, 0.3 -> 8; <=1: +0.7 -> 11; <=2: +1.5 -> 14; <=5: +3.0 -> 17.
  const std::size_t expected_matched[] = {8, 11, 14, 17};
  const double expected_pct[] = {40.0, 55.0, 70.0, 85.0};

  std::mt19937_64 rng(9009);
  std::uniform_real_distribution<double> lat(-60, 60), lon(-170, 170);
  std::map<std::string, GeoCoordinate> truth, pred;
  double worst_offset_err = 0;
  for (int i = 0; i < 20; ++i) {
    const GeoCoordinate base{lat(rng), lon(rng)};
    const double off = offsets[i % 6];
    const GeoCoordinate moved{base.lat + off / kEarthRadiusKm * 180.0 / std::numbers::pi, base.lon};
    // Chord length between unit-sphere points as an independent distance check.
    auto xyz = [](GeoCoordinate c) {
      const double la = c.lat * std::numbers::pi / 180, lo = c.lon * std::numbers::pi / 180;
      return std::array<double, 3>{std::cos(la) * std::cos(lo), std::cos(la) * std::sin(lo), std::sin(la)};
    };
    const auto a = xyz(base), b = xyz(moved);
    const double chord = std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
    worst_offset_err = std::max(worst_offset_err, std::abs(2 * kEarthRadiusKm * std::asin(chord / 2) - off));
    worst_offset_err = std::max(worst_offset_err, std::abs(haversine_km(base, moved) - off));
    truth["q" + std::to_string(i)] = base;
    pred["q" + std::to_string(i)] = moved;
  }
  const auto rep = localization_accuracy(pred, truth, thresholds);
  bool ok = rep.query_count == 20 && rep.rows.size() == 4 && worst_offset_err < 1e-6;
  std::string detail;
  for (std::size_t t = 0; t < rep.rows.size(); ++t) {
    ok = ok && rep.rows[t].matched == expected_matched[t] && rep.rows[t].accuracy_percent == expected_pct[t];
    detail += fmt("@%g km %g/20 (%.2f%%) ", thresholds[t], double(rep.rows[t].matched), rep.rows[t].accuracy_percent);
  }
  return {ok, detail + fmt("expected 8/11/14/17; planted offset error %.2g km", worst_offset_err)};
}

Outcome format_round_trips() {
  TempDir dir;
  std::mt19937_64 rng(10010);
  std::uniform_int_distribution<std::size_t> n_dist(1, 60), d_dist(1, 24);
  int emb_bad = 0, model_bad = 0;
  for (int t = 0; t < 100; ++t) {
    const auto c = testing_support::random_collection(rng, n_dist(rng), d_dist(rng), t % 2 == 0,
                                                      "id_" + std::to_string(t) + "_");
    write_collection(c, dir / "a.emb1", FileFormat::Emb1);
    const auto back = read_collection(dir / "a.emb1", FileFormat::Emb1);
    write_collection(back, dir / "b.emb1", FileFormat::Emb1);
    if (testing_support::read_file(dir / "a.emb1") != testing_support::read_file(dir / "b.emb1")) ++emb_bad;

    const std::size_t d = d_dist(rng);
    const auto fit_data = testing_support::random_collection(rng, d + 2 + n_dist(rng), d);
    std::uniform_int_distribution<std::size_t> k_dist(1, d);
    WhiteningOptions wo{k_dist(rng), std::nullopt, t % 3 != 0};
    if (t % 4 == 0) wo.epsilon = 0.01 * t;
    save_model(fit_whitening(fit_data, wo), dir / "m1.json");
    save_model(load_model(dir / "m1.json"), dir / "m2.json");
    if (testing_support::read_file(dir / "m1.json") != testing_support::read_file(dir / "m2.json")) ++model_bad;
  }
  return {emb_bad == 0 && model_bad == 0,
          fmt("EMB1 mismatches %g/100, model mismatches %g/100", emb_bad, model_bad)};
}

}  // namespace

int main() {
  criterion(1, "whitened fitting data has identity covariance", 5.0, whitening_identity);
  criterion(2, "eigensolver residuals, ordering, orthonormality", 10.0, eigen_residuals);
  criterion(3, "batch search equals sequential full scan", 10.0, retrieval_equivalence);
  criterion(4, "recall on constructed 10-gallery/4-query fixture", 0, recall_constructed);
  criterion(5, "R@1% rule consistency", 0, one_percent_rule);
  criterion(6, "haversine accuracy and metric properties", 0, haversine_accuracy);
  criterion(7, "whitening improves synthetic cross-domain retrieval", 0, whitening_helps);
  criterion(8, "end-to-end mock pipeline with retrieval", 5.0, mock_pipeline);
  criterion(9, "localization accuracy harness", 0, localization_harness);
  criterion(10, "EMB1 and model file round-trips", 0, format_round_trips);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
