#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "crossview/error.hpp"
#include "crossview/evaluation.hpp"
#include "test_support.hpp"

using namespace crossview;
using testing_support::TempDir;

namespace {

// Queries q<i> are relevant to label "L<i>"; gallery g<j> carries label "L<j>".
GroundTruth gt_for(std::size_t queries, std::size_t gallery) {
  GroundTruth gt;
  for (std::size_t i = 0; i < queries; ++i) gt.query_labels["q" + std::to_string(i)] = {"L" + std::to_string(i)};
  for (std::size_t j = 0; j < gallery; ++j) gt.gallery_labels["g" + std::to_string(j)] = "L" + std::to_string(j);
  return gt;
}

// A ranked list for query i whose relevant item g<i> sits at 1-based `rank`.
RankedList with_rank(std::size_t i, std::size_t rank, std::size_t gallery, std::size_t len) {
  RankedList r{"q" + std::to_string(i), {}};
  std::size_t filler = 0;
  for (std::size_t pos = 1; pos <= len; ++pos) {
    if (pos == rank) {
      r.hits.push_back({"g" + std::to_string(i), 1.0 - pos * 0.01});
      continue;
    }
    if (filler == i) ++filler;
    r.hits.push_back({"g" + std::to_string(filler % gallery), 1.0 - pos * 0.01});
    ++filler;
  }
  return r;
}

GeoCoordinate north_of(GeoCoordinate c, double km) {
  return {c.lat + km / kEarthRadiusKm * 180.0 / std::numbers::pi, c.lon};
}

}  // namespace

TEST(Recall, SingleQueryRankOne) {
  const auto gt = gt_for(1, 5);
  const std::vector<RankedList> rs{with_rank(0, 1, 5, 5)};
  EXPECT_DOUBLE_EQ(recall_at_k(rs, gt, 1), 1.0);
}

TEST(Recall, TwoQueriesRanksOneAndThree) {
  const auto gt = gt_for(2, 10);
  const std::vector<RankedList> rs{with_rank(0, 1, 10, 10), with_rank(1, 3, 10, 10)};
  EXPECT_DOUBLE_EQ(recall_at_k(rs, gt, 1), 0.5);
  EXPECT_DOUBLE_EQ(recall_at_k(rs, gt, 5), 1.0);
}

TEST(Recall, MultiRelevantRatio) {
  GroundTruth gt;
  gt.query_labels["q"] = {"A"};
  gt.gallery_labels = {{"a1", "A"}, {"a2", "A"}, {"b", "B"}, {"c", "C"}};
  const std::vector<RankedList> rs{{"q", {{"a1", 0.9}, {"b", 0.8}, {"a2", 0.7}, {"c", 0.1}}}};
  EXPECT_DOUBLE_EQ(recall_at_k(rs, gt, 1), 0.5);
  EXPECT_DOUBLE_EQ(recall_at_k(rs, gt, 2), 0.5);
  EXPECT_DOUBLE_EQ(recall_at_k(rs, gt, 3), 1.0);
}

TEST(Recall, MissingGroundTruth) {
  const auto gt = gt_for(1, 5);
  const std::vector<RankedList> rs{{"zzz", {{"g0", 1.0}}}};
  try {
    recall_at_k(rs, gt, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingGroundTruth);
  }
}

TEST(Recall, NonDecreasingInK) {
  std::mt19937_64 rng(1);
  const auto gt = gt_for(40, 60);
  std::uniform_int_distribution<std::size_t> rank(1, 60);
  std::vector<RankedList> rs;
  for (std::size_t i = 0; i < 40; ++i) rs.push_back(with_rank(i, rank(rng), 60, 60));
  double prev = 0;
  for (std::size_t k = 1; k <= 60; ++k) {
    const double r = recall_at_k(rs, gt, k);
    EXPECT_GE(r, prev);
    EXPECT_LE(r, 1.0);
    prev = r;
  }
  EXPECT_DOUBLE_EQ(prev, 1.0);
}

TEST(OnePercent, FloorRule) {
  EXPECT_EQ(k_for_one_percent(951), 9u);
  EXPECT_EQ(k_for_one_percent(50), 1u);
  EXPECT_EQ(k_for_one_percent(1000), 10u);
  EXPECT_EQ(k_for_one_percent(1), 1u);
  EXPECT_EQ(k_for_one_percent(199), 1u);
  EXPECT_EQ(k_for_one_percent(200), 2u);
}

TEST(Haversine, Values) {
  EXPECT_DOUBLE_EQ(haversine_km({12.3, 45.6}, {12.3, 45.6}), 0.0);
  EXPECT_NEAR(haversine_km({0, 0}, {0, 90}), 10007.543, 0.01);
  EXPECT_NEAR(haversine_km({90, 0}, {-90, 0}), 20015.087, 0.01);
  EXPECT_NEAR(haversine_km({0, 0}, {0, 90}), std::numbers::pi * kEarthRadiusKm / 2, 1e-9);
}

TEST(Localization, AllExact) {
  std::map<std::string, GeoCoordinate> t{{"a", {1, 2}}, {"b", {3, 4}}};
  const std::vector<double> th{0.5, 1, 2, 5};
  const auto r = localization_accuracy(t, t, th);
  EXPECT_EQ(r.query_count, 2u);
  for (const auto& row : r.rows) {
    EXPECT_DOUBLE_EQ(row.accuracy_percent, 100.0);
    EXPECT_EQ(row.matched, 2u);
  }
}

TEST(Localization, OneOffBySevenHundredMetres) {
  const GeoCoordinate a{48.0, 2.0}, b{10.0, 20.0};
  const auto off = north_of(a, 0.7);
  ASSERT_NEAR(haversine_km(a, off), 0.7, 1e-6);
  std::map<std::string, GeoCoordinate> truth{{"a", a}, {"b", b}}, pred{{"a", off}, {"b", b}};
  const std::vector<double> th{0.5, 1.0};
  const auto r = localization_accuracy(pred, truth, th);
  EXPECT_DOUBLE_EQ(r.rows[0].accuracy_percent, 50.0);
  EXPECT_EQ(r.rows[0].matched, 1u);
  EXPECT_DOUBLE_EQ(r.rows[1].accuracy_percent, 100.0);
}

TEST(Localization, MissingPredictionIsAMiss) {
  std::map<std::string, GeoCoordinate> truth{{"a", {0, 0}}, {"b", {0, 0}}}, pred{{"a", {0, 0}}};
  const std::vector<double> th{1.0};
  const auto r = localization_accuracy(pred, truth, th);
  EXPECT_EQ(r.rows[0].matched, 1u);
  EXPECT_DOUBLE_EQ(r.rows[0].accuracy_percent, 50.0);
  std::map<std::string, GeoCoordinate> stray{{"c", {0, 0}}};
  EXPECT_THROW(localization_accuracy(stray, truth, th), Error);
  const std::vector<double> bad{-1.0};
  EXPECT_THROW(localization_accuracy(pred, truth, bad), Error);
}

TEST(EvaluateRun, ToyThreeQueries) {
  // Ranks 1, 4 and 12 in a 20-item gallery.
  const auto gt = gt_for(3, 20);
  const std::vector<RankedList> rs{with_rank(0, 1, 20, 15), with_rank(1, 4, 20, 15), with_rank(2, 12, 20, 15)};
  const std::vector<std::size_t> ks{1, 5, 10};
  const auto rep = evaluate_run(rs, gt, ks, 20);
  EXPECT_EQ(rep.query_count, 3u);
  EXPECT_EQ(rep.gallery_size, 20u);
  ASSERT_EQ(rep.recalls.size(), 3u);
  EXPECT_DOUBLE_EQ(rep.recalls[0].value, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(rep.recalls[1].value, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(rep.recalls[2].value, 2.0 / 3.0);
  EXPECT_EQ(rep.k_one_percent, 1u);
  EXPECT_DOUBLE_EQ(rep.r_at_one_percent, 1.0 / 3.0);
}

TEST(EvaluateRun, AllAtRankOne) {
  const auto gt = gt_for(4, 8);
  std::vector<RankedList> rs;
  for (std::size_t i = 0; i < 4; ++i) rs.push_back(with_rank(i, 1, 8, 3));
  const std::vector<std::size_t> ks{1};
  const auto rep = evaluate_run(rs, gt, ks, 8);
  ASSERT_EQ(rep.recalls.size(), 1u);
  EXPECT_EQ(rep.recalls[0].k, 1u);
  EXPECT_DOUBLE_EQ(rep.recalls[0].value, 1.0);
}

TEST(Report, JsonRoundTripAndTables) {
  const auto gt = gt_for(2, 10);
  const std::vector<RankedList> rs{with_rank(0, 1, 10, 10), with_rank(1, 3, 10, 10)};
  const std::vector<std::size_t> ks{1, 5, 10};
  auto rep = evaluate_run(rs, gt, ks, 10);
  std::map<std::string, GeoCoordinate> t{{"q0", {0, 0}}};
  const std::vector<double> th{0.5, 1, 2, 5};
  rep.localization = localization_accuracy(t, t, th);
  EXPECT_EQ(report_from_json(report_to_json(rep)), rep);
  const auto table = format_recall_table(rep);
  EXPECT_NE(table.find("R@1"), std::string::npos);
  EXPECT_NE(table.find("50.00"), std::string::npos);
  EXPECT_NE(table.find("100.00"), std::string::npos);
  const auto loc = format_localization_table(*rep.localization);
  EXPECT_NE(loc.find("0.5 km"), std::string::npos);
  EXPECT_NE(loc.find("Matched Samples (out of 1)"), std::string::npos);
}

TEST(GroundTruthFiles, LoadStringAndArrayLabels) {
  TempDir dir;
  testing_support::write_file(dir / "q.jsonl",
                              "{\"query_id\":\"q0\",\"label\":\"A\"}\n{\"query_id\":\"q1\",\"label\":[\"B\",\"C\"]}\n");
  testing_support::write_file(dir / "g.jsonl", "{\"id\":\"g0\",\"label\":\"A\"}\n{\"id\":\"g1\",\"label\":\"B\"}\n");
  const auto gt = load_ground_truth(dir / "q.jsonl", dir / "g.jsonl");
  EXPECT_EQ(gt.query_labels.at("q1"), (std::vector<std::string>{"B", "C"}));
  EXPECT_EQ(gt.gallery_labels.at("g0"), "A");
  std::map<std::string, GeoCoordinate> coords{{"x", {1.25, -3.5}}};
  testing_support::write_file(dir / "c.jsonl", coordinates_to_jsonl(coords));
  EXPECT_EQ(load_coordinates(dir / "c.jsonl"), coords);
}
