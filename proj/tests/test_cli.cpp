#include <gtest/gtest.h>

#include <cstdlib>
#include <json.hpp>
#include <sstream>

#include "cli.hpp"
#include "crossview/evaluation.hpp"
#include "test_support.hpp"

using testing_support::FixtureWriter;
using testing_support::TempDir;
using testing_support::write_file;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = crossview::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

// Ranks of the relevant item: q0 -> 1, q1 -> 2, q2 -> 1.
void write_toy(const TempDir& dir) {
  write_file(dir / "g.csv",
             "id,label,lat,lon,v0,v1\n"
             "g0,A,,,1,0\n"
             "g1,B,,,0,1\n"
             "g2,C,,,-1,0\n"
             "g3,D,,,0,-1\n");
  write_file(dir / "q.csv",
             "id,label,lat,lon,v0,v1\n"
             "q0,A,,,1,0.1\n"
             "q1,B,,,0.7,0.6\n"
             "q2,C,,,-1,-0.1\n");
}

}  // namespace

TEST(Cli, EvalRetrievalToy) {
  TempDir dir;
  write_toy(dir);
  const auto r = run({"eval", "retrieval", "--gallery", (dir / "g.csv").string(), "--queries",
                      (dir / "q.csv").string(), "--ks", "1,5", "--out", (dir / "rep.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("R@1"), std::string::npos);
  EXPECT_NE(r.out.find("66.67"), std::string::npos);
  EXPECT_NE(r.out.find("100.00"), std::string::npos);
  const auto rep = crossview::report_from_json(testing_support::read_file(dir / "rep.json"));
  EXPECT_DOUBLE_EQ(rep.recalls.at(0).value, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(rep.recalls.at(1).value, 1.0);
}

TEST(Cli, MissingGalleryIsUsageError) {
  const auto r = run({"search", "--queries", "q.csv"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--gallery"), std::string::npos);
  EXPECT_EQ(run({"eval", "retrieval", "--gallery", "/no/such/file.csv", "--queries", "/no/q.csv"}).code, 1);
}

TEST(Cli, LiveWithoutGeocodeKey) {
  unsetenv("GEOCODE_API_KEY");
  const auto r = run({"geolocate", "--clients", "live", "--image", "img_001"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("GEOCODE_API_KEY"), std::string::npos);
}

TEST(Cli, SearchWhitenAndIngest) {
  TempDir dir;
  std::mt19937_64 rng(3);
  auto g = testing_support::random_collection(rng, 40, 6, false, "g");
  auto q = testing_support::random_collection(rng, 5, 6, false, "q");
  crossview::write_collection(g, dir / "g.emb1", crossview::FileFormat::Emb1);
  crossview::write_collection(q, dir / "q.emb1", crossview::FileFormat::Emb1);
  EXPECT_EQ(run({"ingest", "--gallery", (dir / "g.emb1").string(), "--out", (dir / "g.csv").string()}).code, 0);
  EXPECT_EQ(crossview::read_collection(dir / "g.csv", crossview::FileFormat::Csv).records, g.records);
  EXPECT_EQ(run({"whiten", "fit", "--gallery", (dir / "g.emb1").string(), "--target-dim", "4", "--out",
                 (dir / "m.json").string()}).code, 0);
  EXPECT_EQ(run({"whiten", "apply", "--model", (dir / "m.json").string(), "--queries", (dir / "q.emb1").string(),
                 "--out", (dir / "qw.emb1").string()}).code, 0);
  EXPECT_EQ(crossview::read_collection(dir / "qw.emb1", crossview::FileFormat::Emb1).dim, 4u);
  const auto s = run({"search", "--gallery", (dir / "g.emb1").string(), "--queries", (dir / "q.emb1").string(),
                      "--model", (dir / "m.json").string(), "--k", "3", "--parallelism", "2"});
  ASSERT_EQ(s.code, 0) << s.err;
  const auto results = crossview::results_from_jsonl(s.out);
  ASSERT_EQ(results.size(), 5u);
  EXPECT_EQ(results[0].hits.size(), 3u);
}

TEST(Cli, GeolocateMockAndLocalize) {
  TempDir dir;
  FixtureWriter fx(dir / "fx");
  fx.add_chain("img_a", "alpha", "Alpha", {10.0, 10.0});
  fx.add_chain("img_b", "beta", "Beta", {20.0, 20.0});
  fx.add_image("img_c", {{"", "", "unknown"}});
  fx.save();
  write_file(dir / "m.jsonl",
             "{\"group_id\":\"A\",\"image_refs\":[\"img_a\"]}\n"
             "{\"group_id\":\"B\",\"image_refs\":[\"img_b\"]}\n"
             "{\"group_id\":\"C\",\"image_refs\":[\"img_c\"]}\n");
  const auto r = run({"geolocate", "--manifest", (dir / "m.jsonl").string(), "--fixtures", fx.root().string(),
                      "--out", (dir / "out.jsonl").string(), "--summary", (dir / "sum.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto sum = nlohmann::json::parse(testing_support::read_file(dir / "sum.json"));
  EXPECT_EQ(sum["succeeded"], 2);
  EXPECT_EQ(sum["failures"]["infer"], 1);

  write_file(dir / "truth.jsonl",
             "{\"id\":\"A\",\"lat\":10.0,\"lon\":10.0}\n"
             "{\"id\":\"B\",\"lat\":20.0,\"lon\":20.005}\n"
             "{\"id\":\"C\",\"lat\":0.0,\"lon\":0.0}\n");
  const auto l = run({"eval", "localize", "--predictions", (dir / "out.jsonl").string(), "--ground-truth",
                      (dir / "truth.jsonl").string(), "--thresholds", "0.5,1"});
  ASSERT_EQ(l.code, 0) << l.err;
  EXPECT_NE(l.out.find("33.33"), std::string::npos);
  EXPECT_NE(l.out.find("66.67"), std::string::npos);

  const auto single = run({"geolocate", "--image", "img_c", "--fixtures", fx.root().string(), "--tiles-dir",
                           (dir / "t").string()});
  EXPECT_EQ(single.code, 1);
}

TEST(Cli, BuildDatasetAndFixtures) {
  TempDir dir;
  FixtureWriter fx(dir / "fx");
  fx.add_street_file("images/c0.jpg", "c0");
  fx.add_image("Colosseum", {{"images/c0.jpg", "Colosseum", "Rome"}});
  fx.add_place("Colosseum", {41.8902, 12.4922});
  fx.add_tile({41.8902, 12.4922}, 18, "tile");
  fx.save();
  write_file(dir / "seeds.txt", "Colosseum\n\n# comment\n");
  const auto r = run({"build-dataset", "--seeds", (dir / "seeds.txt").string(), "--fixtures", fx.root().string(),
                      "--out", (dir / "ds").string(), "--per-place", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(std::filesystem::exists(dir / "ds" / "manifest.json"));
  EXPECT_EQ(run({"fixtures", "check", "--fixtures", fx.root().string()}).code, 0);
  const auto key = run({"fixtures", "key", "--fixtures", fx.root().string(), "--image", "Colosseum"});
  ASSERT_EQ(key.code, 0);
  EXPECT_EQ(key.out, crossview::sha256_hex(fx.prompt_for({"Colosseum"})) + "\n");
}
