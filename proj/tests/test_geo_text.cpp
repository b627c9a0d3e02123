#include <gtest/gtest.h>

#include <random>

#include "crossview/geo.hpp"
#include "crossview/text.hpp"

using namespace crossview;

TEST(Geo, Validity) {
  EXPECT_TRUE(is_valid({90, 180}));
  EXPECT_TRUE(is_valid({-90, -179.999}));
  EXPECT_FALSE(is_valid({-90, -180}));
  EXPECT_FALSE(is_valid({90.0001, 0}));
  EXPECT_FALSE(is_valid({std::nan(""), 0}));
}

TEST(Geo, HaversineMetricProperties) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> lat(-90, 90), lon(-179.9999, 180);
  for (int i = 0; i < 300; ++i) {
    const GeoCoordinate a{lat(rng), lon(rng)}, b{lat(rng), lon(rng)}, c{lat(rng), lon(rng)};
    EXPECT_DOUBLE_EQ(haversine_km(a, a), 0.0);
    EXPECT_NEAR(haversine_km(a, b), haversine_km(b, a), 1e-9);
    EXPECT_LE(haversine_km(a, c), haversine_km(a, b) + haversine_km(b, c) + 1e-9);
  }
}

TEST(Geo, TileKey) {
  EXPECT_EQ(tile_key({51.5007, -0.1246}, 18), "51.50070_-0.12460_18");
  EXPECT_EQ(tile_key({-0.000001, 0.0}, 3), "0.00000_0.00000_3");
  EXPECT_EQ(tile_key({1.234564, 2.0}, 18), tile_key({1.234561, 2.0}, 18));
}

TEST(Text, Normalization) {
  EXPECT_EQ(trim("  a b \n"), "a b");
  EXPECT_EQ(normalize_place_name("  Eiffel   TOWER\t"), "eiffel tower");
  EXPECT_EQ(sanitize_ref("dir/img 001.jpg"), "dir_img_001.jpg");
}

TEST(Text, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Text, TimestampShape) {
  const auto t = utc_timestamp();
  ASSERT_EQ(t.size(), 24u);
  EXPECT_EQ(t[10], 'T');
  EXPECT_EQ(t.back(), 'Z');
}
