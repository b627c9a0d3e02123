#include "crossview/geo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace crossview {

bool is_valid(const GeoCoordinate& c) noexcept {
  return std::isfinite(c.lat) && std::isfinite(c.lon) && c.lat >= -90.0 &&
         c.lat <= 90.0 && c.lon > -180.0 && c.lon <= 180.0;
}

double haversine_km(const GeoCoordinate& a, const GeoCoordinate& b) noexcept {
  constexpr double kDeg = std::numbers::pi / 180.0;
  const double phi1 = a.lat * kDeg;
  const double phi2 = b.lat * kDeg;
  const double dphi = (b.lat - a.lat) * kDeg;
  const double dlambda = (b.lon - a.lon) * kDeg;
  const double s1 = std::sin(dphi / 2.0);
  const double s2 = std::sin(dlambda / 2.0);
  const double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(std::clamp(h, 0.0, 1.0)));
}

namespace {
std::string fixed5(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.5f", v);
  std::string s(buf);
  if (s == "-0.00000") s = "0.00000";
  return s;
}
}  // namespace

std::string tile_key(const GeoCoordinate& center, int zoom) {
  return fixed5(center.lat) + "_" + fixed5(center.lon) + "_" +
         std::to_string(zoom);
}

}  // namespace crossview
