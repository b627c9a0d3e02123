#pragma once

#include <string>

namespace crossview {

/// Mean Earth radius used by every distance computation in the project.
inline constexpr double kEarthRadiusKm = 6371.0;

/// Latitude in [-90, 90], longitude in (-180, 180], both in degrees.
struct GeoCoordinate {
  double lat = 0.0;
  double lon = 0.0;

  friend bool operator==(const GeoCoordinate&, const GeoCoordinate&) = default;
};

bool is_valid(const GeoCoordinate& c) noexcept;

/// Great-circle distance on a sphere of radius kEarthRadiusKm.
double haversine_km(const GeoCoordinate& a, const GeoCoordinate& b) noexcept;

/// Quantized tile identity "lat_lon_zoom" with five decimals, e.g.
/// "51.50070_-0.12460_18". Negative zero is printed as zero so that keys
/// compare equal for coordinates that round to the same grid point.
std::string tile_key(const GeoCoordinate& center, int zoom);

}  // namespace crossview
