#pragma once

#include <span>
#include <vector>

namespace gencast {

struct GeoPoint {
    double lat = 0.0;  // degrees
    double lon = 0.0;  // degrees
};

/// Kilometres east (x) and north (y) of a reference point.
struct PlanarPoint {
    double x = 0.0;
    double y = 0.0;
};

inline constexpr double kEarthRadiusKm = 6371.0088;

GeoPoint centroid(std::span<const GeoPoint> points);

/// Equirectangular projection about `origin`.
PlanarPoint project(const GeoPoint& p, const GeoPoint& origin);

/// Projects every point about the centroid of the set.
std::vector<PlanarPoint> project_equirectangular(std::span<const GeoPoint> points);

double distance(const PlanarPoint& a, const PlanarPoint& b);

}  // namespace gencast
