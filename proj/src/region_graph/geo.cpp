#include "gencast/geo.hpp"

#include <cmath>
#include <numbers>

namespace gencast {

GeoPoint centroid(std::span<const GeoPoint> points) {
    GeoPoint c;
    if (points.empty()) return c;
    for (const auto& p : points) {
        c.lat += p.lat;
        c.lon += p.lon;
    }
    c.lat /= static_cast<double>(points.size());
    c.lon /= static_cast<double>(points.size());
    return c;
}

PlanarPoint project(const GeoPoint& p, const GeoPoint& origin) {
    constexpr double deg = std::numbers::pi / 180.0;
    return {kEarthRadiusKm * (p.lon - origin.lon) * deg * std::cos(origin.lat * deg),
            kEarthRadiusKm * (p.lat - origin.lat) * deg};
}

std::vector<PlanarPoint> project_equirectangular(std::span<const GeoPoint> points) {
    const GeoPoint origin = centroid(points);
    std::vector<PlanarPoint> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(project(p, origin));
    return out;
}

double distance(const PlanarPoint& a, const PlanarPoint& b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace gencast
