#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gencast/geo.hpp"
#include "gencast/region_graph.hpp"

namespace gencast::io {

/// Rows of a comma-separated file; the first row is the header. No quoting.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Column index by name; throws DataError when absent.
    std::size_t column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);
std::vector<std::string> split_line(const std::string& line, char sep = ',');
/// Throws DataError naming `what` on malformed numbers.
double parse_double(const std::string& s, const std::string& what);

/// "YYYY-MM-DDTHH:MM[:SS]" (a space may replace 'T'; trailing 'Z' ignored) to epoch seconds.
std::int64_t parse_timestamp(const std::string& s);
std::string format_timestamp(std::int64_t seconds);

/// Round-trippable decimal text for a double.
std::string format_double(double v);

struct SensorMetadata {
    std::vector<std::string> node_ids;
    std::vector<GeoPoint> coords;
};

/// `node_id,lat,lon` with header.
SensorMetadata read_sensor_metadata(const std::filesystem::path& path);
void write_sensor_metadata(const std::filesystem::path& path, const SensorMetadata& meta);

/// Wide observation CSV: timestamp column then one column per node id. Empty
/// cells are missing; gaps are filled by linear interpolation (edges by the
/// nearest value) and stay marked unobserved in the mask.
TrafficTensor read_observations(const std::filesystem::path& path, const std::vector<std::string>& node_ids);
void write_observations(const std::filesystem::path& path, const TrafficTensor& x,
                        const std::vector<std::string>& node_ids);

/// Linear interpolation across non-finite entries; returns false if none are finite.
bool interpolate_gaps(std::vector<double>& series);

}  // namespace gencast::io
