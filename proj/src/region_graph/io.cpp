#include "gencast/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "gencast/error.hpp"

namespace gencast::io {

namespace {

// Howard Hinnant's civil-calendar conversions.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const auto yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m > 2 ? m - 3 : m + 9) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, std::int64_t& y, unsigned& m, unsigned& d) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const auto doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    y = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = doy - (153 * mp + 2) / 5 + 1;
    m = mp < 10 ? mp + 3 : mp - 9;
    y += m <= 2;
}

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r' || s[b] == '\n')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '\n')) --e;
    return s.substr(b, e - b);
}

}  // namespace

std::size_t CsvTable::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    throw DataError("missing column '" + name + "'");
}

std::vector<std::string> split_line(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == sep) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    out.push_back(trim(cur));
    return out;
}

CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    CsvTable t;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (first && line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);  // BOM
        if (trim(line).empty()) continue;
        auto cells = split_line(line);
        if (first) {
            t.header = std::move(cells);
            first = false;
        } else {
            if (cells.size() != t.header.size()) {
                throw DataError(path.string() + ": row " + std::to_string(t.rows.size() + 2) + " has " +
                                std::to_string(cells.size()) + " cells, header has " +
                                std::to_string(t.header.size()));
            }
            t.rows.push_back(std::move(cells));
        }
    }
    if (first) throw DataError(path.string() + ": missing header row");
    return t;
}

double parse_double(const std::string& s, const std::string& what) {
    double v = 0.0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e) throw DataError("malformed number '" + s + "' in " + what);
    return v;
}

std::int64_t parse_timestamp(const std::string& raw) {
    std::string s = trim(raw);
    if (!s.empty() && s.back() == 'Z') s.pop_back();
    int Y = 0, M = 0, D = 0, h = 0, mi = 0, sec = 0;
    char sep = 0;
    const int got = std::sscanf(s.c_str(), "%d-%d-%d%c%d:%d:%d", &Y, &M, &D, &sep, &h, &mi, &sec);
    if (got < 6 || (sep != 'T' && sep != ' ') || M < 1 || M > 12 || D < 1 || D > 31 || h < 0 || h > 23 || mi < 0 ||
        mi > 59 || sec < 0 || sec > 60) {
        throw DataError("malformed timestamp '" + raw + "'");
    }
    return days_from_civil(Y, static_cast<unsigned>(M), static_cast<unsigned>(D)) * 86400 + h * 3600 + mi * 60 + sec;
}

std::string format_timestamp(std::int64_t seconds) {
    std::int64_t days = seconds >= 0 ? seconds / 86400 : (seconds - 86399) / 86400;
    const std::int64_t rem = seconds - days * 86400;
    std::int64_t y = 0;
    unsigned m = 0, d = 0;
    civil_from_days(days, y, m, d);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04lld-%02u-%02uT%02d:%02d:%02d", static_cast<long long>(y), m, d,
                  static_cast<int>(rem / 3600), static_cast<int>(rem / 60 % 60), static_cast<int>(rem % 60));
    return buf;
}

std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, p);
}

SensorMetadata read_sensor_metadata(const std::filesystem::path& path) {
    const CsvTable t = read_csv(path);
    const std::size_t ci = t.column("node_id"), la = t.column("lat"), lo = t.column("lon");
    SensorMetadata meta;
    std::unordered_map<std::string, int> seen;
    for (const auto& row : t.rows) {
        if (seen[row[ci]]++) throw DataError("duplicate node_id '" + row[ci] + "' in " + path.string());
        meta.node_ids.push_back(row[ci]);
        meta.coords.push_back({parse_double(row[la], "lat"), parse_double(row[lo], "lon")});
    }
    return meta;
}

void write_sensor_metadata(const std::filesystem::path& path, const SensorMetadata& meta) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "node_id,lat,lon\n";
    for (std::size_t i = 0; i < meta.node_ids.size(); ++i) {
        out << meta.node_ids[i] << ',' << format_double(meta.coords[i].lat) << ','
            << format_double(meta.coords[i].lon) << '\n';
    }
}

bool interpolate_gaps(std::vector<double>& s) {
    const std::size_t n = s.size();
    std::size_t first = n;
    for (std::size_t i = 0; i < n; ++i)
        if (std::isfinite(s[i])) {
            first = i;
            break;
        }
    if (first == n) return false;
    for (std::size_t i = 0; i < first; ++i) s[i] = s[first];
    std::size_t last = first;
    for (std::size_t i = first + 1; i < n; ++i) {
        if (!std::isfinite(s[i])) continue;
        for (std::size_t k = last + 1; k < i; ++k) {
            const double w = static_cast<double>(k - last) / static_cast<double>(i - last);
            s[k] = s[last] + w * (s[i] - s[last]);
        }
        last = i;
    }
    for (std::size_t i = last + 1; i < n; ++i) s[i] = s[last];
    return true;
}

TrafficTensor read_observations(const std::filesystem::path& path, const std::vector<std::string>& node_ids) {
    const CsvTable t = read_csv(path);
    if (t.rows.size() < 2) throw DataError(path.string() + ": need at least two time steps");
    std::vector<std::size_t> cols;
    for (const auto& id : node_ids) {
        bool found = false;
        for (std::size_t c = 1; c < t.header.size(); ++c) {
            if (t.header[c] == id) {
                cols.push_back(c);
                found = true;
                break;
            }
        }
        if (!found) throw MissingNode("observation file " + path.string() + " has no column for node '" + id + "'");
    }

    const std::size_t T = t.rows.size(), N = node_ids.size();
    TrafficTensor x;
    x.values = Tensor(diff::Shape{T, N, 1});
    x.mask.assign(T * N, 0);
    x.timestamps.resize(T);
    for (std::size_t r = 0; r < T; ++r) x.timestamps[r] = parse_timestamp(t.rows[r][0]);
    const std::int64_t step = x.timestamps[1] - x.timestamps[0];
    if (step <= 0 || step % 60 != 0 || 86400 % step != 0) {
        throw DataError(path.string() + ": sampling interval must be a positive whole-minute divisor of a day");
    }
    for (std::size_t r = 1; r < T; ++r) {
        if (x.timestamps[r] - x.timestamps[r - 1] != step) {
            throw DataError(path.string() + ": irregular timestamp at row " + std::to_string(r + 2));
        }
    }
    x.interval_minutes = static_cast<int>(step / 60);
    x.steps_per_day = static_cast<std::size_t>(86400 / step);

    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t k = 0; k < N; ++k) {
        std::vector<double> s(T, nan);
        for (std::size_t r = 0; r < T; ++r) {
            const std::string& cell = t.rows[r][cols[k]];
            if (cell.empty()) continue;
            s[r] = parse_double(cell, path.string());
            if (std::isfinite(s[r])) x.mask[r * N + k] = 1;
        }
        if (!interpolate_gaps(s)) throw DataError("node '" + node_ids[k] + "' has no observations");
        for (std::size_t r = 0; r < T; ++r) x.at(r, k) = s[r];
    }
    return x;
}

void write_observations(const std::filesystem::path& path, const TrafficTensor& x,
                        const std::vector<std::string>& node_ids) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "timestamp";
    for (const auto& id : node_ids) out << ',' << id;
    out << '\n';
    for (std::size_t t = 0; t < x.steps(); ++t) {
        out << format_timestamp(x.timestamps[t]);
        for (std::size_t n = 0; n < x.nodes(); ++n) {
            out << ',';
            if (x.observed(t, n)) out << format_double(x.at(t, n));
        }
        out << '\n';
    }
}

}  // namespace gencast::io
