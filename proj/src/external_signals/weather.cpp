#include "gencast/weather.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <unordered_map>

#include "gencast/diff/ops.hpp"
#include "gencast/error.hpp"
#include "gencast/io.hpp"

namespace gencast {

using namespace diff;

WeatherTable read_weather(const std::filesystem::path& path) {
    const io::CsvTable t = io::read_csv(path);
    const std::size_t c_ts = t.column("timestamp"), c_id = t.column("station_id"), c_lat = t.column("lat"),
                      c_lon = t.column("lon");
    std::array<std::size_t, kWeatherChannels> c_var{};
    for (std::size_t c = 0; c < kWeatherChannels; ++c) c_var[c] = t.column(kWeatherVariables[c]);
    if (t.rows.empty()) throw DataError(path.string() + ": no weather records");

    WeatherTable w;
    std::unordered_map<std::string, std::size_t> station;
    std::int64_t t0 = std::numeric_limits<std::int64_t>::max(), t1 = std::numeric_limits<std::int64_t>::min();
    struct Record {
        std::size_t station;
        std::int64_t ts;
        std::array<double, kWeatherChannels> v;
    };
    std::vector<Record> recs;
    for (const auto& row : t.rows) {
        const std::int64_t ts = io::parse_timestamp(row[c_ts]);
        if (ts % 3600 != 0) throw DataError(path.string() + ": timestamp " + row[c_ts] + " is not on the hour");
        auto [it, inserted] = station.emplace(row[c_id], w.station_ids.size());
        if (inserted) {
            w.station_ids.push_back(row[c_id]);
            w.coords.push_back({io::parse_double(row[c_lat], "lat"), io::parse_double(row[c_lon], "lon")});
        }
        Record r{it->second, ts, {}};
        for (std::size_t c = 0; c < kWeatherChannels; ++c) {
            r.v[c] = io::parse_double(row[c_var[c]], kWeatherVariables[c]);
            if (!std::isfinite(r.v[c])) throw DataError(path.string() + ": non-finite weather value");
        }
        recs.push_back(r);
        t0 = std::min(t0, ts);
        t1 = std::max(t1, ts);
    }

    const auto H = static_cast<std::size_t>((t1 - t0) / 3600 + 1);
    const std::size_t S = w.station_ids.size();
    for (std::size_t h = 0; h < H; ++h) w.timestamps.push_back(t0 + static_cast<std::int64_t>(h) * 3600);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    w.values = Tensor(Shape{H, S, kWeatherChannels}, nan);
    for (const auto& r : recs) {
        const auto h = static_cast<std::size_t>((r.ts - t0) / 3600);
        for (std::size_t c = 0; c < kWeatherChannels; ++c) w.at(h, r.station, c) = r.v[c];
    }

    for (std::size_t s = 0; s < S; ++s) {
        // Runs of missing hours, including runs at either edge of the table.
        std::int64_t last = -1;
        for (std::size_t h = 0; h <= H; ++h) {
            const bool present = h < H && std::isfinite(w.at(h, s, 0));
            if (!present && h < H) continue;
            const std::int64_t gap = static_cast<std::int64_t>(h) - last;
            if (gap - 1 > 3) {
                throw DataError(path.string() + ": station '" + w.station_ids[s] + "' has a gap of more than 3 hours");
            }
            last = static_cast<std::int64_t>(h);
        }
        for (std::size_t c = 0; c < kWeatherChannels; ++c) {
            std::vector<double> series(H);
            for (std::size_t h = 0; h < H; ++h) series[h] = w.at(h, s, c);
            io::interpolate_gaps(series);
            for (std::size_t h = 0; h < H; ++h) w.at(h, s, c) = series[h];
        }
    }
    return w;
}

void write_weather(const std::filesystem::path& path, const WeatherTable& w) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "timestamp,station_id,lat,lon";
    for (const char* v : kWeatherVariables) out << ',' << v;
    out << '\n';
    for (std::size_t h = 0; h < w.hours(); ++h) {
        for (std::size_t s = 0; s < w.stations(); ++s) {
            out << io::format_timestamp(w.timestamps[h]) << ',' << w.station_ids[s] << ','
                << io::format_double(w.coords[s].lat) << ',' << io::format_double(w.coords[s].lon);
            for (std::size_t c = 0; c < kWeatherChannels; ++c) out << ',' << io::format_double(w.at(h, s, c));
            out << '\n';
        }
    }
}

std::vector<std::size_t> match_weather(std::span<const GeoPoint> sensors, std::span<const GeoPoint> stations) {
    if (stations.empty()) throw NoStations("no weather stations to match against");
    std::vector<GeoPoint> all(sensors.begin(), sensors.end());
    all.insert(all.end(), stations.begin(), stations.end());
    const GeoPoint origin = centroid(all);
    std::vector<PlanarPoint> st;
    for (const auto& p : stations) st.push_back(project(p, origin));
    std::vector<std::size_t> out;
    for (const auto& s : sensors) {
        const PlanarPoint p = project(s, origin);
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < st.size(); ++j) {
            const double d = distance(p, st[j]);
            if (d < best_d) best_d = d, best = j;
        }
        out.push_back(best);
    }
    return out;
}

WeatherStats weather_statistics(const WeatherTable& w, std::size_t end_hour) {
    end_hour = std::min(end_hour, w.hours());
    WeatherStats st;
    if (end_hour == 0) return st;
    for (std::size_t c = 0; c < kWeatherChannels; ++c) {
        double s = 0.0, s2 = 0.0;
        std::size_t n = 0;
        for (std::size_t h = 0; h < end_hour; ++h)
            for (std::size_t k = 0; k < w.stations(); ++k) s += w.at(h, k, c), ++n;
        const double mean = s / static_cast<double>(n);
        for (std::size_t h = 0; h < end_hour; ++h)
            for (std::size_t k = 0; k < w.stations(); ++k) s2 += (w.at(h, k, c) - mean) * (w.at(h, k, c) - mean);
        const double sd = std::sqrt(s2 / static_cast<double>(n));
        st.mean[c] = mean;
        st.stddev[c] = sd > 1e-12 * std::max(1.0, std::abs(mean)) ? sd : 1.0;
    }
    return st;
}

WeatherTable standardise(const WeatherTable& w, const WeatherStats& st) {
    WeatherTable out = w;
    for (std::size_t h = 0; h < w.hours(); ++h)
        for (std::size_t s = 0; s < w.stations(); ++s)
            for (std::size_t c = 0; c < kWeatherChannels; ++c)
                out.at(h, s, c) = (w.at(h, s, c) - st.mean[c]) / st.stddev[c];
    return out;
}

std::size_t weather_hour_index(const WeatherTable& w, std::int64_t timestamp) {
    if (w.hours() == 0) throw DataError("empty weather table");
    if (timestamp <= w.timestamps.front()) return 0;
    const auto h = static_cast<std::size_t>((timestamp - w.timestamps.front()) / 3600);
    return std::min(h, w.hours() - 1);
}

Tensor weather_window(const WeatherTable& w, std::span<const std::size_t> index_map, std::int64_t timestamp,
                      std::size_t hours) {
    const std::size_t last = weather_hour_index(w, timestamp), N = index_map.size();
    Tensor out(Shape{hours, N, kWeatherChannels});
    for (std::size_t k = 0; k < hours; ++k) {
        const std::size_t back = hours - 1 - k;
        const std::size_t h = last >= back ? last - back : 0;
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < kWeatherChannels; ++c)
                out[(k * N + n) * kWeatherChannels + c] = w.at(h, index_map[n], c);
    }
    return out;
}

void init_external_params(ParameterSet& params, const AttentionConfig& cfg, std::mt19937_64& rng) {
    const std::size_t D = cfg.model_dim, A = cfg.attention_dim, C = kWeatherChannels;
    params.add("wx.q", glorot_uniform({D, A}, D, A, rng));
    params.add("wx.k", glorot_uniform({C, A}, C, A, rng));
    params.add("wx.v", glorot_uniform({C, D}, C, D, rng));
    for (const char* g : {"fuse.s", "fuse.t", "fuse.h"}) {
        params.add(std::string(g) + ".w", glorot_uniform({D, D}, D, D, rng));
        params.add(std::string(g) + ".b", Tensor({D}));
    }
}

CrossAttention cross_attention(const BoundParameters& bp, const Var& h0, const Var& x_wx) {
    const Shape& hs = h0.shape();
    const Shape& ws = x_wx.shape();
    if (hs.size() != 4 || ws.size() != 4 || ws[0] != hs[0] || ws[2] != hs[2] || ws[3] != kWeatherChannels) {
        throw ShapeMismatch("cross_attention: h0 " + to_string(hs) + " and weather " + to_string(ws) +
                            " do not align");
    }
    const std::size_t B = hs[0], T = hs[1], N = hs[2], D = hs[3], Tw = ws[1];
    const Var wq = bp("wx.q");
    const std::size_t A = wq.shape()[1];

    // Move nodes next to the batch axis so each (window, node) attends separately.
    const Var q = reshape(permute(linear(h0, wq), {0, 2, 1, 3}), {B * N, T, A});
    const Var k = reshape(permute(linear(x_wx, bp("wx.k")), {0, 2, 3, 1}), {B * N, A, Tw});
    const Var v = reshape(permute(linear(x_wx, bp("wx.v")), {0, 2, 1, 3}), {B * N, Tw, D});
    CrossAttention out;
    out.weights = softmax(scale(bmm(q, k), 1.0 / std::sqrt(static_cast<double>(A))));
    out.h_wx = permute(reshape(bmm(out.weights, v), {B, N, T, D}), {0, 2, 1, 3});
    return out;
}

Var gated_fusion(const BoundParameters& bp, const Var& h0, const Var& h_wx) {
    if (h0.shape() != h_wx.shape()) {
        throw ShapeMismatch("gated_fusion: " + to_string(h0.shape()) + " vs " + to_string(h_wx.shape()));
    }
    const Var z = sigmoid(add(linear(h0, bp("fuse.s.w"), bp("fuse.s.b")), linear(h_wx, bp("fuse.t.w"), bp("fuse.t.b"))));
    const Var one_minus_z = add_scalar(neg(z), 1.0);
    const Var mix = add(mul(z, h0), mul(one_minus_z, h_wx));
    return relu(linear(mix, bp("fuse.h.w"), bp("fuse.h.b")));
}

}  // namespace gencast
