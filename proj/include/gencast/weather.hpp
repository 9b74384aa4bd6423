#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gencast/geo.hpp"
#include "gencast/params.hpp"

namespace gencast {

inline constexpr std::size_t kWeatherChannels = 4;
inline constexpr std::array<const char*, kWeatherChannels> kWeatherVariables{"t2m", "ssr", "sro", "tp"};

/// Hourly station records: values [T_hours, N_w, 4].
struct WeatherTable {
    std::vector<std::string> station_ids;
    std::vector<GeoPoint> coords;
    std::vector<std::int64_t> timestamps;
    Tensor values;

    std::size_t hours() const { return timestamps.size(); }
    std::size_t stations() const { return station_ids.size(); }
    double at(std::size_t h, std::size_t s, std::size_t c) const {
        return values[(h * stations() + s) * kWeatherChannels + c];
    }
    double& at(std::size_t h, std::size_t s, std::size_t c) {
        return values[(h * stations() + s) * kWeatherChannels + c];
    }
};

/// Long-format CSV `timestamp,station_id,lat,lon,t2m,ssr,sro,tp`. Missing hours
/// are interpolated linearly; a gap of more than 3 hours is a DataError.
WeatherTable read_weather(const std::filesystem::path& path);
void write_weather(const std::filesystem::path& path, const WeatherTable& table);

/// Nearest station per sensor on planar-projected coordinates; ties to the lower index.
std::vector<std::size_t> match_weather(std::span<const GeoPoint> sensors, std::span<const GeoPoint> stations);

struct WeatherStats {
    std::array<double, kWeatherChannels> mean{};
    std::array<double, kWeatherChannels> stddev{1.0, 1.0, 1.0, 1.0};
};

/// Per-variable statistics over hours [0, end_hour).
WeatherStats weather_statistics(const WeatherTable& table, std::size_t end_hour);
WeatherTable standardise(const WeatherTable& table, const WeatherStats& stats);

/// Index of the most recent weather hour at or before `timestamp`; clamped to the table.
std::size_t weather_hour_index(const WeatherTable& table, std::int64_t timestamp);

/// [T_w, N, 4] window of matched station values whose last hour covers `timestamp`.
/// Hours before the table start repeat the first hour.
Tensor weather_window(const WeatherTable& table, std::span<const std::size_t> index_map, std::int64_t timestamp,
                      std::size_t hours);

struct AttentionConfig {
    std::size_t model_dim = 32;
    std::size_t attention_dim = 32;
};

/// "wx.q" (D -> D_a), "wx.k" (4 -> D_a), "wx.v" (4 -> D), and the gate
/// projections "fuse.s", "fuse.t", "fuse.h" (D -> D).
void init_external_params(ParameterSet& params, const AttentionConfig& cfg, std::mt19937_64& rng);

struct CrossAttention {
    Var h_wx;     // [B, T, N, D]
    Var weights;  // [B * N, T, T_w], rows sum to 1
};

/// h0 [B, T, N, D], x_wx [B, T_w, N, 4].
CrossAttention cross_attention(const BoundParameters& bp, const Var& h0, const Var& x_wx);

/// ReLU(FC_h(z*h0 + (1 - z)*h_wx)) with z = sigmoid(FC_s(h0) + FC_t(h_wx)).
Var gated_fusion(const BoundParameters& bp, const Var& h0, const Var& h_wx);

}  // namespace gencast
