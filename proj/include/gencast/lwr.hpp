#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <utility>
#include <vector>

#include "gencast/io.hpp"
#include "gencast/region_graph.hpp"
#include "gencast/weather.hpp"

namespace gencast::lwr {

double greenshields_speed(double rho, double rho_max, double x_fspd);
double greenshields_density(double speed, double rho_max, double x_fspd);
double greenshields_flux(double rho, double rho_max, double x_fspd);

/// Exact Riemann flux for the concave Greenshields flux: min of f over
/// [rho_l, rho_r] when rho_l <= rho_r, max over [rho_r, rho_l] otherwise.
double godunov_flux(double rho_l, double rho_r, double rho_max, double x_fspd);

enum class Boundary { periodic, inflow_outflow };

struct Corridor {
    double length_km = 20.0;
    std::size_t cells = 100;
    double rho_max = 120.0;              // vehicles / km
    std::vector<double> x_fspd;          // km/h per cell; empty means uniform 100
    Boundary boundary = Boundary::periodic;

    double dx() const { return length_km / static_cast<double>(cells); }
    double fspd(std::size_t cell) const { return x_fspd.empty() ? 100.0 : x_fspd[cell]; }
};

/// Time-dependent boundary and closure inputs; time in hours from the start.
struct Drivers {
    std::function<double(double)> inflow_density;  // upstream ghost cell density
    std::function<double(double)> exit_capacity;   // fraction of the last cell's capacity leaving the corridor
    std::function<double(double)> fspd_scale;      // multiplier on every cell's x_fspd
};

struct DensityField {
    std::size_t steps = 0;  // recorded states, including the initial one
    std::size_t cells = 0;
    double dx = 0.0;
    double dt = 0.0;
    std::size_t record_every = 1;
    std::vector<double> rho;  // steps x cells

    double at(std::size_t s, std::size_t i) const { return rho[s * cells + i]; }
    std::vector<double> row(std::size_t s) const;
};

/// First-order Godunov finite volumes in demand/supply form, which equals the
/// min/max Riemann flux on homogeneous stretches. Keeps every
/// `record_every`-th state. Throws CFLViolation when dt * max x_fspd > dx.
DensityField simulate_lwr(const Corridor& corridor, const std::vector<double>& rho0, std::size_t steps, double dt,
                          const Drivers& drivers = {}, std::size_t record_every = 1);

struct RainEvent {
    double start_hour = 0.0;
    double end_hour = 0.0;
};

/// Hourly covariates that modulate free flow: speeds scale by `rain_factor` while it rains.
struct WeatherDriver {
    double rain_factor = 0.8;
    std::vector<RainEvent> events;

    bool raining(double hour) const;
    double fspd_scale(double hour) const { return raining(hour) ? rain_factor : 1.0; }
};

struct SynthConfig {
    Corridor corridor{20.0, 100, 120.0, {}, Boundary::inflow_outflow};
    double fspd_base = 100.0;
    double fspd_variation = 0.05;       // relative amplitude of the smooth spatial profile
    std::size_t sensors = 40;
    std::vector<double> sensor_positions_km;  // overrides the automatic layout when set
    std::size_t days = 28;
    int interval_minutes = 15;
    double noise_std = 0.0;              // km/h
    double demand_base = 18.0;           // vehicles / km at night
    double demand_peak = 30.0;           // added at the peaks on an average day
    double day_scale_spread = 0.3;
    double bottleneck_capacity = 0.85;   // exit capacity during peaks
    std::size_t stations = 6;
    double rain_events_per_day = 0.5;
    double rain_factor = 0.8;            // free-flow multiplier while it rains
    std::uint64_t seed = 7;
    GeoPoint origin{37.30, -121.95};
    std::int64_t start_timestamp = 1704067200;  // 2024-01-01T00:00:00
};

struct SynthDataset {
    io::SensorMetadata sensors;
    std::vector<double> sensor_positions_km;
    std::vector<std::size_t> sensor_cells;
    TrafficTensor observations;
    WeatherTable weather;
    WeatherDriver driver;
    DensityField field;  // one state per observation step plus the final state
    std::vector<double> cell_fspd;
};

/// Weather driver with random rain events, deterministic in `seed`.
WeatherDriver random_weather_driver(std::size_t days, double events_per_day, double rain_factor, std::uint64_t seed);

/// Simulates the corridor and samples speeds at the sensor cells.
SynthDataset synth_dataset(const SynthConfig& cfg, const WeatherDriver& driver);

/// sensors.csv, observations.csv, weather.csv and ground_truth.csv (`step,cell,rho`).
void write_dataset(const std::filesystem::path& dir, const SynthDataset& ds);

}  // namespace gencast::lwr
