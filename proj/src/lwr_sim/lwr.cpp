#include "gencast/lwr.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "gencast/error.hpp"

namespace gencast::lwr {

namespace {

void check_density(double rho, double rho_max) {
    if (!(rho >= 0.0 && rho <= rho_max)) {
        throw DensityOutOfRange("density " + io::format_double(rho) + " outside [0, " + io::format_double(rho_max) +
                                "]");
    }
}

double demand(double rho, double rho_max, double vf) {
    return rho <= 0.5 * rho_max ? greenshields_flux(rho, rho_max, vf) : 0.25 * vf * rho_max;
}

double supply(double rho, double rho_max, double vf) {
    return rho <= 0.5 * rho_max ? 0.25 * vf * rho_max : greenshields_flux(rho, rho_max, vf);
}

}  // namespace

double greenshields_speed(double rho, double rho_max, double x_fspd) {
    check_density(rho, rho_max);
    return x_fspd * (1.0 - rho / rho_max);
}

double greenshields_density(double speed, double rho_max, double x_fspd) {
    if (!(speed >= 0.0 && speed <= x_fspd)) {
        throw DensityOutOfRange("speed " + io::format_double(speed) + " outside [0, free-flow speed]");
    }
    return rho_max * (1.0 - speed / x_fspd);
}

double greenshields_flux(double rho, double rho_max, double x_fspd) { return rho * x_fspd * (1.0 - rho / rho_max); }

double godunov_flux(double rho_l, double rho_r, double rho_max, double x_fspd) {
    const double crit = 0.5 * rho_max;
    const double fl = greenshields_flux(rho_l, rho_max, x_fspd), fr = greenshields_flux(rho_r, rho_max, x_fspd);
    if (rho_l <= rho_r) return std::min(fl, fr);
    if (rho_r < crit && crit < rho_l) return greenshields_flux(crit, rho_max, x_fspd);
    return std::max(fl, fr);
}

std::vector<double> DensityField::row(std::size_t s) const {
    return {rho.begin() + static_cast<std::ptrdiff_t>(s * cells),
            rho.begin() + static_cast<std::ptrdiff_t>((s + 1) * cells)};
}

DensityField simulate_lwr(const Corridor& c, const std::vector<double>& rho0, std::size_t steps, double dt,
                          const Drivers& drivers, std::size_t record_every) {
    const std::size_t M = c.cells;
    if (M == 0 || rho0.size() != M) throw ShapeMismatch("initial density must have one value per cell");
    if (!c.x_fspd.empty() && c.x_fspd.size() != M) throw ShapeMismatch("free-flow speed must have one value per cell");
    if (record_every == 0) throw ConfigError("record_every must be positive");
    for (double r : rho0) check_density(r, c.rho_max);
    const double dx = c.dx();
    double vmax = 0.0;
    for (std::size_t i = 0; i < M; ++i) vmax = std::max(vmax, c.fspd(i));

    DensityField out;
    out.cells = M;
    out.dx = dx;
    out.dt = dt;
    out.record_every = record_every;
    out.rho.reserve((steps / record_every + 1) * M);
    out.rho.insert(out.rho.end(), rho0.begin(), rho0.end());

    std::vector<double> rho = rho0, flux(M + 1), vf(M);
    const double ratio = dt / dx;
    for (std::size_t s = 0; s < steps; ++s) {
        const double t = static_cast<double>(s) * dt;
        const double scale = drivers.fspd_scale ? drivers.fspd_scale(t) : 1.0;
        if (dt * vmax * scale > dx * (1.0 + 1e-12)) {
            throw CFLViolation("dt = " + io::format_double(dt) + " exceeds dx / max speed = " +
                               io::format_double(dx / (vmax * scale)));
        }
        for (std::size_t i = 0; i < M; ++i) vf[i] = c.fspd(i) * scale;
        // flux[i] is the flux through the left face of cell i.
        for (std::size_t i = 1; i < M; ++i) {
            flux[i] = std::min(demand(rho[i - 1], c.rho_max, vf[i - 1]), supply(rho[i], c.rho_max, vf[i]));
        }
        if (c.boundary == Boundary::periodic) {
            flux[0] = flux[M] = std::min(demand(rho[M - 1], c.rho_max, vf[M - 1]), supply(rho[0], c.rho_max, vf[0]));
        } else {
            const double in = drivers.inflow_density ? drivers.inflow_density(t) : rho[0];
            flux[0] = std::min(demand(std::clamp(in, 0.0, c.rho_max), c.rho_max, vf[0]), supply(rho[0], c.rho_max, vf[0]));
            const double cap = drivers.exit_capacity ? drivers.exit_capacity(t) : 1.0;
            flux[M] = std::min(demand(rho[M - 1], c.rho_max, vf[M - 1]), cap * 0.25 * vf[M - 1] * c.rho_max);
        }
        for (std::size_t i = 0; i < M; ++i) {
            rho[i] = std::clamp(rho[i] - ratio * (flux[i + 1] - flux[i]), 0.0, c.rho_max);
        }
        if ((s + 1) % record_every == 0) out.rho.insert(out.rho.end(), rho.begin(), rho.end());
    }
    out.steps = out.rho.size() / M;
    return out;
}

bool WeatherDriver::raining(double hour) const {
    for (const auto& e : events)
        if (hour >= e.start_hour && hour < e.end_hour) return true;
    return false;
}

WeatherDriver random_weather_driver(std::size_t days, double events_per_day, double rain_factor, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::poisson_distribution<int> count(events_per_day);
    std::uniform_int_distribution<int> start(0, 23), length(1, 4);
    WeatherDriver d;
    d.rain_factor = rain_factor;
    for (std::size_t day = 0; day < days; ++day) {
        const int k = events_per_day > 0.0 ? count(rng) : 0;
        for (int e = 0; e < k; ++e) {
            const double s = 24.0 * static_cast<double>(day) + start(rng);
            d.events.push_back({s, s + length(rng)});
        }
    }
    return d;
}

namespace {

double peak_profile(double hour_of_day) {
    const double am = (hour_of_day - 8.0) / 1.2, pm = (hour_of_day - 17.5) / 1.5;
    return std::exp(-am * am) + 0.9 * std::exp(-pm * pm);
}

GeoPoint corridor_point(const GeoPoint& origin, double s, double length) {
    const double angle = std::numbers::pi / 6.0;
    const double x = s * std::cos(angle);
    const double y = s * std::sin(angle) + 0.8 * std::sin(std::numbers::pi * s / length);
    const double deg = 180.0 / std::numbers::pi;
    return {origin.lat + y / kEarthRadiusKm * deg,
            origin.lon + x / (kEarthRadiusKm * std::cos(origin.lat / deg)) * deg};
}

}  // namespace

SynthDataset synth_dataset(const SynthConfig& cfg, const WeatherDriver& driver) {
    Corridor c = cfg.corridor;
    const std::size_t M = c.cells;
    const double L = c.length_km, dx = c.dx();
    if (cfg.interval_minutes <= 0 || 1440 % cfg.interval_minutes != 0) {
        throw ConfigError("interval_minutes must divide a day");
    }
    std::mt19937_64 rng(cfg.seed);

    SynthDataset ds;
    ds.driver = driver;
    c.x_fspd.resize(M);
    for (std::size_t i = 0; i < M; ++i) {
        const double x = (static_cast<double>(i) + 0.5) * dx;
        c.x_fspd[i] = cfg.fspd_base * (1.0 + cfg.fspd_variation * std::sin(2.0 * std::numbers::pi * x / L));
    }
    ds.cell_fspd = c.x_fspd;

    if (!cfg.sensor_positions_km.empty()) {
        for (double p : cfg.sensor_positions_km) {
            if (!(p >= 0.0 && p <= L)) {
                throw SensorOutOfCorridor("sensor position " + io::format_double(p) + " km outside [0, " +
                                          io::format_double(L) + "]");
            }
        }
        ds.sensor_positions_km = cfg.sensor_positions_km;
    } else {
        const double spacing = (L - 1.0) / static_cast<double>(cfg.sensors);
        std::uniform_real_distribution<double> jitter(-0.3 * spacing, 0.3 * spacing);
        for (std::size_t k = 0; k < cfg.sensors; ++k) {
            ds.sensor_positions_km.push_back(0.5 + (static_cast<double>(k) + 0.5) * spacing + jitter(rng));
        }
    }
    const std::size_t S = ds.sensor_positions_km.size();
    for (std::size_t k = 0; k < S; ++k) {
        const double p = ds.sensor_positions_km[k];
        ds.sensor_cells.push_back(std::min(M - 1, static_cast<std::size_t>(p / dx)));
        char id[32];
        std::snprintf(id, sizeof id, "S%03zu", k + 1);
        ds.sensors.node_ids.emplace_back(id);
        ds.sensors.coords.push_back(corridor_point(cfg.origin, p, L));
    }

    // Demand: daily peaks scaled per day plus AR(1) noise on the sampling grid.
    const double interval_h = cfg.interval_minutes / 60.0;
    const std::size_t per_day = static_cast<std::size_t>(1440 / cfg.interval_minutes);
    const std::size_t samples = cfg.days * per_day;
    std::vector<double> day_scale(cfg.days + 1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& d : day_scale) d = 1.0 + cfg.day_scale_spread * u(rng);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> ar(samples + 2, 0.0);
    for (std::size_t k = 1; k < ar.size(); ++k) ar[k] = 0.9 * ar[k - 1] + 1.2 * g(rng);

    Drivers drv;
    drv.inflow_density = [&](double h) {
        const auto day = static_cast<std::size_t>(h / 24.0);
        const double pos = h / interval_h;
        const auto k = static_cast<std::size_t>(pos);
        const double w = pos - static_cast<double>(k);
        const double noise = (1.0 - w) * ar[std::min(k, ar.size() - 1)] + w * ar[std::min(k + 1, ar.size() - 1)];
        const double rho = cfg.demand_base + cfg.demand_peak * day_scale[std::min(day, cfg.days)] *
                                                 peak_profile(std::fmod(h, 24.0)) + noise;
        return std::clamp(rho, 0.0, 0.95 * c.rho_max);
    };
    drv.exit_capacity = [&](double h) {
        return 1.0 - (1.0 - cfg.bottleneck_capacity) * std::min(1.0, peak_profile(std::fmod(h, 24.0)));
    };
    drv.fspd_scale = [&](double h) { return driver.fspd_scale(h); };

    double vmax = 0.0;
    for (double v : c.x_fspd) vmax = std::max(vmax, v);
    const auto sub = static_cast<std::size_t>(std::ceil(interval_h * vmax / (0.9 * dx)));
    const double dt = interval_h / static_cast<double>(sub);
    std::vector<double> rho0(M, drv.inflow_density(0.0));
    ds.field = simulate_lwr(c, rho0, samples * sub, dt, drv, sub);

    TrafficTensor& x = ds.observations;
    x.values = Tensor(diff::Shape{samples, S, 1});
    x.mask.assign(samples * S, 1);
    x.interval_minutes = cfg.interval_minutes;
    x.steps_per_day = per_day;
    std::normal_distribution<double> noise(0.0, cfg.noise_std > 0.0 ? cfg.noise_std : 1.0);
    for (std::size_t t = 0; t < samples; ++t) {
        x.timestamps.push_back(cfg.start_timestamp + static_cast<std::int64_t>(t) * cfg.interval_minutes * 60);
        const double scale = driver.fspd_scale(static_cast<double>(t) * interval_h);
        for (std::size_t k = 0; k < S; ++k) {
            const std::size_t cell = ds.sensor_cells[k];
            double v = greenshields_speed(ds.field.at(t, cell), c.rho_max, c.x_fspd[cell] * scale);
            if (cfg.noise_std > 0.0) v += noise(rng);
            x.at(t, k) = v;
        }
    }

    // Stations on a grid over the corridor's bounding box.
    WeatherTable& w = ds.weather;
    GeoPoint lo = ds.sensors.coords.front(), hi = lo;
    for (const auto& p : ds.sensors.coords) {
        lo = {std::min(lo.lat, p.lat), std::min(lo.lon, p.lon)};
        hi = {std::max(hi.lat, p.lat), std::max(hi.lon, p.lon)};
    }
    const std::size_t cols = std::max<std::size_t>(1, (cfg.stations + 1) / 2);
    const std::size_t rows = cfg.stations > cols ? 2 : 1;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t k = 0; k < cols && w.station_ids.size() < cfg.stations; ++k) {
            const double fy = rows == 1 ? 0.5 : static_cast<double>(r);
            const double fx = cols == 1 ? 0.5 : static_cast<double>(k) / static_cast<double>(cols - 1);
            w.station_ids.push_back("W" + std::to_string(w.station_ids.size() + 1));
            w.coords.push_back({lo.lat + fy * (hi.lat - lo.lat), lo.lon + fx * (hi.lon - lo.lon)});
        }
    const std::size_t hours = cfg.days * 24;
    w.values = Tensor(diff::Shape{hours, w.stations(), kWeatherChannels});
    std::normal_distribution<double> jiggle(0.0, 0.3);
    for (std::size_t h = 0; h < hours; ++h) {
        w.timestamps.push_back(cfg.start_timestamp + static_cast<std::int64_t>(h) * 3600);
        const double hod = static_cast<double>(h % 24);
        const bool rain = driver.raining(static_cast<double>(h));
        for (std::size_t s = 0; s < w.stations(); ++s) {
            w.at(h, s, 0) = 285.0 + 6.0 * std::sin(2.0 * std::numbers::pi * (hod - 9.0) / 24.0) -
                            (rain ? 2.0 : 0.0) + 0.2 * static_cast<double>(s) + jiggle(rng);
            w.at(h, s, 1) = std::max(0.0, std::sin(std::numbers::pi * (hod - 6.0) / 12.0)) * 2.5e6 * (rain ? 0.3 : 1.0);
            w.at(h, s, 2) = rain ? 1e-4 * (1.0 + 0.1 * static_cast<double>(s)) : 0.0;
            w.at(h, s, 3) = rain ? 2e-3 : 0.0;
        }
    }
    return ds;
}

void write_dataset(const std::filesystem::path& dir, const SynthDataset& ds) {
    std::filesystem::create_directories(dir);
    io::write_sensor_metadata(dir / "sensors.csv", ds.sensors);
    io::write_observations(dir / "observations.csv", ds.observations, ds.sensors.node_ids);
    write_weather(dir / "weather.csv", ds.weather);
    std::ofstream gt(dir / "ground_truth.csv");
    if (!gt) throw DataError("cannot write " + (dir / "ground_truth.csv").string());
    gt << "step,cell,rho\n";
    for (std::size_t s = 0; s < ds.field.steps; ++s)
        for (std::size_t i = 0; i < ds.field.cells; ++i) gt << s << ',' << i << ',' << io::format_double(ds.field.at(s, i)) << '\n';
}

}  // namespace gencast::lwr
