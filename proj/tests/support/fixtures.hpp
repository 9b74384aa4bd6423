#pragma once

// Synthetic corridor experiments written to scratch directories.

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "gencast/evalcli.hpp"
#include "gencast/lwr.hpp"

namespace gencast::testing {

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("gencast_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Simulates the corridor of `cfg.synth` into `dir/data` and points the paths at it.
inline void write_synthetic_inputs(ExperimentConfig& cfg, const std::filesystem::path& dir) {
    const lwr::SynthConfig& s = cfg.synth;
    const lwr::WeatherDriver driver = lwr::random_weather_driver(s.days, s.rain_events_per_day, s.rain_factor, s.seed);
    const auto data = dir / "data";
    lwr::write_dataset(data, lwr::synth_dataset(s, driver));
    cfg.sensors = data / "sensors.csv";
    cfg.observations = data / "observations.csv";
    cfg.weather = data / "weather.csv";
    cfg.output = dir / "out";
}

/// The corridor of `cfg.synth`, prepared in memory for `cfg.graph`.
inline Dataset synthetic_dataset(const ExperimentConfig& cfg) {
    const lwr::SynthConfig& s = cfg.synth;
    const lwr::WeatherDriver driver = lwr::random_weather_driver(s.days, s.rain_events_per_day, s.rain_factor, s.seed);
    const lwr::SynthDataset ds = lwr::synth_dataset(s, driver);
    return prepare_dataset(ds.sensors, ds.observations, ds.weather, cfg.graph, cfg.model.hash.length);
}

/// 12 sensors, 3 days, a tiny network: well under a second of training.
inline ExperimentConfig tiny_config() {
    return parse_config(R"(
        splits = vertical
        synth.sensors = 12
        synth.days = 3
        synth.interval_minutes = 15
        synth.cells = 60
        synth.seed = 3
        history = 4
        horizon = 4
        model_dim = 8
        repr_dim = 8
        hash_dim = 8
        hash_layers = 1
        ste_dim = 4
        weather_hours = 3
        sg = 2
        epochs = 2
        batch_size = 4
        max_batches_per_epoch = 2
        theta = 0.001
        seed = 5
    )");
}

inline ExperimentConfig tiny_experiment(const std::filesystem::path& dir) {
    ExperimentConfig cfg = tiny_config();
    write_synthetic_inputs(cfg, dir);
    return cfg;
}

}  // namespace gencast::testing
