#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gencast/lwr.hpp"
#include "gencast/pipeline.hpp"

namespace gencast {

struct Metrics {
    double rmse = 0.0;
    double mae = 0.0;
    double mape = 0.0;  // fraction; NaN when every truth value is zero
    double r2 = 0.0;    // NaN when the truth has zero variance
    std::size_t mape_excluded = 0;
    std::size_t count = 0;
};

/// RMSE, MAE, MAPE (zero-truth entries excluded and counted) and R^2.
Metrics compute_metrics(std::span<const double> pred, std::span<const double> truth);

/// 1 - SS_res / SS_tot; throws ZeroVarianceTruth.
double r_squared(std::span<const double> pred, std::span<const double> truth);

/// Inverse-distance (power 2) weights of the k nearest `sources` to `target`.
std::vector<std::pair<std::size_t, double>> idw_weights(std::span<const PlanarPoint> points, std::size_t target,
                                                        std::span<const std::size_t> sources, std::size_t k);

/// Per (node, time-of-day slot) training means of observed nodes, extended to
/// unobserved nodes by IDW over the k nearest observed profiles.
class HistoricalAverage {
public:
    HistoricalAverage(const TrafficTensor& x, std::size_t train_end, std::span<const std::size_t> observed,
                      std::span<const std::size_t> unobserved, std::span<const PlanarPoint> points, std::size_t k = 3);
    /// [W, T', U] forecasts for the horizon after each window's T input steps.
    Tensor forecast(const TrafficTensor& x, std::span<const std::size_t> starts, std::size_t history,
                    std::size_t horizon) const;

private:
    std::vector<std::vector<double>> profiles_;  // U x slots
};

/// IDW combination of the k nearest observed nodes' last input observation,
/// persisted over the horizon. [W, T', U].
Tensor baseline_idw(const TrafficTensor& x, std::span<const std::size_t> observed,
                    std::span<const std::size_t> unobserved, std::span<const PlanarPoint> points,
                    std::span<const std::size_t> starts, std::size_t history, std::size_t horizon, std::size_t k = 3);

struct SplitChoice {
    SplitMode mode = SplitMode::vertical;
    bool mirrored = false;
    std::string name() const;
};

struct ExperimentConfig {
    std::filesystem::path sensors = "data/sensors.csv";
    std::filesystem::path observations = "data/observations.csv";
    std::filesystem::path weather = "data/weather.csv";
    std::filesystem::path llm_embeddings;  // SE-L table; empty selects the GeoHash encoder
    std::filesystem::path output = "out";
    std::vector<SplitChoice> splits;       // empty means all four
    std::vector<double> sweep_ratios;      // unobserved ratios; empty disables the sweep
    std::size_t eval_stride = 0;           // 0 means the horizon length
    bool write_attention = true;
    GraphConfig graph;
    ModelConfig model;
    TrainConfig train;
    lwr::SynthConfig synth;
};

/// Applies one `key = value` setting; throws ConfigError naming the field.
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value);

/// Flat `key = value` text, `#` comments. Errors name the line and field.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Every key with its resolved value, in a fixed order.
std::vector<std::pair<std::string, std::string>> resolved_config(const ExperimentConfig& cfg);

struct LoadedData {
    io::SensorMetadata meta;
    TrafficTensor x;
    WeatherTable weather;
    std::optional<Tensor> llm_table;
};

LoadedData load_inputs(const ExperimentConfig& cfg);

struct ReportRow {
    std::string split;
    std::string horizon_step;  // 1-based step or "all"
    Metrics m;
};

/// Rows per horizon step and one pooled "all" row.
std::vector<ReportRow> split_rows(const std::string& split, const Tensor& pred, const Tensor& truth);

/// Arithmetic mean over splits of each (horizon_step) row.
std::vector<ReportRow> average_rows(const std::vector<ReportRow>& rows);

void write_report(const std::filesystem::path& path, const std::vector<ReportRow>& rows,
                  const std::vector<std::pair<std::string, std::string>>& header);

struct SplitResult {
    std::string split;
    Forecasts model;
    Tensor ha;
    Tensor idw;
    std::vector<EpochLog> log;
};

/// The four splits, or the configured subset.
std::vector<SplitChoice> chosen_splits(const ExperimentConfig& cfg);

/// One configuration per sweep ratio (outputs under ratio_<r>), or `cfg` itself.
std::vector<std::pair<std::string, ExperimentConfig>> expand_sweep(const ExperimentConfig& cfg);

struct PreparedSplit {
    SplitChoice choice;
    GraphConfig graph;
    Dataset data;
};

PreparedSplit prepare_split(const LoadedData& in, const ExperimentConfig& cfg, const SplitChoice& split);

/// Test-node forecasts of a trained model plus both baselines on the same windows.
SplitResult evaluate_split(const PreparedSplit& p, const ExperimentConfig& cfg, const TrainedModel& model);

/// Train + infer + baselines for one split.
SplitResult run_split(const LoadedData& in, const ExperimentConfig& cfg, const SplitChoice& split,
                      const std::function<void(const EpochLog&)>& on_epoch = {});

struct ExperimentSummary {
    std::vector<ReportRow> model, ha, idw;  // including the average rows
};

/// report.csv, report_ha.csv, report_idw.csv and attention_<split>.csv under cfg.output.
ExperimentSummary write_reports(const ExperimentConfig& cfg, const std::vector<SplitResult>& results);

void write_training_log(const std::filesystem::path& path, const std::vector<SplitResult>& results);

/// Every split (or the sweep), writing reports under cfg.output.
std::map<std::string, ExperimentSummary> run_experiment(const ExperimentConfig& cfg,
                                                        const std::function<void(const std::string&)>& progress = {});

using Progress = std::function<void(const std::string&)>;

/// CLI subcommands. Checkpoints live at <output>/<split>/model.ckpt.
void simulate_command(const ExperimentConfig& cfg, const std::filesystem::path& dir);
void prepare_command(const ExperimentConfig& cfg, const Progress& progress = {});
void train_command(const ExperimentConfig& cfg, const Progress& progress = {});
void forecast_command(const ExperimentConfig& cfg, const Progress& progress = {});
std::map<std::string, ExperimentSummary> evaluate_command(const ExperimentConfig& cfg, const Progress& progress = {});
/// Average rows of every report set under the output directory, as text.
std::string report_command(const ExperimentConfig& cfg);

std::filesystem::path checkpoint_path(const ExperimentConfig& cfg, const SplitChoice& split);

}  // namespace gencast
