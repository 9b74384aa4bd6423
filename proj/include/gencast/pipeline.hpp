#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gencast/io.hpp"
#include "gencast/losses.hpp"
#include "gencast/model.hpp"
#include "gencast/region_graph.hpp"
#include "gencast/weather.hpp"

namespace gencast {

struct GraphConfig {
    SplitMode split_mode = SplitMode::vertical;
    SplitRatios ratios;
    bool mirrored = false;
    double eps_sg = 0.1;
    double sigma = 0.0;  // 0 selects the standard deviation of pairwise distances
    std::size_t q_kk = 3;
    std::size_t q_ku = 3;
    std::size_t pseudo_k = 3;
    double train_fraction = 0.7;
    double val_fraction = 0.1;
};

/// Observations, weather and graph of one region, normalised and split.
struct Dataset {
    std::vector<std::string> node_ids;
    std::vector<GeoPoint> coords;
    std::vector<PlanarPoint> points;
    std::vector<std::string> geohashes;
    TrafficTensor x;                       // raw units
    WeatherTable weather;                  // standardised
    std::vector<std::size_t> station_of;   // nearest station per node
    SplitSpec split;
    Tensor a_sg;
    double sigma = 0.0;
    std::size_t train_end = 0;             // steps [0, train_end) train the model
    std::size_t val_end = 0;               // [train_end, val_end) validate, the rest tests
    double norm_mean = 0.0;
    double norm_std = 1.0;
    std::optional<Tensor> llm_table;

    std::vector<std::size_t> nodes(SplitLabel label) const { return split.nodes_with(label); }
};

Dataset prepare_dataset(const io::SensorMetadata& meta, const TrafficTensor& x, const WeatherTable& weather,
                        const GraphConfig& gcfg, std::size_t geohash_length);

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 32;
    double learning_rate = 0.01;
    double mask_ratio = 0.5;
    std::uint64_t seed = 1;
    LossWeights weights;
    double tau = 1.0;
    std::size_t patience = 20;
    std::size_t max_batches_per_epoch = 0;  // 0 means every window
    std::size_t val_stride = 0;             // 0 means the horizon length
    bool physics = true;
    std::size_t spatial_channel = 0;
};

struct EpochLog {
    std::size_t epoch = 0;
    std::string phase;
    double l_pred = 0.0;
    double l_cl = 0.0;
    double l_spg = 0.0;
    double l_phy = 0.0;
    double total = 0.0;
    double val_rmse = 0.0;
    double delta = 0.0;
    double entropy = 0.0;  // mean W_s row entropy over the epoch
    double max_residual = 0.0;  // largest |R| seen during the epoch
};

struct TrainedModel {
    ModelConfig model;
    ParameterSet params;
    PhysicsConfig physics;  // x_fspd over every node of the dataset
    double norm_mean = 0.0;
    double norm_std = 1.0;
    std::mt19937_64 rng;
    std::vector<EpochLog> log;
    std::vector<double> delta_history;  // delta at the end of each phase-2 epoch
    std::vector<double> warmup_residuals;
};

/// Warm-up epoch with the quadratic physics penalty and delta calibration,
/// re-initialisation, then Huber-regularised training with early stopping.
TrainedModel train(const Dataset& data, const ModelConfig& mcfg, const GraphConfig& gcfg, const TrainConfig& tcfg,
                   const std::function<void(const EpochLog&)>& on_epoch = {});

/// A node subset with its aggregators and filled inputs over the whole timeline.
struct GraphView {
    std::vector<std::size_t> nodes;       // global indices
    std::vector<std::size_t> targets;     // local indices whose inputs are pseudo-observations
    TrafficTensor inputs;                 // normalised, targets replaced
    Tensor a_dtw;                         // local a[src][dst]
    Aggregators agg;
};

/// Nodes (global, ascending) of which `targets` get pseudo-observations from
/// the rest; A_dtw links non-targets -> targets only.
GraphView make_view(const Dataset& data, const GraphConfig& gcfg, std::span<const std::size_t> nodes,
                    std::span<const std::size_t> targets);

/// Model inputs for windows starting at `starts` over a view.
ModelInputs batch_inputs(const Dataset& data, const ModelConfig& mcfg, const GraphView& view,
                         std::span<const std::size_t> starts);
/// Normalised ground truth [B, T', N, 1] following each window's input span.
Tensor batch_truth(const Dataset& data, const ModelConfig& mcfg, const GraphView& view,
                   std::span<const std::size_t> starts);

/// Raw-unit forecasts [W, T', N] for every node of the view.
Tensor forecast_view(const TrainedModel& model, const Dataset& data, const GraphView& view,
                     std::span<const std::size_t> starts, std::size_t batch_size = 32, Tensor* attention = nullptr);

/// Mean row entropy of the grouping assignments over the windows.
double mean_grouping_entropy(const TrainedModel& model, const Dataset& data, const GraphView& view,
                             std::span<const std::size_t> starts, std::size_t batch_size = 32);

/// Physics residuals over the windows: derivatives of the normalised forecasts,
/// the characteristic speed 2x - x_fspd in observation units.
std::vector<double> physics_residuals(const TrainedModel& model, const Dataset& data, const GraphView& view,
                                      std::span<const std::size_t> starts, std::size_t batch_size = 32);

struct Forecasts {
    std::vector<std::size_t> starts;  // window start steps
    std::vector<std::size_t> nodes;   // global indices of the reported nodes
    Tensor pred;                      // [W, T', N_u], raw units
    Tensor truth;                     // [W, T', N_u], raw units
    Tensor attention;                 // [T, T_w] mean attention, empty without weather
};

/// Forecasts for the test nodes over windows fully inside [begin, end).
Forecasts infer_unobserved(const TrainedModel& model, const Dataset& data, const GraphConfig& gcfg,
                           std::span<const std::size_t> observed, std::span<const std::size_t> unobserved,
                           std::size_t begin, std::size_t end, std::size_t stride);

/// Window starts s with s + T + T' <= end and s >= begin.
std::vector<std::size_t> window_starts(std::size_t begin, std::size_t end, std::size_t length, std::size_t stride);

struct AdamState {
    std::vector<Tensor> m, v;
    std::size_t step = 0;
};

/// One Adam update (beta1 0.9, beta2 0.999, eps 1e-8) of every trainable tensor.
void adam_step(ParameterSet& params, const std::vector<Tensor>& grads, AdamState& state, double lr);

inline constexpr const char* kCheckpointVersion = "gencast-checkpoint-v1";

void save_checkpoint(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_checkpoint(const std::filesystem::path& path);

}  // namespace gencast
