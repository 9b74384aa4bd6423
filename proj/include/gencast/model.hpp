#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gencast/embeddings.hpp"
#include "gencast/params.hpp"
#include "gencast/st_model.hpp"

namespace gencast {

struct ModelConfig {
    STConfig st;
    SpatialKind spatial_kind = SpatialKind::hash;
    HashEncoderConfig hash;
    std::size_t ste_dim = 16;
    std::size_t weather_hours = 12;  // T_w
    bool use_weather = true;
    std::size_t steps_per_day = 288;
};

/// Every trainable tensor of the network, initialised from `seed`. For the llm
/// kind `llm_table` (all nodes x d_llm) is stored frozen as "sel.table".
ParameterSet init_model(const ModelConfig& cfg, std::uint64_t seed, const Tensor* llm_table = nullptr);

/// One batch of windows over a node subset.
struct ModelInputs {
    Tensor x;                        // [B, T, N, C], normalised
    std::vector<double> time0;       // per window, step-of-day of its first input step
    Tensor weather;                  // [B, T_w, N, 4]; ignored without weather
    Aggregators agg;
    std::vector<std::size_t> nodes;  // global node indices, rows of the spatial source
};

struct ModelOutputs {
    Var x_hat;                  // [B, T', N, C]
    Var z;                      // [B, N, D_z]
    Var time0;                  // [B] leaf with requires_grad, the time coordinate
    Var spatial;                // projected spatial embedding [B, N, D_ste]
    std::vector<Var> w_s;       // per layer grouping assignments
    Var attention;              // [B*N, T, T_w] when weather is used
};

/// `hashes` holds the GeoHash of every global node (hash kind only).
ModelOutputs model_forward(const BoundParameters& bp, const ModelConfig& cfg, const std::vector<std::string>& hashes,
                           const ModelInputs& in);

}  // namespace gencast
