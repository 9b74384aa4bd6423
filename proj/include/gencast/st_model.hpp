#pragma once

#include <random>
#include <vector>

#include "gencast/params.hpp"

namespace gencast {

struct STConfig {
    std::size_t model_dim = 32;
    std::size_t layers = 2;
    std::size_t kernel = 3;
    std::vector<std::size_t> dilations{1, 2};
    std::size_t sg = 5;
    std::size_t cg = 2;
    std::size_t history = 24;   // T
    std::size_t horizon = 24;   // T'
    std::size_t channels = 1;   // C
    std::size_t repr_dim = 32;  // D_z

    std::size_t dilation(std::size_t layer) const {
        return dilations.empty() ? 1 : dilations[layer % dilations.size()];
    }
};

/// Row-normalised aggregation matrices: out_i = sum_j agg[i][j] * h_j.
struct Aggregators {
    Tensor dtw;
    Tensor sg;
};

/// From a_dtw[src][dst] and A_sg.
Aggregators make_aggregators(const Tensor& a_dtw, const Tensor& a_sg);

/// Per layer "st.l<i>.{tcn.w,tcn.b,gcn.a,gcn.b,grp.w}" plus the heads
/// "head.t.*" (T -> T'), "head.c.*" (D -> C) and "repr.*" (D -> D_z).
void init_st_params(ParameterSet& params, const STConfig& cfg, std::mt19937_64& rng);

/// h [B, T, N, D] -> [B, T, N, D]; causal, left zero padding.
Var tcn_forward(const Var& h, const Var& w, const Var& b, std::size_t dilation);

/// max(Agg_dtw * h * W_a, Agg_sg * h * W_b) per time step.
Var dual_gcn_forward(const Var& h, const Aggregators& agg, const Var& w_a, const Var& w_b);

/// Soft assignments W_s [B, N*cg, sg*cg] of node/channel-group samples to
/// centres, from h [B, T, N, D] and the projection w [D, sg*cg*cg].
Var spatial_grouping(const Var& h, const Var& w, std::size_t sg, std::size_t cg);

struct LayerOutput {
    Var h;
    Var w_s;
};

LayerOutput st_layer_forward(const BoundParameters& bp, std::size_t layer, const Var& h, const Aggregators& agg,
                             const STConfig& cfg);

struct HeadOutput {
    Var x_hat;  // [B, T', N, C]
    Var z;      // [B, N, D_z]
};

HeadOutput forecast_and_represent(const BoundParameters& bp, const Var& h);

}  // namespace gencast
