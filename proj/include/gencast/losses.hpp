#pragma once

#include <span>
#include <vector>

#include "gencast/diff/tape.hpp"

namespace gencast {

using diff::Tensor;
using diff::Var;

struct LossWeights {
    double lambda = 0.1;  // contrastive
    double mu = 1.0;      // grouping entropy
    double theta = 0.05;  // physics
    double omega = 0.5;   // contrastive temperature
};

struct PhysicsConfig {
    std::vector<double> x_fspd;  // per node, observation units
    double delta = 0.0;          // Huber threshold; 0 until calibrated
    double tau = 1.0;
    std::size_t spatial_channel = 0;
};

/// RMSE over the entries of `nodes` (axis 2) of x_hat [B, T', N, C].
Var pred_loss(const Var& x_hat, const Tensor& truth, std::span<const std::size_t> nodes);

/// Cosine-similarity contrastive loss between pooled views z, z_m [B, D_z];
/// the denominator holds only the negatives t' != t.
Var contrastive_loss(const Var& z, const Var& z_m, double omega);

/// Mean over layers of the mean row entropy -sum p log(p + 1e-8).
Var grouping_entropy_loss(std::span<const Var> w_s);

struct PhysicsGradients {
    Tensor g_time;   // [B, T'] node-averaged derivative w.r.t. the time coordinate
    Tensor g_space;  // [B, T', N] derivative w.r.t. the spatial coordinate channel
};

/// One seeded reverse pass per horizon step t with seed = ones over the nodes
/// of step t (channel 0). x_hat [B, T', N, C], time_coord [B], spatial [B, N, K].
PhysicsGradients physics_gradients(const Var& x_hat, const Var& time_coord, const Var& spatial,
                                   std::size_t spatial_channel);

/// R[b][t][n] = g_time[b][t] + (2 x_hat[b][t][n] - x_fspd[n]) * g_space[b][t][n],
/// recorded with the gradients held constant.
Var physics_residual(const Var& x_hat, const PhysicsGradients& g, std::span<const double> x_fspd);

/// Nearest-rank tau-quantile of |residuals|.
double calibrate_delta(std::span<const double> residuals, double tau);

Var huber(const Var& r, double delta);
double huber(std::span<const double> r, double delta);
/// mean(r^2 / 2): the warm-up penalty.
Var quadratic_penalty(const Var& r);
double quadratic_penalty(std::span<const double> r);

/// l_pred + lambda*l_cl + mu*l_spg + theta*l_phy. Invalid terms are skipped.
Var total_loss(const Var& l_pred, const Var& l_cl, const Var& l_spg, const Var& l_phy, const LossWeights& w);
double total_loss(double l_pred, double l_cl, double l_spg, double l_phy, const LossWeights& w);

}  // namespace gencast
