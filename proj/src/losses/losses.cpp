#include "gencast/losses.hpp"

#include <cmath>
#include <string>

#include "gencast/diff/ops.hpp"
#include "gencast/error.hpp"
#include "gencast/stats.hpp"

namespace gencast {

using namespace diff;

Var pred_loss(const Var& x_hat, const Tensor& truth, std::span<const std::size_t> nodes) {
    if (nodes.empty()) throw EmptyMask("pred_loss: no masked nodes");
    if (x_hat.shape() != truth.shape()) {
        throw ShapeMismatch("pred_loss: forecast " + to_string(x_hat.shape()) + " vs truth " + to_string(truth.shape()));
    }
    Tape& tape = *x_hat.tape();
    const Var pred = index_select(x_hat, 2, nodes);
    const Var want = index_select(tape.constant(truth), 2, nodes);
    return sqrt(mean(square(sub(pred, want))));
}

namespace {

Var unit_rows(const Var& z) {
    const std::size_t B = z.shape()[0], D = z.shape()[1];
    const Var norm = sqrt(add_scalar(sum_axis(square(z), 1), 1e-300));
    return div(z, broadcast_to(reshape(norm, {B, 1}), {B, D}));
}

}  // namespace

Var contrastive_loss(const Var& z, const Var& z_m, double omega) {
    if (z.shape().size() != 2 || z.shape() != z_m.shape()) {
        throw ShapeMismatch("contrastive_loss: views " + to_string(z.shape()) + " and " + to_string(z_m.shape()));
    }
    const std::size_t B = z.shape()[0];
    if (B < 2) throw BatchTooSmall("contrastive_loss needs at least 2 windows, got " + std::to_string(B));
    if (!(omega > 0.0)) throw ConfigError("contrastive temperature must be positive");
    Tape& tape = *z.tape();
    const Var sim = scale(matmul(unit_rows(z), permute(unit_rows(z_m), {1, 0})), 1.0 / omega);  // [B, B]
    Tensor eye(Shape{B, B}), off(Shape{B, B}, 1.0);
    for (std::size_t i = 0; i < B; ++i) eye[i * B + i] = 1.0, off[i * B + i] = 0.0;
    const Var positive = sum_axis(mul(sim, tape.constant(std::move(eye))), 1);
    const Var negatives = log(sum_axis(mul(exp(sim), tape.constant(std::move(off))), 1));
    return mean(sub(negatives, positive));
}

Var grouping_entropy_loss(std::span<const Var> w_s) {
    if (w_s.empty()) throw Error("grouping_entropy_loss: no layers");
    Var total;
    for (const Var& p : w_s) {
        const double rows = static_cast<double>(p.size() / p.shape().back());
        const Var h = scale(sum(mul(p, log(add_scalar(p, 1e-8)))), -1.0 / rows);
        total = total.valid() ? add(total, h) : h;
    }
    return scale(total, 1.0 / static_cast<double>(w_s.size()));
}

PhysicsGradients physics_gradients(const Var& x_hat, const Var& time_coord, const Var& spatial,
                                   std::size_t spatial_channel) {
    if (!time_coord.valid() || !spatial.valid() || !time_coord.requires_grad() || !spatial.requires_grad()) {
        throw GradUnavailable("physics residual needs differentiable time and spatial embeddings");
    }
    const Shape& xs = x_hat.shape();
    const std::size_t B = xs[0], Tp = xs[1], N = xs[2], C = xs[3], K = spatial.shape()[2];
    if (spatial_channel >= K) throw ConfigError("spatial coordinate channel out of range");
    PhysicsGradients g{Tensor(Shape{B, Tp}), Tensor(Shape{B, Tp, N})};
    const std::vector<Var> wrt{time_coord, spatial};
    Tensor seed(xs);
    for (std::size_t t = 0; t < Tp; ++t) {
        std::fill(seed.values().begin(), seed.values().end(), 0.0);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t n = 0; n < N; ++n) seed[((b * Tp + t) * N + n) * C] = 1.0;
        const auto grads = seeded_grad(x_hat, seed, wrt);
        for (std::size_t b = 0; b < B; ++b) {
            g.g_time[b * Tp + t] = grads[0][b] / static_cast<double>(N);
            for (std::size_t n = 0; n < N; ++n) g.g_space[(b * Tp + t) * N + n] = grads[1][(b * N + n) * K + spatial_channel];
        }
    }
    return g;
}

Var physics_residual(const Var& x_hat, const PhysicsGradients& g, std::span<const double> x_fspd) {
    const Shape& xs = x_hat.shape();
    const std::size_t B = xs[0], Tp = xs[1], N = xs[2];
    if (x_fspd.size() != N) throw ShapeMismatch("physics_residual: one free-flow speed per node required");
    Tape& tape = *x_hat.tape();
    const Var speed = reshape(index_select(x_hat, 3, {0}), {B, Tp, N});
    Tensor xf(Shape{B, Tp, N});
    for (std::size_t i = 0; i < xf.size(); ++i) xf[i] = x_fspd[i % N];
    const Var coeff = sub(scale(speed, 2.0), tape.constant(std::move(xf)));
    const Var gt = broadcast_to(reshape(tape.constant(g.g_time), {B, Tp, 1}), {B, Tp, N});
    return add(gt, mul(coeff, tape.constant(g.g_space)));
}

double calibrate_delta(std::span<const double> residuals, double tau) {
    if (residuals.empty()) throw EmptyResiduals("calibrate_delta: no residuals");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in (0, 1]");
    std::vector<double> a;
    a.reserve(residuals.size());
    for (double r : residuals) a.push_back(std::abs(r));
    return nearest_rank_quantile(std::move(a), tau);
}

Var huber(const Var& r, double delta) {
    if (!(delta > 0.0)) throw NonPositiveDelta("Huber threshold must be positive");
    return mean(huber_elementwise(r, delta));
}

double huber(std::span<const double> r, double delta) {
    if (!(delta > 0.0)) throw NonPositiveDelta("Huber threshold must be positive");
    if (r.empty()) return 0.0;
    double s = 0.0;
    for (double v : r) {
        const double a = std::abs(v);
        s += a <= delta ? 0.5 * v * v : delta * (a - 0.5 * delta);
    }
    return s / static_cast<double>(r.size());
}

Var quadratic_penalty(const Var& r) { return scale(mean(square(r)), 0.5); }

double quadratic_penalty(std::span<const double> r) {
    if (r.empty()) return 0.0;
    double s = 0.0;
    for (double v : r) s += v * v;
    return 0.5 * s / static_cast<double>(r.size());
}

namespace {

void require_finite(double v, const char* name) {
    if (!std::isfinite(v)) throw NonFiniteTerm(std::string("loss term ") + name + " is not finite");
}

}  // namespace

Var total_loss(const Var& l_pred, const Var& l_cl, const Var& l_spg, const Var& l_phy, const LossWeights& w) {
    require_finite(l_pred.value().item(), "l_pred");
    Var total = l_pred;
    const std::pair<const Var*, std::pair<double, const char*>> terms[] = {
        {&l_cl, {w.lambda, "l_cl"}}, {&l_spg, {w.mu, "l_spg"}}, {&l_phy, {w.theta, "l_phy"}}};
    for (const auto& [v, wt] : terms) {
        if (!v->valid()) continue;
        require_finite(v->value().item(), wt.second);
        if (wt.first != 0.0) total = add(total, scale(*v, wt.first));
    }
    return total;
}

double total_loss(double l_pred, double l_cl, double l_spg, double l_phy, const LossWeights& w) {
    require_finite(l_pred, "l_pred");
    require_finite(l_cl, "l_cl");
    require_finite(l_spg, "l_spg");
    require_finite(l_phy, "l_phy");
    return l_pred + w.lambda * l_cl + w.mu * l_spg + w.theta * l_phy;
}

}  // namespace gencast
