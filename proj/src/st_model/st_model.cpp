#include "gencast/st_model.hpp"

#include "gencast/diff/ops.hpp"
#include "gencast/error.hpp"
#include "gencast/region_graph.hpp"

namespace gencast {

using namespace diff;

Aggregators make_aggregators(const Tensor& a_dtw, const Tensor& a_sg) {
    if (a_dtw.shape() != a_sg.shape() || a_dtw.rank() != 2 || a_dtw.dim(0) != a_dtw.dim(1)) {
        throw ShapeMismatch("adjacency matrices must be square and of equal size");
    }
    return {row_normalise(transpose(a_dtw)), row_normalise(a_sg)};
}

void init_st_params(ParameterSet& params, const STConfig& cfg, std::mt19937_64& rng) {
    const std::size_t D = cfg.model_dim, K = cfg.kernel;
    if (D % cfg.cg != 0) {
        throw DivisibilityError("model width " + std::to_string(D) + " is not divisible by cg = " +
                                std::to_string(cfg.cg));
    }
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const std::string p = "st.l" + std::to_string(l) + ".";
        params.add(p + "tcn.w", glorot_uniform({K, D, D}, K * D, D, rng));
        params.add(p + "tcn.b", Tensor({D}));
        params.add(p + "gcn.a", glorot_uniform({D, D}, D, D, rng));
        params.add(p + "gcn.b", glorot_uniform({D, D}, D, D, rng));
        const std::size_t G = cfg.sg * cfg.cg * cfg.cg;
        params.add(p + "grp.w", glorot_uniform({D, G}, D, G, rng));
    }
    const std::size_t T = cfg.history, Tp = cfg.horizon;
    params.add("head.t.w", glorot_uniform({T, Tp}, T, Tp, rng));
    params.add("head.t.b", Tensor({Tp}));
    params.add("head.c.w", glorot_uniform({D, cfg.channels}, D, cfg.channels, rng));
    params.add("head.c.b", Tensor({cfg.channels}));
    params.add("repr.w", glorot_uniform({D, cfg.repr_dim}, D, cfg.repr_dim, rng));
    params.add("repr.b", Tensor({cfg.repr_dim}));
}

Var tcn_forward(const Var& h, const Var& w, const Var& b, std::size_t dilation) {
    return causal_conv1d(h, w, b, dilation);
}

Var dual_gcn_forward(const Var& h, const Aggregators& agg, const Var& w_a, const Var& w_b) {
    const std::size_t N = h.shape()[h.shape().size() - 2];
    if (agg.dtw.dim(0) != N || agg.sg.dim(0) != N) {
        throw ShapeMismatch("dual_gcn_forward: adjacency of size " + std::to_string(agg.dtw.dim(0)) + " for " +
                            std::to_string(N) + " nodes");
    }
    const Var branch_a = linear(node_mix(agg.dtw, h), w_a);
    const Var branch_b = linear(node_mix(agg.sg, h), w_b);
    return maximum(branch_a, branch_b);
}

Var spatial_grouping(const Var& h, const Var& w, std::size_t sg, std::size_t cg) {
    const Shape& s = h.shape();
    const std::size_t B = s[0], N = s[2], D = s[3];
    if (cg == 0 || D % cg != 0) {
        throw DivisibilityError("channel groups cg = " + std::to_string(cg) + " do not divide width " +
                                std::to_string(D));
    }
    const std::size_t dp = D / cg, K = sg * cg;
    if (w.shape() != Shape{D, K * cg}) throw ShapeMismatch("spatial_grouping: projection shape " + to_string(w.shape()));
    const Var pooled = mean_axis(h, 1);                // [B, N, D]
    const Var z = reshape(pooled, {B, N * cg, dp});    // rows are (node, channel group)
    Var wc = reshape(linear(pooled, w), {B, N, cg, K});
    wc = reshape(permute(wc, {0, 3, 1, 2}), {B, K, N * cg});
    const Var centres = bmm(softmax(wc), z);           // [B, K, d']
    return softmax(neg(cdist(z, centres)));
}

LayerOutput st_layer_forward(const BoundParameters& bp, std::size_t layer, const Var& h, const Aggregators& agg,
                             const STConfig& cfg) {
    const std::string p = "st.l" + std::to_string(layer) + ".";
    const Var t = tcn_forward(h, bp(p + "tcn.w"), bp(p + "tcn.b"), cfg.dilation(layer));
    const Var g = dual_gcn_forward(h, agg, bp(p + "gcn.a"), bp(p + "gcn.b"));
    LayerOutput out;
    out.h = add(t, g);
    out.w_s = spatial_grouping(out.h, bp(p + "grp.w"), cfg.sg, cfg.cg);
    return out;
}

HeadOutput forecast_and_represent(const BoundParameters& bp, const Var& h) {
    // Time to the last axis for the T -> T' map, then back.
    const Var ht = relu(linear(permute(h, {0, 2, 3, 1}), bp("head.t.w"), bp("head.t.b")));  // [B, N, D, T']
    const Var hidden = permute(ht, {0, 3, 1, 2});                                          // [B, T', N, D]
    HeadOutput out;
    out.x_hat = linear(hidden, bp("head.c.w"), bp("head.c.b"));
    const std::size_t Tp = hidden.shape()[1];
    const Var last = index_select(hidden, 1, {Tp - 1});  // [B, 1, N, D]
    const Shape& ls = last.shape();
    out.z = linear(reshape(last, {ls[0], ls[2], ls[3]}), bp("repr.w"), bp("repr.b"));
    return out;
}

}  // namespace gencast
