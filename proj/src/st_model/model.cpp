#include "gencast/model.hpp"

#include "gencast/diff/ops.hpp"
#include "gencast/error.hpp"
#include "gencast/weather.hpp"

namespace gencast {

using namespace diff;

ParameterSet init_model(const ModelConfig& cfg, std::uint64_t seed, const Tensor* llm_table) {
    std::mt19937_64 rng(seed);
    ParameterSet p;
    std::size_t spatial_dim = cfg.hash.dim;
    if (cfg.spatial_kind == SpatialKind::hash) {
        init_hash_encoder(p, cfg.hash, rng);
    } else {
        if (!llm_table || llm_table->rank() != 2) throw ConfigError("llm spatial embeddings require a loaded table");
        p.add("sel.table", *llm_table, false);
        spatial_dim = llm_table->dim(1);
    }
    init_feature_params(p, {cfg.st.channels, spatial_dim, cfg.ste_dim, cfg.st.model_dim}, rng);
    if (cfg.use_weather) init_external_params(p, {cfg.st.model_dim, cfg.st.model_dim}, rng);
    init_st_params(p, cfg.st, rng);
    return p;
}

ModelOutputs model_forward(const BoundParameters& bp, const ModelConfig& cfg, const std::vector<std::string>& hashes,
                           const ModelInputs& in) {
    Tape& tape = bp.tape();
    const Shape& xs = in.x.shape();
    if (xs.size() != 4 || xs[1] != cfg.st.history || xs[2] != in.nodes.size() || xs[3] != cfg.st.channels) {
        throw ShapeMismatch("model input " + to_string(xs) + " does not match the configuration");
    }
    const std::size_t B = xs[0], T = xs[1];
    if (in.time0.size() != B) throw ShapeMismatch("one time coordinate per window required");

    ModelOutputs out;
    out.time0 = tape.leaf(Tensor(Shape{B}, in.time0), true);
    Tensor offsets(Shape{B, T});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < T; ++t) offsets[b * T + t] = static_cast<double>(t);
    const Var tau = add(broadcast_to(reshape(out.time0, {B, 1}), {B, T}), tape.constant(std::move(offsets)));
    const Var te = temporal_embedding(tau, cfg.steps_per_day);

    Var l_enc;
    if (cfg.spatial_kind == SpatialKind::hash) {
        std::vector<std::string> sel;
        for (std::size_t n : in.nodes) sel.push_back(hashes.at(n));
        l_enc = encode_spatial_hash(bp, sel);
    } else {
        l_enc = index_select(bp("sel.table"), 0, in.nodes);
    }

    const Var x = tape.constant(in.x);
    InitialFeatures f = build_initial_features(bp, x, te, l_enc);
    out.spatial = f.spatial;
    Var h = f.h0;
    if (cfg.use_weather) {
        const CrossAttention ca = cross_attention(bp, h, tape.constant(in.weather));
        out.attention = ca.weights;
        h = gated_fusion(bp, h, ca.h_wx);
    }
    for (std::size_t l = 0; l < cfg.st.layers; ++l) {
        LayerOutput lo = st_layer_forward(bp, l, h, in.agg, cfg.st);
        h = lo.h;
        out.w_s.push_back(lo.w_s);
    }
    HeadOutput head = forecast_and_represent(bp, h);
    out.x_hat = head.x_hat;
    out.z = head.z;
    return out;
}

}  // namespace gencast
