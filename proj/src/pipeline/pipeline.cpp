#include "gencast/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "gencast/diff/ops.hpp"
#include "gencast/error.hpp"

namespace gencast {

using namespace diff;
using nlohmann::json;

namespace {

std::vector<std::size_t> sorted_union(std::span<const std::size_t> a, std::span<const std::size_t> b) {
    std::vector<std::size_t> out(a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::vector<std::size_t> local_positions(std::span<const std::size_t> nodes, std::span<const std::size_t> subset) {
    std::vector<std::size_t> out;
    for (std::size_t g : subset) {
        const auto it = std::find(nodes.begin(), nodes.end(), g);
        if (it == nodes.end()) throw Error("node " + std::to_string(g) + " is not part of the view");
        out.push_back(static_cast<std::size_t>(it - nodes.begin()));
    }
    return out;
}

Tensor submatrix(const Tensor& a, std::span<const std::size_t> nodes) {
    const std::size_t n = nodes.size(), N = a.dim(0);
    Tensor out(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[nodes[i] * N + nodes[j]];
    return out;
}

std::size_t window_length(const ModelConfig& m) { return m.st.history + m.st.horizon; }

}  // namespace

Dataset prepare_dataset(const io::SensorMetadata& meta, const TrafficTensor& x, const WeatherTable& weather,
                        const GraphConfig& gcfg, std::size_t geohash_length) {
    const std::size_t N = meta.node_ids.size();
    if (x.nodes() != N) throw DimensionMismatch("observations and sensor metadata disagree on the node count");
    if (!(gcfg.train_fraction > 0.0 && gcfg.val_fraction >= 0.0 && gcfg.train_fraction + gcfg.val_fraction < 1.0)) {
        throw ConfigError("train and validation fractions must be positive and sum below 1");
    }
    Dataset d;
    d.node_ids = meta.node_ids;
    d.coords = meta.coords;
    d.points = project_equirectangular(d.coords);
    for (const GeoPoint& p : d.coords) d.geohashes.push_back(geohash_encode(p.lat, p.lon, geohash_length));
    d.x = x;
    d.split = split_region(d.coords, gcfg.split_mode, gcfg.ratios, gcfg.mirrored);
    d.sigma = gcfg.sigma > 0.0 ? gcfg.sigma : default_bandwidth(d.points);
    d.a_sg = build_spatial_adjacency(d.points, d.sigma, gcfg.eps_sg);

    const std::size_t T = x.steps();
    d.train_end = static_cast<std::size_t>(std::floor(static_cast<double>(T) * gcfg.train_fraction));
    d.val_end = static_cast<std::size_t>(std::floor(static_cast<double>(T) * (gcfg.train_fraction + gcfg.val_fraction)));
    if (d.train_end == 0 || d.val_end <= d.train_end || d.val_end >= T) {
        throw DataError("too few time steps for the train/validation/test split");
    }

    double s = 0.0, ss = 0.0;
    std::size_t cnt = 0;
    for (std::size_t n : d.nodes(SplitLabel::train)) {
        for (std::size_t t = 0; t < d.train_end; ++t) {
            const double v = x.at(t, n);
            s += v, ss += v * v, ++cnt;
        }
    }
    if (cnt == 0) throw NoObservedNodes("no training observations");
    d.norm_mean = s / static_cast<double>(cnt);
    const double var = ss / static_cast<double>(cnt) - d.norm_mean * d.norm_mean;
    d.norm_std = var > 1e-24 ? std::sqrt(var) : 1.0;

    d.station_of = match_weather(d.coords, weather.coords);
    const std::size_t end_hour = weather_hour_index(weather, x.timestamps[d.train_end - 1]) + 1;
    d.weather = standardise(weather, weather_statistics(weather, end_hour));
    return d;
}

GraphView make_view(const Dataset& data, const GraphConfig& gcfg, std::span<const std::size_t> nodes,
                    std::span<const std::size_t> targets) {
    GraphView v;
    v.nodes.assign(nodes.begin(), nodes.end());
    if (!std::is_sorted(v.nodes.begin(), v.nodes.end())) throw Error("view nodes must be ascending");
    v.targets = local_positions(v.nodes, targets);
    const std::size_t n = v.nodes.size();

    TrafficTensor x = data.x.slice(0, data.x.steps(), v.nodes);
    for (double& val : x.values.values()) val = (val - data.norm_mean) / data.norm_std;
    std::vector<std::size_t> sources;
    std::vector<NodeRole> roles(n, NodeRole::observed);
    for (std::size_t i = 0; i < n; ++i) {
        if (std::find(v.targets.begin(), v.targets.end(), i) == v.targets.end()) sources.push_back(i);
    }
    for (std::size_t t : v.targets) roles[t] = NodeRole::masked;
    std::vector<PlanarPoint> pts;
    for (std::size_t g : v.nodes) pts.push_back(data.points[g]);
    v.inputs = v.targets.empty() ? std::move(x) : pseudo_observations(x, v.targets, sources, pts, gcfg.pseudo_k);

    std::vector<int> minutes(data.train_end);
    for (std::size_t t = 0; t < data.train_end; ++t) minutes[t] = v.inputs.minute_of_day(t);
    std::vector<std::vector<double>> profiles;
    for (std::size_t i = 0; i < n; ++i) {
        const std::vector<double> s = v.inputs.series(i);
        profiles.push_back(daily_profile(std::span(s).first(data.train_end), minutes, v.inputs.steps_per_day,
                                         v.inputs.interval_minutes));
    }
    v.a_dtw = build_temporal_adjacency(profiles, roles, gcfg.q_kk, gcfg.q_ku);
    v.agg = make_aggregators(v.a_dtw, submatrix(data.a_sg, v.nodes));
    return v;
}

ModelInputs batch_inputs(const Dataset& data, const ModelConfig& mcfg, const GraphView& view,
                         std::span<const std::size_t> starts) {
    const std::size_t B = starts.size(), T = mcfg.st.history, N = view.nodes.size(), C = mcfg.st.channels;
    ModelInputs in;
    in.x = Tensor(Shape{B, T, N, C});
    for (std::size_t b = 0; b < B; ++b) {
        const std::size_t s = starts[b];
        if (s + T > view.inputs.steps()) throw Error("window exceeds the timeline");
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < C; ++c) in.x[((b * T + t) * N + n) * C + c] = view.inputs.at(s + t, n, c);
        in.time0.push_back(static_cast<double>(view.inputs.minute_of_day(s) / view.inputs.interval_minutes));
    }
    if (mcfg.use_weather) {
        std::vector<std::size_t> stations;
        for (std::size_t g : view.nodes) stations.push_back(data.station_of[g]);
        const std::size_t Tw = mcfg.weather_hours;
        in.weather = Tensor(Shape{B, Tw, N, kWeatherChannels});
        for (std::size_t b = 0; b < B; ++b) {
            const Tensor w = weather_window(data.weather, stations, view.inputs.timestamps[starts[b] + T - 1], Tw);
            std::copy(w.values().begin(), w.values().end(), in.weather.values().begin() + b * w.size());
        }
    }
    in.agg = view.agg;
    in.nodes = view.nodes;
    return in;
}

Tensor batch_truth(const Dataset& data, const ModelConfig& mcfg, const GraphView& view,
                   std::span<const std::size_t> starts) {
    const std::size_t B = starts.size(), T = mcfg.st.history, Tp = mcfg.st.horizon, N = view.nodes.size();
    const std::size_t C = mcfg.st.channels;
    Tensor out(Shape{B, Tp, N, C});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < Tp; ++t)
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < C; ++c)
                    out[((b * Tp + t) * N + n) * C + c] =
                        (data.x.at(starts[b] + T + t, view.nodes[n], c) - data.norm_mean) / data.norm_std;
    return out;
}

std::vector<std::size_t> window_starts(std::size_t begin, std::size_t end, std::size_t length, std::size_t stride) {
    if (stride == 0) throw ConfigError("window stride must be positive");
    std::vector<std::size_t> out;
    for (std::size_t s = begin; s + length <= end; s += stride) out.push_back(s);
    return out;
}

Tensor forecast_view(const TrainedModel& model, const Dataset& data, const GraphView& view,
                     std::span<const std::size_t> starts, std::size_t batch_size, Tensor* attention) {
    const std::size_t W = starts.size(), Tp = model.model.st.horizon, N = view.nodes.size();
    const std::size_t C = model.model.st.channels;
    Tensor out(Shape{W, Tp, N});
    Tensor att_sum;
    std::size_t att_rows = 0;
    for (std::size_t b0 = 0; b0 < W; b0 += batch_size) {
        const std::size_t b1 = std::min(W, b0 + batch_size);
        const auto sel = starts.subspan(b0, b1 - b0);
        Tape tape;
        BoundParameters bp(tape, model.params);
        const ModelOutputs o = model_forward(bp, model.model, data.geohashes, batch_inputs(data, model.model, view, sel));
        const Tensor& xh = o.x_hat.value();
        for (std::size_t b = 0; b < sel.size(); ++b)
            for (std::size_t t = 0; t < Tp; ++t)
                for (std::size_t n = 0; n < N; ++n)
                    out[((b0 + b) * Tp + t) * N + n] = xh[((b * Tp + t) * N + n) * C] * model.norm_std + model.norm_mean;
        if (attention && o.attention.valid()) {
            const Tensor& a = o.attention.value();
            const std::size_t rows = a.dim(0), inner = a.dim(1) * a.dim(2);
            if (att_sum.size() == 0) att_sum = Tensor(Shape{a.dim(1), a.dim(2)});
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t i = 0; i < inner; ++i) att_sum[i] += a[r * inner + i];
            att_rows += rows;
        }
    }
    if (attention) {
        if (att_rows) {
            for (double& v : att_sum.values()) v /= static_cast<double>(att_rows);
        }
        *attention = std::move(att_sum);
    }
    return out;
}

double mean_grouping_entropy(const TrainedModel& model, const Dataset& data, const GraphView& view,
                             std::span<const std::size_t> starts, std::size_t batch_size) {
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t b0 = 0; b0 < starts.size(); b0 += batch_size) {
        const auto sel = starts.subspan(b0, std::min(starts.size(), b0 + batch_size) - b0);
        Tape tape;
        BoundParameters bp(tape, model.params);
        const ModelOutputs o = model_forward(bp, model.model, data.geohashes, batch_inputs(data, model.model, view, sel));
        total += grouping_entropy_loss(o.w_s).value().item();
        ++batches;
    }
    return batches ? total / static_cast<double>(batches) : 0.0;
}

std::vector<double> physics_residuals(const TrainedModel& model, const Dataset& data, const GraphView& view,
                                      std::span<const std::size_t> starts, std::size_t batch_size) {
    std::vector<double> xf;
    for (std::size_t g : view.nodes) xf.push_back(model.physics.x_fspd.at(g));
    std::vector<double> out;
    for (std::size_t b0 = 0; b0 < starts.size(); b0 += batch_size) {
        const auto sel = starts.subspan(b0, std::min(starts.size(), b0 + batch_size) - b0);
        Tape tape;
        BoundParameters bp(tape, model.params);
        const ModelOutputs o = model_forward(bp, model.model, data.geohashes, batch_inputs(data, model.model, view, sel));
        const Var speed = add_scalar(scale(o.x_hat, model.norm_std), model.norm_mean);
        const PhysicsGradients g = physics_gradients(o.x_hat, o.time0, o.spatial, model.physics.spatial_channel);
        const auto& r = physics_residual(speed, g, xf).value().values();
        out.insert(out.end(), r.begin(), r.end());
    }
    return out;
}

void adam_step(ParameterSet& params, const std::vector<Tensor>& grads, AdamState& state, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    auto& items = params.items();
    if (grads.size() != items.size()) throw ShapeMismatch("adam_step: one gradient per parameter required");
    if (state.m.empty()) {
        for (const Parameter& p : items) {
            state.m.emplace_back(p.value.shape());
            state.v.emplace_back(p.value.shape());
        }
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (!items[i].trainable) continue;
        Tensor& w = items[i].value;
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        const Tensor& g = grads[i];
        for (std::size_t k = 0; k < w.size(); ++k) {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
        }
    }
}

namespace {

struct StepResult {
    double l_pred = 0.0, l_cl = 0.0, l_spg = 0.0, l_phy = 0.0, total = 0.0;
};

double validation_rmse(const TrainedModel& model, const Dataset& data, const GraphView& view,
                       std::span<const std::size_t> starts, std::size_t batch_size) {
    if (starts.empty() || view.targets.empty()) return 0.0;
    const Tensor pred = forecast_view(model, data, view, starts, batch_size);
    const std::size_t Tp = model.model.st.horizon, N = view.nodes.size(), T = model.model.st.history;
    double s = 0.0;
    std::size_t cnt = 0;
    for (std::size_t w = 0; w < starts.size(); ++w)
        for (std::size_t t = 0; t < Tp; ++t)
            for (std::size_t n : view.targets) {
                const double d = pred[(w * Tp + t) * N + n] - data.x.at(starts[w] + T + t, view.nodes[n]);
                s += d * d, ++cnt;
            }
    return std::sqrt(s / static_cast<double>(cnt));
}

}  // namespace

TrainedModel train(const Dataset& data, const ModelConfig& mcfg_in, const GraphConfig& gcfg, const TrainConfig& tcfg,
                   const std::function<void(const EpochLog&)>& on_epoch) {
    if (tcfg.batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(tcfg.mask_ratio > 0.0 && tcfg.mask_ratio < 1.0)) throw ConfigError("mask_ratio must lie in (0, 1)");
    if (!(tcfg.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");

    TrainedModel tm;
    tm.model = mcfg_in;
    tm.model.steps_per_day = data.x.steps_per_day;
    const ModelConfig& mcfg = tm.model;
    const ParameterSet initial = init_model(mcfg, tcfg.seed, data.llm_table ? &*data.llm_table : nullptr);
    tm.params = initial;
    tm.norm_mean = data.norm_mean;
    tm.norm_std = data.norm_std;
    tm.rng.seed(tcfg.seed ^ 0x9e3779b97f4a7c15ULL);
    tm.physics.tau = tcfg.tau;
    tm.physics.spatial_channel = tcfg.spatial_channel;

    const std::vector<std::size_t> train_nodes = data.nodes(SplitLabel::train);
    const std::vector<std::size_t> val_nodes = data.nodes(SplitLabel::val);
    const std::vector<std::size_t> test_nodes = data.nodes(SplitLabel::test);
    const std::vector<std::size_t> observed = sorted_union(train_nodes, val_nodes);

    tm.physics.x_fspd.assign(data.node_ids.size(), 0.0);
    {
        const TrafficTensor hist = data.x.slice(0, data.train_end, observed);
        const std::vector<double> xf = estimate_free_flow_speed(hist);
        for (std::size_t i = 0; i < observed.size(); ++i) tm.physics.x_fspd[observed[i]] = xf[i];
        const std::vector<std::size_t> all = sorted_union(observed, test_nodes);
        const GraphView full = make_view(data, gcfg, all, test_nodes);
        std::vector<double> local(all.size());
        for (std::size_t i = 0; i < all.size(); ++i) local[i] = tm.physics.x_fspd[all[i]];
        propagate_free_flow(local, full.a_dtw, full.targets);
        for (std::size_t i = 0; i < all.size(); ++i) tm.physics.x_fspd[all[i]] = local[i];
    }
    std::vector<double> xf_train;
    for (std::size_t g : train_nodes) xf_train.push_back(tm.physics.x_fspd[g]);

    const std::size_t L = window_length(mcfg);
    std::vector<std::size_t> windows = window_starts(0, data.train_end, L, 1);
    if (windows.size() < 2) throw DataError("training range holds fewer than two windows");
    const GraphView base = make_view(data, gcfg, train_nodes, {});
    const GraphView val_view = make_view(data, gcfg, observed, val_nodes);
    const std::size_t vstride = tcfg.val_stride ? tcfg.val_stride : mcfg.st.horizon;
    const std::vector<std::size_t> val_windows =
        window_starts(data.train_end >= mcfg.st.history ? data.train_end - mcfg.st.history : 0, data.val_end, L, vstride);

    std::vector<std::size_t> train_local(train_nodes.size());
    std::iota(train_local.begin(), train_local.end(), std::size_t{0});
    const Tensor a_sg_train = submatrix(data.a_sg, train_nodes);
    // Dense A_sg can grow the mask over every node; keep enough sources for A_dtw.
    const std::size_t keep = std::max(gcfg.q_kk + 1, gcfg.q_ku);
    if (train_nodes.size() <= keep) throw InsufficientObserved("too few training nodes to mask");
    const std::size_t max_masked = train_nodes.size() - keep;

    AdamState adam;
    double best_val = std::numeric_limits<double>::infinity();
    ParameterSet best = tm.params;
    std::size_t since_best = 0;
    const bool use_physics = tcfg.physics && tcfg.weights.theta != 0.0;

    for (std::size_t epoch = 0; epoch <= tcfg.epochs; ++epoch) {
        const bool warmup = epoch == 0;
        std::vector<std::size_t> mask_local = random_subgraph_mask(a_sg_train, train_local, tcfg.mask_ratio, tm.rng);
        if (mask_local.size() > max_masked) {
            std::shuffle(mask_local.begin(), mask_local.end(), tm.rng);
            mask_local.resize(max_masked);
        }
        std::vector<std::size_t> mask_global;
        for (std::size_t i : mask_local) mask_global.push_back(train_nodes[i]);
        std::sort(mask_global.begin(), mask_global.end());
        const GraphView masked = make_view(data, gcfg, train_nodes, mask_global);
        std::shuffle(windows.begin(), windows.end(), tm.rng);

        std::size_t batches = (windows.size() + tcfg.batch_size - 1) / tcfg.batch_size;
        if (tcfg.max_batches_per_epoch) batches = std::min(batches, tcfg.max_batches_per_epoch);
        StepResult acc;
        double entropy = 0.0, max_residual = 0.0;
        std::size_t done = 0;
        for (std::size_t bi = 0; bi < batches; ++bi) {
            const std::size_t b0 = bi * tcfg.batch_size;
            const std::span<const std::size_t> sel =
                std::span(windows).subspan(b0, std::min(windows.size(), b0 + tcfg.batch_size) - b0);
            if (sel.size() < 2) break;
            Tape tape;
            BoundParameters bp(tape, tm.params);
            const ModelOutputs oo = model_forward(bp, mcfg, data.geohashes, batch_inputs(data, mcfg, base, sel));
            const ModelOutputs om = model_forward(bp, mcfg, data.geohashes, batch_inputs(data, mcfg, masked, sel));

            const Var l_pred = pred_loss(om.x_hat, batch_truth(data, mcfg, masked, sel), masked.targets);
            const Var l_cl = contrastive_loss(mean_axis(oo.z, 1), mean_axis(om.z, 1), tcfg.weights.omega);
            std::vector<Var> ws = oo.w_s;
            ws.insert(ws.end(), om.w_s.begin(), om.w_s.end());
            const Var l_spg = grouping_entropy_loss(ws);
            Var l_phy;
            if (use_physics) {
                const Var speed = add_scalar(scale(om.x_hat, tm.norm_std), tm.norm_mean);
                const PhysicsGradients g = physics_gradients(om.x_hat, om.time0, om.spatial, tcfg.spatial_channel);
                const Var r = physics_residual(speed, g, xf_train);
                for (double v : r.value().values()) max_residual = std::max(max_residual, std::abs(v));
                if (warmup) {
                    const auto& rv = r.value().values();
                    tm.warmup_residuals.insert(tm.warmup_residuals.end(), rv.begin(), rv.end());
                    l_phy = quadratic_penalty(r);
                } else {
                    l_phy = huber(r, tm.physics.delta);
                }
            }
            Var total;
            try {
                total = total_loss(l_pred, l_cl, l_spg, l_phy, tcfg.weights);
            } catch (const NonFiniteTerm& e) {
                throw DivergenceDetected(std::string(e.what()) + " at epoch " + std::to_string(epoch));
            }
            if (!std::isfinite(total.value().item())) {
                throw DivergenceDetected("total loss is not finite at epoch " + std::to_string(epoch));
            }
            tape.backward(total);
            adam_step(tm.params, bp.gradients(), adam, tcfg.learning_rate);

            acc.l_pred += l_pred.value().item();
            acc.l_cl += l_cl.value().item();
            acc.l_spg += l_spg.value().item();
            acc.l_phy += l_phy.valid() ? l_phy.value().item() : 0.0;
            acc.total += total.value().item();
            entropy += l_spg.value().item();
            ++done;
        }
        const double nb = static_cast<double>(std::max<std::size_t>(done, 1));
        EpochLog log{epoch, warmup ? "warmup" : "main", acc.l_pred / nb, acc.l_cl / nb, acc.l_spg / nb,
                     acc.l_phy / nb, acc.total / nb, 0.0, 0.0, entropy / nb, max_residual};

        if (warmup) {
            if (use_physics) tm.physics.delta = calibrate_delta(tm.warmup_residuals, tcfg.tau);
            tm.params = initial;
            adam = AdamState{};
            best = tm.params;
        } else {
            log.val_rmse = validation_rmse(tm, data, val_view, val_windows, tcfg.batch_size);
            tm.delta_history.push_back(tm.physics.delta);
            if (log.val_rmse < best_val || val_windows.empty()) {
                best_val = log.val_rmse;
                best = tm.params;
                since_best = 0;
            } else {
                ++since_best;
            }
        }
        log.delta = tm.physics.delta;
        tm.log.push_back(log);
        if (on_epoch) on_epoch(log);
        if (!warmup && since_best >= tcfg.patience) break;
    }
    tm.params = std::move(best);
    return tm;
}

Forecasts infer_unobserved(const TrainedModel& model, const Dataset& data, const GraphConfig& gcfg,
                           std::span<const std::size_t> observed, std::span<const std::size_t> unobserved,
                           std::size_t begin, std::size_t end, std::size_t stride) {
    if (model.model.spatial_kind == SpatialKind::llm) {
        const std::size_t rows = model.params.value("sel.table").dim(0);
        for (std::size_t u : unobserved) {
            if (u >= rows) throw MissingEmbedding("no spatial embedding row for node " + data.node_ids.at(u));
        }
    }
    const std::vector<std::size_t> nodes = sorted_union(observed, unobserved);
    const GraphView view = make_view(data, gcfg, nodes, unobserved);
    Forecasts f;
    f.starts = window_starts(begin, end, window_length(model.model), stride);
    f.nodes.assign(unobserved.begin(), unobserved.end());
    const std::size_t W = f.starts.size(), Tp = model.model.st.horizon, N = nodes.size(), U = unobserved.size();
    const std::size_t T = model.model.st.history;
    const Tensor pred = forecast_view(model, data, view, f.starts, 32, &f.attention);
    const std::vector<std::size_t> loc = local_positions(nodes, unobserved);
    f.pred = Tensor(Shape{W, Tp, U});
    f.truth = Tensor(Shape{W, Tp, U});
    for (std::size_t w = 0; w < W; ++w)
        for (std::size_t t = 0; t < Tp; ++t)
            for (std::size_t u = 0; u < U; ++u) {
                f.pred[(w * Tp + t) * U + u] = pred[(w * Tp + t) * N + loc[u]];
                f.truth[(w * Tp + t) * U + u] = data.x.at(f.starts[w] + T + t, unobserved[u]);
            }
    return f;
}

namespace {

std::uint64_t fnv1a(const char* p, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(p[i]);
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string to_le_bytes(const std::vector<double>& v) {
    std::string out(v.size() * 8, '\0');
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, &v[i], 8);
        for (int b = 0; b < 8; ++b) out[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
    }
    return out;
}

std::vector<double> from_le_bytes(const char* p, std::size_t count) {
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i * 8 + b])) << (8 * b);
        std::memcpy(&out[i], &bits, 8);
    }
    return out;
}

json model_config_json(const ModelConfig& m) {
    return {{"model_dim", m.st.model_dim},
            {"layers", m.st.layers},
            {"kernel", m.st.kernel},
            {"dilations", m.st.dilations},
            {"sg", m.st.sg},
            {"cg", m.st.cg},
            {"history", m.st.history},
            {"horizon", m.st.horizon},
            {"channels", m.st.channels},
            {"repr_dim", m.st.repr_dim},
            {"spatial_kind", m.spatial_kind == SpatialKind::hash ? "hash" : "llm"},
            {"hash_dim", m.hash.dim},
            {"hash_layers", m.hash.layers},
            {"hash_length", m.hash.length},
            {"ste_dim", m.ste_dim},
            {"weather_hours", m.weather_hours},
            {"use_weather", m.use_weather},
            {"steps_per_day", m.steps_per_day}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig m;
    m.st.model_dim = j.at("model_dim");
    m.st.layers = j.at("layers");
    m.st.kernel = j.at("kernel");
    m.st.dilations = j.at("dilations").get<std::vector<std::size_t>>();
    m.st.sg = j.at("sg");
    m.st.cg = j.at("cg");
    m.st.history = j.at("history");
    m.st.horizon = j.at("horizon");
    m.st.channels = j.at("channels");
    m.st.repr_dim = j.at("repr_dim");
    m.spatial_kind = j.at("spatial_kind") == "hash" ? SpatialKind::hash : SpatialKind::llm;
    m.hash.dim = j.at("hash_dim");
    m.hash.layers = j.at("hash_layers");
    m.hash.length = j.at("hash_length");
    m.ste_dim = j.at("ste_dim");
    m.weather_hours = j.at("weather_hours");
    m.use_weather = j.at("use_weather");
    m.steps_per_day = j.at("steps_per_day");
    return m;
}

}  // namespace

void save_checkpoint(const TrainedModel& model, const std::filesystem::path& path) {
    struct Entry {
        std::string name;
        Shape shape;
        bool trainable;
        const std::vector<double>* data;
    };
    const std::vector<double> scalars{model.physics.delta, model.physics.tau, model.norm_mean, model.norm_std};
    std::vector<Entry> entries;
    for (const Parameter& p : model.params.items()) entries.push_back({p.name, p.value.shape(), p.trainable, &p.value.values()});
    entries.push_back({"@physics.x_fspd", Shape{model.physics.x_fspd.size()}, false, &model.physics.x_fspd});
    entries.push_back({"@scalars", Shape{scalars.size()}, false, &scalars});

    std::string payload;
    json tensors = json::array();
    for (const Entry& e : entries) {
        const std::string bytes = to_le_bytes(*e.data);
        tensors.push_back({{"name", e.name},
                           {"shape", e.shape},
                           {"trainable", e.trainable},
                           {"offset", payload.size()},
                           {"bytes", bytes.size()},
                           {"checksum", fnv1a(bytes.data(), bytes.size())}});
        payload += bytes;
    }
    std::ostringstream rng;
    rng << model.rng;
    const json manifest{{"tensors", tensors},
                        {"payload_bytes", payload.size()},
                        {"spatial_channel", model.physics.spatial_channel},
                        {"rng", rng.str()},
                        {"model", model_config_json(model.model)}};

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out << kCheckpointVersion << '\n' << manifest.dump() << '\n';
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw DataError("failed writing checkpoint " + path.string());
}

TrainedModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read checkpoint " + path.string());
    std::string version, header;
    if (!std::getline(in, version)) throw CorruptFile("empty checkpoint " + path.string());
    if (version != kCheckpointVersion) {
        if (version.rfind("gencast-checkpoint-", 0) == 0) {
            throw VersionMismatch("checkpoint version " + version + ", expected " + kCheckpointVersion);
        }
        throw CorruptFile("not a checkpoint: " + path.string());
    }
    if (!std::getline(in, header)) throw CorruptFile("checkpoint manifest missing");
    json manifest;
    try {
        manifest = json::parse(header);
    } catch (const json::exception&) {
        throw CorruptFile("checkpoint manifest is not valid JSON");
    }
    const std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    TrainedModel tm;
    try {
        if (payload.size() != manifest.at("payload_bytes").get<std::size_t>()) {
            throw CorruptFile("checkpoint payload is truncated or padded");
        }
        tm.model = model_config_from_json(manifest.at("model"));
        tm.physics.spatial_channel = manifest.at("spatial_channel");
        std::istringstream rng(manifest.at("rng").get<std::string>());
        rng >> tm.rng;
        if (!rng) throw CorruptFile("checkpoint rng state is unreadable");
        for (const json& t : manifest.at("tensors")) {
            const std::size_t off = t.at("offset"), bytes = t.at("bytes");
            if (off + bytes > payload.size() || bytes % 8) throw CorruptFile("tensor outside the payload");
            if (fnv1a(payload.data() + off, bytes) != t.at("checksum").get<std::uint64_t>()) {
                throw CorruptFile("checksum mismatch for " + t.at("name").get<std::string>());
            }
            const Shape shape = t.at("shape").get<Shape>();
            std::vector<double> data = from_le_bytes(payload.data() + off, bytes / 8);
            const std::string name = t.at("name");
            if (name == "@physics.x_fspd") {
                tm.physics.x_fspd = std::move(data);
            } else if (name == "@scalars") {
                if (data.size() != 4) throw CorruptFile("checkpoint scalars malformed");
                tm.physics.delta = data[0], tm.physics.tau = data[1], tm.norm_mean = data[2], tm.norm_std = data[3];
            } else {
                tm.params.add(name, Tensor(shape, std::move(data)), t.at("trainable").get<bool>());
            }
        }
    } catch (const json::exception& e) {
        throw CorruptFile(std::string("checkpoint manifest malformed: ") + e.what());
    }
    return tm;
}

}  // namespace gencast
