#include <cmath>
#include <random>

#include "doctest.h"
#include "gencast/diff/ops.hpp"
#include "gencast/error.hpp"
#include "gencast/model.hpp"
#include "gencast/st_model.hpp"

using namespace gencast;
using namespace gencast::diff;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = u(rng);
    return t;
}

Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at({i, i}) = 1.0;
    return t;
}

Tensor eval_value(const Var& v) { return v.tape()->value(v.id()); }

}  // namespace

TEST_CASE("tcn with width-1 identity kernel returns its input") {
    std::mt19937_64 rng(1);
    const Tensor x = random_tensor({2, 5, 3, 4}, rng);
    Tensor w({1, 4, 4});
    for (std::size_t i = 0; i < 4; ++i) w.at({0, i, i}) = 1.0;
    Tape tape;
    const Tensor out = eval_value(tcn_forward(tape.constant(x), tape.constant(w), tape.constant(Tensor({4})), 1));
    CHECK(max_abs_diff(out, x) == 0.0);
}

TEST_CASE("tcn with zero kernel returns the broadcast bias") {
    std::mt19937_64 rng(2);
    const Tensor x = random_tensor({1, 6, 2, 3}, rng);
    const Tensor b = Tensor::vector({0.5, -1.0, 2.0});
    Tape tape;
    const Tensor out = eval_value(tcn_forward(tape.constant(x), tape.constant(Tensor({3, 3, 3})), tape.constant(b), 2));
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == b[i % 3]);
}

TEST_CASE("tcn output before a perturbed step is unchanged") {
    std::mt19937_64 rng(3);
    const Tensor x = random_tensor({1, 8, 3, 4}, rng);
    const Tensor w = random_tensor({3, 4, 4}, rng), b = random_tensor({4}, rng);
    Tape tape;
    const Tensor base = eval_value(tcn_forward(tape.constant(x), tape.constant(w), tape.constant(b), 2));
    for (std::size_t t = 0; t < 8; ++t) {
        Tensor xp = x;
        for (std::size_t n = 0; n < 3; ++n)
            for (std::size_t d = 0; d < 4; ++d) xp.at({0, t, n, d}) += 1.0;
        const Tensor out = eval_value(tcn_forward(tape.constant(xp), tape.constant(w), tape.constant(b), 2));
        for (std::size_t s = 0; s < t; ++s)
            for (std::size_t n = 0; n < 3; ++n)
                for (std::size_t d = 0; d < 4; ++d) CHECK(out.at({0, s, n, d}) == base.at({0, s, n, d}));
    }
}

TEST_CASE("dual gcn with identity adjacencies and weights returns its input") {
    std::mt19937_64 rng(4);
    const Tensor x = random_tensor({2, 3, 5, 4}, rng);
    const Aggregators agg = make_aggregators(identity(5), identity(5));
    Tape tape;
    const Tensor out =
        eval_value(dual_gcn_forward(tape.constant(x), agg, tape.constant(identity(4)), tape.constant(identity(4))));
    CHECK(max_abs_diff(out, x) == 0.0);
}

TEST_CASE("dual gcn takes the elementwise maximum of its branches") {
    const Tensor x({1, 1, 1, 1}, 1.0);
    const Aggregators agg = make_aggregators(identity(1), identity(1));
    Tape tape;
    const Tensor out = eval_value(dual_gcn_forward(tape.constant(x), agg, tape.constant(Tensor({1, 1}, 2.0)),
                                                   tape.constant(Tensor({1, 1}, 5.0))));
    CHECK(out[0] == 5.0);
}

TEST_CASE("dual gcn is equivariant under node permutation") {
    std::mt19937_64 rng(5);
    const std::size_t N = 5, D = 3;
    const Tensor x = random_tensor({2, 4, N, D}, rng);
    const Tensor a = random_tensor({N, N}, rng, 0.0, 1.0), s = random_tensor({N, N}, rng, 0.0, 1.0);
    const Tensor wa = random_tensor({D, D}, rng), wb = random_tensor({D, D}, rng);
    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};

    Tensor xp(x.shape()), ap({N, N}), sp({N, N});
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t t = 0; t < 4; ++t)
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t d = 0; d < D; ++d) xp.at({b, t, i, d}) = x.at({b, t, perm[i], d});
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j) {
            ap.at({i, j}) = a.at({perm[i], perm[j]});
            sp.at({i, j}) = s.at({perm[i], perm[j]});
        }

    Tape tape;
    const Tensor out = eval_value(
        dual_gcn_forward(tape.constant(x), make_aggregators(a, s), tape.constant(wa), tape.constant(wb)));
    const Tensor outp = eval_value(
        dual_gcn_forward(tape.constant(xp), make_aggregators(ap, sp), tape.constant(wa), tape.constant(wb)));
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t t = 0; t < 4; ++t)
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t d = 0; d < D; ++d)
                    CHECK(outp.at({b, t, i, d}) == doctest::Approx(out.at({b, t, perm[i], d})).epsilon(1e-12));
}

TEST_CASE("dual gcn rejects a mismatched adjacency") {
    Tape tape;
    const Aggregators agg = make_aggregators(identity(3), identity(3));
    CHECK_THROWS_AS(dual_gcn_forward(tape.constant(Tensor({1, 2, 4, 2})), agg, tape.constant(identity(2)),
                                     tape.constant(identity(2))),
                    ShapeMismatch);
    CHECK_THROWS_AS(make_aggregators(identity(3), identity(4)), ShapeMismatch);
}

TEST_CASE("layer branch ablations") {
    std::mt19937_64 rng(6);
    STConfig cfg;
    cfg.model_dim = 4;
    cfg.layers = 1;
    cfg.sg = 2;
    cfg.cg = 2;
    cfg.history = cfg.horizon = 5;
    ParameterSet params;
    init_st_params(params, cfg, rng);
    params.value("st.l0.tcn.b") = random_tensor({4}, rng);
    const Tensor x = random_tensor({2, 5, 3, 4}, rng);
    const Aggregators agg = make_aggregators(random_tensor({3, 3}, rng, 0, 1), random_tensor({3, 3}, rng, 0, 1));

    auto layer = [&](const ParameterSet& p) {
        Tape tape;
        BoundParameters bp(tape, p);
        const LayerOutput out = st_layer_forward(bp, 0, tape.constant(x), agg, cfg);
        return eval_value(out.h);
    };
    auto tcn_only = [&](const ParameterSet& p) {
        Tape tape;
        return eval_value(tcn_forward(tape.constant(x), tape.constant(p.value("st.l0.tcn.w")),
                                      tape.constant(p.value("st.l0.tcn.b")), cfg.dilation(0)));
    };
    auto gcn_only = [&](const ParameterSet& p) {
        Tape tape;
        return eval_value(dual_gcn_forward(tape.constant(x), agg, tape.constant(p.value("st.l0.gcn.a")),
                                           tape.constant(p.value("st.l0.gcn.b"))));
    };

    SUBCASE("zero gcn weights leave the temporal branch") {
        ParameterSet p = params;
        p.value("st.l0.gcn.a") = Tensor({4, 4});
        p.value("st.l0.gcn.b") = Tensor({4, 4});
        CHECK(max_abs_diff(layer(p), tcn_only(p)) == 0.0);
    }
    SUBCASE("zero tcn weights leave the graph branch") {
        ParameterSet p = params;
        p.value("st.l0.tcn.w") = Tensor({3, 4, 4});
        p.value("st.l0.tcn.b") = Tensor({4});
        CHECK(max_abs_diff(layer(p), gcn_only(p)) == 0.0);
    }
    SUBCASE("shape is preserved") { CHECK(layer(params).shape() == x.shape()); }
}

TEST_CASE("grouping rows are probability distributions") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor h = random_tensor({2, 4, 6, 8}, rng, -3.0, 3.0);
        const Tensor w = random_tensor({8, 3 * 2 * 2}, rng);
        Tape tape;
        const Tensor ws = eval_value(spatial_grouping(tape.constant(h), tape.constant(w), 3, 2));
        REQUIRE(ws.shape() == Shape{2, 12, 6});
        for (std::size_t r = 0; r < 24; ++r) {
            double s = 0.0;
            for (std::size_t k = 0; k < 6; ++k) {
                CHECK(ws[r * 6 + k] >= 0.0);
                s += ws[r * 6 + k];
            }
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("grouping of identical nodes gives uniform rows") {
    std::mt19937_64 rng(8);
    const std::size_t N = 5, D = 4;
    const Tensor row = random_tensor({D}, rng);
    Tensor h({1, 3, N, D});
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = row[i % D];
    // Identical channel groups make every sample identical, hence equidistant from all centres.
    for (std::size_t d = 2; d < D; ++d)
        for (std::size_t i = 0; i < h.size(); i += D) h[i + d] = h[i + d - 2];
    const Tensor w = random_tensor({D, 2 * 2 * 2}, rng);
    Tape tape;
    const Tensor ws = eval_value(spatial_grouping(tape.constant(h), tape.constant(w), 2, 2));
    for (std::size_t i = 0; i < ws.size(); ++i) CHECK(ws[i] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("grouping with D=8 and cg=2 has 2N rows") {
    std::mt19937_64 rng(9);
    Tape tape;
    const Tensor ws = eval_value(
        spatial_grouping(tape.constant(random_tensor({1, 3, 7, 8}, rng)), tape.constant(random_tensor({8, 20}, rng)), 5, 2));
    CHECK(ws.shape() == Shape{1, 14, 10});
}

TEST_CASE("grouping rejects a width not divisible by cg") {
    Tape tape;
    CHECK_THROWS_AS(spatial_grouping(tape.constant(Tensor({1, 2, 3, 6})), tape.constant(Tensor({6, 20})), 5, 4),
                    DivisibilityError);
    STConfig cfg;
    cfg.model_dim = 6;
    cfg.cg = 4;
    ParameterSet params;
    std::mt19937_64 rng(1);
    CHECK_THROWS_AS(init_st_params(params, cfg, rng), DivisibilityError);
}

TEST_CASE("grouping stays finite for large activations") {
    std::mt19937_64 rng(10);
    Tape tape;
    const Tensor ws = eval_value(spatial_grouping(tape.constant(random_tensor({1, 2, 4, 4}, rng, -1e3, 1e3)),
                                                  tape.constant(random_tensor({4, 8}, rng, -10, 10)), 2, 2));
    for (double v : ws.values()) CHECK(std::isfinite(v));
}

TEST_CASE("heads: zero weights give the bias and shapes follow the config") {
    std::mt19937_64 rng(11);
    STConfig cfg;
    cfg.model_dim = 4;
    cfg.cg = 2;
    cfg.history = cfg.horizon = 6;
    cfg.repr_dim = 5;
    ParameterSet params;
    init_st_params(params, cfg, rng);
    const Tensor h = random_tensor({2, 6, 3, 4}, rng);
    {
        Tape tape;
        BoundParameters bp(tape, params);
        const HeadOutput out = forecast_and_represent(bp, tape.constant(h));
        CHECK(eval_value(out.x_hat).shape() == Shape{2, 6, 3, 1});
        CHECK(eval_value(out.z).shape() == Shape{2, 3, 5});
        const Tensor x_hat = eval_value(out.x_hat);
        for (double v : x_hat.values()) CHECK(std::isfinite(v));
    }
    ParameterSet p = params;
    p.value("head.t.w") = Tensor({6, 6});
    p.value("head.c.w") = Tensor({4, 1});
    p.value("head.c.b") = Tensor::vector({1.25});
    Tape tape;
    BoundParameters bp(tape, p);
    const Tensor x_hat = eval_value(forecast_and_represent(bp, tape.constant(h)).x_hat);
    for (double v : x_hat.values()) CHECK(v == 1.25);
}

namespace {

ModelConfig small_model() {
    ModelConfig cfg;
    cfg.st.model_dim = 8;
    cfg.st.layers = 2;
    cfg.st.sg = 2;
    cfg.st.cg = 2;
    cfg.st.history = cfg.st.horizon = 6;
    cfg.st.repr_dim = 4;
    cfg.hash = {8, 1, 5};
    cfg.ste_dim = 4;
    cfg.weather_hours = 3;
    cfg.steps_per_day = 24;
    return cfg;
}

ModelInputs small_inputs(const ModelConfig& cfg, std::size_t N, const Tensor& a_dtw, const Tensor& a_sg,
                         std::mt19937_64& rng) {
    ModelInputs in;
    in.x = random_tensor({2, cfg.st.history, N, 1}, rng);
    in.time0 = {3.0, 11.0};
    in.weather = random_tensor({2, cfg.weather_hours, N, 4}, rng);
    in.agg = make_aggregators(a_dtw, a_sg);
    for (std::size_t i = 0; i < N; ++i) in.nodes.push_back(i);
    return in;
}

const std::vector<std::string> kHashes{"9q9hv", "9q9hy", "9q9j5", "9q9jh", "9q9k0", "9q9kp"};

}  // namespace

TEST_CASE("stacked network: no output step depends on later inputs") {
    const ModelConfig cfg = small_model();
    const ParameterSet params = init_model(cfg, 3);
    std::mt19937_64 rng(12);
    const std::size_t N = 4;
    const ModelInputs in = small_inputs(cfg, N, random_tensor({N, N}, rng, 0, 1), random_tensor({N, N}, rng, 0, 1), rng);

    Tape tape;
    BoundParameters bp(tape, params);
    const Var x = tape.leaf(in.x, true);
    const Var te = tape.constant(Tensor({1, cfg.st.history, 2}));
    const Var l = tape.constant(random_tensor({N, cfg.hash.dim}, rng));
    const InitialFeatures f =
        build_initial_features(bp, x, broadcast_to(te, {2, cfg.st.history, 2}), l);
    const Aggregators agg = in.agg;
    Var h = f.h0;
    for (std::size_t layer = 0; layer < cfg.st.layers; ++layer) h = st_layer_forward(bp, layer, h, agg, cfg.st).h;

    const Shape& s = tape.value(h.id()).shape();
    for (std::size_t t = 0; t < s[1]; ++t) {
        Tensor seed(s);
        for (std::size_t b = 0; b < s[0]; ++b)
            for (std::size_t n = 0; n < s[2]; ++n)
                for (std::size_t d = 0; d < s[3]; ++d) seed.at({b, t, n, d}) = 1.0;
        const Tensor g = seeded_grad(h, seed, {x})[0];
        double later = 0.0, now = 0.0;
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t k = 0; k < s[1]; ++k)
                for (std::size_t n = 0; n < N; ++n) {
                    const double v = std::abs(g.at({b, k, n, 0}));
                    if (k > t) later = std::max(later, v);
                    if (k == t) now = std::max(now, v);
                }
        CHECK(later == 0.0);
        CHECK(now > 0.0);
    }
}

TEST_CASE("masked inputs do not reach observed outputs when A_sg is the identity") {
    const ModelConfig cfg = small_model();
    const ParameterSet params = init_model(cfg, 5);
    std::mt19937_64 rng(13);
    const std::size_t N = 6;
    const std::vector<std::size_t> observed{0, 2, 3}, masked{1, 4, 5};
    Tensor a_dtw({N, N});
    for (auto o : observed)
        for (auto m : masked) a_dtw.at({o, m}) = 0.1 + 0.1 * static_cast<double>(o + m);
    ModelInputs in = small_inputs(cfg, N, a_dtw, identity(N), rng);

    auto run = [&](const ModelInputs& inputs) {
        Tape tape;
        BoundParameters bp(tape, params);
        return eval_value(model_forward(bp, cfg, kHashes, inputs).x_hat);
    };
    const Tensor base = run(in);
    ModelInputs perturbed = in;
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t t = 0; t < cfg.st.history; ++t) {
            for (auto m : masked) perturbed.x.at({b, t, m, 0}) += 3.0 * static_cast<double>(t + 1);
            for (std::size_t w = 0; w < cfg.weather_hours; ++w)
                if (t == 0)
                    for (auto m : masked) perturbed.weather.at({b, w, m, 1}) += 2.0;
        }
    const Tensor out = run(perturbed);
    double masked_change = 0.0;
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t t = 0; t < cfg.st.horizon; ++t) {
            for (auto o : observed) CHECK(out.at({b, t, o, 0}) == base.at({b, t, o, 0}));
            for (auto m : masked) masked_change = std::max(masked_change, std::abs(out.at({b, t, m, 0}) - base.at({b, t, m, 0})));
        }
    CHECK(masked_change > 0.0);
}
