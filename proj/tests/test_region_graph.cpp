#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <set>

#include "doctest.h"
#include "gencast/error.hpp"
#include "gencast/io.hpp"
#include "gencast/region_graph.hpp"

using namespace gencast;

namespace {

std::vector<std::size_t> range(std::size_t a, std::size_t b) {
    std::vector<std::size_t> v;
    for (std::size_t i = a; i < b; ++i) v.push_back(i);
    return v;
}

// Minimum over every monotone warping path, enumerated recursively.
double dtw_brute(const std::vector<double>& a, const std::vector<double>& b) {
    double best = std::numeric_limits<double>::infinity();
    std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t i, std::size_t j, double acc) {
        acc += std::abs(a[i] - b[j]);
        if (i + 1 == a.size() && j + 1 == b.size()) {
            best = std::min(best, acc);
            return;
        }
        if (i + 1 < a.size()) walk(i + 1, j, acc);
        if (j + 1 < b.size()) walk(i, j + 1, acc);
        if (i + 1 < a.size() && j + 1 < b.size()) walk(i + 1, j + 1, acc);
    };
    walk(0, 0, 0.0);
    return best;
}

TrafficTensor constant_nodes(const std::vector<double>& values, std::size_t steps) {
    TrafficTensor x;
    const std::size_t n = values.size();
    x.values = Tensor(diff::Shape{steps, n, 1});
    x.mask.assign(steps * n, 1);
    x.timestamps.resize(steps);
    for (std::size_t t = 0; t < steps; ++t) {
        x.timestamps[t] = static_cast<std::int64_t>(t) * 300;
        for (std::size_t k = 0; k < n; ++k) x.at(t, k) = values[k];
    }
    return x;
}

Tensor path_graph(std::size_t n) {
    Tensor a(diff::Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) {
        a[i * n + i] = 1.0;
        if (i + 1 < n) a[i * n + i + 1] = a[(i + 1) * n + i] = 1.0;
    }
    return a;
}

}  // namespace

TEST_CASE("vertical split of ten nodes by longitude") {
    std::vector<GeoPoint> c;
    for (int i = 0; i < 10; ++i) c.push_back({0.0, static_cast<double>(i)});
    const auto s = split_region(c, SplitMode::vertical);
    CHECK(s.nodes_with(SplitLabel::train) == range(0, 4));
    CHECK(s.nodes_with(SplitLabel::val) == range(4, 5));
    CHECK(s.nodes_with(SplitLabel::test) == range(5, 10));
    CHECK(s.observed() == range(0, 5));
}

TEST_CASE("ring split puts the grid centre in test") {
    std::vector<GeoPoint> c;
    for (int r = 0; r < 3; ++r)
        for (int k = 0; k < 3; ++k) c.push_back({0.01 * r, 0.01 * k});
    const auto s = split_region(c, SplitMode::ring, {7.0, 1.0, 1.0});
    CHECK(s.nodes_with(SplitLabel::test) == std::vector<std::size_t>{4});
}

TEST_CASE("horizontal split with ratios 1:1:2") {
    std::vector<GeoPoint> c;
    for (int i = 0; i < 4; ++i) c.push_back({static_cast<double>(i), 0.0});
    const auto s = split_region(c, SplitMode::horizontal, {1.0, 1.0, 2.0});
    CHECK(s.nodes_with(SplitLabel::train) == std::vector<std::size_t>{0});
    CHECK(s.nodes_with(SplitLabel::val) == std::vector<std::size_t>{1});
    CHECK(s.nodes_with(SplitLabel::test) == std::vector<std::size_t>{2, 3});
}

TEST_CASE("mirrored split cuts from the other side") {
    std::vector<GeoPoint> c;
    for (int i = 0; i < 10; ++i) c.push_back({0.0, static_cast<double>(i)});
    const auto s = split_region(c, SplitMode::vertical, {}, true);
    CHECK(s.nodes_with(SplitLabel::test) == range(0, 5));
    CHECK(s.nodes_with(SplitLabel::train) == range(6, 10));
}

TEST_CASE("split needs three nodes") {
    std::vector<GeoPoint> c{{0, 0}, {1, 1}};
    CHECK_THROWS_AS(split_region(c, SplitMode::vertical), TooFewNodes);
    CHECK_THROWS_AS(parse_split_mode("diagonal"), ConfigError);
}

TEST_CASE("split is deterministic") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<GeoPoint> c;
    for (int i = 0; i < 50; ++i) c.push_back({37.0 + u(rng), -122.0 + u(rng)});
    for (auto mode : {SplitMode::horizontal, SplitMode::vertical, SplitMode::ring}) {
        CHECK(split_region(c, mode).labels == split_region(c, mode).labels);
    }
}

TEST_CASE("spatial adjacency edges") {
    SUBCASE("zero distance") {
        std::vector<PlanarPoint> p{{0, 0}, {0, 0}};
        auto a = build_spatial_adjacency(p, 1.0, 1.0);
        CHECK(a[1] == 1.0);
    }
    SUBCASE("boundary distance connects") {
        const double sigma = 2.0, eps = 0.3;
        const double d = sigma * std::sqrt(-std::log(eps));
        std::vector<PlanarPoint> p{{0, 0}, {d, 0}};
        auto a = build_spatial_adjacency(p, sigma, eps);
        CHECK(a[1] == 1.0);
        CHECK(a[2] == 1.0);
    }
    SUBCASE("collinear nodes at unit spacing give self loops only") {
        std::vector<PlanarPoint> p{{0, 0}, {1, 0}, {2, 0}};
        auto a = build_spatial_adjacency(p, 1.0, 0.5);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) CHECK(a[i * 3 + j] == (i == j ? 1.0 : 0.0));
    }
}

TEST_CASE("spatial adjacency is symmetric with unit diagonal") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    std::vector<PlanarPoint> p;
    for (int i = 0; i < 30; ++i) p.push_back({u(rng), u(rng)});
    auto a = build_spatial_adjacency(p, default_bandwidth(p), 0.1);
    for (std::size_t i = 0; i < 30; ++i) {
        CHECK(a[i * 30 + i] == 1.0);
        for (std::size_t j = 0; j < 30; ++j) CHECK(a[i * 30 + j] == a[j * 30 + i]);
    }
}

TEST_CASE("dtw examples") {
    std::vector<double> a{3, 1, 4};
    CHECK(dtw_distance(a, a) == 0.0);
    std::vector<double> z{0, 0, 0}, o{1, 1, 1};
    CHECK(dtw_distance(z, o) == dtw_brute(z, o));
    CHECK(dtw_distance(z, o) == 3.0);
    std::vector<double> p{1, 2, 3}, q{1, 2, 2, 3};
    CHECK(dtw_distance(p, q) == dtw_brute(p, q));
    CHECK(dtw_distance(p, q) == 0.0);
    std::vector<double> e;
    CHECK_THROWS_AS(dtw_distance(e, a), EmptySeries);
}

TEST_CASE("dtw matches brute force and is a symmetric nonnegative cost") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    std::uniform_int_distribution<int> len(1, 6);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> a(static_cast<std::size_t>(len(rng))), b(static_cast<std::size_t>(len(rng)));
        for (auto& v : a) v = u(rng);
        for (auto& v : b) v = u(rng);
        const double d = dtw_distance(a, b);
        CHECK(d >= 0.0);
        CHECK(dtw_distance(a, a) == 0.0);
        CHECK(d == doctest::Approx(dtw_distance(b, a)).epsilon(1e-12));
        CHECK(d == doctest::Approx(dtw_brute(a, b)).epsilon(1e-12));
    }
}

TEST_CASE("temporal adjacency top-q on stated costs") {
    Tensor costs(diff::Shape{3, 3}, {0.0, 1.0, 5.0, 1.0, 0.0, 2.0, 5.0, 2.0, 0.0});
    std::vector<NodeRole> roles(3, NodeRole::observed);
    auto a = temporal_adjacency_from_costs(costs, roles, 1, 1);
    // a[src][dst]
    CHECK(a[1 * 3 + 0] == 1.0);
    CHECK(a[0 * 3 + 1] == 1.0);
    CHECK(a[1 * 3 + 2] == 1.0);
    double total = 0.0;
    for (double v : a.values()) total += v;
    CHECK(total == 3.0);
}

TEST_CASE("temporal adjacency ties go to the lower index") {
    Tensor costs(diff::Shape{3, 3}, {0, 2, 2, 2, 0, 2, 2, 2, 0});
    std::vector<NodeRole> roles(3, NodeRole::observed);
    auto a = temporal_adjacency_from_costs(costs, roles, 1, 1);
    CHECK(a[1 * 3 + 0] == 1.0);
    CHECK(a[0 * 3 + 1] == 1.0);
    CHECK(a[0 * 3 + 2] == 1.0);
}

TEST_CASE("masked node has q_ku in-edges and sends nothing") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> g;
    std::vector<std::vector<double>> series(5, std::vector<double>(12));
    for (auto& s : series)
        for (auto& v : s) v = g(rng);
    std::vector<NodeRole> roles{NodeRole::observed, NodeRole::observed, NodeRole::masked, NodeRole::observed,
                                NodeRole::observed};
    auto a = build_temporal_adjacency(series, roles, 3, 2);
    double in_deg = 0.0;
    for (std::size_t src = 0; src < 5; ++src) in_deg += a[src * 5 + 2];
    CHECK(in_deg == 2.0);
    for (std::size_t dst = 0; dst < 5; ++dst) CHECK(a[2 * 5 + dst] == 0.0);
}

TEST_CASE("directedness holds for random role assignments") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 8;
        std::vector<std::vector<double>> series(n, std::vector<double>(10));
        for (auto& s : series)
            for (auto& v : s) v = g(rng);
        std::vector<NodeRole> roles(n, NodeRole::observed);
        roles[rng() % n] = NodeRole::masked;
        roles[rng() % n] = NodeRole::masked;
        roles[rng() % n] = NodeRole::excluded;
        auto a = build_temporal_adjacency(series, roles, 2, 3);
        for (std::size_t m = 0; m < n; ++m) {
            if (roles[m] == NodeRole::observed) continue;
            for (std::size_t o = 0; o < n; ++o) CHECK(a[m * n + o] == 0.0);
        }
    }
}

TEST_CASE("temporal adjacency needs enough observed nodes") {
    Tensor costs(diff::Shape{3, 3});
    std::vector<NodeRole> roles(3, NodeRole::observed);
    CHECK_THROWS_AS(temporal_adjacency_from_costs(costs, roles, 3, 1), InsufficientObserved);
    std::vector<NodeRole> one_obs{NodeRole::observed, NodeRole::masked, NodeRole::excluded};
    CHECK_THROWS_AS(temporal_adjacency_from_costs(costs, one_obs, 1, 2), InsufficientObserved);
}

TEST_CASE("subgraph mask extremes") {
    auto a = path_graph(10);
    auto cand = range(0, 10);
    std::mt19937_64 rng(1);
    CHECK(random_subgraph_mask(a, cand, 0.0, rng).empty());
    CHECK(random_subgraph_mask(a, cand, 1.0, rng) == cand);
}

TEST_CASE("subgraph mask size on a path graph") {
    auto a = path_graph(10);
    auto cand = range(0, 10);
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        std::mt19937_64 rng(seed);
        const auto m = random_subgraph_mask(a, cand, 0.5, rng);
        CHECK(m.size() >= 5);
        CHECK(m.size() <= 7);
    }
}

TEST_CASE("subgraph mask is reproducible and advances") {
    auto a = path_graph(20);
    auto cand = range(0, 20);
    std::mt19937_64 r1(42), r2(42);
    const auto m1 = random_subgraph_mask(a, cand, 0.3, r1);
    CHECK(m1 == random_subgraph_mask(a, cand, 0.3, r2));
    bool differs = false;
    for (int e = 0; e < 10 && !differs; ++e) differs = random_subgraph_mask(a, cand, 0.3, r1) != m1;
    CHECK(differs);
}

TEST_CASE("pseudo observations by inverse distance") {
    SUBCASE("equidistant neighbours") {
        auto x = constant_nodes({0.0, 4.0, 6.0}, 4);
        std::vector<PlanarPoint> p{{0, 0}, {-1, 0}, {1, 0}};
        std::vector<std::size_t> masked{0}, src{1, 2};
        auto y = pseudo_observations(x, masked, src, p);
        for (std::size_t t = 0; t < 4; ++t) {
            CHECK(y.at(t, 0) == doctest::Approx(5.0).epsilon(1e-14));
            CHECK_FALSE(y.observed(t, 0));
        }
    }
    SUBCASE("coincident neighbour dominates") {
        auto x = constant_nodes({0.0, 7.0, 100.0}, 2);
        std::vector<PlanarPoint> p{{1, 1}, {1, 1}, {2, 1}};
        std::vector<std::size_t> masked{0}, src{1, 2};
        auto y = pseudo_observations(x, masked, src, p);
        CHECK(std::abs(y.at(0, 0) - 7.0) < 1e-6);
    }
    SUBCASE("distances 1, 2, 2") {
        auto x = constant_nodes({0.0, 10.0, 4.0, 4.0, 1000.0}, 3);
        std::vector<PlanarPoint> p{{0, 0}, {1, 0}, {0, 2}, {-2, 0}, {9, 9}};
        std::vector<std::size_t> masked{0}, src{1, 2, 3, 4};
        auto y = pseudo_observations(x, masked, src, p);
        CHECK(y.at(0, 0) == doctest::Approx(8.0).epsilon(1e-14));
    }
    SUBCASE("no sources") {
        auto x = constant_nodes({1.0, 2.0}, 2);
        std::vector<PlanarPoint> p{{0, 0}, {1, 0}};
        std::vector<std::size_t> masked{0, 1}, src;
        CHECK_THROWS_AS(pseudo_observations(x, masked, src, p), NoObservedNodes);
    }
}

TEST_CASE("free-flow speed percentiles") {
    SUBCASE("constant series") {
        auto x = constant_nodes({60.0}, 288);
        CHECK(estimate_free_flow_speed(x)[0] == 60.0);
    }
    SUBCASE("nearest rank of 50..100") {
        // 51 non-peak samples starting at 09:00, 5 minutes apart, all before 16:00.
        TrafficTensor x;
        x.values = Tensor(diff::Shape{51, 1, 1});
        x.mask.assign(51, 1);
        for (std::size_t t = 0; t < 51; ++t) {
            x.timestamps.push_back(9 * 3600 + static_cast<std::int64_t>(t) * 300);
            x.at(t, 0) = 100.0 - static_cast<double>(t);
        }
        CHECK(estimate_free_flow_speed(x)[0] == 93.0);
    }
    SUBCASE("only peak observations") {
        TrafficTensor x;
        x.values = Tensor(diff::Shape{24, 1, 1}, 50.0);
        x.mask.assign(24, 1);
        for (std::size_t t = 0; t < 24; ++t) x.timestamps.push_back(7 * 3600 + static_cast<std::int64_t>(t) * 300);
        CHECK_THROWS_AS(estimate_free_flow_speed(x), NoNonPeakSamples);
    }
}

TEST_CASE("free flow propagates from in-neighbours") {
    Tensor a(diff::Shape{3, 3});
    a[0 * 3 + 2] = 1.0;
    a[1 * 3 + 2] = 1.0;
    std::vector<double> f{80.0, 100.0, 0.0};
    std::vector<std::size_t> targets{2};
    propagate_free_flow(f, a, targets);
    CHECK(f[2] == 90.0);
}

TEST_CASE("row normalisation leaves zero rows") {
    Tensor a(diff::Shape{2, 2}, {1.0, 3.0, 0.0, 0.0});
    auto r = row_normalise(a);
    CHECK(r[0] == 0.25);
    CHECK(r[1] == 0.75);
    CHECK(r[2] == 0.0);
    auto t = transpose(Tensor(diff::Shape{2, 2}, {1, 2, 3, 4}));
    CHECK(t.values() == std::vector<double>{1, 3, 2, 4});
}

TEST_CASE("csv ingestion round trip with gap interpolation") {
    const auto dir = std::filesystem::temp_directory_path() / "gencast_rg_test";
    std::filesystem::create_directories(dir);
    {
        std::ofstream m(dir / "meta.csv");
        m << "node_id,lat,lon\nA,37.1,-122.0\nB,37.2,-122.1\n";
        std::ofstream o(dir / "obs.csv");
        o << "timestamp,B,A\n"
             "2024-01-01T00:00:00,10,\n"
             "2024-01-01T00:05:00,,1\n"
             "2024-01-01T00:10:00,,\n"
             "2024-01-01T00:15:00,40,4\n";
    }
    const auto meta = io::read_sensor_metadata(dir / "meta.csv");
    CHECK(meta.node_ids == std::vector<std::string>{"A", "B"});
    CHECK(meta.coords[1].lon == -122.1);
    const auto x = io::read_observations(dir / "obs.csv", meta.node_ids);
    CHECK(x.interval_minutes == 5);
    CHECK(x.steps_per_day == 288);
    CHECK(x.at(0, 0) == 1.0);
    CHECK(x.at(2, 0) == 2.5);
    CHECK(x.at(1, 1) == 20.0);
    CHECK(x.at(2, 1) == 30.0);
    CHECK_FALSE(x.observed(2, 1));
    CHECK(x.observed(3, 1));
    CHECK(io::format_timestamp(x.timestamps[3]) == "2024-01-01T00:15:00");

    io::write_observations(dir / "obs2.csv", x, meta.node_ids);
    const auto y = io::read_observations(dir / "obs2.csv", meta.node_ids);
    CHECK(y.values.values() == x.values.values());
    CHECK(y.mask == x.mask);

    std::vector<std::string> missing{"A", "C"};
    CHECK_THROWS_AS(io::read_observations(dir / "obs.csv", missing), MissingNode);
    std::filesystem::remove_all(dir);
}

TEST_CASE("timestamps parse and format") {
    CHECK(io::parse_timestamp("1970-01-01T00:00:00Z") == 0);
    CHECK(io::parse_timestamp("2000-03-01 12:30") == 951913800);
    CHECK(io::format_timestamp(951913800) == "2000-03-01T12:30:00");
    CHECK_THROWS_AS(io::parse_timestamp("yesterday"), DataError);
}
