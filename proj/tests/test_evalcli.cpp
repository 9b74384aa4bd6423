#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "doctest.h"
#include "gencast/error.hpp"
#include "gencast/evalcli.hpp"
#include "support/fixtures.hpp"

using namespace gencast;

namespace {

TrafficTensor periodic_tensor(std::size_t days, std::size_t nodes, int interval) {
    TrafficTensor x;
    const std::size_t per_day = static_cast<std::size_t>(1440 / interval);
    const std::size_t T = days * per_day;
    x.values = Tensor(diff::Shape{T, nodes, 1});
    x.mask.assign(T * nodes, 1);
    x.interval_minutes = interval;
    x.steps_per_day = per_day;
    for (std::size_t t = 0; t < T; ++t) {
        x.timestamps.push_back(1704067200 + static_cast<std::int64_t>(t) * interval * 60);
        for (std::size_t n = 0; n < nodes; ++n) {
            const double phase = 2.0 * std::numbers::pi * static_cast<double>(t % per_day) / static_cast<double>(per_day);
            x.at(t, n) = 60.0 + 15.0 * std::sin(phase + 0.3 * static_cast<double>(n)) + 5.0 * std::cos(3 * phase);
        }
    }
    return x;
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) out.push_back(line);
    return out;
}

}  // namespace

TEST_CASE("metrics hand arithmetic") {
    const std::vector<double> pred{2.0, 4.0}, truth{1.0, 2.0};
    const Metrics m = compute_metrics(pred, truth);
    CHECK(m.rmse == std::sqrt(2.5));
    CHECK(m.mae == 1.5);
    CHECK(m.mape == 1.0);
    CHECK(m.r2 == -9.0);
    CHECK(m.count == 2);
    CHECK(m.mape_excluded == 0);
}

TEST_CASE("metrics anchors") {
    const std::vector<double> truth{3.0, 5.0, 7.5, 1.0};
    const Metrics perfect = compute_metrics(truth, truth);
    CHECK(perfect.rmse == 0.0);
    CHECK(perfect.mae == 0.0);
    CHECK(perfect.mape == 0.0);
    CHECK(perfect.r2 == 1.0);
    const std::vector<double> mean(4, 4.125);
    CHECK(compute_metrics(mean, truth).r2 == 0.0);
}

TEST_CASE("metrics edge cases") {
    const std::vector<double> truth{0.0, 2.0, 0.0, 4.0}, pred{1.0, 3.0, -1.0, 2.0};
    const Metrics m = compute_metrics(pred, truth);
    CHECK(m.mape_excluded == 2);
    CHECK(m.mape == doctest::Approx((0.5 + 0.5) / 2.0));
    const std::vector<double> flat(3, 2.0), other{1.0, 2.0, 3.0};
    CHECK(std::isnan(compute_metrics(other, flat).r2));
    CHECK_THROWS_AS(r_squared(other, flat), ZeroVarianceTruth);
    CHECK(std::isnan(compute_metrics(other, std::vector<double>(3, 0.0)).mape));
    CHECK_THROWS_AS(compute_metrics(other, truth), ShapeMismatch);
}

TEST_CASE("mape is scale invariant") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(1.0, 50.0);
    std::vector<double> pred(40), truth(40);
    for (std::size_t i = 0; i < 40; ++i) pred[i] = u(rng), truth[i] = u(rng);
    const double base = compute_metrics(pred, truth).mape;
    for (double c : {0.001, 2.0, 1e4}) {
        std::vector<double> p = pred, t = truth;
        for (auto& v : p) v *= c;
        for (auto& v : t) v *= c;
        CHECK(compute_metrics(p, t).mape == doctest::Approx(base).epsilon(1e-14));
    }
}

TEST_CASE("historical average on a periodic signal") {
    const TrafficTensor x = periodic_tensor(6, 4, 15);
    const std::vector<PlanarPoint> points{{0, 0}, {1, 0}, {0, 1}, {5, 5}};
    const std::vector<std::size_t> observed{0, 1, 2}, unobserved{3};
    const std::size_t train_end = 4 * 96;
    const HistoricalAverage ha(x, train_end, observed, observed, points);
    const std::vector<std::size_t> starts = window_starts(train_end, x.steps(), 16, 8);
    const Tensor f = ha.forecast(x, starts, 8, 8);
    std::vector<double> truth;
    for (std::size_t s : starts)
        for (std::size_t t = 0; t < 8; ++t)
            for (std::size_t n : observed) truth.push_back(x.at(s + 8 + t, n));
    CHECK(r_squared(f.values(), truth) > 0.99);

    const Tensor fu = HistoricalAverage(x, train_end, observed, unobserved, points).forecast(x, starts, 8, 8);
    CHECK(fu.shape() == diff::Shape{starts.size(), 8, 1});
}

TEST_CASE("idw baseline degenerate and symmetric cases") {
    TrafficTensor x = periodic_tensor(1, 3, 60);
    const std::vector<std::size_t> starts{0, 5};
    SUBCASE("single observed node") {
        const std::vector<PlanarPoint> points{{0, 0}, {3, 1}, {-2, 7}};
        const std::vector<std::size_t> observed{0}, unobserved{1, 2};
        const Tensor f = baseline_idw(x, observed, unobserved, points, starts, 4, 3);
        for (std::size_t w = 0; w < 2; ++w)
            for (std::size_t t = 0; t < 3; ++t)
                for (std::size_t u = 0; u < 2; ++u) CHECK(f.at({w, t, u}) == x.at(starts[w] + 3, 0));
    }
    SUBCASE("equidistant observations 10 and 20") {
        const std::vector<PlanarPoint> points{{-1, 0}, {1, 0}, {0, 0}};
        for (std::size_t t = 0; t < x.steps(); ++t) x.at(t, 0) = 10.0, x.at(t, 1) = 20.0;
        const std::vector<std::size_t> observed{0, 1}, unobserved{2};
        const Tensor f = baseline_idw(x, observed, unobserved, points, starts, 4, 3);
        for (double v : f.values()) CHECK(v == 15.0);
    }
    SUBCASE("no observed nodes") {
        const std::vector<PlanarPoint> points{{0, 0}};
        CHECK_THROWS_AS(baseline_idw(x, std::vector<std::size_t>{}, std::vector<std::size_t>{0}, points, starts, 4, 3),
                        NoObservedNodes);
    }
}

TEST_CASE("config parsing and diagnostics") {
    const ExperimentConfig cfg = parse_config("# comment\n  epochs = 7  \nsplits = horizontal_mirrored, vertical\n"
                                              "split_ratios = 7:1:2\ntheta = 0.25 # trailing\n");
    CHECK(cfg.train.epochs == 7);
    REQUIRE(cfg.splits.size() == 2);
    CHECK(cfg.splits[0].name() == "horizontal_mirrored");
    CHECK(cfg.splits[1].name() == "vertical");
    CHECK(cfg.graph.ratios.train == 7.0);
    CHECK(cfg.graph.ratios.test == 2.0);
    CHECK(cfg.train.weights.theta == 0.25);

    auto message_of = [](const std::string& text) {
        try {
            parse_config(text);
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    const std::string bad_number = message_of("epochs = 3\nlearning_rate = fast\n");
    CHECK(bad_number.find("line 2") != std::string::npos);
    CHECK(bad_number.find("learning_rate") != std::string::npos);
    const std::string unknown = message_of("\n\nwarp_speed = 9\n");
    CHECK(unknown.find("line 3") != std::string::npos);
    CHECK(unknown.find("warp_speed") != std::string::npos);
    CHECK(message_of("just words\n").find("line 1") != std::string::npos);
    CHECK(message_of("splits = diagonal\n").find("splits") != std::string::npos);
    CHECK(message_of("split_ratios = 1:2\n").find("split_ratios") != std::string::npos);

    ExperimentConfig c;
    apply_setting(c, "model_dim", "24");
    CHECK(c.model.st.model_dim == 24);
    CHECK_THROWS_AS(apply_setting(c, "batch_size", "-3"), ConfigError);
}

TEST_CASE("resolved config round-trips") {
    ExperimentConfig cfg = parse_config("epochs = 9\nsweep_ratios = 0.2,0.4\nlambda = 0.3\n");
    std::string text;
    for (const auto& [k, v] : resolved_config(cfg)) text += k + " = " + v + "\n";
    const ExperimentConfig back = parse_config(text);
    CHECK(resolved_config(back) == resolved_config(cfg));
}

TEST_CASE("report rows: per horizon step, pooled, and averaged") {
    const Tensor pred(diff::Shape{2, 3, 2}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
    const Tensor truth(diff::Shape{2, 3, 2}, std::vector<double>{1, 1, 3, 3, 5, 5, 7, 7, 9, 9, 11, 11});
    const auto rows = split_rows("vertical", pred, truth);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].horizon_step == "1");
    CHECK(rows[3].horizon_step == "all");
    CHECK(rows[3].m.rmse == doctest::Approx(std::sqrt(0.5)));
    CHECK(rows[0].m.mae == 0.5);

    auto rows2 = split_rows("horizontal", truth, truth);
    std::vector<ReportRow> all = rows;
    all.insert(all.end(), rows2.begin(), rows2.end());
    const auto avg = average_rows(all);
    REQUIRE(avg.size() == 4);
    CHECK(avg[3].split == "average");
    CHECK(avg[3].m.rmse == doctest::Approx(std::sqrt(0.5) / 2));

    const auto dir = testing::scratch_dir("report_rows");
    write_report(dir / "r.csv", all, {{"seed", "1"}});
    const auto lines = lines_of(testing::read_file(dir / "r.csv"));
    REQUIRE(lines.size() == 1 + 1 + all.size());
    CHECK(lines[0] == "# seed = 1");
    CHECK(lines[1] == "split,horizon_step,rmse,mae,mape,r2,mape_excluded_count");
    std::filesystem::remove_all(dir);
}

TEST_CASE("experiment reports follow the schema and reproduce bitwise") {
    const auto dir = testing::scratch_dir("evalcli_experiment");
    ExperimentConfig cfg = testing::tiny_experiment(dir);
    run_experiment(cfg);
    const std::string report = testing::read_file(cfg.output / "report.csv");
    const std::string log = testing::read_file(cfg.output / "training_log.csv");

    const auto lines = lines_of(report);
    std::size_t header = 0;
    while (header < lines.size() && lines[header].starts_with("# ")) ++header;
    CHECK(header == resolved_config(cfg).size());
    REQUIRE(lines.size() == header + 1 + 2 * (cfg.model.st.horizon + 1));
    CHECK(lines[header] == "split,horizon_step,rmse,mae,mape,r2,mape_excluded_count");
    CHECK(lines[header + 1].starts_with("vertical,1,"));
    CHECK(lines.back().starts_with("average,all,"));
    CHECK(std::filesystem::exists(cfg.output / "report_ha.csv"));
    CHECK(std::filesystem::exists(cfg.output / "report_idw.csv"));
    const auto att = lines_of(testing::read_file(cfg.output / "attention_vertical.csv"));
    CHECK(att[0] == "t,t_prime,weight");
    CHECK(att.size() == 1 + cfg.model.st.history * cfg.model.weather_hours);
    CHECK(lines_of(log).size() == 1 + 1 + cfg.train.epochs);

    run_experiment(cfg);
    CHECK(testing::read_file(cfg.output / "report.csv") == report);
    CHECK(testing::read_file(cfg.output / "training_log.csv") == log);
    std::filesystem::remove_all(dir);
}

TEST_CASE("ratio sweep writes one report set per ratio") {
    const auto dir = testing::scratch_dir("evalcli_sweep");
    ExperimentConfig cfg = testing::tiny_experiment(dir);
    apply_setting(cfg, "sweep_ratios", "0.2,0.4");
    apply_setting(cfg, "epochs", "1");
    const auto out = run_experiment(cfg);
    CHECK(out.size() == 2);
    CHECK(std::filesystem::exists(cfg.output / "ratio_0.2" / "report.csv"));
    CHECK(std::filesystem::exists(cfg.output / "ratio_0.4" / "report.csv"));
    std::filesystem::remove_all(dir);
}
