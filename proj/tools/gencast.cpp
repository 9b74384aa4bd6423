#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gencast/error.hpp"
#include "gencast/evalcli.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kDataError = 3;
constexpr int kDivergence = 4;

gencast::ExperimentConfig resolve(const std::string& path, const std::vector<std::string>& sets) {
    gencast::ExperimentConfig cfg = path.empty() ? gencast::ExperimentConfig{} : gencast::load_config(path);
    for (const std::string& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw gencast::ConfigError("--set expects key=value, got '" + s + "'");
        gencast::apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    return cfg;
}

void progress(const std::string& msg) { std::cerr << msg << '\n'; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Physics-guided traffic forecasting for unobserved road segments"};
    app.require_subcommand(1);

    std::string config;
    std::vector<std::string> sets;
    app.add_option("-c,--config", config, "Experiment config file (key = value lines)");
    app.add_option("--set", sets, "Override a config field, key=value")->allow_extra_args(false);

    std::string sim_out = "data";
    auto* simulate = app.add_subcommand("simulate", "Write a synthetic corridor dataset from synth.* settings");
    simulate->add_option("--out", sim_out, "Directory for sensors.csv, observations.csv, weather.csv");
    auto* prepare = app.add_subcommand("prepare", "Build graphs and splits, write them under <output>/prepared");
    auto* train = app.add_subcommand("train", "Train one model per split and save checkpoints");
    auto* forecast = app.add_subcommand("forecast", "Write test-node forecasts from saved checkpoints");
    auto* evaluate = app.add_subcommand("evaluate", "Score checkpoints and baselines, write reports");
    auto* report = app.add_subcommand("report", "Print the average rows of written reports");
    auto* run = app.add_subcommand("run", "Train and evaluate in one pass");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        const gencast::ExperimentConfig cfg = resolve(config, sets);
        if (*simulate) {
            gencast::simulate_command(cfg, sim_out);
        } else if (*prepare) {
            gencast::prepare_command(cfg, progress);
        } else if (*train) {
            gencast::train_command(cfg, progress);
        } else if (*forecast) {
            gencast::forecast_command(cfg, progress);
        } else if (*evaluate) {
            gencast::evaluate_command(cfg, progress);
            std::cout << gencast::report_command(cfg);
        } else if (*report) {
            std::cout << gencast::report_command(cfg);
        } else if (*run) {
            gencast::train_command(cfg, progress);
            gencast::evaluate_command(cfg, progress);
            std::cout << gencast::report_command(cfg);
        }
    } catch (const gencast::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const gencast::DivergenceDetected& e) {
        std::cerr << "training diverged: " << e.what() << '\n';
        return kDivergence;
    } catch (const gencast::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kDataError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return kOk;
}
