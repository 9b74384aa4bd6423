#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "support/fixtures.hpp"

using namespace gencast;

namespace {

int run_cli(const std::string& args) {
    const std::string cmd = std::string(GENCAST_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::filesystem::path write_config(const std::filesystem::path& dir, const ExperimentConfig& cfg) {
    const auto path = dir / "experiment.cfg";
    std::ofstream out(path);
    for (const auto& [k, v] : resolved_config(cfg)) out << k << " = " << v << '\n';
    return path;
}

}  // namespace

TEST_CASE("cli commands run end to end and write their outputs") {
    const auto dir = testing::scratch_dir("cli_flow");
    ExperimentConfig cfg = testing::tiny_config();
    cfg.sensors = dir / "data" / "sensors.csv";
    cfg.observations = dir / "data" / "observations.csv";
    cfg.weather = dir / "data" / "weather.csv";
    cfg.output = dir / "out";
    const std::string c = "-c " + write_config(dir, cfg).string();

    CHECK(run_cli(c + " simulate --out " + (dir / "data").string()) == 0);
    CHECK(std::filesystem::exists(dir / "data" / "ground_truth.csv"));
    CHECK(run_cli(c + " prepare") == 0);
    CHECK(std::filesystem::exists(dir / "out" / "prepared" / "vertical" / "a_dtw.csv"));
    CHECK(run_cli(c + " train") == 0);
    CHECK(std::filesystem::exists(dir / "out" / "vertical" / "model.ckpt"));
    CHECK(run_cli(c + " forecast") == 0);
    CHECK(std::filesystem::exists(dir / "out" / "vertical" / "forecasts.csv"));
    CHECK(run_cli(c + " evaluate") == 0);
    CHECK(run_cli(c + " report") == 0);
    std::filesystem::remove_all(dir);
}

TEST_CASE("cli exit codes") {
    const auto dir = testing::scratch_dir("cli_codes");
    ExperimentConfig cfg = testing::tiny_experiment(dir);
    const std::string c = "-c " + write_config(dir, cfg).string();

    CHECK(run_cli("") == 2);
    CHECK(run_cli(c + " --set bogus=1 train") == 2);
    CHECK(run_cli(c + " --set epochs=many train") == 2);
    CHECK(run_cli("-c " + (dir / "missing.cfg").string() + " train") == 2);
    CHECK(run_cli(c + " evaluate") == 3);
    CHECK(run_cli(c + " --set observations=" + (dir / "nope.csv").string() + " train") == 3);
    CHECK(run_cli(c + " --set learning_rate=1e300 train") == 4);
    std::filesystem::remove_all(dir);
}
