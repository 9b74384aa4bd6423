#include <fstream>
#include <iomanip>
#include <sstream>

#include "gencast/error.hpp"
#include "gencast/evalcli.hpp"
#include "json.hpp"

namespace gencast {

namespace {

void write_matrix(const std::filesystem::path& path, const Tensor& a, const std::vector<std::string>& ids) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "node_id";
    for (const auto& id : ids) out << ',' << id;
    out << '\n';
    const std::size_t n = a.dim(0);
    for (std::size_t i = 0; i < n; ++i) {
        out << ids[i];
        for (std::size_t j = 0; j < n; ++j) out << ',' << io::format_double(a[i * n + j]);
        out << '\n';
    }
}

std::vector<std::size_t> all_nodes(const Dataset& d) {
    std::vector<std::size_t> all(d.node_ids.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
}

void say(const Progress& progress, const std::string& msg) {
    if (progress) progress(msg);
}

}  // namespace

std::filesystem::path checkpoint_path(const ExperimentConfig& cfg, const SplitChoice& split) {
    return cfg.output / split.name() / "model.ckpt";
}

void simulate_command(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
    const lwr::SynthConfig& s = cfg.synth;
    const lwr::WeatherDriver driver = lwr::random_weather_driver(s.days, s.rain_events_per_day, s.rain_factor, s.seed);
    lwr::write_dataset(dir, lwr::synth_dataset(s, driver));
}

void prepare_command(const ExperimentConfig& cfg, const Progress& progress) {
    const LoadedData in = load_inputs(cfg);
    for (const auto& [name, c] : expand_sweep(cfg)) {
        for (const SplitChoice& split : chosen_splits(c)) {
            say(progress, "preparing " + (name.empty() ? "" : name + " ") + split.name());
            const PreparedSplit p = prepare_split(in, c, split);
            const Dataset& d = p.data;
            const auto dir = c.output / "prepared" / split.name();
            std::filesystem::create_directories(dir);

            std::ofstream nodes(dir / "nodes.csv");
            nodes << "node_id,label,geohash,station\n";
            for (std::size_t i = 0; i < d.node_ids.size(); ++i) {
                nodes << d.node_ids[i] << ',' << to_string(d.split.labels[i]) << ',' << d.geohashes[i] << ','
                      << d.weather.station_ids[d.station_of[i]] << '\n';
            }
            write_matrix(dir / "a_sg.csv", d.a_sg, d.node_ids);
            const GraphView full = make_view(d, p.graph, all_nodes(d), d.nodes(SplitLabel::test));
            write_matrix(dir / "a_dtw.csv", full.a_dtw, d.node_ids);

            nlohmann::json j;
            j["train_end"] = d.train_end;
            j["val_end"] = d.val_end;
            j["steps"] = d.x.steps();
            j["norm_mean"] = d.norm_mean;
            j["norm_std"] = d.norm_std;
            j["sigma"] = d.sigma;
            std::ofstream(dir / "summary.json") << j.dump(2) << '\n';
        }
    }
}

void train_command(const ExperimentConfig& cfg, const Progress& progress) {
    const LoadedData in = load_inputs(cfg);
    for (const auto& [name, c] : expand_sweep(cfg)) {
        std::vector<SplitResult> logs;
        for (const SplitChoice& split : chosen_splits(c)) {
            say(progress, "training " + (name.empty() ? "" : name + " ") + split.name());
            const PreparedSplit p = prepare_split(in, c, split);
            const TrainedModel m = train(p.data, c.model, p.graph, c.train, [&](const EpochLog& e) {
                std::ostringstream msg;
                msg << split.name() << " epoch " << e.epoch << " (" << e.phase << ") total " << e.total << " val_rmse "
                    << e.val_rmse;
                say(progress, msg.str());
            });
            const auto path = checkpoint_path(c, split);
            std::filesystem::create_directories(path.parent_path());
            save_checkpoint(m, path);
            SplitResult r;
            r.split = split.name();
            r.log = m.log;
            logs.push_back(std::move(r));
        }
        write_training_log(c.output / "training_log.csv", logs);
    }
}

namespace {

TrainedModel load_trained(const ExperimentConfig& cfg, const SplitChoice& split) {
    const auto path = checkpoint_path(cfg, split);
    if (!std::filesystem::exists(path)) throw DataError("no checkpoint at " + path.string() + "; run train first");
    return load_checkpoint(path);
}

}  // namespace

void forecast_command(const ExperimentConfig& cfg, const Progress& progress) {
    const LoadedData in = load_inputs(cfg);
    for (const auto& [name, c] : expand_sweep(cfg)) {
        for (const SplitChoice& split : chosen_splits(c)) {
            say(progress, "forecasting " + (name.empty() ? "" : name + " ") + split.name());
            const PreparedSplit p = prepare_split(in, c, split);
            const SplitResult r = evaluate_split(p, c, load_trained(c, split));
            const auto path = c.output / split.name() / "forecasts.csv";
            std::ofstream out(path);
            if (!out) throw DataError("cannot write " + path.string());
            out << "window_start,horizon_step,timestamp,node_id,pred,truth\n";
            const Forecasts& f = r.model;
            const std::size_t Tp = f.pred.dim(1), U = f.nodes.size(), T = c.model.st.history;
            for (std::size_t w = 0; w < f.starts.size(); ++w)
                for (std::size_t t = 0; t < Tp; ++t)
                    for (std::size_t u = 0; u < U; ++u) {
                        const std::size_t i = (w * Tp + t) * U + u;
                        out << f.starts[w] << ',' << t + 1 << ','
                            << io::format_timestamp(p.data.x.timestamps[f.starts[w] + T + t]) << ','
                            << p.data.node_ids[f.nodes[u]] << ',' << io::format_double(f.pred[i]) << ','
                            << io::format_double(f.truth[i]) << '\n';
                    }
        }
    }
}

std::map<std::string, ExperimentSummary> evaluate_command(const ExperimentConfig& cfg, const Progress& progress) {
    const LoadedData in = load_inputs(cfg);
    std::map<std::string, ExperimentSummary> out;
    for (const auto& [name, c] : expand_sweep(cfg)) {
        std::vector<SplitResult> results;
        for (const SplitChoice& split : chosen_splits(c)) {
            say(progress, "evaluating " + (name.empty() ? "" : name + " ") + split.name());
            results.push_back(evaluate_split(prepare_split(in, c, split), c, load_trained(c, split)));
        }
        out.emplace(name, write_reports(c, results));
    }
    return out;
}

std::string report_command(const ExperimentConfig& cfg) {
    std::ostringstream text;
    text << std::left << std::setw(14) << "run" << std::setw(8) << "method" << std::right << std::setw(12) << "rmse"
         << std::setw(12) << "mae" << std::setw(12) << "mape" << std::setw(12) << "r2" << '\n';
    for (const auto& [name, c] : expand_sweep(cfg)) {
        for (const auto& [method, file] : std::vector<std::pair<std::string, std::string>>{
                 {"model", "report.csv"}, {"ha", "report_ha.csv"}, {"idw", "report_idw.csv"}}) {
            const auto path = c.output / file;
            std::ifstream in(path);
            if (!in) throw DataError("no report at " + path.string() + "; run evaluate first");
            std::string line;
            bool found = false;
            while (std::getline(in, line)) {
                if (!line.starts_with("average,all,")) continue;
                const auto f = io::split_line(line);
                if (f.size() < 6) throw DataError("malformed report row in " + path.string());
                text << std::left << std::setw(14) << (name.empty() ? "-" : name) << std::setw(8) << method
                     << std::right << std::fixed << std::setprecision(4);
                for (std::size_t k = 2; k < 6; ++k) text << std::setw(12) << io::parse_double(f[k], path.string());
                text << '\n';
                found = true;
            }
            if (!found) throw DataError("report " + path.string() + " has no average row");
        }
    }
    return text.str();
}

}  // namespace gencast
