#include <algorithm>
#include <fstream>
#include <sstream>

#include "gencast/error.hpp"
#include "gencast/evalcli.hpp"

namespace gencast {

LoadedData load_inputs(const ExperimentConfig& cfg) {
    LoadedData d;
    d.meta = io::read_sensor_metadata(cfg.sensors);
    d.x = io::read_observations(cfg.observations, d.meta.node_ids);
    d.weather = read_weather(cfg.weather);
    if (cfg.model.spatial_kind == SpatialKind::llm) {
        if (cfg.llm_embeddings.empty()) throw ConfigError("field 'llm_embeddings': required for spatial_kind = llm");
        d.llm_table = load_precomputed_spatial_embeddings(cfg.llm_embeddings, d.meta.node_ids);
    }
    return d;
}

namespace {

std::vector<double> slice_step(const Tensor& t, std::size_t step) {
    const std::size_t W = t.dim(0), Tp = t.dim(1), U = t.dim(2);
    std::vector<double> out;
    out.reserve(W * U);
    for (std::size_t w = 0; w < W; ++w)
        for (std::size_t u = 0; u < U; ++u) out.push_back(t[(w * Tp + step) * U + u]);
    return out;
}

std::string cell(double v) { return io::format_double(v); }

}  // namespace

std::vector<ReportRow> split_rows(const std::string& split, const Tensor& pred, const Tensor& truth) {
    if (pred.shape() != truth.shape() || pred.rank() != 3) throw ShapeMismatch("report: forecast and truth shapes differ");
    std::vector<ReportRow> rows;
    for (std::size_t h = 0; h < pred.dim(1); ++h) {
        rows.push_back({split, std::to_string(h + 1), compute_metrics(slice_step(pred, h), slice_step(truth, h))});
    }
    rows.push_back({split, "all", compute_metrics(pred.values(), truth.values())});
    return rows;
}

std::vector<ReportRow> average_rows(const std::vector<ReportRow>& rows) {
    std::vector<std::string> steps;
    for (const ReportRow& r : rows)
        if (std::find(steps.begin(), steps.end(), r.horizon_step) == steps.end()) steps.push_back(r.horizon_step);
    std::vector<ReportRow> out;
    for (const std::string& s : steps) {
        ReportRow avg{"average", s, {}};
        std::size_t n = 0;
        for (const ReportRow& r : rows) {
            if (r.horizon_step != s) continue;
            avg.m.rmse += r.m.rmse;
            avg.m.mae += r.m.mae;
            avg.m.mape += r.m.mape;
            avg.m.r2 += r.m.r2;
            avg.m.mape_excluded += r.m.mape_excluded;
            avg.m.count += r.m.count;
            ++n;
        }
        const double k = static_cast<double>(n);
        avg.m.rmse /= k, avg.m.mae /= k, avg.m.mape /= k, avg.m.r2 /= k;
        out.push_back(avg);
    }
    return out;
}

void write_report(const std::filesystem::path& path, const std::vector<ReportRow>& rows,
                  const std::vector<std::pair<std::string, std::string>>& header) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write report " + path.string());
    for (const auto& [k, v] : header) out << "# " << k << " = " << v << '\n';
    out << "split,horizon_step,rmse,mae,mape,r2,mape_excluded_count\n";
    for (const ReportRow& r : rows) {
        out << r.split << ',' << r.horizon_step << ',' << cell(r.m.rmse) << ',' << cell(r.m.mae) << ','
            << cell(r.m.mape) << ',' << cell(r.m.r2) << ',' << r.m.mape_excluded << '\n';
    }
}

std::vector<SplitChoice> chosen_splits(const ExperimentConfig& cfg) {
    if (!cfg.splits.empty()) return cfg.splits;
    return {{SplitMode::horizontal, false}, {SplitMode::horizontal, true}, {SplitMode::vertical, false},
            {SplitMode::vertical, true}};
}

std::vector<std::pair<std::string, ExperimentConfig>> expand_sweep(const ExperimentConfig& cfg) {
    if (cfg.sweep_ratios.empty()) return {{"", cfg}};
    std::vector<std::pair<std::string, ExperimentConfig>> out;
    const double observed_total = cfg.graph.ratios.train + cfg.graph.ratios.val;
    for (double r : cfg.sweep_ratios) {
        ExperimentConfig c = cfg;
        c.sweep_ratios.clear();
        c.graph.ratios = {(1.0 - r) * cfg.graph.ratios.train / observed_total,
                          (1.0 - r) * cfg.graph.ratios.val / observed_total, r};
        const std::string name = "ratio_" + io::format_double(r);
        c.output = cfg.output / name;
        out.emplace_back(name, std::move(c));
    }
    return out;
}

PreparedSplit prepare_split(const LoadedData& in, const ExperimentConfig& cfg, const SplitChoice& split) {
    PreparedSplit p;
    p.choice = split;
    p.graph = cfg.graph;
    p.graph.split_mode = split.mode;
    p.graph.mirrored = split.mirrored;
    p.data = prepare_dataset(in.meta, in.x, in.weather, p.graph, cfg.model.hash.length);
    p.data.llm_table = in.llm_table;
    return p;
}

SplitResult evaluate_split(const PreparedSplit& p, const ExperimentConfig& cfg, const TrainedModel& model) {
    const Dataset& data = p.data;
    const std::vector<std::size_t> observed = data.split.observed();
    const std::vector<std::size_t> test = data.nodes(SplitLabel::test);
    const std::size_t T = model.model.st.history, Tp = model.model.st.horizon;
    const std::size_t begin = data.val_end >= T ? data.val_end - T : 0;
    const std::size_t stride = cfg.eval_stride ? cfg.eval_stride : Tp;

    SplitResult r;
    r.split = p.choice.name();
    r.model = infer_unobserved(model, data, p.graph, observed, test, begin, data.x.steps(), stride);
    r.ha = HistoricalAverage(data.x, data.train_end, observed, test, data.points).forecast(data.x, r.model.starts, T, Tp);
    r.idw = baseline_idw(data.x, observed, test, data.points, r.model.starts, T, Tp);
    r.log = model.log;
    return r;
}

SplitResult run_split(const LoadedData& in, const ExperimentConfig& cfg, const SplitChoice& split,
                      const std::function<void(const EpochLog&)>& on_epoch) {
    const PreparedSplit p = prepare_split(in, cfg, split);
    return evaluate_split(p, cfg, train(p.data, cfg.model, p.graph, cfg.train, on_epoch));
}

void write_training_log(const std::filesystem::path& path, const std::vector<SplitResult>& results) {
    std::ofstream log(path);
    if (!log) throw DataError("cannot write " + path.string());
    log << "split,epoch,phase,l_pred,l_cl,l_spg,l_phy,total,val_rmse,delta,entropy,max_residual\n";
    for (const SplitResult& r : results)
        for (const EpochLog& e : r.log) {
            log << r.split << ',' << e.epoch << ',' << e.phase << ',' << cell(e.l_pred) << ',' << cell(e.l_cl) << ','
                << cell(e.l_spg) << ',' << cell(e.l_phy) << ',' << cell(e.total) << ',' << cell(e.val_rmse) << ','
                << cell(e.delta) << ',' << cell(e.entropy) << ',' << cell(e.max_residual) << '\n';
        }
}

ExperimentSummary write_reports(const ExperimentConfig& cfg, const std::vector<SplitResult>& results) {
    std::filesystem::create_directories(cfg.output);
    ExperimentSummary s;
    for (const SplitResult& r : results) {
        for (auto& row : split_rows(r.split, r.model.pred, r.model.truth)) s.model.push_back(row);
        for (auto& row : split_rows(r.split, r.ha, r.model.truth)) s.ha.push_back(row);
        for (auto& row : split_rows(r.split, r.idw, r.model.truth)) s.idw.push_back(row);
        if (cfg.write_attention && r.model.attention.size()) {
            std::ofstream att(cfg.output / ("attention_" + r.split + ".csv"));
            att << "t,t_prime,weight\n";
            const std::size_t T = r.model.attention.dim(0), Tw = r.model.attention.dim(1);
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t tp = 0; tp < Tw; ++tp) att << t << ',' << tp << ',' << cell(r.model.attention[t * Tw + tp]) << '\n';
        }
    }
    for (auto* rows : {&s.model, &s.ha, &s.idw}) {
        const auto avg = average_rows(*rows);
        rows->insert(rows->end(), avg.begin(), avg.end());
    }
    const auto header = resolved_config(cfg);
    write_report(cfg.output / "report.csv", s.model, header);
    write_report(cfg.output / "report_ha.csv", s.ha, header);
    write_report(cfg.output / "report_idw.csv", s.idw, header);
    return s;
}

std::map<std::string, ExperimentSummary> run_experiment(const ExperimentConfig& cfg,
                                                        const std::function<void(const std::string&)>& progress) {
    const LoadedData in = load_inputs(cfg);
    std::map<std::string, ExperimentSummary> out;
    for (const auto& [name, c] : expand_sweep(cfg)) {
        if (progress && !name.empty()) progress(name);
        std::vector<SplitResult> results;
        for (const SplitChoice& split : chosen_splits(c)) {
            if (progress) progress("split " + split.name());
            results.push_back(run_split(in, c, split, [&](const EpochLog& e) {
                if (progress) {
                    std::ostringstream msg;
                    msg << split.name() << " epoch " << e.epoch << " (" << e.phase << ") total " << e.total
                        << " val_rmse " << e.val_rmse;
                    progress(msg.str());
                }
            }));
        }
        std::filesystem::create_directories(c.output);
        write_training_log(c.output / "training_log.csv", results);
        out.emplace(name, write_reports(c, results));
    }
    return out;
}

}  // namespace gencast
