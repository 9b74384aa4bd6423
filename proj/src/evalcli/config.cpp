#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "gencast/error.hpp"
#include "gencast/evalcli.hpp"

namespace gencast {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double to_real(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("field '" + key + "': expected a number, got '" + v + "'");
    return out;
}

std::size_t to_size(const std::string& key, const std::string& v) {
    std::size_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
        throw ConfigError("field '" + key + "': expected a non-negative integer, got '" + v + "'");
    }
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("field '" + key + "': expected true or false, got '" + v + "'");
}

std::vector<std::string> to_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::string real_text(double v) { return io::format_double(v); }

template <class T>
std::string join(const std::vector<T>& xs, const std::function<std::string(const T&)>& f) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + f(xs[i]);
    return out;
}

SplitChoice parse_split_choice(const std::string& key, const std::string& name) {
    SplitChoice c;
    std::string base = name;
    const std::string suffix = "_mirrored";
    if (base.size() > suffix.size() && base.compare(base.size() - suffix.size(), suffix.size(), suffix) == 0) {
        c.mirrored = true;
        base.resize(base.size() - suffix.size());
    }
    try {
        c.mode = parse_split_mode(base);
    } catch (const ConfigError& e) {
        throw ConfigError("field '" + key + "': " + e.what());
    }
    return c;
}

struct Field {
    const char* key;
    std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

#define SIZE_FIELD(name, member)                                                                                     \
    Field {                                                                                                          \
        name, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.member = to_size(k, v); },    \
            [](const ExperimentConfig& c) { return std::to_string(c.member); }                                       \
    }
#define REAL_FIELD(name, member)                                                                                     \
    Field {                                                                                                          \
        name, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.member = to_real(k, v); },    \
            [](const ExperimentConfig& c) { return real_text(c.member); }                                            \
    }
#define BOOL_FIELD(name, member)                                                                                     \
    Field {                                                                                                          \
        name, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.member = to_bool(k, v); },    \
            [](const ExperimentConfig& c) { return std::string(c.member ? "true" : "false"); }                      \
    }
#define PATH_FIELD(name, member)                                                                                     \
    Field {                                                                                                          \
        name, [](ExperimentConfig& c, const std::string&, const std::string& v) { c.member = v; },                  \
            [](const ExperimentConfig& c) { return c.member.string(); }                                              \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        PATH_FIELD("sensors", sensors),
        PATH_FIELD("observations", observations),
        PATH_FIELD("weather", weather),
        PATH_FIELD("llm_embeddings", llm_embeddings),
        PATH_FIELD("output", output),
        Field{"splits",
              [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                  c.splits.clear();
                  if (v == "all") return;
                  for (const std::string& s : to_list(v)) c.splits.push_back(parse_split_choice(k, s));
              },
              [](const ExperimentConfig& c) {
                  return c.splits.empty() ? std::string("all")
                                          : join<SplitChoice>(c.splits, [](const SplitChoice& s) { return s.name(); });
              }},
        Field{"sweep_ratios",
              [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                  c.sweep_ratios.clear();
                  for (const std::string& s : to_list(v)) {
                      const double r = to_real(k, s);
                      if (!(r > 0.0 && r < 1.0)) throw ConfigError("field '" + k + "': ratios must lie in (0, 1)");
                      c.sweep_ratios.push_back(r);
                  }
              },
              [](const ExperimentConfig& c) { return join<double>(c.sweep_ratios, real_text); }},
        SIZE_FIELD("eval_stride", eval_stride),
        BOOL_FIELD("write_attention", write_attention),

        Field{"split_ratios",
              [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                  std::vector<std::string> parts;
                  std::stringstream ss(v);
                  std::string item;
                  while (std::getline(ss, item, ':')) parts.push_back(trim(item));
                  if (parts.size() != 3) throw ConfigError("field '" + k + "': expected train:val:test");
                  c.graph.ratios = {to_real(k, parts[0]), to_real(k, parts[1]), to_real(k, parts[2])};
              },
              [](const ExperimentConfig& c) {
                  return real_text(c.graph.ratios.train) + ":" + real_text(c.graph.ratios.val) + ":" +
                         real_text(c.graph.ratios.test);
              }},
        REAL_FIELD("eps_sg", graph.eps_sg),
        REAL_FIELD("sigma", graph.sigma),
        SIZE_FIELD("q_kk", graph.q_kk),
        SIZE_FIELD("q_ku", graph.q_ku),
        SIZE_FIELD("pseudo_k", graph.pseudo_k),
        REAL_FIELD("train_fraction", graph.train_fraction),
        REAL_FIELD("val_fraction", graph.val_fraction),

        SIZE_FIELD("model_dim", model.st.model_dim),
        SIZE_FIELD("layers", model.st.layers),
        SIZE_FIELD("kernel", model.st.kernel),
        Field{"dilations",
              [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                  c.model.st.dilations.clear();
                  for (const std::string& s : to_list(v)) c.model.st.dilations.push_back(to_size(k, s));
              },
              [](const ExperimentConfig& c) {
                  return join<std::size_t>(c.model.st.dilations, [](const std::size_t& d) { return std::to_string(d); });
              }},
        SIZE_FIELD("sg", model.st.sg),
        SIZE_FIELD("cg", model.st.cg),
        SIZE_FIELD("history", model.st.history),
        SIZE_FIELD("horizon", model.st.horizon),
        SIZE_FIELD("repr_dim", model.st.repr_dim),
        Field{"spatial_kind",
              [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                  if (v == "hash") c.model.spatial_kind = SpatialKind::hash;
                  else if (v == "llm") c.model.spatial_kind = SpatialKind::llm;
                  else throw ConfigError("field '" + k + "': expected hash or llm, got '" + v + "'");
              },
              [](const ExperimentConfig& c) {
                  return std::string(c.model.spatial_kind == SpatialKind::hash ? "hash" : "llm");
              }},
        SIZE_FIELD("hash_dim", model.hash.dim),
        SIZE_FIELD("hash_layers", model.hash.layers),
        SIZE_FIELD("geohash_length", model.hash.length),
        SIZE_FIELD("ste_dim", model.ste_dim),
        SIZE_FIELD("weather_hours", model.weather_hours),
        BOOL_FIELD("use_weather", model.use_weather),

        SIZE_FIELD("epochs", train.epochs),
        SIZE_FIELD("batch_size", train.batch_size),
        REAL_FIELD("learning_rate", train.learning_rate),
        REAL_FIELD("mask_ratio", train.mask_ratio),
        Field{"seed",
              [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.train.seed = to_size(k, v); },
              [](const ExperimentConfig& c) { return std::to_string(c.train.seed); }},
        REAL_FIELD("lambda", train.weights.lambda),
        REAL_FIELD("mu", train.weights.mu),
        REAL_FIELD("theta", train.weights.theta),
        REAL_FIELD("omega", train.weights.omega),
        REAL_FIELD("tau", train.tau),
        SIZE_FIELD("patience", train.patience),
        SIZE_FIELD("max_batches_per_epoch", train.max_batches_per_epoch),
        SIZE_FIELD("val_stride", train.val_stride),
        BOOL_FIELD("physics", train.physics),
        SIZE_FIELD("spatial_channel", train.spatial_channel),

        SIZE_FIELD("synth.sensors", synth.sensors),
        SIZE_FIELD("synth.days", synth.days),
        Field{"synth.interval_minutes",
              [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                  c.synth.interval_minutes = static_cast<int>(to_size(k, v));
              },
              [](const ExperimentConfig& c) { return std::to_string(c.synth.interval_minutes); }},
        SIZE_FIELD("synth.cells", synth.corridor.cells),
        REAL_FIELD("synth.length_km", synth.corridor.length_km),
        REAL_FIELD("synth.noise_std", synth.noise_std),
        REAL_FIELD("synth.fspd_variation", synth.fspd_variation),
        REAL_FIELD("synth.demand_base", synth.demand_base),
        REAL_FIELD("synth.demand_peak", synth.demand_peak),
        REAL_FIELD("synth.day_scale_spread", synth.day_scale_spread),
        REAL_FIELD("synth.bottleneck_capacity", synth.bottleneck_capacity),
        SIZE_FIELD("synth.stations", synth.stations),
        REAL_FIELD("synth.rain_events_per_day", synth.rain_events_per_day),
        REAL_FIELD("synth.rain_factor", synth.rain_factor),
        Field{"synth.seed",
              [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.synth.seed = to_size(k, v); },
              [](const ExperimentConfig& c) { return std::to_string(c.synth.seed); }},
    };
    return table;
}

#undef SIZE_FIELD
#undef REAL_FIELD
#undef BOOL_FIELD
#undef PATH_FIELD

}  // namespace

std::string SplitChoice::name() const { return std::string(to_string(mode)) + (mirrored ? "_mirrored" : ""); }

void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    for (const Field& f : fields()) {
        if (key == f.key) {
            f.set(cfg, key, trim(value));
            return;
        }
    }
    throw ConfigError("unknown field '" + key + "'");
}

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value, got '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        try {
            apply_setting(cfg, key, line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::vector<std::pair<std::string, std::string>> resolved_config(const ExperimentConfig& cfg) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const Field& f : fields()) out.emplace_back(f.key, f.get(cfg));
    return out;
}

}  // namespace gencast
