#include "gencast/region_graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gencast/error.hpp"
#include "gencast/stats.hpp"

namespace gencast {

const char* to_string(SplitLabel label) {
    switch (label) {
        case SplitLabel::train: return "train";
        case SplitLabel::val: return "val";
        case SplitLabel::test: return "test";
    }
    return "?";
}

const char* to_string(SplitMode mode) {
    switch (mode) {
        case SplitMode::horizontal: return "horizontal";
        case SplitMode::vertical: return "vertical";
        case SplitMode::ring: return "ring";
    }
    return "?";
}

SplitMode parse_split_mode(const std::string& s) {
    if (s == "horizontal") return SplitMode::horizontal;
    if (s == "vertical") return SplitMode::vertical;
    if (s == "ring") return SplitMode::ring;
    throw ConfigError("unknown split mode '" + s + "' (expected horizontal, vertical or ring)");
}

std::vector<std::size_t> SplitSpec::nodes_with(SplitLabel label) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == label) out.push_back(i);
    return out;
}

std::vector<std::size_t> SplitSpec::observed() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] != SplitLabel::test) out.push_back(i);
    return out;
}

double TrafficTensor::at(std::size_t t, std::size_t n, std::size_t c) const {
    return values[(t * nodes() + n) * channels() + c];
}

double& TrafficTensor::at(std::size_t t, std::size_t n, std::size_t c) {
    return values[(t * nodes() + n) * channels() + c];
}

int TrafficTensor::minute_of_day(std::size_t t) const {
    const std::int64_t s = ((timestamps[t] % 86400) + 86400) % 86400;
    return static_cast<int>(s / 60);
}

std::vector<double> TrafficTensor::series(std::size_t node, std::size_t channel) const {
    std::vector<double> out(steps());
    for (std::size_t t = 0; t < steps(); ++t) out[t] = at(t, node, channel);
    return out;
}

TrafficTensor TrafficTensor::slice(std::size_t begin, std::size_t end, std::span<const std::size_t> sel) const {
    if (begin > end || end > steps()) throw ShapeMismatch("TrafficTensor::slice: bad time range");
    TrafficTensor out;
    out.interval_minutes = interval_minutes;
    out.steps_per_day = steps_per_day;
    const std::size_t T = end - begin, N = sel.size(), C = channels();
    out.values = Tensor(diff::Shape{T, N, C});
    out.mask.assign(T * N, 0);
    out.timestamps.assign(timestamps.begin() + static_cast<std::ptrdiff_t>(begin),
                          timestamps.begin() + static_cast<std::ptrdiff_t>(end));
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t k = 0; k < N; ++k) {
            for (std::size_t c = 0; c < C; ++c) out.at(t, k, c) = at(begin + t, sel[k], c);
            out.mask[t * N + k] = mask[(begin + t) * nodes() + sel[k]];
        }
    return out;
}

SplitSpec split_region(std::span<const GeoPoint> coords, SplitMode mode, SplitRatios ratios, bool mirrored) {
    const std::size_t n = coords.size();
    if (n < 3) throw TooFewNodes("split_region needs at least 3 nodes, got " + std::to_string(n));
    if (!(ratios.train > 0 && ratios.val > 0 && ratios.test > 0)) {
        throw ConfigError("split ratios must be positive");
    }

    std::vector<double> key(n);
    if (mode == SplitMode::ring) {
        const auto pts = project_equirectangular(coords);
        for (std::size_t i = 0; i < n; ++i) key[i] = std::hypot(pts[i].x, pts[i].y);
    } else {
        for (std::size_t i = 0; i < n; ++i) key[i] = mode == SplitMode::horizontal ? coords[i].lat : coords[i].lon;
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return mirrored ? key[a] > key[b] : key[a] < key[b];
    });

    const double total = ratios.train + ratios.val + ratios.test;
    const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios.val / total));
    const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios.test / total));
    if (n_val + n_test >= n) throw TooFewNodes("split ratios leave no training nodes");

    SplitSpec spec;
    spec.mode = mode;
    spec.ratios = ratios;
    spec.mirrored = mirrored;
    spec.labels.assign(n, SplitLabel::train);
    if (mode == SplitMode::ring) {
        // Innermost nodes form the unobserved core, enclosed by val then train.
        for (std::size_t r = 0; r < n; ++r) {
            spec.labels[order[r]] = r < n_test ? SplitLabel::test
                                    : r < n_test + n_val ? SplitLabel::val
                                                         : SplitLabel::train;
        }
    } else {
        const std::size_t n_train = n - n_val - n_test;
        for (std::size_t r = 0; r < n; ++r) {
            spec.labels[order[r]] = r < n_train ? SplitLabel::train
                                    : r < n_train + n_val ? SplitLabel::val
                                                          : SplitLabel::test;
        }
    }
    return spec;
}

double default_bandwidth(std::span<const PlanarPoint> points) {
    std::vector<double> d;
    for (std::size_t i = 0; i < points.size(); ++i)
        for (std::size_t j = i + 1; j < points.size(); ++j) d.push_back(distance(points[i], points[j]));
    if (d.size() < 2) return 1.0;
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
    double var = 0.0;
    for (double v : d) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(d.size()));
    return sd > 0.0 ? sd : 1.0;
}

Tensor build_spatial_adjacency(std::span<const PlanarPoint> points, double bandwidth, double threshold) {
    if (!(bandwidth > 0.0)) throw ConfigError("spatial kernel bandwidth must be positive");
    if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError("spatial threshold must lie in (0, 1]");
    const std::size_t n = points.size();
    Tensor a(diff::Shape{n, n});
    // Relative slack of a few ulps so points exactly on the threshold radius connect.
    const double cut = threshold * (1.0 - 1e-12);
    for (std::size_t i = 0; i < n; ++i) {
        a[i * n + i] = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = distance(points[i], points[j]);
            const double w = std::exp(-(d * d) / (bandwidth * bandwidth));
            const double e = w >= cut ? 1.0 : 0.0;
            a[i * n + j] = e;
            a[j * n + i] = e;
        }
    }
    return a;
}

double dtw_distance(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw EmptySeries("dtw_distance on an empty series");
    const double inf = std::numeric_limits<double>::infinity();
    const std::size_t m = b.size();
    std::vector<double> prev(m + 1, inf), cur(m + 1, inf);
    prev[0] = 0.0;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = inf;
        for (std::size_t j = 1; j <= m; ++j) {
            const double cost = std::abs(a[i - 1] - b[j - 1]);
            cur[j] = cost + std::min({prev[j], cur[j - 1], prev[j - 1]});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

Tensor temporal_adjacency_from_costs(const Tensor& costs, std::span<const NodeRole> roles, std::size_t q_kk,
                                     std::size_t q_ku) {
    const std::size_t n = roles.size();
    if (costs.rank() != 2 || costs.dim(0) != n || costs.dim(1) != n) {
        throw ShapeMismatch("temporal adjacency: cost matrix does not match node count");
    }
    if (q_kk < 1 || q_ku < 1) throw ConfigError("q_kk and q_ku must be >= 1");

    std::vector<std::size_t> observed;
    bool any_observed = false, any_masked = false;
    for (std::size_t i = 0; i < n; ++i) {
        if (roles[i] == NodeRole::observed) observed.push_back(i), any_observed = true;
        if (roles[i] == NodeRole::masked) any_masked = true;
    }
    if (any_observed && q_kk + 1 > observed.size()) {
        throw InsufficientObserved("q_kk = " + std::to_string(q_kk) + " exceeds observed count minus one (" +
                                   std::to_string(observed.size() - 1) + ")");
    }
    if (any_masked && q_ku > observed.size()) {
        throw InsufficientObserved("q_ku = " + std::to_string(q_ku) + " exceeds observed count (" +
                                   std::to_string(observed.size()) + ")");
    }

    Tensor a(diff::Shape{n, n});
    std::vector<std::size_t> cand;
    for (std::size_t dst = 0; dst < n; ++dst) {
        if (roles[dst] == NodeRole::excluded) continue;
        const std::size_t q = roles[dst] == NodeRole::observed ? q_kk : q_ku;
        cand.clear();
        for (std::size_t src : observed)
            if (src != dst) cand.push_back(src);
        std::stable_sort(cand.begin(), cand.end(), [&](std::size_t x, std::size_t y) {
            const double cx = costs[dst * n + x], cy = costs[dst * n + y];
            return cx < cy || (cx == cy && x < y);
        });
        for (std::size_t k = 0; k < q && k < cand.size(); ++k) a[cand[k] * n + dst] = 1.0;
    }
    return a;
}

Tensor build_temporal_adjacency(const std::vector<std::vector<double>>& series, std::span<const NodeRole> roles,
                                std::size_t q_kk, std::size_t q_ku) {
    const std::size_t n = roles.size();
    if (series.size() != n) throw ShapeMismatch("temporal adjacency: one series per node required");
    Tensor costs(diff::Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) {
        if (roles[i] == NodeRole::excluded) continue;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i || roles[j] != NodeRole::observed) continue;
            if (roles[i] == NodeRole::observed && j < i) {
                costs[i * n + j] = costs[j * n + i];
                continue;
            }
            costs[i * n + j] = dtw_distance(series[i], series[j]);
        }
    }
    return temporal_adjacency_from_costs(costs, roles, q_kk, q_ku);
}

std::vector<double> daily_profile(std::span<const double> series, std::span<const int> minute_of_day,
                                  std::size_t steps_per_day, int interval_minutes) {
    if (series.empty()) throw EmptySeries("daily_profile of an empty series");
    std::vector<double> sum(steps_per_day, 0.0);
    std::vector<std::size_t> count(steps_per_day, 0);
    double total = 0.0;
    std::size_t total_n = 0;
    for (std::size_t t = 0; t < series.size(); ++t) {
        if (!std::isfinite(series[t])) continue;
        const auto slot = static_cast<std::size_t>(minute_of_day[t] / interval_minutes) % steps_per_day;
        sum[slot] += series[t];
        ++count[slot];
        total += series[t];
        ++total_n;
    }
    const double fallback = total_n ? total / static_cast<double>(total_n) : 0.0;
    for (std::size_t s = 0; s < steps_per_day; ++s) sum[s] = count[s] ? sum[s] / static_cast<double>(count[s]) : fallback;
    return sum;
}

std::vector<std::size_t> random_subgraph_mask(const Tensor& a_sg, std::span<const std::size_t> candidates,
                                              double ratio, std::mt19937_64& rng) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("mask ratio must lie in [0, 1]");
    const std::size_t n = a_sg.dim(0);
    const auto target = static_cast<std::size_t>(
        std::max(0.0, std::ceil(static_cast<double>(candidates.size()) * ratio - 1e-9)));
    std::vector<char> is_candidate(n, 0), masked(n, 0);
    for (std::size_t c : candidates) is_candidate[c] = 1;

    std::size_t count = 0;
    std::vector<std::size_t> pool;
    while (count < target) {
        pool.clear();
        for (std::size_t c : candidates)
            if (!masked[c]) pool.push_back(c);
        if (pool.empty()) break;
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        const std::size_t centre = pool[pick(rng)];
        masked[centre] = 1;
        ++count;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != centre && is_candidate[j] && !masked[j] && a_sg[centre * n + j] != 0.0) {
                masked[j] = 1;
                ++count;
            }
        }
    }
    std::vector<std::size_t> out;
    for (std::size_t c : candidates)
        if (masked[c]) out.push_back(c);
    std::sort(out.begin(), out.end());
    return out;
}

TrafficTensor pseudo_observations(const TrafficTensor& x, std::span<const std::size_t> masked,
                                  std::span<const std::size_t> sources, std::span<const PlanarPoint> points,
                                  std::size_t k) {
    if (sources.empty()) throw NoObservedNodes("pseudo-observations need at least one unmasked observed node");
    TrafficTensor out = x;
    const std::size_t T = x.steps(), N = x.nodes(), C = x.channels();

    struct Neighbour {
        std::size_t node;
        double weight;
    };
    for (std::size_t m : masked) {
        std::vector<std::pair<double, std::size_t>> by_dist;
        for (std::size_t s : sources)
            if (s != m) by_dist.emplace_back(distance(points[m], points[s]), s);
        std::sort(by_dist.begin(), by_dist.end());
        std::vector<Neighbour> nb;
        for (std::size_t i = 0; i < std::min(k, by_dist.size()); ++i) {
            const double d = by_dist[i].first;
            nb.push_back({by_dist[i].second, 1.0 / std::max(d * d, 1e-18)});
        }
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t c = 0; c < C; ++c) {
                double num = 0.0, den = 0.0;
                for (const auto& q : nb) {
                    const double v = x.at(t, q.node, c);
                    if (!std::isfinite(v)) continue;
                    num += q.weight * v;
                    den += q.weight;
                }
                if (den > 0.0) {
                    out.at(t, m, c) = num / den;
                    continue;
                }
                // No usable neighbour at this step: global mean over sources.
                double s = 0.0;
                std::size_t cnt = 0;
                for (std::size_t src : sources) {
                    const double v = x.at(t, src, c);
                    if (std::isfinite(v)) s += v, ++cnt;
                }
                if (cnt) out.at(t, m, c) = s / static_cast<double>(cnt);
            }
            out.mask[t * N + m] = 0;
        }
    }
    return out;
}

bool is_non_peak(int minute) {
    return (minute >= 9 * 60 && minute < 16 * 60) || minute >= 22 * 60 || minute < 6 * 60;
}

std::vector<double> estimate_free_flow_speed(const TrafficTensor& x, std::size_t channel) {
    std::vector<double> out(x.nodes());
    for (std::size_t n = 0; n < x.nodes(); ++n) {
        std::vector<double> samples;
        for (std::size_t t = 0; t < x.steps(); ++t) {
            const double v = x.at(t, n, channel);
            if (x.observed(t, n) && std::isfinite(v) && is_non_peak(x.minute_of_day(t))) samples.push_back(v);
        }
        if (samples.empty()) {
            throw NoNonPeakSamples("node " + std::to_string(n) + " has no non-peak observations");
        }
        out[n] = nearest_rank_quantile(std::move(samples), 0.85);
    }
    return out;
}

void propagate_free_flow(std::vector<double>& x_fspd, const Tensor& a_dtw, std::span<const std::size_t> targets) {
    const std::size_t n = a_dtw.dim(0);
    for (std::size_t t : targets) {
        double s = 0.0;
        std::size_t cnt = 0;
        for (std::size_t src = 0; src < n; ++src)
            if (src != t && a_dtw[src * n + t] != 0.0) s += x_fspd[src], ++cnt;
        if (cnt) x_fspd[t] = s / static_cast<double>(cnt);
    }
}

Tensor row_normalise(const Tensor& a) {
    Tensor out = a;
    const std::size_t n = a.dim(0), m = a.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) s += a[i * m + j];
        if (s != 0.0)
            for (std::size_t j = 0; j < m; ++j) out[i * m + j] = a[i * m + j] / s;
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    const std::size_t n = a.dim(0), m = a.dim(1);
    Tensor out(diff::Shape{m, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out[j * n + i] = a[i * m + j];
    return out;
}

}  // namespace gencast
