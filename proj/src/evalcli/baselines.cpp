#include <algorithm>

#include "gencast/error.hpp"
#include "gencast/evalcli.hpp"

namespace gencast {

std::vector<std::pair<std::size_t, double>> idw_weights(std::span<const PlanarPoint> points, std::size_t target,
                                                        std::span<const std::size_t> sources, std::size_t k) {
    if (sources.empty()) throw NoObservedNodes("IDW needs at least one observed node");
    std::vector<std::pair<double, std::size_t>> by_dist;
    for (std::size_t s : sources) by_dist.emplace_back(distance(points[target], points[s]), s);
    std::sort(by_dist.begin(), by_dist.end());
    by_dist.resize(std::min(k, by_dist.size()));
    std::vector<std::pair<std::size_t, double>> w;
    double total = 0.0;
    for (const auto& [d, s] : by_dist) {
        const double v = 1.0 / std::max(d * d, 1e-18);
        w.emplace_back(s, v);
        total += v;
    }
    for (auto& p : w) p.second /= total;
    return w;
}

HistoricalAverage::HistoricalAverage(const TrafficTensor& x, std::size_t train_end,
                                     std::span<const std::size_t> observed, std::span<const std::size_t> unobserved,
                                     std::span<const PlanarPoint> points, std::size_t k) {
    if (observed.empty()) throw NoObservedNodes("historical average needs observed nodes");
    const std::size_t slots = x.steps_per_day;
    std::vector<std::vector<double>> obs_profile;
    for (std::size_t n : observed) {
        std::vector<double> sum(slots, 0.0);
        std::vector<std::size_t> cnt(slots, 0);
        double total = 0.0;
        std::size_t total_n = 0;
        for (std::size_t t = 0; t < train_end; ++t) {
            const std::size_t s = static_cast<std::size_t>(x.minute_of_day(t) / x.interval_minutes) % slots;
            sum[s] += x.at(t, n);
            ++cnt[s];
            total += x.at(t, n);
            ++total_n;
        }
        const double fallback = total_n ? total / static_cast<double>(total_n) : 0.0;
        for (std::size_t s = 0; s < slots; ++s) sum[s] = cnt[s] ? sum[s] / static_cast<double>(cnt[s]) : fallback;
        obs_profile.push_back(std::move(sum));
    }
    for (std::size_t u : unobserved) {
        std::vector<double> prof(slots, 0.0);
        for (const auto& [src, w] : idw_weights(points, u, observed, k)) {
            const std::size_t j = static_cast<std::size_t>(std::find(observed.begin(), observed.end(), src) - observed.begin());
            for (std::size_t s = 0; s < slots; ++s) prof[s] += w * obs_profile[j][s];
        }
        profiles_.push_back(std::move(prof));
    }
}

Tensor HistoricalAverage::forecast(const TrafficTensor& x, std::span<const std::size_t> starts, std::size_t history,
                                   std::size_t horizon) const {
    const std::size_t W = starts.size(), U = profiles_.size();
    Tensor out(Shape{W, horizon, U});
    for (std::size_t w = 0; w < W; ++w)
        for (std::size_t t = 0; t < horizon; ++t) {
            const std::size_t step = starts[w] + history + t;
            const std::size_t s = static_cast<std::size_t>(x.minute_of_day(step) / x.interval_minutes) % x.steps_per_day;
            for (std::size_t u = 0; u < U; ++u) out[(w * horizon + t) * U + u] = profiles_[u][s];
        }
    return out;
}

Tensor baseline_idw(const TrafficTensor& x, std::span<const std::size_t> observed,
                    std::span<const std::size_t> unobserved, std::span<const PlanarPoint> points,
                    std::span<const std::size_t> starts, std::size_t history, std::size_t horizon, std::size_t k) {
    if (observed.empty()) throw NoObservedNodes("IDW needs at least one observed node");
    const std::size_t W = starts.size(), U = unobserved.size();
    std::vector<std::vector<std::pair<std::size_t, double>>> weights;
    for (std::size_t u : unobserved) weights.push_back(idw_weights(points, u, observed, k));
    Tensor out(Shape{W, horizon, U});
    for (std::size_t w = 0; w < W; ++w) {
        const std::size_t last = starts[w] + history - 1;
        for (std::size_t u = 0; u < U; ++u) {
            double v = 0.0;
            for (const auto& [src, wt] : weights[u]) v += wt * x.at(last, src);
            for (std::size_t t = 0; t < horizon; ++t) out[(w * horizon + t) * U + u] = v;
        }
    }
    return out;
}

}  // namespace gencast
