#include <cmath>
#include <limits>

#include "gencast/error.hpp"
#include "gencast/evalcli.hpp"

namespace gencast {

double r_squared(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size()) throw ShapeMismatch("r_squared: prediction and truth sizes differ");
    if (truth.empty()) throw ShapeMismatch("r_squared: no values");
    double mean = 0.0;
    for (double v : truth) mean += v;
    mean /= static_cast<double>(truth.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        ss_res += (pred[i] - truth[i]) * (pred[i] - truth[i]);
        ss_tot += (truth[i] - mean) * (truth[i] - mean);
    }
    if (ss_tot == 0.0) throw ZeroVarianceTruth("R^2 is undefined for constant truth");
    return 1.0 - ss_res / ss_tot;
}

Metrics compute_metrics(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size()) {
        throw ShapeMismatch("metrics: " + std::to_string(pred.size()) + " predictions vs " +
                            std::to_string(truth.size()) + " truth values");
    }
    if (truth.empty()) throw ShapeMismatch("metrics: no values");
    Metrics m;
    m.count = truth.size();
    double se = 0.0, ae = 0.0, ape = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double d = pred[i] - truth[i];
        se += d * d;
        ae += std::abs(d);
        if (truth[i] == 0.0) {
            ++m.mape_excluded;
        } else {
            ape += std::abs(d) / std::abs(truth[i]);
        }
    }
    const double n = static_cast<double>(truth.size());
    m.rmse = std::sqrt(se / n);
    m.mae = ae / n;
    const std::size_t kept = truth.size() - m.mape_excluded;
    m.mape = kept ? ape / static_cast<double>(kept) : std::numeric_limits<double>::quiet_NaN();
    try {
        m.r2 = r_squared(pred, truth);
    } catch (const ZeroVarianceTruth&) {
        m.r2 = std::numeric_limits<double>::quiet_NaN();
    }
    return m;
}

}  // namespace gencast
