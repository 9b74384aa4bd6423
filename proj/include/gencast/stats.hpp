#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace gencast {

/// 1-based nearest-rank index ceil(q * n), clamped to [1, n]. A small guard
/// keeps products such as 0.85 * 100 from rounding up a whole rank.
inline std::size_t nearest_rank_index(double q, std::size_t n) {
    const double raw = std::ceil(q * static_cast<double>(n) - 1e-9);
    const auto k = static_cast<std::size_t>(std::max(1.0, raw));
    return std::min(k, n);
}

/// Nearest-rank q-quantile of `values` (copied and sorted).
inline double nearest_rank_quantile(std::vector<double> values, double q) {
    if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
    std::sort(values.begin(), values.end());
    return values[nearest_rank_index(q, values.size()) - 1];
}

}  // namespace gencast
