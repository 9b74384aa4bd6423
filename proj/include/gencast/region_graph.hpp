#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gencast/diff/tensor.hpp"
#include "gencast/geo.hpp"

namespace gencast {

using diff::Tensor;

enum class SplitLabel : std::uint8_t { train, val, test };
enum class SplitMode : std::uint8_t { horizontal, vertical, ring };

const char* to_string(SplitLabel label);
const char* to_string(SplitMode mode);
SplitMode parse_split_mode(const std::string& s);

struct SplitRatios {
    double train = 4.0;
    double val = 1.0;
    double test = 5.0;
};

struct SplitSpec {
    SplitMode mode = SplitMode::vertical;
    SplitRatios ratios;
    /// Reverses the sort direction so the cut lands on the opposite side.
    bool mirrored = false;
    std::vector<SplitLabel> labels;

    std::vector<std::size_t> nodes_with(SplitLabel label) const;
    /// train and val nodes, in index order.
    std::vector<std::size_t> observed() const;
};

/// Sensor nodes of a region plus split labels and both adjacency matrices.
struct RegionGraph {
    std::vector<std::string> node_ids;
    std::vector<GeoPoint> coords;
    std::vector<SplitLabel> split;
    Tensor a_sg;   // N x N, symmetric, unit diagonal
    Tensor a_dtw;  // N x N, a_dtw[src][dst] = 1 for a directed edge src -> dst

    std::size_t size() const { return node_ids.size(); }
};

/// Observations shaped steps x nodes x channels with an observation mask.
struct TrafficTensor {
    Tensor values;                        // T x N x C
    std::vector<std::uint8_t> mask;       // T x N, 1 = genuinely observed
    std::vector<std::int64_t> timestamps; // seconds since epoch, one per step
    int interval_minutes = 5;
    std::size_t steps_per_day = 288;

    std::size_t steps() const { return values.rank() ? values.dim(0) : 0; }
    std::size_t nodes() const { return values.rank() ? values.dim(1) : 0; }
    std::size_t channels() const { return values.rank() ? values.dim(2) : 0; }
    double at(std::size_t t, std::size_t n, std::size_t c = 0) const;
    double& at(std::size_t t, std::size_t n, std::size_t c = 0);
    bool observed(std::size_t t, std::size_t n) const { return mask[t * nodes() + n] != 0; }

    /// Minutes since midnight for step t.
    int minute_of_day(std::size_t t) const;
    /// Series of one node and channel.
    std::vector<double> series(std::size_t node, std::size_t channel = 0) const;
    /// Steps [begin, end) of the selected nodes, in the given order.
    TrafficTensor slice(std::size_t begin, std::size_t end, std::span<const std::size_t> nodes) const;
};

SplitSpec split_region(std::span<const GeoPoint> coords, SplitMode mode, SplitRatios ratios = {},
                       bool mirrored = false);

/// Standard deviation of all pairwise distances; the default kernel bandwidth.
double default_bandwidth(std::span<const PlanarPoint> points);

/// Thresholded Gaussian kernel adjacency; diagonal forced to 1.
Tensor build_spatial_adjacency(std::span<const PlanarPoint> points, double bandwidth, double threshold);

/// Classic DTW with absolute-difference cost and no window constraint.
double dtw_distance(std::span<const double> a, std::span<const double> b);

/// Role of a node when building the directed temporal adjacency.
enum class NodeRole : std::uint8_t {
    observed,  // source of messages; receives from q_kk observed peers
    masked,    // masked or unobserved; receives from q_ku observed nodes, sends nothing
    excluded,  // takes no part (no edges)
};

/// Top-q rule on a precomputed symmetric cost matrix (lower cost = more similar,
/// ties broken by lower index). Returns a[src][dst].
Tensor temporal_adjacency_from_costs(const Tensor& costs, std::span<const NodeRole> roles, std::size_t q_kk,
                                     std::size_t q_ku);

/// DTW costs between every pair the top-q rule can use, then the top-q rule.
Tensor build_temporal_adjacency(const std::vector<std::vector<double>>& series, std::span<const NodeRole> roles,
                                std::size_t q_kk, std::size_t q_ku);

/// Mean profile over one day (length steps_per_day) of a node's series.
std::vector<double> daily_profile(std::span<const double> series, std::span<const int> minute_of_day,
                                  std::size_t steps_per_day, int interval_minutes);

/// Random subgraph masking: grows the mask by a random unmasked candidate plus
/// its 1-hop neighbours in `a_sg` until it reaches ceil(|candidates| * ratio).
std::vector<std::size_t> random_subgraph_mask(const Tensor& a_sg, std::span<const std::size_t> candidates,
                                              double ratio, std::mt19937_64& rng);

/// Replaces the series of `masked` nodes by the inverse-distance-weighted
/// (power 2) mean of the k nearest nodes in `sources`. Replaced entries are
/// marked unobserved.
TrafficTensor pseudo_observations(const TrafficTensor& x, std::span<const std::size_t> masked,
                                  std::span<const std::size_t> sources, std::span<const PlanarPoint> points,
                                  std::size_t k = 3);

/// Free-flow speed per node: nearest-rank 85th percentile of samples at
/// non-peak times of day ([09:00,16:00), [22:00,24:00), [00:00,06:00)).
std::vector<double> estimate_free_flow_speed(const TrafficTensor& x, std::size_t channel = 0);

bool is_non_peak(int minute_of_day);

/// Free-flow speed of `targets` as the mean over their in-neighbours in a[src][dst].
void propagate_free_flow(std::vector<double>& x_fspd, const Tensor& a_dtw, std::span<const std::size_t> targets);

/// Divides each nonzero row by its sum.
Tensor row_normalise(const Tensor& a);

/// Transpose of a square matrix.
Tensor transpose(const Tensor& a);

}  // namespace gencast
