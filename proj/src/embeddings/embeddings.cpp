#include "gencast/embeddings.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <unordered_map>

#include "gencast/diff/ops.hpp"
#include "gencast/error.hpp"
#include "gencast/io.hpp"

namespace gencast {

using namespace diff;

Tensor temporal_embedding(std::span<const std::int64_t> steps, std::size_t steps_per_day) {
    if (steps_per_day < 1) throw ConfigError("steps per day must be >= 1");
    const auto td = static_cast<std::int64_t>(steps_per_day);
    Tensor out(Shape{steps.size(), 2});
    for (std::size_t i = 0; i < steps.size(); ++i) {
        const std::int64_t s = ((steps[i] % td) + td) % td;
        const double phase = 2.0 * std::numbers::pi * static_cast<double>(s) / static_cast<double>(td);
        out[2 * i] = std::sin(phase);
        out[2 * i + 1] = std::cos(phase);
    }
    return out;
}

Var temporal_embedding(const Var& time_coord, std::size_t steps_per_day) {
    if (steps_per_day < 1) throw ConfigError("steps per day must be >= 1");
    const Var phase = scale(time_coord, 2.0 * std::numbers::pi / static_cast<double>(steps_per_day));
    Shape col = time_coord.shape();
    col.push_back(1);
    return concat({reshape(sin(phase), col), reshape(cos(phase), col)}, col.size() - 1);
}

std::string geohash_encode(double lat, double lon, std::size_t length) {
    if (!(lat >= -90.0 && lat <= 90.0) || !(lon >= -180.0 && lon <= 180.0)) {
        throw OutOfRangeCoordinate("coordinate (" + io::format_double(lat) + ", " + io::format_double(lon) +
                                   ") outside [-90,90] x [-180,180]");
    }
    if (length < 1 || length > 12) throw ConfigError("geohash length must lie in [1, 12]");
    double lat_lo = -90.0, lat_hi = 90.0, lon_lo = -180.0, lon_hi = 180.0;
    std::string out;
    bool even = true;  // even bits refine longitude
    int bit = 0, ch = 0;
    while (out.size() < length) {
        double& lo = even ? lon_lo : lat_lo;
        double& hi = even ? lon_hi : lat_hi;
        const double v = even ? lon : lat;
        const double mid = 0.5 * (lo + hi);
        ch <<= 1;
        if (v >= mid) {
            ch |= 1;
            lo = mid;
        } else {
            hi = mid;
        }
        even = !even;
        if (++bit == 5) {
            out.push_back(kGeohashAlphabet[ch]);
            bit = 0;
            ch = 0;
        }
    }
    return out;
}

std::vector<std::size_t> geohash_symbols(const std::string& hash) {
    static const std::string alphabet = kGeohashAlphabet;
    std::vector<std::size_t> out;
    for (char c : hash) {
        const auto p = alphabet.find(c);
        if (p == std::string::npos) throw DataError("invalid geohash character '" + std::string(1, c) + "'");
        out.push_back(p);
    }
    return out;
}

void init_hash_encoder(ParameterSet& params, const HashEncoderConfig& cfg, std::mt19937_64& rng) {
    const std::size_t d = cfg.dim;
    params.add("seh.char", glorot_uniform({32, d}, 32, d, rng));
    params.add("seh.pos", glorot_uniform({cfg.length, d}, cfg.length, d, rng));
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const std::string p = "seh.l" + std::to_string(l) + ".";
        for (const char* m : {"wq", "wk", "wv", "wo", "w1", "w2"}) params.add(p + m, glorot_uniform({d, d}, d, d, rng));
        params.add(p + "b1", Tensor({d}));
        params.add(p + "b2", Tensor({d}));
    }
}

Var encode_spatial_hash(const BoundParameters& bp, const std::vector<std::string>& hashes) {
    if (hashes.empty()) throw ShapeMismatch("encode_spatial_hash: no nodes");
    const std::size_t n = hashes.size(), s = hashes[0].size();
    std::vector<std::size_t> idx;
    idx.reserve(n * s);
    for (const auto& h : hashes) {
        if (h.size() != s) {
            throw LengthMismatch("geohash '" + h + "' has length " + std::to_string(h.size()) + ", expected " +
                                 std::to_string(s));
        }
        for (std::size_t c : geohash_symbols(h)) idx.push_back(c);
    }
    const Var table = bp("seh.char");
    const std::size_t d = table.shape()[1];
    const Var pos = bp("seh.pos");
    if (pos.shape()[0] != s) throw LengthMismatch("geohash length does not match the encoder's position table");

    Var h = reshape(index_select(table, 0, idx), {n, s, d});
    h = add(h, broadcast_to(pos, {n, s, d}));
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t l = 0;; ++l) {
        const std::string p = "seh.l" + std::to_string(l) + ".";
        if (!bp.maybe(p + "wq").valid()) break;
        const Var q = linear(h, bp(p + "wq"));
        const Var k = linear(h, bp(p + "wk"));
        const Var v = linear(h, bp(p + "wv"));
        const Var att = softmax(scale(bmm(q, permute(k, {0, 2, 1})), inv_sqrt_d));
        h = add(h, linear(bmm(att, v), bp(p + "wo")));
        const Var ff = linear(relu(linear(h, bp(p + "w1"), bp(p + "b1"))), bp(p + "w2"), bp(p + "b2"));
        h = add(h, ff);
    }
    return mean_axis(h, 1);
}

Tensor load_precomputed_spatial_embeddings(const std::filesystem::path& path,
                                           const std::vector<std::string>& expected_nodes) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError(path.string() + ": missing header row");
    const auto header = io::split_line(line);
    if (header.empty() || header[0] != "node_id") throw DataError(path.string() + ": first column must be node_id");

    std::unordered_map<std::string, std::vector<double>> rows;
    std::size_t width = 0;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto cells = io::split_line(line);
        std::vector<double> v;
        for (std::size_t c = 1; c < cells.size(); ++c) v.push_back(io::parse_double(cells[c], path.string()));
        if (v.empty()) throw DimensionMismatch(path.string() + ": line " + std::to_string(lineno) + " has no values");
        if (width == 0) width = v.size();
        if (v.size() != width) {
            throw DimensionMismatch(path.string() + ": line " + std::to_string(lineno) + " has " +
                                    std::to_string(v.size()) + " values, expected " + std::to_string(width));
        }
        rows[cells[0]] = std::move(v);
    }
    Tensor out(Shape{expected_nodes.size(), width});
    for (std::size_t i = 0; i < expected_nodes.size(); ++i) {
        auto it = rows.find(expected_nodes[i]);
        if (it == rows.end()) throw MissingNode("node '" + expected_nodes[i] + "' missing from " + path.string());
        std::copy(it->second.begin(), it->second.end(), out.values().begin() + static_cast<std::ptrdiff_t>(i * width));
    }
    return out;
}

void init_feature_params(ParameterSet& params, const FeatureConfig& cfg, std::mt19937_64& rng) {
    params.add("emb.proj_t.w", glorot_uniform({2, cfg.ste_dim}, 2, cfg.ste_dim, rng));
    params.add("emb.proj_t.b", Tensor({cfg.ste_dim}));
    params.add("emb.proj_s.w", glorot_uniform({cfg.spatial_dim, cfg.ste_dim}, cfg.spatial_dim, cfg.ste_dim, rng));
    params.add("emb.proj_s.b", Tensor({cfg.ste_dim}));
    const std::size_t in = cfg.channels + cfg.ste_dim;
    params.add("emb.lift.w", glorot_uniform({in, cfg.model_dim}, in, cfg.model_dim, rng));
    params.add("emb.lift.b", Tensor({cfg.model_dim}));
}

InitialFeatures build_initial_features(const BoundParameters& bp, const Var& x, const Var& te_enc, const Var& l_enc) {
    if (x.shape().size() != 4 || te_enc.shape().size() != 3 || l_enc.shape().size() != 2) {
        throw ShapeMismatch("build_initial_features expects x[B,T,N,C], te[B,T,2], l[N,d]");
    }
    const std::size_t B = x.shape()[0], T = x.shape()[1], N = x.shape()[2];
    if (te_enc.shape()[0] != B || te_enc.shape()[1] != T || te_enc.shape()[2] != 2 || l_enc.shape()[0] != N) {
        throw ShapeMismatch("build_initial_features: embedding shapes " + to_string(te_enc.shape()) + ", " +
                            to_string(l_enc.shape()) + " do not match x " + to_string(x.shape()));
    }
    const std::size_t d = l_enc.shape()[1];
    InitialFeatures f;
    f.temporal = linear(te_enc, bp("emb.proj_t.w"), bp("emb.proj_t.b"));
    f.spatial = linear(broadcast_to(l_enc, {B, N, d}), bp("emb.proj_s.w"), bp("emb.proj_s.b"));
    const std::size_t k = f.temporal.shape()[2];
    const Var ste = add(broadcast_to(reshape(f.temporal, {B, T, 1, k}), {B, T, N, k}),
                        broadcast_to(reshape(f.spatial, {B, 1, N, k}), {B, T, N, k}));
    f.h0 = linear(concat({x, ste}, 3), bp("emb.lift.w"), bp("emb.lift.b"));
    return f;
}

}  // namespace gencast
