#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gencast/params.hpp"

namespace gencast {

/// Rows (sin, cos) of 2*pi*(step mod T_d)/T_d.
Tensor temporal_embedding(std::span<const std::int64_t> steps, std::size_t steps_per_day);

/// Differentiable form on a time coordinate of any shape; appends an axis of 2.
Var temporal_embedding(const Var& time_coord, std::size_t steps_per_day);

inline constexpr const char* kGeohashAlphabet = "0123456789bcdefghjkmnpqrstuvwxyz";

std::string geohash_encode(double lat, double lon, std::size_t length);
/// Alphabet positions of each character.
std::vector<std::size_t> geohash_symbols(const std::string& hash);

enum class SpatialKind { hash, llm };

struct HashEncoderConfig {
    std::size_t dim = 32;
    std::size_t layers = 2;
    std::size_t length = 8;
};

/// Character table "seh.char" [32, d], positions "seh.pos" [S, d] and per
/// layer single-head attention plus feed-forward weights.
void init_hash_encoder(ParameterSet& params, const HashEncoderConfig& cfg, std::mt19937_64& rng);

/// N x d_hash embeddings: character lookup, positional offsets, `layers`
/// residual self-attention blocks, then mean over characters.
Var encode_spatial_hash(const BoundParameters& bp, const std::vector<std::string>& hashes);

/// SE-L CSV (`node_id,e0,e1,...`) reordered to `expected_nodes`.
Tensor load_precomputed_spatial_embeddings(const std::filesystem::path& path,
                                           const std::vector<std::string>& expected_nodes);

struct FeatureConfig {
    std::size_t channels = 1;
    std::size_t spatial_dim = 32;
    std::size_t ste_dim = 16;
    std::size_t model_dim = 32;
};

/// "emb.proj_t.*" (2 -> D_ste), "emb.proj_s.*" (d -> D_ste), "emb.lift.*" (C + D_ste -> D).
void init_feature_params(ParameterSet& params, const FeatureConfig& cfg, std::mt19937_64& rng);

struct InitialFeatures {
    Var h0;       // [B, T, N, D]
    Var spatial;  // projected spatial embedding [B, N, D_ste]
    Var temporal; // projected temporal embedding [B, T, D_ste]
};

/// x [B, T, N, C], te_enc [B, T, 2], l_enc [N, d]. The spatial embedding is
/// broadcast per window before projection so each window has its own copy.
InitialFeatures build_initial_features(const BoundParameters& bp, const Var& x, const Var& te_enc, const Var& l_enc);

}  // namespace gencast
