#pragma once

#include <optional>
#include <span>

#include "ript/autodiff.hpp"
#include "ript/geometry.hpp"

namespace ript {

// Local reference frame: three mutually orthogonal unit vectors stacked as
// the rows of R, so R * (p - c) expresses p in token-local coordinates.
struct Lrf {
    Vec3 u1, u2, u3;
    Mat3 R;
    bool degenerate = false;  // set when the eigenvector route failed
};

// Per-cell 10-vector: [count fraction, mean coordinates (3),
// orientation second-moment upper triangle (6)], flattened x-major,
// then y, then z, then channel.
struct PodGrid {
    static constexpr int kChannels = 10;
    int resolution = 6;
    std::vector<double> cells;
};

struct TokenizerConfig {
    int token_count = 256;      // T
    int grid = 6;               // G
    int feature_width = 512;    // D
    double region_scale = 1.0;  // s in (0, 1]; 1 covers the whole point set
    // Orientation statistic: uncentered second moment by default; the
    // centered covariance is available as a switch.
    bool centered_orientation_moment = false;
    // Token FPS start; drawn from the caller's rng when unset.
    std::optional<int> fps_start;

    int pod_width() const { return grid * grid * grid * PodGrid::kChannels; }
    void validate() const;
};

// Trainable affine projection pod -> token feature, shared across tokens.
template <typename T>
struct TokenizerParams {
    ad::Tensor<T> W;  // [pod_width, D]
    ad::Tensor<T> b;  // [1, D]
};

struct TokenSet {
    std::vector<Vec3> token_points;
    Eigen::MatrixXd token_feats;      // T x D
    std::vector<uint8_t> degenerate;  // per-token fallback flag
};

// Geometry-only half of tokenization: token points plus the flattened POD
// descriptor rows, before the trainable projection.
struct TokenDescriptors {
    std::vector<Vec3> token_points;
    Eigen::MatrixXd pod;  // T x pod_width
    std::vector<uint8_t> degenerate;
};

// u1 = orientation of c; u2 from the second-largest eigenvector of the
// distance-weighted scatter of the region, projected perpendicular to u1,
// sign fixed by point-mass majority along u2; u3 = u1 x u2.
// Falls back to the largest eigenvector, then to Gram-Schmidt against the
// x (then y) axis with the degenerate flag set.
Lrf compute_lrf(const OrientedPointSet& ps, std::span<const int> region, int c_index);

// Bins points already expressed in LRF coordinates into the cube [-r, r]^3.
// Boundary coordinates clamp into the outermost cell.
PodGrid pod_descriptor(const OrientedPointSet& lrf_ps, double radius, int grid,
                       bool centered_moment = false);

TokenDescriptors tokenize_descriptors(const OrientedPointSet& ps, const TokenizerConfig& cfg,
                                      std::mt19937_64& rng);

// Full tokenizer: FPS token points, per-token LRF + POD, affine projection.
TokenSet tokenize(const OrientedPointSet& ps, const TokenizerConfig& cfg,
                  const TokenizerParams<double>& params, std::mt19937_64& rng);

// Initialization for the projection: weights uniform in +-sqrt(1/fan_in),
// bias zero.
template <typename T>
TokenizerParams<T> init_tokenizer_params(const TokenizerConfig& cfg, std::mt19937_64& rng) {
    const T bound = static_cast<T>(std::sqrt(1.0 / cfg.pod_width()));
    TokenizerParams<T> p;
    p.W = ad::Tensor<T>::uniform({cfg.pod_width(), cfg.feature_width}, -bound, bound, rng);
    p.b = ad::Tensor<T>::zeros({1, cfg.feature_width});
    p.W.requires_grad = true;
    p.b.requires_grad = true;
    return p;
}

}  // namespace ript
