#include "ript/transformer.hpp"

#include <cmath>

namespace ript {

void TransformerConfig::validate(const TokenizerConfig& tok) const {
    if (num_blocks < 1) throw ConfigError("num_blocks must be >= 1");
    if (static_cast<int>(neighbor_counts.size()) != num_blocks) {
        throw ConfigError("neighbor_counts must list one k per block");
    }
    if (width != tok.feature_width) {
        throw ConfigError("transformer width must equal tokenizer feature width");
    }
    if (latent_width < 1) throw ConfigError("latent_width must be >= 1");
    if (projector_hidden.size() != 2) throw ConfigError("projector needs two hidden widths");
    if (projector_hidden[0] < 1 || projector_hidden[1] < 1 || pseudo_label_dim < 1) {
        throw ConfigError("projector widths must be >= 1");
    }
    if (attention != AttentionKind::Vector) {
        throw ConfigError("only vector self-attention is implemented");
    }
    int t = tok.token_count;
    for (int i = 0; i < num_blocks; ++i) {
        if (t < 2 || t % 2 != 0) {
            throw ConfigError("token_count must halve evenly through every block");
        }
        if (neighbor_counts[i] < 1 || neighbor_counts[i] > t) {
            throw ConfigError("block " + std::to_string(i) + ": k must be in [1, T_in]");
        }
        t /= 2;
    }
}

int centroid_start_index(const std::vector<Vec3>& points) {
    Vec3 centroid = Vec3::Zero();
    for (const Vec3& p : points) centroid += p;
    centroid /= static_cast<double>(points.size());
    return knn(centroid, points, 1)[0];
}

BlockGeometry block_geometry(const std::vector<Vec3>& token_points, int k) {
    const int t_in = static_cast<int>(token_points.size());
    if (t_in < 2 || t_in % 2 != 0) {
        throw ArgumentError("sa_block: input token count must be even and >= 2, got " +
                            std::to_string(t_in));
    }
    if (k < 1 || k > t_in) {
        throw ArgumentError("sa_block: k " + std::to_string(k) + " out of range for " +
                            std::to_string(t_in) + " tokens");
    }
    BlockGeometry bg;
    bg.k = k;
    bg.t_in = t_in;
    bg.t_out = t_in / 2;
    bg.survivors = fps(token_points, bg.t_out, centroid_start_index(token_points));
    bg.neighbors.reserve(static_cast<size_t>(bg.t_out) * k);
    bg.neighbor_dist.reserve(static_cast<size_t>(bg.t_out) * k);
    for (int j = 0; j < bg.t_out; ++j) {
        const Vec3& q = token_points[bg.survivors[j]];
        for (int idx : knn(q, token_points, k)) {
            bg.neighbors.push_back(idx);
            bg.neighbor_dist.push_back((token_points[idx] - q).norm());
        }
    }
    return bg;
}

ViewGeometry view_geometry_from_descriptors(TokenDescriptors desc, const TransformerConfig& tr) {
    ViewGeometry vg;
    vg.desc = std::move(desc);
    std::vector<Vec3> current = vg.desc.token_points;
    for (int i = 0; i < tr.num_blocks; ++i) {
        BlockGeometry bg = block_geometry(current, tr.neighbor_counts[i]);
        std::vector<Vec3> next(bg.t_out);
        for (int j = 0; j < bg.t_out; ++j) next[j] = current[bg.survivors[j]];
        vg.blocks.push_back(std::move(bg));
        current = std::move(next);
    }
    vg.final_tokens = static_cast<int>(current.size());
    return vg;
}

ViewGeometry precompute_view(const OrientedPointSet& ps, const TokenizerConfig& tok,
                             const TransformerConfig& tr, std::mt19937_64& rng) {
    return view_geometry_from_descriptors(tokenize_descriptors(ps, tok, rng), tr);
}

TokenSet sa_block(const TokenSet& s_in, typename RiptModel<double>::Block& params, int k,
                  bool train, bool positional_encoding) {
    const int t_in = static_cast<int>(s_in.token_points.size());
    if (s_in.token_feats.rows() != t_in) {
        throw ArgumentError("sa_block: token point/feature count mismatch");
    }
    const int width = static_cast<int>(s_in.token_feats.cols());
    BlockGeometry bg = block_geometry(s_in.token_points, k);

    std::vector<double> feat_data(static_cast<size_t>(t_in) * width);
    for (int r = 0; r < t_in; ++r)
        for (int c = 0; c < width; ++c) feat_data[static_cast<size_t>(r) * width + c] = s_in.token_feats(r, c);

    ad::Graph<double> g;
    auto x = g.constant(t_in, width, std::move(feat_data));
    std::vector<int> query_rep;
    std::vector<double> nb_dist(bg.neighbor_dist.begin(), bg.neighbor_dist.end());
    query_rep.reserve(bg.neighbors.size());
    for (int j = 0; j < bg.t_out; ++j)
        for (int m = 0; m < k; ++m) query_rep.push_back(j);
    auto out = apply_sa_block(g, x, params, bg.survivors, bg.neighbors, std::move(query_rep),
                              std::move(nb_dist), k, train, positional_encoding);

    TokenSet result;
    result.token_points.resize(bg.t_out);
    result.degenerate.assign(bg.t_out, 0);
    for (int j = 0; j < bg.t_out; ++j) {
        result.token_points[j] = s_in.token_points[bg.survivors[j]];
        if (!s_in.degenerate.empty() && s_in.degenerate[bg.survivors[j]]) result.degenerate[j] = 1;
    }
    const std::vector<double>& vals = g.values(out);
    result.token_feats.resize(bg.t_out, width);
    for (int r = 0; r < bg.t_out; ++r)
        for (int c = 0; c < width; ++c) result.token_feats(r, c) = vals[static_cast<size_t>(r) * width + c];
    return result;
}

Eigen::VectorXd aggregate(const TokenSet& s_out, const ad::Tensor<double>& agg_W,
                          const ad::Tensor<double>& agg_b) {
    if (s_out.token_feats.rows() < 1) throw ArgumentError("aggregate: empty token set");
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> W(
        agg_W.values.data(), agg_W.rows(), agg_W.cols());
    Eigen::Map<const Eigen::RowVectorXd> b(agg_b.values.data(), agg_b.values.size());
    Eigen::RowVectorXd pooled = s_out.token_feats.colwise().mean();
    Eigen::VectorXd y = (pooled * W + b).transpose();
    const double n = y.norm();
    if (n > 0.0) y /= n;
    return y;
}

Eigen::VectorXd ript_forward(const OrientedPointSet& ps, RiptModel<double>& model, bool train,
                             std::mt19937_64& rng) {
    return ript_forward_impl(ps, model, train, rng);
}

Eigen::VectorXd ript_forward_f32(const OrientedPointSet& ps, RiptModel<float>& model,
                                 std::mt19937_64& rng) {
    return ript_forward_impl(ps, model, /*train=*/false, rng);
}

}  // namespace ript
