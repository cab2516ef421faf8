#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ript/autodiff.hpp"
#include "ript/tokenizer.hpp"

namespace ript {

enum class AttentionKind { Vector, Scalar, None };

struct TransformerConfig {
    int num_blocks = 2;
    std::vector<int> neighbor_counts = {4, 8};  // k per block
    int width = 512;                            // token feature width
    int latent_width = 256;
    std::vector<int> projector_hidden = {1024, 128};
    int pseudo_label_dim = 1024;  // H
    // Table-style variants are exposed as an enum; only vector attention is
    // implemented and validation rejects the others.
    AttentionKind attention = AttentionKind::Vector;
    // Optional distance-based encoding added to attention scores; off by
    // default. Distances are rotation-invariant so the latent stays so.
    bool positional_encoding = false;

    void validate(const TokenizerConfig& tok) const;
};

// All trainable tensors plus batchnorm buffers of one encoder + projector.
template <typename T>
struct RiptModel {
    TokenizerConfig tok;
    TransformerConfig tr;

    TokenizerParams<T> tokenizer;

    struct Block {
        ad::Tensor<T> alpha_W, alpha_b;
        ad::Tensor<T> beta_W, beta_b;
        ad::Tensor<T> gamma_W, gamma_b;
        ad::Tensor<T> pos_W, pos_b;  // distance encoding (used only when enabled)
        ad::Tensor<T> bn_gamma, bn_beta;
        ad::Tensor<T> bn_running_mean, bn_running_var;  // buffers, not trained
        ad::Tensor<T> fc1_W, fc1_b;
        ad::Tensor<T> fc2_W, fc2_b;
    };
    std::vector<Block> blocks;

    ad::Tensor<T> agg_W, agg_b;  // width -> latent_width

    ad::Tensor<T> proj1_W, proj1_b;  // latent -> hidden0, GELU
    ad::Tensor<T> proj2_W, proj2_b;  // hidden0 -> hidden1, GELU
    ad::Tensor<T> proj3_W, proj3_b;  // hidden1 -> H

    using Visitor = std::function<void(const std::string&, ad::Tensor<T>&)>;

    // include_projector=false restricts to the encoder (feature extractor).
    void visit_trainable(const Visitor& fn, bool include_projector = true) {
        fn("tokenizer/W", tokenizer.W);
        fn("tokenizer/b", tokenizer.b);
        for (size_t i = 0; i < blocks.size(); ++i) {
            const std::string p = "block" + std::to_string(i) + "/";
            Block& b = blocks[i];
            fn(p + "alpha_W", b.alpha_W);
            fn(p + "alpha_b", b.alpha_b);
            fn(p + "beta_W", b.beta_W);
            fn(p + "beta_b", b.beta_b);
            fn(p + "gamma_W", b.gamma_W);
            fn(p + "gamma_b", b.gamma_b);
            if (tr.positional_encoding) {
                fn(p + "pos_W", b.pos_W);
                fn(p + "pos_b", b.pos_b);
            }
            fn(p + "bn_gamma", b.bn_gamma);
            fn(p + "bn_beta", b.bn_beta);
            fn(p + "fc1_W", b.fc1_W);
            fn(p + "fc1_b", b.fc1_b);
            fn(p + "fc2_W", b.fc2_W);
            fn(p + "fc2_b", b.fc2_b);
        }
        fn("agg/W", agg_W);
        fn("agg/b", agg_b);
        if (include_projector) {
            fn("projector/fc1_W", proj1_W);
            fn("projector/fc1_b", proj1_b);
            fn("projector/fc2_W", proj2_W);
            fn("projector/fc2_b", proj2_b);
            fn("projector/fc3_W", proj3_W);
            fn("projector/fc3_b", proj3_b);
        }
    }

    void visit_buffers(const Visitor& fn) {
        for (size_t i = 0; i < blocks.size(); ++i) {
            const std::string p = "block" + std::to_string(i) + "/";
            fn(p + "bn_running_mean", blocks[i].bn_running_mean);
            fn(p + "bn_running_var", blocks[i].bn_running_var);
        }
    }

    void visit_all(const Visitor& fn) {
        visit_trainable(fn, true);
        visit_buffers(fn);
    }

    void zero_grad() {
        visit_trainable([](const std::string&, ad::Tensor<T>& t) { t.zero_grad(); });
    }

    template <typename U>
    RiptModel<U> cast() const {
        RiptModel<U> out;
        out.tok = tok;
        out.tr = tr;
        out.tokenizer.W = tokenizer.W.template cast<U>();
        out.tokenizer.b = tokenizer.b.template cast<U>();
        out.blocks.resize(blocks.size());
        for (size_t i = 0; i < blocks.size(); ++i) {
            const Block& s = blocks[i];
            auto& d = out.blocks[i];
            d.alpha_W = s.alpha_W.template cast<U>();
            d.alpha_b = s.alpha_b.template cast<U>();
            d.beta_W = s.beta_W.template cast<U>();
            d.beta_b = s.beta_b.template cast<U>();
            d.gamma_W = s.gamma_W.template cast<U>();
            d.gamma_b = s.gamma_b.template cast<U>();
            d.pos_W = s.pos_W.template cast<U>();
            d.pos_b = s.pos_b.template cast<U>();
            d.bn_gamma = s.bn_gamma.template cast<U>();
            d.bn_beta = s.bn_beta.template cast<U>();
            d.bn_running_mean = s.bn_running_mean.template cast<U>();
            d.bn_running_var = s.bn_running_var.template cast<U>();
            d.fc1_W = s.fc1_W.template cast<U>();
            d.fc1_b = s.fc1_b.template cast<U>();
            d.fc2_W = s.fc2_W.template cast<U>();
            d.fc2_b = s.fc2_b.template cast<U>();
        }
        out.agg_W = agg_W.template cast<U>();
        out.agg_b = agg_b.template cast<U>();
        out.proj1_W = proj1_W.template cast<U>();
        out.proj1_b = proj1_b.template cast<U>();
        out.proj2_W = proj2_W.template cast<U>();
        out.proj2_b = proj2_b.template cast<U>();
        out.proj3_W = proj3_W.template cast<U>();
        out.proj3_b = proj3_b.template cast<U>();
        return out;
    }
};

namespace detail {

// Uniform init with a per-role gain. Rectified layers use gain 6; the
// projector uses larger gains (GELU halves small activations, and the
// teacher softmax at temperature 0.1 needs O(1) logit spread at init for
// distillation to have structure to chase).
inline constexpr double kGeluGain = 12.0;
inline constexpr double kHeadGain = 12.0;

template <typename T>
ad::Tensor<T> affine_init(int fan_in, int fan_out, std::mt19937_64& rng, double gain = 6.0) {
    const T bound = static_cast<T>(std::sqrt(gain / fan_in));
    ad::Tensor<T> t = ad::Tensor<T>::uniform({fan_in, fan_out}, -bound, bound, rng);
    t.requires_grad = true;
    return t;
}

// Biases start at zero so early activations are sample-driven; a constant
// component would survive L2 normalization and swamp the per-sample signal
// the distillation loss trains on.
template <typename T>
ad::Tensor<T> bias_init(int /*fan_in*/, int fan_out, std::mt19937_64& /*rng*/) {
    ad::Tensor<T> t = ad::Tensor<T>::zeros({1, fan_out});
    t.requires_grad = true;
    return t;
}

}  // namespace detail

template <typename T>
RiptModel<T> init_model(const TokenizerConfig& tok, const TransformerConfig& tr, uint64_t seed) {
    tok.validate();
    tr.validate(tok);
    std::mt19937_64 rng = make_rng(seed);
    RiptModel<T> m;
    m.tok = tok;
    m.tr = tr;
    m.tokenizer = init_tokenizer_params<T>(tok, rng);

    const int w = tr.width;
    m.blocks.resize(tr.num_blocks);
    for (auto& b : m.blocks) {
        b.alpha_W = detail::affine_init<T>(w, w, rng, 3.0);
        b.alpha_b = detail::bias_init<T>(w, w, rng);
        b.beta_W = detail::affine_init<T>(w, w, rng, 3.0);
        b.beta_b = detail::bias_init<T>(w, w, rng);
        b.gamma_W = detail::affine_init<T>(w, w, rng, 3.0);
        b.gamma_b = detail::bias_init<T>(w, w, rng);
        b.pos_W = detail::affine_init<T>(1, w, rng, 3.0);
        b.pos_b = detail::bias_init<T>(1, w, rng);
        b.bn_gamma = ad::Tensor<T>::full({1, w}, T(1));
        b.bn_gamma.requires_grad = true;
        b.bn_beta = ad::Tensor<T>::zeros({1, w});
        b.bn_beta.requires_grad = true;
        b.bn_running_mean = ad::Tensor<T>::zeros({1, w});
        b.bn_running_var = ad::Tensor<T>::full({1, w}, T(1));
        b.fc1_W = detail::affine_init<T>(w, w, rng);
        b.fc1_b = detail::bias_init<T>(w, w, rng);
        b.fc2_W = detail::affine_init<T>(w, w, rng);
        b.fc2_b = detail::bias_init<T>(w, w, rng);
    }
    m.agg_W = detail::affine_init<T>(w, tr.latent_width, rng, 3.0);
    m.agg_b = detail::bias_init<T>(w, tr.latent_width, rng);

    const int h0 = tr.projector_hidden[0];
    const int h1 = tr.projector_hidden[1];
    m.proj1_W = detail::affine_init<T>(tr.latent_width, h0, rng, detail::kGeluGain);
    m.proj1_b = detail::bias_init<T>(tr.latent_width, h0, rng);
    m.proj2_W = detail::affine_init<T>(h0, h1, rng, detail::kGeluGain);
    m.proj2_b = detail::bias_init<T>(h0, h1, rng);
    m.proj3_W = detail::affine_init<T>(h1, tr.pseudo_label_dim, rng, detail::kHeadGain);
    m.proj3_b = detail::bias_init<T>(h1, tr.pseudo_label_dim, rng);
    return m;
}

// Token subsampling and neighbor lookups depend only on token coordinates,
// so they are computed once per view and shared by any precision or any
// number of forward passes.
struct BlockGeometry {
    std::vector<int> survivors;        // view-local indices into the block input
    std::vector<int> neighbors;        // flat T_out * k view-local indices
    std::vector<double> neighbor_dist;  // flat, matches `neighbors`
    int k = 0;
    int t_in = 0;
    int t_out = 0;
};

struct ViewGeometry {
    TokenDescriptors desc;
    std::vector<BlockGeometry> blocks;
    int final_tokens = 0;
};

// FPS start for block subsampling: the token nearest the input centroid.
int centroid_start_index(const std::vector<Vec3>& points);

BlockGeometry block_geometry(const std::vector<Vec3>& token_points, int k);

ViewGeometry view_geometry_from_descriptors(TokenDescriptors desc, const TransformerConfig& tr);

ViewGeometry precompute_view(const OrientedPointSet& ps, const TokenizerConfig& tok,
                             const TransformerConfig& tr, std::mt19937_64& rng);

template <typename T>
struct ForwardValues {
    typename ad::Graph<T>::Value tokens;  // [V*T, width] post-projection
    typename ad::Graph<T>::Value latent;  // [V, latent_width], rows unit norm
    typename ad::Graph<T>::Value logits;  // [V, H]; only when with_projector
};

// One attention block on already-assembled (possibly multi-view) row
// indices: localized vector self-attention, residual, BN, two ReLU FCs.
template <typename T>
typename ad::Graph<T>::Value apply_sa_block(ad::Graph<T>& g, typename ad::Graph<T>::Value x,
                                            typename RiptModel<T>::Block& blk,
                                            const std::vector<int>& surv_global,
                                            std::vector<int> nb_global,
                                            std::vector<int> query_rep, std::vector<T> nb_dist,
                                            int k, bool train, bool positional_encoding) {
    using Value = typename ad::Graph<T>::Value;
    Value x_surv = g.gather_rows(x, surv_global);
    Value alpha = g.add(g.matmul(x_surv, g.param(blk.alpha_W)), g.param(blk.alpha_b));
    Value beta = g.add(g.matmul(x, g.param(blk.beta_W)), g.param(blk.beta_b));
    Value gamma = g.add(g.matmul(x, g.param(blk.gamma_W)), g.param(blk.gamma_b));

    Value nb_beta = g.gather_rows(beta, nb_global);
    Value nb_gamma = g.gather_rows(gamma, std::move(nb_global));
    Value queries = g.gather_rows(alpha, std::move(query_rep));
    Value scores = g.sub(queries, nb_beta);
    if (positional_encoding) {
        const int n_dist = static_cast<int>(nb_dist.size());
        Value dist = g.constant(n_dist, 1, std::move(nb_dist));
        Value pe = g.add(g.matmul(dist, g.param(blk.pos_W)), g.param(blk.pos_b));
        scores = g.add(scores, pe);
    }
    Value attn = g.softmax_groups(scores, k);
    Value refined = g.sum_groups(g.mul(attn, nb_gamma), k);
    Value residual = g.add(refined, x_surv);
    Value bn = g.batchnorm(residual, g.param(blk.bn_gamma), g.param(blk.bn_beta),
                           blk.bn_running_mean, blk.bn_running_var, train);
    Value h = g.relu(g.add(g.matmul(bn, g.param(blk.fc1_W)), g.param(blk.fc1_b)));
    return g.relu(g.add(g.matmul(h, g.param(blk.fc2_W)), g.param(blk.fc2_b)));
}

// Runs the whole encoder (and optionally the projector) over a batch of
// views inside one graph. In train mode batchnorm pools statistics over all
// views' tokens; in eval mode it is a pure per-sample function.
template <typename T>
ForwardValues<T> forward_views(ad::Graph<T>& g, RiptModel<T>& model,
                               std::span<const ViewGeometry* const> views, bool train,
                               bool with_projector = true) {
    using Value = typename ad::Graph<T>::Value;
    if (views.empty()) throw ArgumentError("forward_views: no views");
    const int n_views = static_cast<int>(views.size());
    const int t0 = model.tok.token_count;
    const int podw = model.tok.pod_width();
    for (const ViewGeometry* v : views) {
        if (v->desc.pod.rows() != t0 || v->desc.pod.cols() != podw) {
            throw ArgumentError("forward_views: view token shape mismatch");
        }
    }

    std::vector<T> pod_data(static_cast<size_t>(n_views) * t0 * podw);
    for (int v = 0; v < n_views; ++v) {
        const Eigen::MatrixXd& p = views[v]->desc.pod;
        for (int r = 0; r < t0; ++r)
            for (int c = 0; c < podw; ++c) {
                pod_data[(static_cast<size_t>(v) * t0 + r) * podw + c] = static_cast<T>(p(r, c));
            }
    }
    Value pod = g.constant(n_views * t0, podw, std::move(pod_data));
    Value x = g.add(g.matmul(pod, g.param(model.tokenizer.W)), g.param(model.tokenizer.b));

    ForwardValues<T> out;
    out.tokens = x;

    int t_in = t0;
    for (int bi = 0; bi < model.tr.num_blocks; ++bi) {
        auto& blk = model.blocks[bi];
        const int k = views[0]->blocks[bi].k;
        const int t_out = t_in / 2;

        std::vector<int> surv_global;
        std::vector<int> nb_global;
        std::vector<int> query_rep;
        std::vector<T> nb_dist;
        surv_global.reserve(static_cast<size_t>(n_views) * t_out);
        nb_global.reserve(static_cast<size_t>(n_views) * t_out * k);
        query_rep.reserve(nb_global.capacity());
        nb_dist.reserve(nb_global.capacity());
        for (int v = 0; v < n_views; ++v) {
            const BlockGeometry& bg = views[v]->blocks[bi];
            if (bg.t_in != t_in || bg.k != k) {
                throw ArgumentError("forward_views: inconsistent block geometry");
            }
            const int in_off = v * t_in;
            const int out_off = v * t_out;
            for (int j = 0; j < t_out; ++j) {
                surv_global.push_back(in_off + bg.survivors[j]);
                for (int m = 0; m < k; ++m) {
                    nb_global.push_back(in_off + bg.neighbors[j * k + m]);
                    query_rep.push_back(out_off + j);
                    nb_dist.push_back(static_cast<T>(bg.neighbor_dist[j * k + m]));
                }
            }
        }

        x = apply_sa_block(g, x, blk, surv_global, std::move(nb_global), std::move(query_rep),
                           std::move(nb_dist), k, train, model.tr.positional_encoding);
        t_in = t_out;
    }

    Value pooled = g.mean_groups(x, t_in);
    Value compressed = g.add(g.matmul(pooled, g.param(model.agg_W)), g.param(model.agg_b));
    out.latent = g.l2_normalize(compressed, 1);

    if (with_projector) {
        Value p1 = g.gelu(g.add(g.matmul(out.latent, g.param(model.proj1_W)), g.param(model.proj1_b)));
        Value p2 = g.gelu(g.add(g.matmul(p1, g.param(model.proj2_W)), g.param(model.proj2_b)));
        out.logits = g.add(g.matmul(p2, g.param(model.proj3_W)), g.param(model.proj3_b));
    }
    return out;
}

// Single-sample encoder pass: pose geometry through tokenizer, attention
// blocks, aggregation. Returns the unit-norm latent feature.
template <typename T>
Eigen::VectorXd ript_forward_impl(const OrientedPointSet& ps, RiptModel<T>& model, bool train,
                                  std::mt19937_64& rng) {
    ViewGeometry vg = precompute_view(ps, model.tok, model.tr, rng);
    ad::Graph<T> g;
    const ViewGeometry* views[1] = {&vg};
    ForwardValues<T> fw = forward_views(g, model, views, train, /*with_projector=*/false);
    const std::vector<T>& lat = g.values(fw.latent);
    Eigen::VectorXd out(model.tr.latent_width);
    for (int i = 0; i < model.tr.latent_width; ++i) out[i] = static_cast<double>(lat[i]);
    return out;
}

// Spec-level single-sample ops over plain TokenSets (used by unit tests and
// small tools; the trainer drives forward_views directly).
TokenSet sa_block(const TokenSet& s_in, typename RiptModel<double>::Block& params, int k,
                  bool train = false, bool positional_encoding = false);

Eigen::VectorXd aggregate(const TokenSet& s_out, const ad::Tensor<double>& agg_W,
                          const ad::Tensor<double>& agg_b);

Eigen::VectorXd ript_forward(const OrientedPointSet& ps, RiptModel<double>& model, bool train,
                             std::mt19937_64& rng);

Eigen::VectorXd ript_forward_f32(const OrientedPointSet& ps, RiptModel<float>& model,
                                 std::mt19937_64& rng);

}  // namespace ript
