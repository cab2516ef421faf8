#include "ript/sdmm.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "ript/checkpoint.hpp"

namespace ript::sdmm {

namespace {
// Seed-derivation tags so every RNG consumer has its own stream.
constexpr uint64_t kTagEpochShuffle = 1;
constexpr uint64_t kTagSample = 2;
constexpr uint64_t kTagViewStart = 3;
constexpr uint64_t kTagModelInit = 4;
constexpr uint64_t kTagTrainRotation = 5;
}  // namespace

void SdmmConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (use_mixed_view && batch_size < 2) {
        throw ConfigError("batch_size must be >= 2 to draw cut-mix partners");
    }
    if (!(tau_s > 0.0) || !(tau_t > 0.0)) throw ConfigError("temperatures must be positive");
    if (center_momentum < 0.0 || center_momentum >= 1.0) {
        throw ConfigError("center_momentum must be in [0, 1)");
    }
    if (lambda_base < 0.0 || lambda_base > 1.0) throw ConfigError("lambda_base must be in [0, 1]");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (warmup_epochs < 0 || warmup_epochs > epochs) {
        throw ConfigError("warmup_epochs must be in [0, epochs]");
    }
    if (!(lr_init > 0.0) || !(lr_peak > 0.0) || !(lr_final > 0.0)) {
        throw ConfigError("learning rates must be positive");
    }
    if (sample_points < 2 || sample_points % 2 != 0) {
        throw ConfigError("sample_points must be even and >= 2");
    }
}

// ---- augmentation ------------------------------------------------------------

OrientedPointSet crop_view_detail(const OrientedPointSet& a, double ratio, int target,
                                  std::mt19937_64& rng, CropDetail* detail) {
    const int n = a.size();
    if (n < 1) throw ArgumentError("crop_view: empty input");
    if (target < 1) throw ArgumentError("crop_view: target must be >= 1");
    const int crop_size = std::clamp(static_cast<int>(std::floor(ratio * n)), 1, n);

    const int seed_index = std::uniform_int_distribution<int>(0, n - 1)(rng);
    std::vector<int> crop = knn(a.points[seed_index], a.points, crop_size);
    if (detail != nullptr) {
        detail->seed_index = seed_index;
        detail->crop_indices = crop;
    }

    std::vector<int> chosen;
    chosen.reserve(target);
    if (crop_size >= target) {
        // Partial Fisher-Yates: subsample without replacement.
        std::vector<int> pool = crop;
        for (int i = 0; i < target; ++i) {
            int j = std::uniform_int_distribution<int>(i, crop_size - 1)(rng);
            std::swap(pool[i], pool[j]);
            chosen.push_back(pool[i]);
        }
    } else {
        chosen = crop;
        std::uniform_int_distribution<int> pick(0, crop_size - 1);
        while (static_cast<int>(chosen.size()) < target) chosen.push_back(crop[pick(rng)]);
    }

    OrientedPointSet out;
    out.label = a.label;
    out.points.reserve(target);
    out.orientations.reserve(target);
    for (int i : chosen) {
        out.points.push_back(a.points[i]);
        out.orientations.push_back(a.orientations[i]);
    }
    return out;
}

OrientedPointSet crop_view(const OrientedPointSet& a, double ratio, int target,
                           std::mt19937_64& rng) {
    return crop_view_detail(a, ratio, target, rng, nullptr);
}

std::array<OrientedPointSet, 4> multi_crop(const OrientedPointSet& a, std::mt19937_64& rng) {
    const int n = a.size();
    std::uniform_real_distribution<double> global_ratio(0.6, 1.0);
    std::uniform_real_distribution<double> local_ratio(0.4, 0.6);
    std::array<OrientedPointSet, 4> views;
    views[0] = crop_view(a, global_ratio(rng), n, rng);
    views[1] = crop_view(a, global_ratio(rng), n, rng);
    views[2] = crop_view(a, local_ratio(rng), n / 2, rng);
    views[3] = crop_view(a, local_ratio(rng), n / 2, rng);
    return views;
}

OrientedPointSet cut_mix_core(const OrientedPointSet& a, const OrientedPointSet& b_rotated,
                              double m, int reference_index) {
    const int n = a.size();
    if (b_rotated.size() != n) throw ArgumentError("cut_mix: point sets must have equal size");
    if (reference_index < 0 || reference_index >= n) {
        throw ArgumentError("cut_mix: reference index out of range");
    }
    const Vec3 p = a.points[reference_index];
    const int keep_a = std::clamp(static_cast<int>(std::floor(m * n)), 0, n);
    const int keep_b = n - keep_a;

    OrientedPointSet out;
    out.label = -1;  // mixed views carry no single category
    out.points.reserve(n);
    out.orientations.reserve(n);

    if (keep_a > 0) {
        for (int i : knn(p, a.points, keep_a)) {
            out.points.push_back(a.points[i]);
            out.orientations.push_back(a.orientations[i]);
        }
    }
    if (keep_b > 0) {
        std::vector<std::pair<double, int>> far(n);
        for (int i = 0; i < n; ++i) far[i] = {-(b_rotated.points[i] - p).squaredNorm(), i};
        std::partial_sort(far.begin(), far.begin() + keep_b, far.end());
        for (int i = 0; i < keep_b; ++i) {
            out.points.push_back(b_rotated.points[far[i].second]);
            out.orientations.push_back(b_rotated.orientations[far[i].second]);
        }
    }
    return out;
}

std::pair<OrientedPointSet, double> cut_mix(const OrientedPointSet& a, const OrientedPointSet& b,
                                            std::mt19937_64& rng) {
    const int n = a.size();
    if (b.size() != n) throw ArgumentError("cut_mix: point sets must have equal size");
    const OrientedPointSet b_rot = apply_rotation(b, random_rotation(rng));
    const double m = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const int ref = std::uniform_int_distribution<int>(0, n - 1)(rng);
    return {cut_mix_core(a, b_rot, m, ref), m};
}

OrientedPointSet aniso_scale_core(const OrientedPointSet& view, const Mat3& axes,
                                  const Vec3& factors) {
    const Mat3 scale = axes * factors.asDiagonal() * axes.transpose();
    const Mat3 normal_map = axes * factors.cwiseInverse().asDiagonal() * axes.transpose();
    OrientedPointSet out;
    out.label = view.label;
    out.points.reserve(view.points.size());
    out.orientations.reserve(view.orientations.size());
    for (const Vec3& p : view.points) out.points.push_back(scale * p);
    for (const Vec3& o : view.orientations) {
        Vec3 mapped = normal_map * o;
        const double len = mapped.norm();
        out.orientations.push_back(len > 0.0 ? Vec3(mapped / len) : o);
    }
    return out;
}

OrientedPointSet aniso_scale(const OrientedPointSet& view, std::mt19937_64& rng) {
    const Mat3 axes = random_rotation(rng);
    std::uniform_real_distribution<double> factor(0.67, 1.5);
    const double fx = factor(rng), fy = factor(rng), fz = factor(rng);
    return aniso_scale_core(view, axes, Vec3(fx, fy, fz));
}

// ---- distributions and loss ----------------------------------------------------

namespace {

Eigen::VectorXd stable_softmax(const Eigen::VectorXd& z) {
    for (int i = 0; i < z.size(); ++i) {
        if (!std::isfinite(z[i])) throw NumericError("softmax input is not finite");
    }
    const double mx = z.maxCoeff();
    Eigen::VectorXd e = (z.array() - mx).exp();
    return e / e.sum();
}

}  // namespace

Eigen::VectorXd student_dist(const Eigen::VectorXd& logits, double tau_s) {
    return stable_softmax(logits / tau_s);
}

Eigen::VectorXd teacher_dist(const Eigen::VectorXd& logits, const Eigen::VectorXd& center,
                             double tau_t) {
    if (logits.size() != center.size()) throw ArgumentError("teacher_dist: center size mismatch");
    return stable_softmax((logits - center) / tau_t);
}

void update_center(Eigen::VectorXd& center, const std::vector<Eigen::VectorXd>& teacher_outputs,
                   double momentum) {
    if (teacher_outputs.empty()) throw ArgumentError("update_center: empty batch");
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(center.size());
    for (const Eigen::VectorXd& v : teacher_outputs) {
        if (v.size() != center.size()) throw ArgumentError("update_center: size mismatch");
        mean += v;
    }
    mean /= static_cast<double>(teacher_outputs.size());
    center = momentum * center + (1.0 - momentum) * mean;
}

Eigen::VectorXd mix_labels(const Eigen::VectorXd& da, const Eigen::VectorXd& db, double m) {
    if (da.size() != db.size()) throw ArgumentError("mix_labels: size mismatch");
    return m * da + (1.0 - m) * db;
}

double cross_entropy(const Eigen::VectorXd& q, const Eigen::VectorXd& p) {
    if (q.size() != p.size()) throw ArgumentError("cross_entropy: size mismatch");
    double h = 0.0;
    for (int i = 0; i < q.size(); ++i) {
        h -= q[i] * std::max(std::log(p[i]), -30.0);
    }
    return h;
}

SampleLossBreakdown sample_loss(const Eigen::VectorXd& teacher_g1,
                                const Eigen::VectorXd& teacher_g2,
                                const Eigen::VectorXd& student_g1,
                                const Eigen::VectorXd& student_g2,
                                const Eigen::VectorXd* student_l1,
                                const Eigen::VectorXd* student_l2,
                                const Eigen::VectorXd* mixed_label,
                                const Eigen::VectorXd* student_mixed) {
    if ((student_l1 == nullptr) != (student_l2 == nullptr)) {
        throw ArgumentError("sample_loss: local views must come in pairs");
    }
    if ((mixed_label == nullptr) != (student_mixed == nullptr)) {
        throw ArgumentError("sample_loss: mixed label and mixed prediction must pair up");
    }
    SampleLossBreakdown out;
    // P = G1 then P = G2, each against every other view in the bundle.
    out.multi_terms.push_back(cross_entropy(teacher_g1, student_g2));
    if (student_l1 != nullptr) {
        out.multi_terms.push_back(cross_entropy(teacher_g1, *student_l1));
        out.multi_terms.push_back(cross_entropy(teacher_g1, *student_l2));
    }
    out.multi_terms.push_back(cross_entropy(teacher_g2, student_g1));
    if (student_l1 != nullptr) {
        out.multi_terms.push_back(cross_entropy(teacher_g2, *student_l1));
        out.multi_terms.push_back(cross_entropy(teacher_g2, *student_l2));
    }
    for (double t : out.multi_terms) out.total += t;
    if (mixed_label != nullptr) {
        out.mix_term = cross_entropy(*mixed_label, *student_mixed);
        out.total += *out.mix_term;
    }
    return out;
}

// ---- schedules ------------------------------------------------------------------

double lr_schedule(double epoch, int warmup, int total, double lr_init, double lr_peak,
                   double lr_final) {
    if (epoch < 0.0 || epoch > total) throw ArgumentError("lr_schedule: epoch out of range");
    if (warmup > 0 && epoch <= warmup) {
        return lr_init + (lr_peak - lr_init) * (epoch / warmup);
    }
    const double progress = (epoch - warmup) / static_cast<double>(total - warmup);
    return lr_final + (lr_peak - lr_final) * 0.5 * (std::cos(std::numbers::pi * progress) + 1.0);
}

double lambda_schedule(int64_t step, int64_t total_steps, double base) {
    if (total_steps < 1) throw ArgumentError("lambda_schedule: total_steps must be >= 1");
    const double s = std::clamp(static_cast<double>(step) / static_cast<double>(total_steps), 0.0, 1.0);
    return 1.0 - (1.0 - base) * (std::cos(std::numbers::pi * s) + 1.0) * 0.5;
}

void ema_update(RiptModel<double>& teacher, RiptModel<double>& student, double lambda) {
    std::vector<std::pair<std::string, ad::Tensor<double>*>> t_list, s_list;
    teacher.visit_all([&](const std::string& n, ad::Tensor<double>& t) { t_list.emplace_back(n, &t); });
    student.visit_all([&](const std::string& n, ad::Tensor<double>& t) { s_list.emplace_back(n, &t); });
    if (t_list.size() != s_list.size()) throw ArgumentError("ema_update: model structure mismatch");
    for (size_t i = 0; i < t_list.size(); ++i) {
        if (t_list[i].first != s_list[i].first ||
            t_list[i].second->values.size() != s_list[i].second->values.size()) {
            throw ArgumentError("ema_update: tensor mismatch at " + t_list[i].first);
        }
        auto& tv = t_list[i].second->values;
        const auto& sv = s_list[i].second->values;
        for (size_t j = 0; j < tv.size(); ++j) tv[j] = lambda * tv[j] + (1.0 - lambda) * sv[j];
    }
}

// ---- training --------------------------------------------------------------------

DistillState init_distill(const TokenizerConfig& tok, const TransformerConfig& tr,
                          const SdmmConfig& cfg, int64_t steps_per_epoch) {
    cfg.validate();
    if (steps_per_epoch < 1) throw ArgumentError("init_distill: steps_per_epoch must be >= 1");
    DistillState st;
    st.student = init_model<double>(tok, tr, derive_seed(cfg.seed, {kTagModelInit}));
    st.teacher = st.student;
    st.teacher.visit_all(
        [](const std::string&, ad::Tensor<double>& t) { t.requires_grad = false; });
    st.center = Eigen::VectorXd::Zero(tr.pseudo_label_dim);
    st.total_steps = static_cast<int64_t>(cfg.epochs) * steps_per_epoch;
    return st;
}

EpochMetrics train_epoch(const std::vector<OrientedPointSet>& dataset, DistillState& state,
                         const SdmmConfig& cfg, int epoch) {
    cfg.validate();
    const int E = cfg.batch_size;
    if (static_cast<int>(dataset.size()) < E) {
        throw ArgumentError("train_epoch: dataset smaller than one minibatch");
    }
    const int n = cfg.sample_points;
    const int n_batches = static_cast<int>(dataset.size()) / E;
    const int views_per_sample = 2 + (cfg.use_local_views ? 2 : 0) + (cfg.use_mixed_view ? 1 : 0);
    const int H = state.student.tr.pseudo_label_dim;

    std::vector<int> perm(dataset.size());
    for (size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
    {
        auto shuffle_rng = make_rng(derive_seed(cfg.seed, {kTagEpochShuffle, (uint64_t)epoch}));
        std::shuffle(perm.begin(), perm.end(), shuffle_rng);
    }

    EpochMetrics metrics;
    metrics.views_per_step = E * views_per_sample;
    metrics.lr = lr_schedule(static_cast<double>(epoch), cfg.warmup_epochs, cfg.epochs,
                             cfg.lr_init, cfg.lr_peak, cfg.lr_final);
    metrics.lambda = lambda_schedule(state.step, state.total_steps, cfg.lambda_base);

    for (int b = 0; b < n_batches; ++b) {
        // View construction is sequential so the RNG streams are well
        // defined; the expensive tokenization below runs in parallel.
        std::vector<OrientedPointSet> views;
        views.reserve(static_cast<size_t>(E) * views_per_sample);
        std::vector<int> partner(E, -1);
        std::vector<double> mix_ratio(E, 0.0);
        for (int i = 0; i < E; ++i) {
            auto rng_s = make_rng(
                derive_seed(cfg.seed, {kTagSample, (uint64_t)epoch, (uint64_t)b, (uint64_t)i}));
            OrientedPointSet a = dataset[perm[static_cast<size_t>(b) * E + i]];
            if (a.size() != n) {
                throw ArgumentError("train_epoch: sample has " + std::to_string(a.size()) +
                                    " points, expected " + std::to_string(n));
            }
            if (cfg.train_rotation) {
                // Separate stream: the crop/partner/mix draws below stay
                // aligned between rotated and unrotated training regimes.
                auto rot_rng = make_rng(derive_seed(
                    cfg.seed, {kTagTrainRotation, (uint64_t)epoch, (uint64_t)b, (uint64_t)i}));
                a = apply_rotation(a, random_rotation(rot_rng));
            }

            std::uniform_real_distribution<double> global_ratio(0.6, 1.0);
            std::uniform_real_distribution<double> local_ratio(0.4, 0.6);
            OrientedPointSet g1 = crop_view(a, global_ratio(rng_s), n, rng_s);
            OrientedPointSet g2 = crop_view(a, global_ratio(rng_s), n, rng_s);
            OrientedPointSet l1, l2, mixed;
            if (cfg.use_local_views) {
                l1 = crop_view(a, local_ratio(rng_s), n / 2, rng_s);
                l2 = crop_view(a, local_ratio(rng_s), n / 2, rng_s);
            }
            if (cfg.use_mixed_view) {
                int j = std::uniform_int_distribution<int>(0, E - 2)(rng_s);
                if (j >= i) ++j;
                partner[i] = j;
                const OrientedPointSet& bset = dataset[perm[static_cast<size_t>(b) * E + j]];
                if (bset.size() != n) {
                    throw ArgumentError("train_epoch: partner sample size mismatch");
                }
                auto [mv, m] = cut_mix(a, bset, rng_s);
                mixed = std::move(mv);
                mix_ratio[i] = m;
            }
            views.push_back(aniso_scale(g1, rng_s));
            views.push_back(aniso_scale(g2, rng_s));
            if (cfg.use_local_views) {
                views.push_back(aniso_scale(l1, rng_s));
                views.push_back(aniso_scale(l2, rng_s));
            }
            if (cfg.use_mixed_view) views.push_back(aniso_scale(mixed, rng_s));
        }

        const int n_views = static_cast<int>(views.size());
        std::vector<ViewGeometry> geos(n_views);
        std::vector<uint64_t> view_seeds(n_views);
        for (int v = 0; v < n_views; ++v) {
            view_seeds[v] =
                derive_seed(cfg.seed, {kTagViewStart, (uint64_t)epoch, (uint64_t)b, (uint64_t)v});
        }
#pragma omp parallel for schedule(dynamic)
        for (int v = 0; v < n_views; ++v) {
            auto rng_v = make_rng(view_seeds[v]);
            geos[v] = precompute_view(views[v], state.student.tok, state.student.tr, rng_v);
        }

        // Teacher processes the global views only, in eval mode, no grad.
        std::vector<const ViewGeometry*> teacher_views;
        teacher_views.reserve(static_cast<size_t>(2) * E);
        for (int i = 0; i < E; ++i) {
            teacher_views.push_back(&geos[static_cast<size_t>(i) * views_per_sample]);
            teacher_views.push_back(&geos[static_cast<size_t>(i) * views_per_sample + 1]);
        }
        std::vector<Eigen::VectorXd> teacher_logits(2 * E, Eigen::VectorXd(H));
        {
            ad::Graph<double> tg;
            auto tf = forward_views<double>(tg, state.teacher, teacher_views, /*train=*/false);
            const std::vector<double>& lv = tg.values(tf.logits);
            for (int r = 0; r < 2 * E; ++r)
                for (int c = 0; c < H; ++c) teacher_logits[r][c] = lv[static_cast<size_t>(r) * H + c];
        }

        std::vector<Eigen::VectorXd> label_g1(E), label_g2(E);
        double entropy_sum = 0.0;
        for (int i = 0; i < E; ++i) {
            label_g1[i] = teacher_dist(teacher_logits[2 * i], state.center, cfg.tau_t);
            label_g2[i] = teacher_dist(teacher_logits[2 * i + 1], state.center, cfg.tau_t);
            for (const Eigen::VectorXd* d : {&label_g1[i], &label_g2[i]}) {
                for (int h = 0; h < H; ++h) {
                    if ((*d)[h] > 0.0) entropy_sum -= (*d)[h] * std::log((*d)[h]);
                }
            }
        }
        metrics.teacher_entropy += entropy_sum / (2.0 * E);

        // Student processes every view in train mode inside one graph.
        std::vector<const ViewGeometry*> student_views(n_views);
        for (int v = 0; v < n_views; ++v) student_views[v] = &geos[v];
        ad::Graph<double> sg;
        auto sf = forward_views<double>(sg, state.student, student_views, /*train=*/true);
        auto ds = sg.softmax(sg.scale(sf.logits, 1.0 / cfg.tau_s), 1);

        std::vector<int> sel;
        std::vector<double> targets;
        auto push_term = [&](const Eigen::VectorXd& q, int student_row) {
            sel.push_back(student_row);
            for (int h = 0; h < H; ++h) targets.push_back(q[h]);
        };
        for (int i = 0; i < E; ++i) {
            const int base = i * views_per_sample;
            const int row_g1 = base, row_g2 = base + 1;
            const int row_l1 = base + 2, row_l2 = base + 3;
            push_term(label_g1[i], row_g2);
            if (cfg.use_local_views) {
                push_term(label_g1[i], row_l1);
                push_term(label_g1[i], row_l2);
            }
            push_term(label_g2[i], row_g1);
            if (cfg.use_local_views) {
                push_term(label_g2[i], row_l1);
                push_term(label_g2[i], row_l2);
            }
            if (cfg.use_mixed_view) {
                const Eigen::VectorXd mixed =
                    mix_labels(label_g1[i], label_g1[partner[i]], mix_ratio[i]);
                push_term(mixed, base + views_per_sample - 1);
            }
        }
        auto q_const = sg.constant(static_cast<int>(sel.size()), H, std::move(targets));
        auto picked = sg.gather_rows(ds, std::move(sel));
        auto log_p = sg.log(picked, -30.0);
        auto loss = sg.scale(sg.sum_all(sg.mul(q_const, log_p)), -1.0 / E);

        const double loss_val = sg.values(loss)[0];
        if (!std::isfinite(loss_val)) {
            throw NumericError("train_epoch: non-finite loss at epoch " + std::to_string(epoch) +
                               " batch " + std::to_string(b));
        }
        metrics.loss += loss_val;

        state.student.zero_grad();
        sg.backward(loss);
        const double lr =
            lr_schedule(epoch + static_cast<double>(b) / n_batches, cfg.warmup_epochs, cfg.epochs,
                        cfg.lr_init, cfg.lr_peak, cfg.lr_final);
        state.student.visit_trainable([&](const std::string& name, ad::Tensor<double>& t) {
            ad::adam_step(t, state.opt[name], lr);
        });

        const double lambda = lambda_schedule(state.step, state.total_steps, cfg.lambda_base);
        ema_update(state.teacher, state.student, lambda);

        std::vector<Eigen::VectorXd> center_inputs;
        center_inputs.reserve(teacher_logits.size());
        if (cfg.center_on_probs) {
            for (int i = 0; i < E; ++i) {
                center_inputs.push_back(label_g1[i]);
                center_inputs.push_back(label_g2[i]);
            }
        } else {
            center_inputs = teacher_logits;
        }
        update_center(state.center, center_inputs, cfg.center_momentum);
        state.step += 1;
    }

    metrics.loss /= n_batches;
    metrics.teacher_entropy /= n_batches;
    state.epochs_done = epoch + 1;
    return metrics;
}

// ---- persistence -------------------------------------------------------------------

void save_distill_state(const std::string& path, DistillState& state) {
    std::vector<std::pair<std::string, const ad::Tensor<double>*>> entries;
    std::vector<std::unique_ptr<ad::Tensor<double>>> scratch;
    auto add_scalar = [&](const std::string& name, double v) {
        scratch.push_back(std::make_unique<ad::Tensor<double>>(ad::Tensor<double>::full({1, 1}, v)));
        entries.emplace_back(name, scratch.back().get());
    };

    state.student.visit_all([&](const std::string& n, ad::Tensor<double>& t) {
        entries.emplace_back("student/" + n, &t);
    });
    state.teacher.visit_all([&](const std::string& n, ad::Tensor<double>& t) {
        entries.emplace_back("teacher/" + n, &t);
    });

    scratch.push_back(std::make_unique<ad::Tensor<double>>());
    {
        ad::Tensor<double>& c = *scratch.back();
        c.shape = {1, static_cast<int>(state.center.size())};
        c.values.assign(state.center.data(), state.center.data() + state.center.size());
        entries.emplace_back("center/mu", &c);
    }

    int64_t adam_t = 0;
    state.student.visit_trainable([&](const std::string& n, ad::Tensor<double>& t) {
        auto it = state.opt.find(n);
        if (it == state.opt.end() || it->second.m.empty()) return;
        adam_t = it->second.t;
        for (const char* part : {"m", "v"}) {
            scratch.push_back(std::make_unique<ad::Tensor<double>>());
            ad::Tensor<double>& s = *scratch.back();
            s.shape = t.shape;
            s.values = (part[0] == 'm') ? it->second.m : it->second.v;
            entries.emplace_back("opt/" + n + "/" + part, scratch.back().get());
        }
    });
    add_scalar("meta/step", static_cast<double>(state.step));
    add_scalar("meta/total_steps", static_cast<double>(state.total_steps));
    add_scalar("meta/epochs_done", static_cast<double>(state.epochs_done));
    add_scalar("meta/adam_t", static_cast<double>(adam_t));

    save_checkpoint(path, entries);
}

DistillState load_distill_state(const std::string& path, const TokenizerConfig& tok,
                                const TransformerConfig& tr) {
    auto archive = load_checkpoint(path);
    auto fetch = [&](const std::string& name) -> ad::Tensor<double>& {
        auto it = archive.find(name);
        if (it == archive.end()) throw FormatError(path + ": missing tensor " + name);
        return it->second;
    };
    auto scalar = [&](const std::string& name) { return fetch(name).values.at(0); };

    DistillState st;
    st.student = init_model<double>(tok, tr, 0);
    st.teacher = init_model<double>(tok, tr, 0);
    auto restore = [&](RiptModel<double>& model, const std::string& prefix) {
        model.visit_all([&](const std::string& n, ad::Tensor<double>& t) {
            ad::Tensor<double>& src = fetch(prefix + n);
            if (src.values.size() != t.values.size()) {
                throw FormatError(path + ": shape mismatch for " + prefix + n);
            }
            t.values = src.values;
        });
    };
    restore(st.student, "student/");
    restore(st.teacher, "teacher/");
    st.teacher.visit_all([](const std::string&, ad::Tensor<double>& t) { t.requires_grad = false; });

    ad::Tensor<double>& mu = fetch("center/mu");
    st.center = Eigen::Map<const Eigen::VectorXd>(mu.values.data(), mu.values.size());
    if (st.center.size() != tr.pseudo_label_dim) {
        throw FormatError(path + ": center size does not match configured H");
    }

    st.step = static_cast<int64_t>(scalar("meta/step"));
    st.total_steps = static_cast<int64_t>(scalar("meta/total_steps"));
    st.epochs_done = static_cast<int>(scalar("meta/epochs_done"));
    const int64_t adam_t = static_cast<int64_t>(scalar("meta/adam_t"));

    st.student.visit_trainable([&](const std::string& n, ad::Tensor<double>& t) {
        auto it_m = archive.find("opt/" + n + "/m");
        auto it_v = archive.find("opt/" + n + "/v");
        if (it_m == archive.end() || it_v == archive.end()) return;
        ad::AdamState<double>& s = st.opt[n];
        s.m = it_m->second.values;
        s.v = it_v->second.values;
        s.t = adam_t;
        if (s.m.size() != t.values.size()) {
            throw FormatError(path + ": optimizer state mismatch for " + n);
        }
    });
    return st;
}

}  // namespace ript::sdmm
