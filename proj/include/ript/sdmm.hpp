#pragma once

#include <array>
#include <map>
#include <optional>

#include "ript/transformer.hpp"

// Self-distillation trainer: multi-crop / cut-mix / anisotropic-scaling view
// generation, student-teacher distributions with centering, the combined
// multi-view + mixed-view loss, EMA teacher updates, and the warmup/cosine
// Adam schedule.
namespace ript::sdmm {

struct SdmmConfig {
    int batch_size = 32;  // E; each step processes up to 5E views
    double tau_s = 0.4;
    double tau_t = 0.1;
    double center_momentum = 0.9;
    // The center tracks raw teacher logits by default; the post-softmax
    // variant is available as a switch.
    bool center_on_probs = false;
    double lambda_base = 0.996;
    int epochs = 200;
    int warmup_epochs = 20;
    double lr_init = 1e-4;
    double lr_peak = 5e-4;
    double lr_final = 1e-4;
    int sample_points = 1024;  // n; dataset samples are resampled to this
    bool use_local_views = true;
    bool use_mixed_view = true;
    bool train_rotation = false;  // Rr regime at training time
    uint64_t seed = 1;

    void validate() const;
};

// The five augmented views of one training sample plus mixing metadata.
struct ViewBundle {
    OrientedPointSet g1, g2;  // global views, n points each
    OrientedPointSet l1, l2;  // local views, n/2 points each
    OrientedPointSet mixed;   // cut-mix view, n points
    double m = 0.0;           // mixing ratio
    int partner_index = -1;   // index of B within the minibatch
};

// ---- augmentation ------------------------------------------------------------

// One crop: random seed point, floor(ratio*n) nearest neighbors, resampled
// to exactly `target` points (subsample without replacement or duplicate
// uniformly).
OrientedPointSet crop_view(const OrientedPointSet& a, double ratio, int target,
                           std::mt19937_64& rng);

// As crop_view but also reports the seed point and pre-resampling indices.
struct CropDetail {
    int seed_index = -1;
    std::vector<int> crop_indices;
};
OrientedPointSet crop_view_detail(const OrientedPointSet& a, double ratio, int target,
                                  std::mt19937_64& rng, CropDetail* detail);

// Two globals (ratio ~ U(0.6,1), n points) and two locals (U(0.4,0.6), n/2).
std::array<OrientedPointSet, 4> multi_crop(const OrientedPointSet& a, std::mt19937_64& rng);

// floor(m*n) nearest points of a random reference within A, united with the
// n - floor(m*n) farthest points of that reference within randomly rotated B.
std::pair<OrientedPointSet, double> cut_mix(const OrientedPointSet& a, const OrientedPointSet& b,
                                            std::mt19937_64& rng);
// Deterministic core; `b_rotated` must already carry the random rotation.
OrientedPointSet cut_mix_core(const OrientedPointSet& a, const OrientedPointSet& b_rotated,
                              double m, int reference_index);

// Random orthonormal axes, per-axis factors ~ U(0.67, 1.5); orientations map
// through the inverse transpose and are re-normalized.
OrientedPointSet aniso_scale(const OrientedPointSet& view, std::mt19937_64& rng);
OrientedPointSet aniso_scale_core(const OrientedPointSet& view, const Mat3& axes,
                                  const Vec3& factors);

// ---- distributions and loss --------------------------------------------------

Eigen::VectorXd student_dist(const Eigen::VectorXd& logits, double tau_s = 0.4);
Eigen::VectorXd teacher_dist(const Eigen::VectorXd& logits, const Eigen::VectorXd& center,
                             double tau_t = 0.1);

// mu' = momentum * mu + (1 - momentum) * batch mean of teacher outputs.
void update_center(Eigen::VectorXd& center, const std::vector<Eigen::VectorXd>& teacher_outputs,
                   double momentum = 0.9);

Eigen::VectorXd mix_labels(const Eigen::VectorXd& da, const Eigen::VectorXd& db, double m);

// Cross-entropy -sum q log p with log clamped at -30.
double cross_entropy(const Eigen::VectorXd& q, const Eigen::VectorXd& p);

struct SampleLossBreakdown {
    std::vector<double> multi_terms;  // 6 with local views, 2 without
    std::optional<double> mix_term;
    double total = 0.0;
};

// Reference (non-graph) evaluation of the per-sample loss; the trainer
// assembles the same sum inside the autodiff graph.
SampleLossBreakdown sample_loss(const Eigen::VectorXd& teacher_g1,
                                const Eigen::VectorXd& teacher_g2,
                                const Eigen::VectorXd& student_g1,
                                const Eigen::VectorXd& student_g2,
                                const Eigen::VectorXd* student_l1,
                                const Eigen::VectorXd* student_l2,
                                const Eigen::VectorXd* mixed_label,
                                const Eigen::VectorXd* student_mixed);

// ---- schedules ----------------------------------------------------------------

// Linear lr_init -> lr_peak over [0, warmup], cosine lr_peak -> lr_final
// over [warmup, total]. `epoch` may be fractional (stepped per batch).
double lr_schedule(double epoch, int warmup = 20, int total = 200, double lr_init = 1e-4,
                   double lr_peak = 5e-4, double lr_final = 1e-4);

// lambda(step) = 1 - (1 - base) * (cos(pi * step / total) + 1) / 2.
double lambda_schedule(int64_t step, int64_t total_steps, double base = 0.996);

// theta_t' = lambda * theta_t + (1 - lambda) * theta_s, elementwise over all
// parameters and batchnorm buffers.
void ema_update(RiptModel<double>& teacher, RiptModel<double>& student, double lambda);

// ---- training -----------------------------------------------------------------

struct DistillState {
    RiptModel<double> student;
    RiptModel<double> teacher;  // EMA copy; never receives gradient
    Eigen::VectorXd center;     // H
    std::map<std::string, ad::AdamState<double>> opt;
    int64_t step = 0;
    int64_t total_steps = 0;
    int epochs_done = 0;
};

DistillState init_distill(const TokenizerConfig& tok, const TransformerConfig& tr,
                          const SdmmConfig& cfg, int64_t steps_per_epoch);

struct EpochMetrics {
    double loss = 0.0;
    double teacher_entropy = 0.0;  // mean entropy of teacher distributions
    double lr = 0.0;               // value at the first step of the epoch
    double lambda = 0.0;           // value at the first step of the epoch
    int views_per_step = 0;
};

// One pass over the dataset in minibatches of E samples. Builds the view
// bundles, runs teacher (eval, no grad) and student (train), applies one
// Adam step per batch, then the EMA and center updates.
EpochMetrics train_epoch(const std::vector<OrientedPointSet>& dataset, DistillState& state,
                         const SdmmConfig& cfg, int epoch);

void save_distill_state(const std::string& path, DistillState& state);
DistillState load_distill_state(const std::string& path, const TokenizerConfig& tok,
                                const TransformerConfig& tr);

}  // namespace ript::sdmm
