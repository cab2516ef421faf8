#pragma once

#include <string>
#include <vector>

#include "ript/transformer.hpp"

// Retrieval, linear-probe, and clustering measures over extracted latent
// features, plus the rotation-regime extraction harness.
namespace ript::eval {

struct FeatureTable {
    Eigen::MatrixXd feats;  // n x d, rows unit norm
    std::vector<int> labels;
    std::vector<std::string> label_names;
    std::string split;  // "train" | "test"

    int size() const { return static_cast<int>(feats.rows()); }
    void validate() const;
};

struct MacroMapResult {
    double percent = 0.0;             // in [0, 100]
    std::vector<int> excluded_labels;  // categories with a single sample
};

// Every item queries all others, ranked by Euclidean distance with ties
// broken by index; per-query AP averaged within category, then across
// categories.
MacroMapResult macro_map(const FeatureTable& test);

// One-vs-rest linear classifier trained by seeded SGD on hinge loss with L2
// regularization (fixed strength, 200 epochs); returns macro accuracy in
// [0, 100].
double linear_probe(const FeatureTable& train, const FeatureTable& test, uint64_t seed = 1);

// k-means++ with `restarts` seeded restarts, best inertia; NMI against the
// table labels with arithmetic-mean normalization.
double kmeans_nmi(const FeatureTable& test, int k, int restarts = 10, uint64_t seed = 1);

enum class RotationSetting { NrNr, NrRr, RrRr };

RotationSetting parse_rotation_setting(const std::string& text);
// Whether the regime rotates point sets at feature-extraction (test) time.
bool test_time_rotation(RotationSetting s);

// Pose-normalizes each sample, applies the regime's per-sample random
// rotation, and extracts eval-mode features. No crop/mix augmentation is
// applied at test time.
FeatureTable rotation_harness(const std::vector<OrientedPointSet>& dataset,
                              const std::vector<std::string>& label_names,
                              RiptModel<double>& model, RotationSetting setting, uint64_t seed);

}  // namespace ript::eval
