#include "ript/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <set>

namespace ript::eval {

void FeatureTable::validate() const {
    const int n = size();
    if (static_cast<int>(labels.size()) != n) {
        throw ArgumentError("feature table: label count mismatch");
    }
    for (int i = 0; i < n; ++i) {
        if (std::abs(feats.row(i).norm() - 1.0) > 1e-6) {
            throw ArgumentError("feature table: row " + std::to_string(i) + " is not unit norm");
        }
        if (labels[i] < 0 || labels[i] >= static_cast<int>(label_names.size())) {
            throw ArgumentError("feature table: label id out of range at row " + std::to_string(i));
        }
    }
}

MacroMapResult macro_map(const FeatureTable& test) {
    const int n = test.size();
    std::map<int, int> category_count;
    for (int l : test.labels) category_count[l] += 1;

    MacroMapResult result;
    std::map<int, std::pair<double, int>> per_category;  // label -> (AP sum, query count)
    int usable_categories = 0;
    for (const auto& [label, count] : category_count) {
        if (count < 2) {
            result.excluded_labels.push_back(label);
            std::cerr << "macro_map: category \""
                      << (label < static_cast<int>(test.label_names.size())
                              ? test.label_names[label]
                              : std::to_string(label))
                      << "\" has a single sample; excluded\n";
        } else {
            ++usable_categories;
        }
    }
    if (usable_categories < 2) {
        throw ArgumentError("macro_map: need at least 2 categories with >= 2 samples");
    }

    for (int q = 0; q < n; ++q) {
        if (category_count[test.labels[q]] < 2) continue;
        std::vector<std::pair<double, int>> ranked;
        ranked.reserve(n - 1);
        for (int j = 0; j < n; ++j) {
            if (j == q) continue;
            ranked.emplace_back((test.feats.row(j) - test.feats.row(q)).squaredNorm(), j);
        }
        std::sort(ranked.begin(), ranked.end());  // ties resolved by index

        const int total_relevant = category_count[test.labels[q]] - 1;
        int seen_relevant = 0;
        double ap = 0.0;
        for (size_t rank = 0; rank < ranked.size(); ++rank) {
            if (test.labels[ranked[rank].second] == test.labels[q]) {
                ++seen_relevant;
                ap += static_cast<double>(seen_relevant) / static_cast<double>(rank + 1);
            }
        }
        ap /= total_relevant;
        auto& acc = per_category[test.labels[q]];
        acc.first += ap;
        acc.second += 1;
    }

    double macro = 0.0;
    for (const auto& [label, acc] : per_category) macro += acc.first / acc.second;
    macro /= static_cast<double>(per_category.size());
    result.percent = 100.0 * macro;
    return result;
}

double linear_probe(const FeatureTable& train, const FeatureTable& test, uint64_t seed) {
    train.validate();
    test.validate();
    std::set<int> train_labels(train.labels.begin(), train.labels.end());
    for (int l : test.labels) {
        if (!train_labels.count(l)) {
            throw ArgumentError("linear_probe: category \"" + test.label_names[l] +
                                "\" missing from train split");
        }
    }

    const int d = static_cast<int>(train.feats.cols());
    const int n = train.size();
    const std::vector<int> classes(train_labels.begin(), train_labels.end());
    const int num_classes = static_cast<int>(classes.size());

    constexpr int kEpochs = 200;
    constexpr double kRegularization = 1e-3;  // fixed C-equivalent

    Eigen::MatrixXd weights = Eigen::MatrixXd::Zero(num_classes, d);
    Eigen::VectorXd biases = Eigen::VectorXd::Zero(num_classes);

    auto rng = make_rng(derive_seed(seed, {0x9709}));
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;

    int64_t step = 0;
    for (int epoch = 0; epoch < kEpochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (int idx : order) {
            ++step;
            const double lr = 1.0 / (kRegularization * static_cast<double>(step));
            const Eigen::VectorXd x = train.feats.row(idx).transpose();
            for (int ci = 0; ci < num_classes; ++ci) {
                const double y = train.labels[idx] == classes[ci] ? 1.0 : -1.0;
                const double margin = y * (weights.row(ci).dot(x) + biases[ci]);
                weights.row(ci) *= (1.0 - lr * kRegularization);
                if (margin < 1.0) {
                    weights.row(ci) += lr * y * x.transpose();
                    biases[ci] += lr * y;
                }
            }
        }
    }

    std::map<int, std::pair<int, int>> per_category;  // label -> (correct, total)
    for (int i = 0; i < test.size(); ++i) {
        const Eigen::VectorXd scores = weights * test.feats.row(i).transpose() + biases;
        int best = 0;
        scores.maxCoeff(&best);
        auto& acc = per_category[test.labels[i]];
        if (classes[best] == test.labels[i]) acc.first += 1;
        acc.second += 1;
    }
    double macro = 0.0;
    for (const auto& [label, acc] : per_category) {
        macro += static_cast<double>(acc.first) / acc.second;
    }
    return 100.0 * macro / static_cast<double>(per_category.size());
}

namespace {

struct KmeansRun {
    std::vector<int> assign;
    double inertia = std::numeric_limits<double>::infinity();
};

KmeansRun kmeans_once(const Eigen::MatrixXd& x, int k, std::mt19937_64& rng) {
    const int n = static_cast<int>(x.rows());
    const int d = static_cast<int>(x.cols());
    Eigen::MatrixXd centroids(k, d);

    // k-means++ seeding.
    std::uniform_int_distribution<int> first(0, n - 1);
    centroids.row(0) = x.row(first(rng));
    std::vector<double> d2(n);
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (int j = 0; j < c; ++j) {
                best = std::min(best, (x.row(i) - centroids.row(j)).squaredNorm());
            }
            d2[i] = best;
            total += best;
        }
        if (total <= 0.0) {
            centroids.row(c) = x.row(first(rng));
            continue;
        }
        double u = std::uniform_real_distribution<double>(0.0, total)(rng);
        int pick = n - 1;
        for (int i = 0; i < n; ++i) {
            u -= d2[i];
            if (u <= 0.0) {
                pick = i;
                break;
            }
        }
        centroids.row(c) = x.row(pick);
    }

    KmeansRun run;
    run.assign.assign(n, -1);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int j = 0; j < k; ++j) {
                double dist = (x.row(i) - centroids.row(j)).squaredNorm();
                if (dist < best_d) {  // ties keep the lower centroid index
                    best_d = dist;
                    best = j;
                }
            }
            if (run.assign[i] != best) {
                run.assign[i] = best;
                changed = true;
            }
        }

        std::vector<int> counts(k, 0);
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, d);
        for (int i = 0; i < n; ++i) {
            counts[run.assign[i]] += 1;
            sums.row(run.assign[i]) += x.row(i);
        }
        for (int j = 0; j < k; ++j) {
            if (counts[j] > 0) {
                centroids.row(j) = sums.row(j) / counts[j];
            } else {
                // Reseed an empty cluster from the farthest point.
                int far = 0;
                double far_d = -1.0;
                for (int i = 0; i < n; ++i) {
                    double dist = (x.row(i) - centroids.row(run.assign[i])).squaredNorm();
                    if (dist > far_d) {
                        far_d = dist;
                        far = i;
                    }
                }
                centroids.row(j) = x.row(far);
                changed = true;
            }
        }
        if (!changed) break;
    }

    run.inertia = 0.0;
    for (int i = 0; i < n; ++i) {
        run.inertia += (x.row(i) - centroids.row(run.assign[i])).squaredNorm();
    }
    return run;
}

double nmi_arithmetic(const std::vector<int>& a, const std::vector<int>& b) {
    const int n = static_cast<int>(a.size());
    std::map<int, int> ca, cb;
    std::map<std::pair<int, int>, int> joint;
    for (int i = 0; i < n; ++i) {
        ca[a[i]] += 1;
        cb[b[i]] += 1;
        joint[{a[i], b[i]}] += 1;
    }
    auto entropy = [n](const std::map<int, int>& counts) {
        double h = 0.0;
        for (const auto& [key, c] : counts) {
            const double p = static_cast<double>(c) / n;
            h -= p * std::log(p);
        }
        return h;
    };
    const double ha = entropy(ca), hb = entropy(cb);
    double mi = 0.0;
    for (const auto& [key, c] : joint) {
        const double pij = static_cast<double>(c) / n;
        const double pi = static_cast<double>(ca[key.first]) / n;
        const double pj = static_cast<double>(cb[key.second]) / n;
        mi += pij * std::log(pij / (pi * pj));
    }
    const double denom = 0.5 * (ha + hb);
    if (denom <= 0.0) return (ha == 0.0 && hb == 0.0) ? 1.0 : 0.0;
    return std::clamp(mi / denom, 0.0, 1.0);
}

}  // namespace

double kmeans_nmi(const FeatureTable& test, int k, int restarts, uint64_t seed) {
    test.validate();
    const int n = test.size();
    if (k < 1 || k > n) throw ArgumentError("kmeans_nmi: k out of range");
    if (restarts < 1) throw ArgumentError("kmeans_nmi: restarts must be >= 1");

    KmeansRun best;
    for (int r = 0; r < restarts; ++r) {
        auto rng = make_rng(derive_seed(seed, {0x3A15, static_cast<uint64_t>(r)}));
        KmeansRun run = kmeans_once(test.feats, k, rng);
        if (run.inertia < best.inertia) best = std::move(run);
    }
    return nmi_arithmetic(best.assign, test.labels);
}

RotationSetting parse_rotation_setting(const std::string& text) {
    if (text == "nr-nr" || text == "NrNr") return RotationSetting::NrNr;
    if (text == "nr-rr" || text == "NrRr") return RotationSetting::NrRr;
    if (text == "rr-rr" || text == "RrRr") return RotationSetting::RrRr;
    throw ConfigError("unknown rotation setting \"" + text + "\" (nr-nr, nr-rr, rr-rr)");
}

bool test_time_rotation(RotationSetting s) {
    return s == RotationSetting::NrRr || s == RotationSetting::RrRr;
}

FeatureTable rotation_harness(const std::vector<OrientedPointSet>& dataset,
                              const std::vector<std::string>& label_names,
                              RiptModel<double>& model, RotationSetting setting, uint64_t seed) {
    const int n = static_cast<int>(dataset.size());
    if (n < 1) throw ArgumentError("rotation_harness: empty dataset");
    FeatureTable table;
    table.split = "test";
    table.label_names = label_names;
    table.labels.resize(n);
    table.feats.resize(n, model.tr.latent_width);
    const bool rotate = test_time_rotation(setting);

#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
        // Rotation and forward-pass streams are independent so the token
        // sampling is identical across rotation regimes at equal seeds.
        auto rot_rng = make_rng(derive_seed(seed, {0x40A7, static_cast<uint64_t>(i)}));
        auto fwd_rng = make_rng(derive_seed(seed, {0xF06D, static_cast<uint64_t>(i)}));
        OrientedPointSet ps = normalize_pose(dataset[i]);
        if (rotate) ps = apply_rotation(ps, random_rotation(rot_rng));
        const Eigen::VectorXd latent = ript_forward(ps, model, /*train=*/false, fwd_rng);
        table.feats.row(i) = latent.transpose();
        table.labels[i] = dataset[i].label;
    }
    return table;
}

}  // namespace ript::eval
