#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <numeric>
#include <random>

#include "ript/evalmetrics.hpp"
#include "ript/synth.hpp"
#include "support/test_util.hpp"

using namespace ript;
using eval::FeatureTable;

namespace {

FeatureTable make_table(const std::vector<Eigen::VectorXd>& rows, const std::vector<int>& labels,
                        int num_labels, const std::string& split = "test") {
    FeatureTable t;
    t.split = split;
    t.labels = labels;
    for (int i = 0; i < num_labels; ++i) t.label_names.push_back("c" + std::to_string(i));
    t.feats.resize(static_cast<int>(rows.size()), rows[0].size());
    for (size_t i = 0; i < rows.size(); ++i) {
        t.feats.row(static_cast<int>(i)) = rows[i].normalized().transpose();
    }
    return t;
}

Eigen::VectorXd unit_vec(int d, int axis) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(d);
    v[axis] = 1.0;
    return v;
}

std::vector<Eigen::VectorXd> random_unit_rows(int n, int d, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<Eigen::VectorXd> rows;
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd v(d);
        for (int j = 0; j < d; ++j) v[j] = gauss(rng);
        rows.push_back(v.normalized());
    }
    return rows;
}

// Independent reference: rank by (distance, index), average precision per
// query, macro-average per category then across categories.
double oracle_macro_map(const Eigen::MatrixXd& feats, const std::vector<int>& labels) {
    const int n = static_cast<int>(feats.rows());
    std::map<int, std::vector<double>> per_category;
    for (int q = 0; q < n; ++q) {
        int relevant = 0;
        for (int j = 0; j < n; ++j) {
            if (j != q && labels[j] == labels[q]) ++relevant;
        }
        if (relevant == 0) continue;
        std::vector<int> order;
        for (int j = 0; j < n; ++j) {
            if (j != q) order.push_back(j);
        }
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            const double da = (feats.row(a) - feats.row(q)).norm();
            const double db = (feats.row(b) - feats.row(q)).norm();
            if (da != db) return da < db;
            return a < b;
        });
        double ap = 0.0;
        int hits = 0;
        for (size_t rank = 0; rank < order.size(); ++rank) {
            if (labels[order[rank]] == labels[q]) {
                ++hits;
                ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
            }
        }
        per_category[labels[q]].push_back(ap / relevant);
    }
    double macro = 0.0;
    for (const auto& [label, aps] : per_category) {
        macro += std::accumulate(aps.begin(), aps.end(), 0.0) / aps.size();
    }
    return 100.0 * macro / per_category.size();
}

}  // namespace

TEST_CASE("macro_map is 100 for perfectly separated clusters") {
    std::vector<Eigen::VectorXd> rows;
    std::vector<int> labels;
    for (int i = 0; i < 5; ++i) {
        rows.push_back(unit_vec(8, 0));
        labels.push_back(0);
        rows.push_back(unit_vec(8, 3));
        labels.push_back(1);
    }
    CHECK(eval::macro_map(make_table(rows, labels, 2)).percent == doctest::Approx(100.0));
}

TEST_CASE("macro_map matches the exhaustive oracle on small instances") {
    std::mt19937_64 seed_rng(1);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 4 + static_cast<int>(seed_rng() % 3);  // 4..6 items
        auto rows = random_unit_rows(n, 6, 100 + trial);
        // Two categories, each with at least two members.
        std::vector<int> labels(n);
        for (int i = 0; i < n; ++i) labels[i] = i % 2;
        FeatureTable t = make_table(rows, labels, 2);
        CHECK(eval::macro_map(t).percent ==
              doctest::Approx(oracle_macro_map(t.feats, labels)).epsilon(1e-9));
    }
}

TEST_CASE("macro_map under total ties equals the label-prior baseline") {
    std::vector<Eigen::VectorXd> rows(6, unit_vec(4, 1));
    std::vector<int> labels = {0, 1, 0, 1, 0, 1};
    FeatureTable t = make_table(rows, labels, 2);
    CHECK(eval::macro_map(t).percent ==
          doctest::Approx(oracle_macro_map(t.feats, labels)).epsilon(1e-12));
}

TEST_CASE("macro_map is invariant to global isometries of feature space") {
    auto rows = random_unit_rows(12, 8, 7);
    std::vector<int> labels;
    for (int i = 0; i < 12; ++i) labels.push_back(i % 3);
    FeatureTable t = make_table(rows, labels, 3);
    const double base = eval::macro_map(t).percent;

    std::mt19937_64 rng(9);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::MatrixXd m(8, 8);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) m(r, c) = gauss(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
    Eigen::MatrixXd q = qr.householderQ();

    FeatureTable rotated = t;
    rotated.feats = t.feats * q.transpose();
    CHECK(eval::macro_map(rotated).percent == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("macro_map excludes single-sample categories with a warning") {
    auto rows = random_unit_rows(5, 4, 11);
    std::vector<int> labels = {0, 0, 1, 1, 2};  // category 2 has one sample
    FeatureTable t = make_table(rows, labels, 3);
    const auto result = eval::macro_map(t);
    REQUIRE(result.excluded_labels.size() == 1);
    CHECK(result.excluded_labels[0] == 2);

    std::vector<int> bad = {0, 0, 0, 1, 2};  // only one usable category
    CHECK_THROWS_AS(eval::macro_map(make_table(rows, bad, 3)), ArgumentError);
}

TEST_CASE("linear_probe separates a linearly separable toy set") {
    std::vector<Eigen::VectorXd> train_rows, test_rows;
    std::vector<int> train_labels, test_labels;
    std::mt19937_64 rng(13);
    std::normal_distribution<double> gauss(0.0, 0.05);
    for (int i = 0; i < 20; ++i) {
        Eigen::VectorXd a(3);
        a << 1.0, gauss(rng), 0.2;
        Eigen::VectorXd b(3);
        b << -1.0, gauss(rng), 0.2;
        (i < 15 ? train_rows : test_rows).push_back(a);
        (i < 15 ? train_labels : test_labels).push_back(0);
        (i < 15 ? train_rows : test_rows).push_back(b);
        (i < 15 ? train_labels : test_labels).push_back(1);
    }
    FeatureTable train = make_table(train_rows, train_labels, 2, "train");
    FeatureTable test = make_table(test_rows, test_labels, 2, "test");
    CHECK(eval::linear_probe(train, test, 3) == doctest::Approx(100.0));
}

TEST_CASE("linear_probe on shuffled labels is near chance") {
    auto rows = random_unit_rows(80, 6, 17);
    std::mt19937_64 rng(19);
    std::vector<int> labels(80);
    for (int i = 0; i < 80; ++i) labels[i] = i % 2;
    std::shuffle(labels.begin(), labels.end(), rng);
    FeatureTable train = make_table({rows.begin(), rows.begin() + 40},
                                    {labels.begin(), labels.begin() + 40}, 2, "train");
    FeatureTable test = make_table({rows.begin() + 40, rows.end()},
                                   {labels.begin() + 40, labels.end()}, 2, "test");
    const double acc = eval::linear_probe(train, test, 5);
    CHECK(acc > 30.0);
    CHECK(acc < 70.0);
}

TEST_CASE("linear_probe macro accuracy quantizes with one test sample per class") {
    auto rows = random_unit_rows(11, 5, 23);
    std::vector<int> train_labels = {0, 0, 0, 1, 1, 1, 2, 2};
    std::vector<int> test_labels = {0, 1, 2};
    FeatureTable train =
        make_table({rows.begin(), rows.begin() + 8}, train_labels, 3, "train");
    FeatureTable test = make_table({rows.begin() + 8, rows.end()}, test_labels, 3, "test");
    const double acc = eval::linear_probe(train, test, 7);
    const double step = 100.0 / 3.0;
    CHECK(std::abs(acc / step - std::round(acc / step)) < 1e-9);
}

TEST_CASE("linear_probe requires every test category in train") {
    auto rows = random_unit_rows(6, 4, 29);
    FeatureTable train = make_table({rows.begin(), rows.begin() + 3}, {0, 0, 0}, 2, "train");
    FeatureTable test = make_table({rows.begin() + 3, rows.end()}, {1, 1, 1}, 2, "test");
    CHECK_THROWS_AS(eval::linear_probe(train, test, 1), ArgumentError);
}

TEST_CASE("kmeans_nmi is 1 for label-aligned clusters and 0 for one blob") {
    std::vector<Eigen::VectorXd> rows;
    std::vector<int> labels;
    std::mt19937_64 rng(31);
    std::normal_distribution<double> jitter(0.0, 0.01);
    for (int i = 0; i < 8; ++i) {
        Eigen::VectorXd v = unit_vec(6, i % 2 == 0 ? 0 : 3);
        v[1] += jitter(rng);
        rows.push_back(v);
        labels.push_back(i % 2);
    }
    CHECK(eval::kmeans_nmi(make_table(rows, labels, 2), 2) == doctest::Approx(1.0));

    std::vector<Eigen::VectorXd> same(6, unit_vec(4, 2));
    std::vector<int> two_labels = {0, 1, 0, 1, 0, 1};
    CHECK(eval::kmeans_nmi(make_table(same, two_labels, 2), 2) == doctest::Approx(0.0));
}

TEST_CASE("kmeans_nmi matches an exhaustive-assignment oracle on 6 points") {
    auto rows = random_unit_rows(6, 4, 37);
    std::vector<int> labels = {0, 0, 0, 1, 1, 1};
    FeatureTable t = make_table(rows, labels, 2);

    // Enumerate every 2-cluster assignment, keep the best inertia.
    double best_inertia = std::numeric_limits<double>::infinity();
    std::vector<int> best_assign;
    for (int mask = 1; mask < 63; ++mask) {  // both clusters nonempty
        std::vector<int> assign(6);
        Eigen::VectorXd c0 = Eigen::VectorXd::Zero(4), c1 = Eigen::VectorXd::Zero(4);
        int n0 = 0, n1 = 0;
        for (int i = 0; i < 6; ++i) {
            assign[i] = (mask >> i) & 1;
            if (assign[i]) {
                c1 += t.feats.row(i).transpose();
                ++n1;
            } else {
                c0 += t.feats.row(i).transpose();
                ++n0;
            }
        }
        c0 /= n0;
        c1 /= n1;
        double inertia = 0.0;
        for (int i = 0; i < 6; ++i) {
            const Eigen::VectorXd& c = assign[i] ? c1 : c0;
            inertia += (t.feats.row(i).transpose() - c).squaredNorm();
        }
        if (inertia < best_inertia) {
            best_inertia = inertia;
            best_assign = assign;
        }
    }
    // Oracle NMI with arithmetic-mean normalization.
    auto entropy = [](const std::vector<int>& v, int k) {
        std::vector<int> counts(k, 0);
        for (int x : v) counts[x] += 1;
        double h = 0.0;
        for (int c : counts) {
            if (c > 0) {
                const double p = static_cast<double>(c) / v.size();
                h -= p * std::log(p);
            }
        }
        return h;
    };
    double mi = 0.0;
    {
        std::map<std::pair<int, int>, int> joint;
        std::vector<int> ca(2, 0), cb(2, 0);
        for (int i = 0; i < 6; ++i) {
            joint[{best_assign[i], labels[i]}] += 1;
            ca[best_assign[i]] += 1;
            cb[labels[i]] += 1;
        }
        for (const auto& [key, c] : joint) {
            const double pij = c / 6.0;
            mi += pij * std::log(pij / ((ca[key.first] / 6.0) * (cb[key.second] / 6.0)));
        }
    }
    const double oracle = mi / (0.5 * (entropy(best_assign, 2) + entropy(labels, 2)));
    CHECK(eval::kmeans_nmi(t, 2, 20, 3) == doctest::Approx(oracle).epsilon(1e-9));
}

TEST_CASE("rotation harness is deterministic and respects the regime") {
    TokenizerConfig tok;
    tok.token_count = 8;
    tok.grid = 3;
    tok.feature_width = 16;
    TransformerConfig tr;
    tr.num_blocks = 1;
    tr.neighbor_counts = {3};
    tr.width = 16;
    tr.latent_width = 8;
    tr.projector_hidden = {12, 10};
    tr.pseudo_label_dim = 8;
    RiptModel<double> model = init_model<double>(tok, tr, 3);

    std::vector<OrientedPointSet> dataset;
    std::vector<std::string> names = {"sphere", "box"};
    for (int i = 0; i < 3; ++i) {
        std::mt19937_64 r1(50 + i), r2(70 + i);
        OrientedPointSet a = synth::make_shape("sphere", 48, r1);
        a.label = 0;
        OrientedPointSet b = synth::make_shape("box", 48, r2);
        b.label = 1;
        dataset.push_back(a);
        dataset.push_back(b);
    }

    auto a = eval::rotation_harness(dataset, names, model, eval::RotationSetting::RrRr, 21);
    auto b = eval::rotation_harness(dataset, names, model, eval::RotationSetting::RrRr, 21);
    CHECK((a.feats - b.feats).cwiseAbs().maxCoeff() == 0.0);

    // The model is architecturally rotation-invariant, so metrics agree
    // between the unrotated and rotated regimes.
    auto nr = eval::rotation_harness(dataset, names, model, eval::RotationSetting::NrNr, 23);
    auto rr = eval::rotation_harness(dataset, names, model, eval::RotationSetting::NrRr, 23);
    const double m_nr = eval::macro_map(nr).percent;
    const double m_rr = eval::macro_map(rr).percent;
    CHECK(std::abs(m_nr - m_rr) < 2.0);
    for (int i = 0; i < nr.size(); ++i) {
        CHECK(nr.feats.row(i).dot(rr.feats.row(i)) > 1.0 - 1e-6);
    }
}
