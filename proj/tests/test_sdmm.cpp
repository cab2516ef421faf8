#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "ript/sdmm.hpp"
#include "ript/synth.hpp"
#include "support/test_util.hpp"

using namespace ript;
using namespace ript::sdmm;

namespace {

OrientedPointSet shape_sample(const std::string& cls, int n, uint64_t seed, int label) {
    std::mt19937_64 rng(seed);
    OrientedPointSet ps = normalize_pose(synth::make_shape(cls, n, rng));
    ps.label = label;
    return ps;
}

// Tiny but complete training setup shared by the trainer tests.
struct SmokeSetup {
    TokenizerConfig tok;
    TransformerConfig tr;
    SdmmConfig cfg;
    std::vector<OrientedPointSet> dataset;

    SmokeSetup() {
        tok.token_count = 16;
        tok.grid = 3;
        tok.feature_width = 32;
        tr.num_blocks = 2;
        tr.neighbor_counts = {4, 4};
        tr.width = 32;
        tr.latent_width = 16;
        tr.projector_hidden = {24, 16};
        tr.pseudo_label_dim = 32;
        cfg.batch_size = 4;
        cfg.epochs = 10;
        cfg.warmup_epochs = 2;
        cfg.sample_points = 128;
        cfg.lr_peak = 2e-3;
        cfg.lr_init = 4e-4;
        cfg.lr_final = 4e-4;
        cfg.seed = 314;
        for (int i = 0; i < 32; ++i) {
            dataset.push_back(shape_sample("sphere", 128, 100 + i, 0));
            dataset.push_back(shape_sample("box", 128, 200 + i, 1));
        }
    }
};

}  // namespace

TEST_CASE("every synthetic class yields a valid oriented point set") {
    for (const std::string& cls : synth::class_names()) {
        std::mt19937_64 rng(7);
        OrientedPointSet ps = synth::make_shape(cls, 96, rng);
        REQUIRE(ps.size() == 96);
        validate_point_set(ps);
    }
    std::mt19937_64 rng(7);
    CHECK_THROWS_AS(synth::make_shape("pyramid", 8, rng), ArgumentError);
}

TEST_CASE("crop_view keeps the whole set at ratio 1 and is contiguous") {
    OrientedPointSet a = shape_sample("sphere", 64, 1, 0);
    std::mt19937_64 rng(2);
    OrientedPointSet full = crop_view(a, 1.0, 64, rng);
    REQUIRE(full.size() == 64);
    // Same multiset of coordinates, possibly reordered.
    auto key = [](const Vec3& p) { return std::make_tuple(p.x(), p.y(), p.z()); };
    std::vector<std::tuple<double, double, double>> lhs, rhs;
    for (const Vec3& p : a.points) lhs.push_back(key(p));
    for (const Vec3& p : full.points) rhs.push_back(key(p));
    std::sort(lhs.begin(), lhs.end());
    std::sort(rhs.begin(), rhs.end());
    CHECK(lhs == rhs);

    // kNN crops are contiguous: every kept point is at least as close to the
    // seed as every discarded point.
    for (int trial = 0; trial < 20; ++trial) {
        CropDetail detail;
        std::mt19937_64 r2(100 + trial);
        (void)crop_view_detail(a, 0.5, 32, r2, &detail);
        const Vec3 seed_pt = a.points[detail.seed_index];
        std::vector<char> kept(64, 0);
        double max_kept = 0.0;
        for (int i : detail.crop_indices) {
            kept[i] = 1;
            max_kept = std::max(max_kept, (a.points[i] - seed_pt).norm());
        }
        for (int i = 0; i < 64; ++i) {
            if (!kept[i]) CHECK((a.points[i] - seed_pt).norm() >= max_kept);
        }
    }
}

TEST_CASE("multi_crop produces the contracted view sizes") {
    OrientedPointSet a = shape_sample("sphere", 64, 3, 0);
    std::mt19937_64 rng(4);
    auto views = multi_crop(a, rng);
    CHECK(views[0].size() == 64);
    CHECK(views[1].size() == 64);
    CHECK(views[2].size() == 32);
    CHECK(views[3].size() == 32);
}

TEST_CASE("cut_mix splits by the mixing ratio") {
    OrientedPointSet a, b;
    for (int i = 0; i < 4; ++i) {
        a.points.emplace_back(i, 0, 0);
        a.orientations.emplace_back(0, 0, 1);
        b.points.emplace_back(i, 10, 0);
        b.orientations.emplace_back(0, 1, 0);
    }
    OrientedPointSet m = cut_mix_core(a, b, 0.5, 0);
    REQUIRE(m.size() == 4);
    // Two nearest of reference (0,0,0) within A, then the two farthest of b.
    CHECK(m.points[0].isApprox(Vec3(0, 0, 0)));
    CHECK(m.points[1].isApprox(Vec3(1, 0, 0)));
    CHECK(m.points[2].y() == 10.0);
    CHECK(m.points[3].y() == 10.0);

    OrientedPointSet all_b = cut_mix_core(a, b, 0.0, 0);
    for (const Vec3& p : all_b.points) CHECK(p.y() == 10.0);

    OrientedPointSet all_a = cut_mix_core(a, b, 1.0, 0);
    for (const Vec3& p : all_a.points) CHECK(p.y() == 0.0);
}

TEST_CASE("cut_mix draws rotation, ratio, and reference from the rng") {
    OrientedPointSet a = shape_sample("sphere", 32, 5, 0);
    OrientedPointSet b = shape_sample("box", 32, 6, 1);
    std::mt19937_64 r1(7), r2(7);
    auto [m1, mix1] = cut_mix(a, b, r1);
    auto [m2, mix2] = cut_mix(a, b, r2);
    CHECK(mix1 == mix2);
    CHECK(m1.size() == 32);
    for (int i = 0; i < 32; ++i) CHECK(m1.points[i] == m2.points[i]);
}

TEST_CASE("aniso_scale identity factors leave the view unchanged") {
    OrientedPointSet a = shape_sample("cone", 32, 9, 0);
    std::mt19937_64 rng(10);
    const Mat3 axes = random_rotation(rng);
    OrientedPointSet out = aniso_scale_core(a, axes, Vec3(1, 1, 1));
    for (int i = 0; i < a.size(); ++i) {
        CHECK((out.points[i] - a.points[i]).norm() < 1e-12);
        CHECK((out.orientations[i] - a.orientations[i]).norm() < 1e-12);
    }
}

TEST_CASE("aniso_scale maps plane normals through the inverse transpose") {
    OrientedPointSet plane;
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    for (int i = 0; i < 16; ++i) {
        plane.points.emplace_back(uni(rng), uni(rng), 0.0);
        plane.orientations.emplace_back(0, 0, 1);
    }
    OrientedPointSet out = aniso_scale_core(plane, Mat3::Identity(), Vec3(2, 1, 1));
    for (int i = 0; i < 16; ++i) {
        CHECK(out.points[i].x() == doctest::Approx(2.0 * plane.points[i].x()));
        CHECK((out.orientations[i] - Vec3(0, 0, 1)).norm() < 1e-12);
    }
}

TEST_CASE("aniso_scale factors stay within the sampling range") {
    OrientedPointSet basis;
    basis.points = {Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
    basis.orientations.assign(3, Vec3(0, 0, 1));
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        OrientedPointSet out = aniso_scale(basis, rng);
        Mat3 linear;
        for (int c = 0; c < 3; ++c) linear.col(c) = out.points[c];
        Eigen::JacobiSVD<Mat3> svd(linear);
        CHECK(svd.singularValues().maxCoeff() <= 1.5 + 1e-9);
        CHECK(svd.singularValues().minCoeff() >= 0.67 - 1e-9);
    }
}

TEST_CASE("student_dist applies the 0.4 temperature") {
    Eigen::VectorXd zeros = Eigen::VectorXd::Zero(8);
    Eigen::VectorXd u = student_dist(zeros);
    for (int i = 0; i < 8; ++i) CHECK(u[i] == doctest::Approx(0.125).epsilon(1e-12));

    Eigen::VectorXd two(2);
    two << 1, 0;
    Eigen::VectorXd d = student_dist(two);
    const double expected = std::exp(2.5) / (std::exp(2.5) + 1.0);
    CHECK(d[0] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(d[0] == doctest::Approx(0.9241).epsilon(1e-3));
    CHECK(d.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("teacher_dist centers and sharpens") {
    Eigen::VectorXd logits(3);
    logits << 0.4, -1.2, 2.0;
    Eigen::VectorXd uniform = teacher_dist(logits, logits);
    for (int i = 0; i < 3; ++i) CHECK(uniform[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));

    Eigen::VectorXd two(2);
    two << 1, 0;
    Eigen::VectorXd d = teacher_dist(two, Eigen::VectorXd::Zero(2));
    CHECK(d[0] == doctest::Approx(std::exp(10.0) / (std::exp(10.0) + 1.0)).epsilon(1e-12));

    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        Eigen::VectorXd x(16);
        for (int i = 0; i < 16; ++i) x[i] = uni(rng);
        CHECK(teacher_dist(x, Eigen::VectorXd::Zero(16)).maxCoeff() >=
              student_dist(x).maxCoeff());
    }
}

TEST_CASE("teacher_dist rejects non-finite input") {
    Eigen::VectorXd bad(2);
    bad << 1.0, std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(teacher_dist(bad, Eigen::VectorXd::Zero(2)), NumericError);
    CHECK_THROWS_AS(student_dist(bad), NumericError);
}

TEST_CASE("update_center follows the momentum recurrence") {
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(3);
    Eigen::VectorXd v(3);
    v << 1, -2, 4;
    update_center(mu, {v});
    CHECK((mu - 0.1 * v).norm() < 1e-15);

    // Constant input converges geometrically to that input.
    Eigen::VectorXd c(3);
    c << 0.5, 0.25, -1.0;
    mu.setZero();
    for (int i = 0; i < 400; ++i) update_center(mu, {c});
    CHECK((mu - c).norm() < 1e-15);

    // Convex combination componentwise.
    mu << 0, 1, -1;
    Eigen::VectorXd batch(3);
    batch << 1, 0, -2;
    Eigen::VectorXd before = mu;
    update_center(mu, {batch});
    for (int i = 0; i < 3; ++i) {
        CHECK(mu[i] >= std::min(before[i], batch[i]) - 1e-15);
        CHECK(mu[i] <= std::max(before[i], batch[i]) + 1e-15);
    }
}

TEST_CASE("mix_labels blends distributions") {
    Eigen::VectorXd da(2), db(2);
    da << 1, 0;
    db << 0, 1;
    CHECK((mix_labels(da, db, 1.0) - da).norm() == 0.0);
    Eigen::VectorXd half = mix_labels(da, db, 0.5);
    CHECK(half[0] == 0.5);
    CHECK(half[1] == 0.5);
    CHECK(half.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sample_loss has 6 multi terms plus 1 mix term") {
    const int h = 16;
    Eigen::VectorXd u = Eigen::VectorXd::Constant(h, 1.0 / h);
    const auto breakdown = sample_loss(u, u, u, u, &u, &u, &u, &u);
    CHECK(breakdown.multi_terms.size() == 6);
    REQUIRE(breakdown.mix_term.has_value());
    for (double t : breakdown.multi_terms) CHECK(t >= 0.0);
    CHECK(breakdown.total == doctest::Approx(7.0 * std::log(h)).epsilon(1e-9));

    // One-hot teacher matched by a one-hot student drives Loss_Multi to 0.
    Eigen::VectorXd onehot = Eigen::VectorXd::Zero(h);
    onehot[3] = 1.0;
    const auto matched = sample_loss(onehot, onehot, onehot, onehot, &onehot, &onehot,
                                     nullptr, nullptr);
    CHECK(matched.total == doctest::Approx(0.0).epsilon(1e-12));
    CHECK_FALSE(matched.mix_term.has_value());
    CHECK(matched.multi_terms.size() == 6);
}

TEST_CASE("graph loss route agrees with the reference cross-entropy") {
    std::mt19937_64 rng(14);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    const int h = 12;
    Eigen::VectorXd logits(h), q(h);
    for (int i = 0; i < h; ++i) logits[i] = uni(rng);
    for (int i = 0; i < h; ++i) q[i] = std::abs(uni(rng)) + 0.01;
    q /= q.sum();

    const double reference = cross_entropy(q, student_dist(logits, 0.4));

    ad::Graph<double> g;
    std::vector<double> lv(logits.data(), logits.data() + h);
    std::vector<double> qv(q.data(), q.data() + h);
    auto ds = g.softmax(g.scale(g.constant(1, h, lv), 1.0 / 0.4), 1);
    auto loss = g.scale(g.sum_all(g.mul(g.constant(1, h, qv), g.log(ds, -30.0))), -1.0);
    CHECK(g.values(loss)[0] == doctest::Approx(reference).epsilon(1e-12));
}

TEST_CASE("lr_schedule hits the quoted endpoints") {
    CHECK(std::abs(lr_schedule(0) - 1e-4) < 1e-12);
    CHECK(std::abs(lr_schedule(20) - 5e-4) < 1e-12);
    CHECK(std::abs(lr_schedule(200) - 1e-4) < 1e-12);
    CHECK(lr_schedule(10) == doctest::Approx(3e-4).epsilon(1e-12));  // linear warmup midpoint
    CHECK_THROWS_AS(lr_schedule(-1), ArgumentError);
    CHECK_THROWS_AS(lr_schedule(201), ArgumentError);
}

TEST_CASE("lambda_schedule spans 0.996 to 1") {
    CHECK(std::abs(lambda_schedule(0, 100) - 0.996) < 1e-12);
    CHECK(std::abs(lambda_schedule(100, 100) - 1.0) < 1e-12);
    double prev = 0.0;
    for (int s = 0; s <= 100; ++s) {
        const double l = lambda_schedule(s, 100);
        CHECK(l >= 0.996 - 1e-12);
        CHECK(l <= 1.0 + 1e-12);
        CHECK(l >= prev);
        prev = l;
    }
}

TEST_CASE("ema_update blends every tensor") {
    SmokeSetup s;
    RiptModel<double> teacher = init_model<double>(s.tok, s.tr, 1);
    RiptModel<double> student = init_model<double>(s.tok, s.tr, 2);
    const double t0 = teacher.agg_W.values[0];
    const double s0 = student.agg_W.values[0];

    RiptModel<double> frozen = teacher;
    ema_update(frozen, student, 1.0);
    CHECK(frozen.agg_W.values[0] == t0);

    ema_update(teacher, student, 0.996);
    CHECK(teacher.agg_W.values[0] == doctest::Approx(0.996 * t0 + 0.004 * s0).epsilon(1e-15));
}

TEST_CASE("train_epoch validates the dataset size") {
    SmokeSetup s;
    DistillState st = init_distill(s.tok, s.tr, s.cfg, 2);
    std::vector<OrientedPointSet> tiny(s.dataset.begin(), s.dataset.begin() + 2);
    CHECK_THROWS_AS(train_epoch(tiny, st, s.cfg, 0), ArgumentError);
}

TEST_CASE("a minibatch of E=2 carries 10 views") {
    SmokeSetup s;
    s.cfg.batch_size = 2;
    DistillState st = init_distill(s.tok, s.tr, s.cfg, 4);
    const EpochMetrics m = train_epoch(s.dataset, st, s.cfg, 0);
    CHECK(m.views_per_step == 10);
}

TEST_CASE("teacher follows the EMA arithmetic and never sees gradients") {
    SmokeSetup s;
    std::vector<OrientedPointSet> one_batch(s.dataset.begin(), s.dataset.begin() + 4);
    DistillState st = init_distill(s.tok, s.tr, s.cfg, 1);

    std::vector<double> teacher_before = st.teacher.agg_W.values;
    (void)train_epoch(one_batch, st, s.cfg, 0);

    const double lambda = lambda_schedule(0, st.total_steps);
    for (size_t i = 0; i < teacher_before.size(); ++i) {
        const double expected =
            lambda * teacher_before[i] + (1.0 - lambda) * st.student.agg_W.values[i];
        CHECK(st.teacher.agg_W.values[i] == doctest::Approx(expected).epsilon(1e-14));
    }

    st.teacher.visit_all([](const std::string&, ad::Tensor<double>& t) {
        CHECK_FALSE(t.requires_grad);
        CHECK(t.grad.empty());
    });
}

TEST_CASE("smoke training: loss drops, teacher stays uncollapsed, runs are bit-identical") {
    SmokeSetup s;
    auto run = [&]() {
        DistillState st = init_distill(s.tok, s.tr, s.cfg, (int64_t)s.dataset.size() / s.cfg.batch_size);
        std::vector<double> losses, entropies;
        for (int e = 0; e < s.cfg.epochs; ++e) {
            const EpochMetrics m = train_epoch(s.dataset, st, s.cfg, e);
            losses.push_back(m.loss);
            entropies.push_back(m.teacher_entropy);
        }
        return std::make_pair(losses, entropies);
    };

    auto [losses, entropies] = run();
    CHECK(losses.back() < 0.9 * losses.front());
    const double guard = 0.25 * std::log(static_cast<double>(s.tr.pseudo_label_dim));
    for (double h : entropies) CHECK(h > guard);

    auto [losses2, entropies2] = run();
    CHECK(losses == losses2);  // bitwise determinism under a fixed seed
    CHECK(entropies == entropies2);
}

TEST_CASE("distill state survives a checkpoint round trip") {
    SmokeSetup s;
    DistillState st = init_distill(s.tok, s.tr, s.cfg, 2);
    (void)train_epoch(s.dataset, st, s.cfg, 0);

    test::TempDir dir("ckpt");
    save_distill_state(dir.file("state.ckpt"), st);
    DistillState loaded = load_distill_state(dir.file("state.ckpt"), s.tok, s.tr);

    CHECK(loaded.step == st.step);
    CHECK(loaded.total_steps == st.total_steps);
    CHECK(loaded.epochs_done == st.epochs_done);
    // Values round-trip through f32 storage.
    for (size_t i = 0; i < st.student.agg_W.values.size(); ++i) {
        CHECK(loaded.student.agg_W.values[i] ==
              doctest::Approx(st.student.agg_W.values[i]).epsilon(1e-6));
    }
    CHECK((loaded.center - st.center).cwiseAbs().maxCoeff() < 1e-5);
    CHECK(loaded.opt.at("agg/W").t == st.opt.at("agg/W").t);
}
