#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <random>

#include "ript/geometry.hpp"
#include "support/test_util.hpp"

using namespace ript;

namespace {

OrientedPointSet random_point_set(int n, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    OrientedPointSet ps;
    for (int i = 0; i < n; ++i) {
        ps.points.emplace_back(uni(rng), uni(rng), uni(rng));
        Vec3 o(gauss(rng), gauss(rng), gauss(rng));
        ps.orientations.push_back(o.normalized());
    }
    return ps;
}

}  // namespace

TEST_CASE("load_point_set parses XYZN and normalizes normals") {
    test::TempDir dir("xyzn");
    test::write_file(dir.file("one.xyzn"), "0 0 0 0 0 2\n");
    OrientedPointSet ps = load_point_set(dir.file("one.xyzn"), PointSetFormat::XyznText);
    REQUIRE(ps.size() == 1);
    CHECK(ps.points[0].isApprox(Vec3(0, 0, 0)));
    CHECK(ps.orientations[0].isApprox(Vec3(0, 0, 1)));
}

TEST_CASE("load_point_set reports the offending line") {
    test::TempDir dir("xyzn_bad");
    test::write_file(dir.file("bad.xyzn"), "0 0\n");
    CHECK_THROWS_WITH_AS(load_point_set(dir.file("bad.xyzn"), PointSetFormat::XyznText),
                         doctest::Contains(":1"), FormatError);
}

TEST_CASE("load_point_set samples OFF meshes with face normals") {
    test::TempDir dir("off");
    test::write_file(dir.file("square.off"),
                     "OFF\n4 2 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n3 0 1 2\n3 0 2 3\n");
    OrientedPointSet ps =
        load_point_set(dir.file("square.off"), PointSetFormat::OffMesh, 1000, 42);
    REQUIRE(ps.size() == 1000);
    for (const Vec3& o : ps.orientations) {
        CHECK(std::abs(std::abs(o.z()) - 1.0) < 1e-12);
    }
    for (const Vec3& p : ps.points) {
        CHECK(p.x() >= -1e-12);
        CHECK(p.x() <= 1.0 + 1e-12);
        CHECK(std::abs(p.z()) < 1e-12);
    }
    // Same seed, same samples.
    OrientedPointSet again =
        load_point_set(dir.file("square.off"), PointSetFormat::OffMesh, 1000, 42);
    CHECK(again.points[17] == ps.points[17]);
}

TEST_CASE("load_point_set rejects zero-area meshes") {
    test::TempDir dir("off_deg");
    test::write_file(dir.file("flat.off"), "OFF\n3 1 0\n0 0 0\n0 0 0\n0 0 0\n3 0 1 2\n");
    CHECK_THROWS_AS(load_point_set(dir.file("flat.off"), PointSetFormat::OffMesh, 10, 0),
                    GeometryError);
}

TEST_CASE("estimate_normals on a plane") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    std::vector<Vec3> pts;
    for (int i = 0; i < 20; ++i) pts.emplace_back(uni(rng), uni(rng), 0.0);
    auto normals = estimate_normals(pts, 16);
    for (const Vec3& n : normals) {
        CHECK(std::abs(std::abs(n.z()) - 1.0) < 1e-6);
        CHECK(n.z() > 0.0);  // in-plane ties resolve toward +z
    }
}

TEST_CASE("estimate_normals approximates sphere normals") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<Vec3> pts;
    for (int i = 0; i < 500; ++i) {
        Vec3 v(gauss(rng), gauss(rng), gauss(rng));
        pts.push_back(v.normalized());
    }
    auto normals = estimate_normals(pts, 16);
    double mean_abs_dot = 0.0;
    for (size_t i = 0; i < pts.size(); ++i) {
        mean_abs_dot += std::abs(normals[i].dot(pts[i]));  // radial direction = position
    }
    mean_abs_dot /= static_cast<double>(pts.size());
    CHECK(mean_abs_dot > 0.95);
}

TEST_CASE("estimate_normals requires more points than k") {
    std::vector<Vec3> pts(10, Vec3(0, 0, 0));
    for (int i = 0; i < 10; ++i) pts[i] = Vec3(i, 0, 0);
    CHECK_THROWS_AS(estimate_normals(pts, 16), ArgumentError);
}

TEST_CASE("estimate_normals is rotation-equivariant up to sign") {
    OrientedPointSet ps = random_point_set(60, 23);
    std::mt19937_64 rng(5);
    const Mat3 R = random_rotation(rng);
    auto base = estimate_normals(ps.points, 8);
    std::vector<Vec3> rotated_pts;
    for (const Vec3& p : ps.points) rotated_pts.push_back(R * p);
    auto rotated = estimate_normals(rotated_pts, 8);
    for (size_t i = 0; i < base.size(); ++i) {
        CHECK(std::abs(std::abs(rotated[i].dot(R * base[i])) - 1.0) < 1e-9);
    }
}

TEST_CASE("normalize_pose centers and scales") {
    OrientedPointSet ps;
    ps.points = {Vec3(2, 0, 0), Vec3(4, 0, 0)};
    ps.orientations = {Vec3(0, 0, 1), Vec3(0, 0, 1)};
    OrientedPointSet out = normalize_pose(ps);
    CHECK(out.points[0].isApprox(Vec3(-1, 0, 0)));
    CHECK(out.points[1].isApprox(Vec3(1, 0, 0)));

    OrientedPointSet twice = normalize_pose(out);
    for (int i = 0; i < 2; ++i) {
        CHECK((twice.points[i] - out.points[i]).norm() < 1e-12);
    }
}

TEST_CASE("normalize_pose invariants on random input") {
    OrientedPointSet out = normalize_pose(random_point_set(100, 3));
    Vec3 centroid = Vec3::Zero();
    double max_norm = 0.0;
    for (const Vec3& p : out.points) {
        centroid += p;
        max_norm = std::max(max_norm, p.norm());
    }
    centroid /= 100.0;
    CHECK(centroid.norm() < 1e-9);
    CHECK(std::abs(max_norm - 1.0) < 1e-9);
}

TEST_CASE("normalize_pose rejects coincident points") {
    OrientedPointSet ps;
    for (int i = 0; i < 5; ++i) {
        ps.points.emplace_back(1, 2, 3);
        ps.orientations.emplace_back(0, 0, 1);
    }
    CHECK_THROWS_AS(normalize_pose(ps), GeometryError);
}

TEST_CASE("random_rotation produces proper rotations") {
    std::mt19937_64 rng(99);
    for (int i = 0; i < 50; ++i) {
        const Mat3 R = random_rotation(rng);
        CHECK((R.transpose() * R - Mat3::Identity()).norm() < 1e-9);
        CHECK(std::abs(R.determinant() - 1.0) < 1e-9);
    }
}

TEST_CASE("random_rotation is Haar-uniform in the Monte Carlo sense") {
    std::mt19937_64 rng(12345);
    Vec3 mean = Vec3::Zero();
    const int trials = 10000;
    for (int i = 0; i < trials; ++i) mean += random_rotation(rng) * Vec3(1, 0, 0);
    mean /= static_cast<double>(trials);
    CHECK(mean.norm() < 0.05);
}

TEST_CASE("random_rotation is deterministic per seed") {
    std::mt19937_64 a(7), b(7);
    CHECK(random_rotation(a) == random_rotation(b));
}

TEST_CASE("apply_rotation identity and 90 degrees about z") {
    OrientedPointSet ps;
    ps.points = {Vec3(1, 0, 0)};
    ps.orientations = {Vec3(0, 0, 1)};
    CHECK(apply_rotation(ps, Mat3::Identity()).points[0] == ps.points[0]);

    Mat3 rz;
    rz << 0, -1, 0, 1, 0, 0, 0, 0, 1;
    OrientedPointSet out = apply_rotation(ps, rz);
    CHECK((out.points[0] - Vec3(0, 1, 0)).norm() < 1e-15);
    CHECK((out.orientations[0] - Vec3(0, 0, 1)).norm() < 1e-15);
}

TEST_CASE("apply_rotation composes") {
    OrientedPointSet ps = random_point_set(30, 1);
    std::mt19937_64 rng(2);
    const Mat3 r1 = random_rotation(rng), r2 = random_rotation(rng);
    OrientedPointSet chained = apply_rotation(apply_rotation(ps, r1), r2);
    OrientedPointSet combined = apply_rotation(ps, Mat3(r2 * r1));
    for (int i = 0; i < ps.size(); ++i) {
        CHECK((chained.points[i] - combined.points[i]).norm() < 1e-12);
        CHECK((chained.orientations[i] - combined.orientations[i]).norm() < 1e-12);
    }
}

TEST_CASE("fps picks the diagonal corner of the unit square") {
    std::vector<Vec3> corners = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(1, 1, 0)};
    auto picked = fps(corners, 2, 0);
    REQUIRE(picked.size() == 2);
    CHECK(picked[0] == 0);
    CHECK(picked[1] == 3);
}

TEST_CASE("fps exhausts to a permutation") {
    OrientedPointSet ps = random_point_set(40, 77);
    auto picked = fps(ps.points, 40, 5);
    std::vector<int> sorted = picked;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 40; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("fps rejects oversampling") {
    std::vector<Vec3> pts = {Vec3(0, 0, 0)};
    CHECK_THROWS_AS(fps(pts, 2, 0), ArgumentError);
}

TEST_CASE("fps indices are rotation-invariant") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 100; ++trial) {
        OrientedPointSet ps = random_point_set(64, 1000 + trial);
        const Mat3 R = random_rotation(rng);
        OrientedPointSet rotated = apply_rotation(ps, R);
        CHECK(fps(ps.points, 16, 0) == fps(rotated.points, 16, 0));
    }
}

TEST_CASE("knn orders by distance with index ties") {
    std::vector<Vec3> pts = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0)};
    CHECK(knn(Vec3(0, 0, 0), pts, 2) == std::vector<int>{0, 1});

    std::vector<Vec3> tie = {Vec3(1, 0, 0), Vec3(-1, 0, 0)};
    CHECK(knn(Vec3(0, 0, 0), tie, 2) == std::vector<int>{0, 1});
    CHECK_THROWS_AS(knn(Vec3(0, 0, 0), tie, 3), ArgumentError);
}

TEST_CASE("knn agrees with a brute-force sort oracle") {
    OrientedPointSet ps = random_point_set(200, 9);
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    for (int q = 0; q < 50; ++q) {
        const Vec3 query(uni(rng), uni(rng), uni(rng));
        std::vector<std::pair<double, int>> order;
        for (int i = 0; i < 200; ++i) order.emplace_back((ps.points[i] - query).norm(), i);
        std::sort(order.begin(), order.end());
        std::vector<int> expected;
        for (int i = 0; i < 12; ++i) expected.push_back(order[i].second);
        CHECK(knn(query, ps.points, 12) == expected);
    }
}

TEST_CASE("knn indices are rotation-invariant") {
    std::mt19937_64 rng(55);
    for (int trial = 0; trial < 100; ++trial) {
        OrientedPointSet ps = random_point_set(50, 2000 + trial);
        const Mat3 R = random_rotation(rng);
        OrientedPointSet rotated = apply_rotation(ps, R);
        CHECK(knn(ps.points[3], ps.points, 10) == knn(rotated.points[3], rotated.points, 10));
    }
}

TEST_CASE("manifest loader resolves paths and labels") {
    test::TempDir dir("manifest");
    test::write_file(dir.file("a.xyzn"), "0 0 0 0 0 1\n");
    test::write_file(dir.file("manifest.tsv"), "a.xyzn\tsphere\n");
    auto entries = load_manifest(dir.file("manifest.tsv"));
    REQUIRE(entries.size() == 1);
    CHECK(entries[0].label == "sphere");
    CHECK(entries[0].path.find("a.xyzn") != std::string::npos);

    test::write_file(dir.file("bad.tsv"), "missing-tab\n");
    CHECK_THROWS_AS(load_manifest(dir.file("bad.tsv")), FormatError);
}
