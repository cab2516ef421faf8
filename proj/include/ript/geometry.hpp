#pragma once

#include <Eigen/Core>
#include <random>
#include <string>
#include <vector>

#include "ript/common.hpp"

namespace ript {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// N 3D points, each paired with a unit orientation vector. The optional
// label is carried for evaluation only and never influences geometry.
struct OrientedPointSet {
    std::vector<Vec3> points;
    std::vector<Vec3> orientations;
    int label = -1;

    int size() const { return static_cast<int>(points.size()); }
};

// Throws if the point/orientation counts disagree, the set is empty, or any
// orientation deviates from unit length by more than 1e-6.
void validate_point_set(const OrientedPointSet& ps);

enum class PointSetFormat { XyznText, OffMesh };

// XYZN: one point per line "px py pz nx ny nz"; normals are re-normalized.
// OFF: `off_sample_count` points sampled area-proportionally from the
// triangulated faces (seeded); orientation = face normal of the source
// triangle.
OrientedPointSet load_point_set(const std::string& path, PointSetFormat format,
                                int off_sample_count = 1024, uint64_t off_seed = 0);

// Per-point PCA normal over the point and its k nearest neighbors, smallest
// eigenvector, sign fixed by the majority of difference vectors
// (neighbor - point); exact ties fall back toward the +z-most component.
std::vector<Vec3> estimate_normals(const std::vector<Vec3>& points, int k = 16);

// Translates the centroid to the origin and scales so max point norm is 1.
// Orientations are untouched.
OrientedPointSet normalize_pose(const OrientedPointSet& ps);

// Haar-uniform SO(3) sample via the uniform-quaternion construction.
Mat3 random_rotation(std::mt19937_64& rng);

// Points and orientations both mapped through x -> R*x; label preserved.
OrientedPointSet apply_rotation(const OrientedPointSet& ps, const Mat3& R);

// Greedy max-min farthest point sampling starting at `start`; ties broken by
// smallest index. Deterministic given (points, count, start).
std::vector<int> fps(const std::vector<Vec3>& points, int count, int start);

// Indices of the k nearest points to `query`, sorted ascending by distance
// with ties broken by smallest index. A stored point equal to the query is
// included.
std::vector<int> knn(const Vec3& query, const std::vector<Vec3>& points, int k);

// Manifest: one line per sample "relative/path<TAB>label-string".
struct ManifestEntry {
    std::string path;   // resolved against the manifest's directory
    std::string label;
};
std::vector<ManifestEntry> load_manifest(const std::string& manifest_path);

}  // namespace ript
