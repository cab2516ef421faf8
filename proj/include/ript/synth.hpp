#pragma once

#include <string>
#include <vector>

#include "ript/geometry.hpp"

// Desk-scale synthetic dataset generator: analytic surfaces sampled with
// exact normals and per-class shape-parameter jitter.
namespace ript::synth {

const std::vector<std::string>& class_names();  // sphere, box, cylinder, cone, torus, plane-cluster

bool is_known_class(const std::string& name);

// One sample in canonical pose (no pose normalization applied here).
OrientedPointSet make_shape(const std::string& class_name, int n_points, std::mt19937_64& rng);

// Writes per-sample XYZN files plus a manifest ("file<TAB>label" lines)
// under out_dir. Returns the manifest path.
std::string write_dataset(const std::vector<std::string>& classes, int per_class, int n_points,
                          uint64_t seed, const std::string& out_dir,
                          const std::string& manifest_name = "manifest.tsv");

}  // namespace ript::synth
