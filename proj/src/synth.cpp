#include "ript/synth.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

namespace ript::synth {

namespace {

constexpr double kPi = std::numbers::pi;

using Uni = std::uniform_real_distribution<double>;

Vec3 unit_sphere_dir(std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vec3 v;
    do {
        v = Vec3(gauss(rng), gauss(rng), gauss(rng));
    } while (v.norm() < 1e-9);
    return v.normalized();
}

OrientedPointSet make_sphere(int n, std::mt19937_64& rng) {
    const double radius = Uni(0.6, 1.0)(rng);
    OrientedPointSet ps;
    for (int i = 0; i < n; ++i) {
        const Vec3 dir = unit_sphere_dir(rng);
        ps.points.push_back(radius * dir);
        ps.orientations.push_back(dir);
    }
    return ps;
}

OrientedPointSet make_box(int n, std::mt19937_64& rng) {
    const Vec3 half(Uni(0.4, 1.0)(rng), Uni(0.4, 1.0)(rng), Uni(0.4, 1.0)(rng));
    // Face areas: +-x, +-y, +-z.
    const double areas[3] = {half.y() * half.z(), half.x() * half.z(), half.x() * half.y()};
    const double total = 2.0 * (areas[0] + areas[1] + areas[2]);
    struct Face {
        int axis;
        double sign, area;
    };
    const Face faces[6] = {{0, 1, areas[0]}, {0, -1, areas[0]}, {1, 1, areas[1]},
                           {1, -1, areas[1]}, {2, 1, areas[2]}, {2, -1, areas[2]}};
    OrientedPointSet ps;
    Uni uni(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
        double u = uni(rng) * total;
        const Face* face = &faces[5];
        for (const Face& f : faces) {
            if (u < f.area) {
                face = &f;
                break;
            }
            u -= f.area;
        }
        Vec3 p;
        p[face->axis] = face->sign * half[face->axis];
        const int u1 = (face->axis + 1) % 3, u2 = (face->axis + 2) % 3;
        p[u1] = (2.0 * uni(rng) - 1.0) * half[u1];
        p[u2] = (2.0 * uni(rng) - 1.0) * half[u2];
        Vec3 normal = Vec3::Zero();
        normal[face->axis] = face->sign;
        ps.points.push_back(p);
        ps.orientations.push_back(normal);
    }
    return ps;
}

OrientedPointSet make_cylinder(int n, std::mt19937_64& rng) {
    const double r = Uni(0.3, 0.8)(rng);
    const double h = Uni(0.5, 1.2)(rng);  // half height
    const double lateral = 2.0 * kPi * r * 2.0 * h;
    const double cap = kPi * r * r;
    const double total = lateral + 2.0 * cap;
    OrientedPointSet ps;
    Uni uni(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
        const double u = uni(rng) * total;
        const double theta = uni(rng) * 2.0 * kPi;
        if (u < lateral) {
            const double z = (2.0 * uni(rng) - 1.0) * h;
            ps.points.emplace_back(r * std::cos(theta), r * std::sin(theta), z);
            ps.orientations.emplace_back(std::cos(theta), std::sin(theta), 0.0);
        } else {
            const double sign = u < lateral + cap ? 1.0 : -1.0;
            const double rr = r * std::sqrt(uni(rng));
            ps.points.emplace_back(rr * std::cos(theta), rr * std::sin(theta), sign * h);
            ps.orientations.emplace_back(0.0, 0.0, sign);
        }
    }
    return ps;
}

OrientedPointSet make_cone(int n, std::mt19937_64& rng) {
    const double r = Uni(0.4, 1.0)(rng);
    const double h = Uni(0.8, 1.6)(rng);
    const double slant = std::sqrt(r * r + h * h);
    const double lateral = kPi * r * slant;
    const double base = kPi * r * r;
    const double total = lateral + base;
    OrientedPointSet ps;
    Uni uni(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
        const double u = uni(rng) * total;
        const double theta = uni(rng) * 2.0 * kPi;
        if (u < lateral) {
            const double t = std::sqrt(uni(rng));  // area grows linearly with radius
            ps.points.emplace_back(r * t * std::cos(theta), r * t * std::sin(theta), h * (1.0 - t));
            ps.orientations.push_back(
                Vec3(h * std::cos(theta), h * std::sin(theta), r).normalized());
        } else {
            const double rr = r * std::sqrt(uni(rng));
            ps.points.emplace_back(rr * std::cos(theta), rr * std::sin(theta), 0.0);
            ps.orientations.emplace_back(0.0, 0.0, -1.0);
        }
    }
    return ps;
}

OrientedPointSet make_torus(int n, std::mt19937_64& rng) {
    const double major = Uni(0.6, 0.9)(rng);
    const double minor = Uni(0.15, 0.35)(rng);
    OrientedPointSet ps;
    Uni uni(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
        const double theta = uni(rng) * 2.0 * kPi;
        // Rejection sampling so density is proportional to surface area.
        double phi;
        for (;;) {
            phi = uni(rng) * 2.0 * kPi;
            const double w = (major + minor * std::cos(phi)) / (major + minor);
            if (uni(rng) <= w) break;
        }
        const double ring = major + minor * std::cos(phi);
        ps.points.emplace_back(ring * std::cos(theta), ring * std::sin(theta),
                               minor * std::sin(phi));
        ps.orientations.emplace_back(std::cos(phi) * std::cos(theta),
                                     std::cos(phi) * std::sin(theta), std::sin(phi));
    }
    return ps;
}

OrientedPointSet make_plane_cluster(int n, std::mt19937_64& rng) {
    const int patches = 3;
    struct Patch {
        Vec3 center;
        Mat3 frame;
        double ex, ey, area;
    };
    std::vector<Patch> list(patches);
    Uni uni(0.0, 1.0);
    double total = 0.0;
    for (Patch& p : list) {
        p.center = 0.6 * unit_sphere_dir(rng) * uni(rng);
        p.frame = random_rotation(rng);
        p.ex = Uni(0.3, 0.9)(rng);
        p.ey = Uni(0.3, 0.9)(rng);
        p.area = p.ex * p.ey;
        total += p.area;
    }
    OrientedPointSet ps;
    for (int i = 0; i < n; ++i) {
        double u = uni(rng) * total;
        const Patch* chosen = &list.back();
        for (const Patch& p : list) {
            if (u < p.area) {
                chosen = &p;
                break;
            }
            u -= p.area;
        }
        const double a = (2.0 * uni(rng) - 1.0) * chosen->ex;
        const double b = (2.0 * uni(rng) - 1.0) * chosen->ey;
        ps.points.push_back(chosen->center + a * chosen->frame.col(0) + b * chosen->frame.col(1));
        ps.orientations.push_back(chosen->frame.col(2));
    }
    return ps;
}

}  // namespace

const std::vector<std::string>& class_names() {
    static const std::vector<std::string> names = {"sphere",  "box",  "cylinder",
                                                   "cone",    "torus", "plane-cluster"};
    return names;
}

bool is_known_class(const std::string& name) {
    const auto& names = class_names();
    return std::find(names.begin(), names.end(), name) != names.end();
}

OrientedPointSet make_shape(const std::string& class_name, int n_points, std::mt19937_64& rng) {
    if (n_points < 1) throw ArgumentError("make_shape: n_points must be >= 1");
    if (class_name == "sphere") return make_sphere(n_points, rng);
    if (class_name == "box") return make_box(n_points, rng);
    if (class_name == "cylinder") return make_cylinder(n_points, rng);
    if (class_name == "cone") return make_cone(n_points, rng);
    if (class_name == "torus") return make_torus(n_points, rng);
    if (class_name == "plane-cluster") return make_plane_cluster(n_points, rng);
    throw ArgumentError("unknown shape class \"" + class_name + "\"");
}

std::string write_dataset(const std::vector<std::string>& classes, int per_class, int n_points,
                          uint64_t seed, const std::string& out_dir,
                          const std::string& manifest_name) {
    for (const std::string& c : classes) {
        if (!is_known_class(c)) throw ArgumentError("unknown shape class \"" + c + "\"");
    }
    if (per_class < 1) throw ArgumentError("per_class must be >= 1");

    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const fs::path manifest_path = fs::path(out_dir) / manifest_name;
    std::ofstream manifest(manifest_path);
    if (!manifest) throw DataError("cannot write " + manifest_path.string());

    for (size_t ci = 0; ci < classes.size(); ++ci) {
        for (int s = 0; s < per_class; ++s) {
            auto rng = make_rng(derive_seed(seed, {ci, static_cast<uint64_t>(s)}));
            const OrientedPointSet ps = make_shape(classes[ci], n_points, rng);
            char name[128];
            std::snprintf(name, sizeof name, "%s_%04d.xyzn", classes[ci].c_str(), s);
            const fs::path file = fs::path(out_dir) / name;
            std::ofstream out(file);
            if (!out) throw DataError("cannot write " + file.string());
            char line[256];
            for (int i = 0; i < ps.size(); ++i) {
                std::snprintf(line, sizeof line, "%.9g %.9g %.9g %.9g %.9g %.9g\n",
                              ps.points[i].x(), ps.points[i].y(), ps.points[i].z(),
                              ps.orientations[i].x(), ps.orientations[i].y(),
                              ps.orientations[i].z());
                out << line;
            }
            manifest << name << '\t' << classes[ci] << '\n';
        }
    }
    return manifest_path.string();
}

}  // namespace ript::synth
