#include "ript/geometry.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

namespace ript {

void validate_point_set(const OrientedPointSet& ps) {
    if (ps.points.empty()) {
        throw ArgumentError("point set must contain at least one point");
    }
    if (ps.points.size() != ps.orientations.size()) {
        throw ArgumentError("point/orientation count mismatch: " +
                            std::to_string(ps.points.size()) + " vs " +
                            std::to_string(ps.orientations.size()));
    }
    for (size_t i = 0; i < ps.orientations.size(); ++i) {
        if (std::abs(ps.orientations[i].norm() - 1.0) > 1e-6) {
            throw ArgumentError("orientation " + std::to_string(i) + " is not unit length");
        }
    }
}

namespace {

OrientedPointSet load_xyzn(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    OrientedPointSet ps;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        std::istringstream ls(line);
        double px, py, pz, nx, ny, nz;
        if (!(ls >> px >> py >> pz >> nx >> ny >> nz)) {
            throw FormatError(path + ":" + std::to_string(line_no) +
                              ": expected 6 floats \"px py pz nx ny nz\"");
        }
        Vec3 n(nx, ny, nz);
        double len = n.norm();
        if (len < 1e-12) {
            throw FormatError(path + ":" + std::to_string(line_no) + ": zero-length normal");
        }
        ps.points.emplace_back(px, py, pz);
        ps.orientations.push_back(n / len);
    }
    if (ps.points.empty()) throw FormatError(path + ": no points");
    return ps;
}

struct Triangle {
    Vec3 a, b, c;
    Vec3 normal;
    double area;
};

OrientedPointSet load_off(const std::string& path, int sample_count, uint64_t seed) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);

    auto next_token_line = [&](std::istringstream& out, int& line_no) {
        std::string line;
        while (std::getline(in, line)) {
            ++line_no;
            auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
            out = std::istringstream(line);
            return true;
        }
        return false;
    };

    int line_no = 0;
    std::istringstream ls;
    if (!next_token_line(ls, line_no)) throw FormatError(path + ": empty file");
    std::string header;
    ls >> header;
    if (header != "OFF") {
        throw FormatError(path + ":" + std::to_string(line_no) + ": missing OFF header");
    }

    size_t nv = 0, nf = 0, ne = 0;
    // Counts may follow the header on the same line.
    if (!(ls >> nv >> nf >> ne)) {
        if (!next_token_line(ls, line_no) || !(ls >> nv >> nf >> ne)) {
            throw FormatError(path + ":" + std::to_string(line_no) + ": missing vertex/face counts");
        }
    }
    if (nv == 0 || nf == 0) {
        throw FormatError(path + ":" + std::to_string(line_no) + ": empty mesh");
    }

    std::vector<Vec3> verts(nv);
    for (size_t i = 0; i < nv; ++i) {
        if (!next_token_line(ls, line_no) || !(ls >> verts[i].x() >> verts[i].y() >> verts[i].z())) {
            throw FormatError(path + ":" + std::to_string(line_no) + ": bad vertex");
        }
    }

    std::vector<Triangle> tris;
    double total_area = 0.0;
    for (size_t f = 0; f < nf; ++f) {
        if (!next_token_line(ls, line_no)) {
            throw FormatError(path + ":" + std::to_string(line_no) + ": missing face");
        }
        size_t vc = 0;
        if (!(ls >> vc) || vc < 3) {
            throw FormatError(path + ":" + std::to_string(line_no) + ": bad face");
        }
        std::vector<size_t> idx(vc);
        for (size_t k = 0; k < vc; ++k) {
            if (!(ls >> idx[k]) || idx[k] >= nv) {
                throw FormatError(path + ":" + std::to_string(line_no) + ": bad face index");
            }
        }
        for (size_t k = 1; k + 1 < vc; ++k) {  // fan triangulation
            Triangle t;
            t.a = verts[idx[0]];
            t.b = verts[idx[k]];
            t.c = verts[idx[k + 1]];
            Vec3 cross = (t.b - t.a).cross(t.c - t.a);
            double cl = cross.norm();
            t.area = 0.5 * cl;
            t.normal = cl > 1e-15 ? Vec3(cross / cl) : Vec3(0, 0, 0);
            total_area += t.area;
            tris.push_back(t);
        }
    }
    if (total_area <= 0.0) {
        throw GeometryError(path + ": mesh has zero total area");
    }

    std::vector<double> cum(tris.size());
    double acc = 0.0;
    for (size_t i = 0; i < tris.size(); ++i) {
        acc += tris[i].area;
        cum[i] = acc;
    }

    auto rng = make_rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    OrientedPointSet ps;
    ps.points.reserve(sample_count);
    ps.orientations.reserve(sample_count);
    for (int s = 0; s < sample_count; ++s) {
        double u = uni(rng) * total_area;
        size_t ti = std::lower_bound(cum.begin(), cum.end(), u) - cum.begin();
        if (ti >= tris.size()) ti = tris.size() - 1;
        const Triangle& t = tris[ti];
        double r1 = uni(rng), r2 = uni(rng);
        double sq = std::sqrt(r1);
        Vec3 p = (1.0 - sq) * t.a + sq * (1.0 - r2) * t.b + sq * r2 * t.c;
        ps.points.push_back(p);
        ps.orientations.push_back(t.normal);
    }
    return ps;
}

}  // namespace

OrientedPointSet load_point_set(const std::string& path, PointSetFormat format,
                                int off_sample_count, uint64_t off_seed) {
    switch (format) {
        case PointSetFormat::XyznText:
            return load_xyzn(path);
        case PointSetFormat::OffMesh:
            return load_off(path, off_sample_count, off_seed);
    }
    throw ArgumentError("unknown point set format");
}

std::vector<Vec3> estimate_normals(const std::vector<Vec3>& points, int k) {
    const int n = static_cast<int>(points.size());
    if (n <= k) {
        throw ArgumentError("estimate_normals: need more than k=" + std::to_string(k) +
                            " points, got " + std::to_string(n));
    }
    std::vector<Vec3> normals(n);
    for (int i = 0; i < n; ++i) {
        std::vector<int> nb = knn(points[i], points, k + 1);  // self plus k neighbors
        Vec3 mean = Vec3::Zero();
        for (int j : nb) mean += points[j];
        mean /= static_cast<double>(nb.size());
        Mat3 cov = Mat3::Zero();
        for (int j : nb) {
            Vec3 d = points[j] - mean;
            cov += d * d.transpose();
        }
        cov /= static_cast<double>(nb.size());
        Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
        Vec3 normal = eig.eigenvectors().col(0);  // smallest eigenvalue

        int s = 0;
        for (int j : nb) {
            double d = normal.dot(points[j] - points[i]);
            if (d > 0.0) ++s;
            else if (d < 0.0) --s;
        }
        if (s < 0) {
            normal = -normal;
        } else if (s == 0) {
            if (normal.z() != 0.0) {
                if (normal.z() < 0.0) normal = -normal;
            } else if (normal.y() != 0.0) {
                if (normal.y() < 0.0) normal = -normal;
            } else if (normal.x() < 0.0) {
                normal = -normal;
            }
        }
        normals[i] = normal;
    }
    return normals;
}

OrientedPointSet normalize_pose(const OrientedPointSet& ps) {
    validate_point_set(ps);
    Vec3 centroid = Vec3::Zero();
    for (const Vec3& p : ps.points) centroid += p;
    centroid /= static_cast<double>(ps.points.size());

    double max_norm = 0.0;
    for (const Vec3& p : ps.points) max_norm = std::max(max_norm, (p - centroid).norm());
    if (max_norm < 1e-12) {
        throw GeometryError("normalize_pose: all points coincide");
    }

    OrientedPointSet out;
    out.label = ps.label;
    out.orientations = ps.orientations;
    out.points.reserve(ps.points.size());
    for (const Vec3& p : ps.points) out.points.push_back((p - centroid) / max_norm);
    return out;
}

Mat3 random_rotation(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double u1 = uni(rng), u2 = uni(rng), u3 = uni(rng);
    const double two_pi = 2.0 * std::numbers::pi;
    const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
    // Shoemake's uniform quaternion (w, x, y, z).
    const double qx = a * std::sin(two_pi * u2);
    const double qy = a * std::cos(two_pi * u2);
    const double qz = b * std::sin(two_pi * u3);
    const double qw = b * std::cos(two_pi * u3);

    Mat3 R;
    R << 1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw), 2 * (qx * qz + qy * qw),
        2 * (qx * qy + qz * qw), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw),
        2 * (qx * qz - qy * qw), 2 * (qy * qz + qx * qw), 1 - 2 * (qx * qx + qy * qy);
    return R;
}

OrientedPointSet apply_rotation(const OrientedPointSet& ps, const Mat3& R) {
    OrientedPointSet out;
    out.label = ps.label;
    out.points.reserve(ps.points.size());
    out.orientations.reserve(ps.orientations.size());
    for (const Vec3& p : ps.points) out.points.push_back(R * p);
    for (const Vec3& o : ps.orientations) out.orientations.push_back(R * o);
    return out;
}

std::vector<int> fps(const std::vector<Vec3>& points, int count, int start) {
    const int n = static_cast<int>(points.size());
    if (count > n) {
        throw ArgumentError("fps: count " + std::to_string(count) + " exceeds point count " +
                            std::to_string(n));
    }
    if (count < 1) throw ArgumentError("fps: count must be >= 1");
    if (start < 0 || start >= n) throw ArgumentError("fps: start index out of range");

    std::vector<int> selected;
    selected.reserve(count);
    selected.push_back(start);
    std::vector<double> min_d2(n);
    for (int i = 0; i < n; ++i) min_d2[i] = (points[i] - points[start]).squaredNorm();

    while (static_cast<int>(selected.size()) < count) {
        int best = 0;
        double best_d2 = -1.0;
        for (int i = 0; i < n; ++i) {
            if (min_d2[i] > best_d2) {  // strict: ties keep the smaller index
                best_d2 = min_d2[i];
                best = i;
            }
        }
        selected.push_back(best);
        for (int i = 0; i < n; ++i) {
            min_d2[i] = std::min(min_d2[i], (points[i] - points[best]).squaredNorm());
        }
    }
    return selected;
}

std::vector<int> knn(const Vec3& query, const std::vector<Vec3>& points, int k) {
    const int n = static_cast<int>(points.size());
    if (k > n) {
        throw ArgumentError("knn: k " + std::to_string(k) + " exceeds point count " +
                            std::to_string(n));
    }
    if (k < 1) throw ArgumentError("knn: k must be >= 1");

    std::vector<std::pair<double, int>> d(n);
    for (int i = 0; i < n; ++i) d[i] = {(points[i] - query).squaredNorm(), i};
    std::partial_sort(d.begin(), d.begin() + k, d.end());  // pair order breaks ties by index
    std::vector<int> out(k);
    for (int i = 0; i < k; ++i) out[i] = d[i].second;
    return out;
}

std::vector<ManifestEntry> load_manifest(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw DataError("cannot open manifest " + manifest_path);
    std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
    std::vector<ManifestEntry> entries;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw FormatError(manifest_path + ":" + std::to_string(line_no) +
                              ": expected \"path<TAB>label\"");
        }
        ManifestEntry e;
        e.path = (base / line.substr(0, tab)).string();
        e.label = line.substr(tab + 1);
        if (e.label.empty()) {
            throw FormatError(manifest_path + ":" + std::to_string(line_no) + ": empty label");
        }
        entries.push_back(std::move(e));
    }
    if (entries.empty()) throw DataError(manifest_path + ": empty manifest");
    return entries;
}

}  // namespace ript
