#include "ript/tokenizer.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace ript {

void TokenizerConfig::validate() const {
    if (token_count < 1) throw ConfigError("token_count must be >= 1");
    if (grid < 1) throw ConfigError("grid must be >= 1");
    if (feature_width < 1) throw ConfigError("feature_width must be >= 1");
    if (!(region_scale > 0.0) || region_scale > 1.0) {
        throw ConfigError("region_scale must be in (0, 1]");
    }
    if (fps_start && *fps_start < 0) throw ConfigError("fps_start must be >= 0");
}

namespace {

// Deterministic unit vector perpendicular to u: Gram-Schmidt against the
// x axis, falling back to y when u is parallel to x.
Vec3 perpendicular_fallback(const Vec3& u) {
    Vec3 w = Vec3::UnitX() - Vec3::UnitX().dot(u) * u;
    if (w.norm() < 1e-9) w = Vec3::UnitY() - Vec3::UnitY().dot(u) * u;
    return w.normalized();
}

// Majority sign along u2: flip so the point mass lies on the positive side;
// exact ties flip toward a positive first nonzero component.
Vec3 fix_u2_sign(const Vec3& u2, const OrientedPointSet& ps, std::span<const int> region,
                 const Vec3& c) {
    long s = 0;
    for (int i : region) {
        double d = (ps.points[i] - c).dot(u2);
        if (d > 0.0) ++s;
        else if (d < 0.0) --s;
    }
    if (s < 0) return -u2;
    if (s == 0) {
        for (int axis = 0; axis < 3; ++axis) {
            if (u2[axis] != 0.0) return u2[axis] > 0.0 ? u2 : Vec3(-u2);
        }
    }
    return u2;
}

}  // namespace

Lrf compute_lrf(const OrientedPointSet& ps, std::span<const int> region, int c_index) {
    if (region.empty()) throw ArgumentError("compute_lrf: empty region");
    if (c_index < 0 || c_index >= ps.size()) throw ArgumentError("compute_lrf: bad token index");
    const Vec3 c = ps.points[c_index];
    const Vec3 u1 = ps.orientations[c_index];
    if (std::abs(u1.norm() - 1.0) > 1e-6) {
        throw ArgumentError("compute_lrf: orientation at token point is not unit length");
    }

    Lrf lrf;
    lrf.u1 = u1;

    double r = 0.0;
    for (int i : region) r = std::max(r, (ps.points[i] - c).norm());

    Vec3 u2;
    bool have_u2 = false;
    if (r > 0.0) {
        Mat3 scatter = Mat3::Zero();
        double weight_sum = 0.0;
        for (int i : region) {
            const Vec3 d = ps.points[i] - c;
            const double w = r - d.norm();
            scatter += w * d * d.transpose();
            weight_sum += w;
        }
        if (weight_sum > 1e-15) {
            scatter /= weight_sum;
            Eigen::SelfAdjointEigenSolver<Mat3> eig(scatter);  // eigenvalues ascending
            for (int col : {1, 2}) {  // second-largest first, then largest
                Vec3 v = eig.eigenvectors().col(col);
                Vec3 w = v - v.dot(u1) * u1;
                if (w.norm() >= 1e-9) {
                    u2 = fix_u2_sign(w.normalized(), ps, region, c);
                    have_u2 = true;
                    break;
                }
            }
        }
    }
    if (!have_u2) {
        u2 = perpendicular_fallback(u1);
        lrf.degenerate = true;
    }

    lrf.u2 = u2;
    lrf.u3 = u1.cross(u2);
    lrf.R.row(0) = lrf.u1;
    lrf.R.row(1) = lrf.u2;
    lrf.R.row(2) = lrf.u3;
    return lrf;
}

PodGrid pod_descriptor(const OrientedPointSet& lrf_ps, double radius, int grid,
                       bool centered_moment) {
    if (!(radius > 0.0)) throw ArgumentError("pod_descriptor: radius must be positive");
    if (grid < 1) throw ArgumentError("pod_descriptor: grid must be >= 1");

    const int g = grid;
    const int cell_count = g * g * g;
    PodGrid pod;
    pod.resolution = g;
    pod.cells.assign(static_cast<size_t>(cell_count) * PodGrid::kChannels, 0.0);

    const int n = lrf_ps.size();
    std::vector<int> counts(cell_count, 0);
    std::vector<Vec3> coord_sum(cell_count, Vec3::Zero());
    std::vector<std::array<double, 6>> moment_sum(cell_count, {0, 0, 0, 0, 0, 0});
    std::vector<Vec3> orient_sum(cell_count, Vec3::Zero());

    // Planar regions aligned with the frame put whole faces exactly on a
    // cell boundary (the token's own plane has first coordinate 0, a grid
    // line at even G). A sub-cell nudge keeps such mass in one cell under
    // the 1e-16-scale coordinate noise of a rigid rotation.
    constexpr double kBoundaryNudge = 1e-9;
    const double cell_size = 2.0 * radius / g;
    auto bin = [&](double x) {
        int b = static_cast<int>(std::floor((x + radius) / cell_size + kBoundaryNudge));
        return std::clamp(b, 0, g - 1);
    };

    for (int i = 0; i < n; ++i) {
        const Vec3& p = lrf_ps.points[i];
        const Vec3& o = lrf_ps.orientations[i];
        const int cell = (bin(p.x()) * g + bin(p.y())) * g + bin(p.z());
        counts[cell] += 1;
        coord_sum[cell] += p;
        moment_sum[cell][0] += o.x() * o.x();
        moment_sum[cell][1] += o.x() * o.y();
        moment_sum[cell][2] += o.x() * o.z();
        moment_sum[cell][3] += o.y() * o.y();
        moment_sum[cell][4] += o.y() * o.z();
        moment_sum[cell][5] += o.z() * o.z();
        orient_sum[cell] += o;
    }

    for (int cell = 0; cell < cell_count; ++cell) {
        if (counts[cell] == 0) continue;
        double* out = pod.cells.data() + static_cast<size_t>(cell) * PodGrid::kChannels;
        const double inv = 1.0 / counts[cell];
        out[0] = static_cast<double>(counts[cell]) / n;
        out[1] = coord_sum[cell].x() * inv;
        out[2] = coord_sum[cell].y() * inv;
        out[3] = coord_sum[cell].z() * inv;
        for (int t = 0; t < 6; ++t) out[4 + t] = moment_sum[cell][t] * inv;
        if (centered_moment) {
            const Vec3 m = orient_sum[cell] * inv;
            out[4] -= m.x() * m.x();
            out[5] -= m.x() * m.y();
            out[6] -= m.x() * m.z();
            out[7] -= m.y() * m.y();
            out[8] -= m.y() * m.z();
            out[9] -= m.z() * m.z();
        }
    }
    return pod;
}

TokenDescriptors tokenize_descriptors(const OrientedPointSet& ps, const TokenizerConfig& cfg,
                                      std::mt19937_64& rng) {
    cfg.validate();
    const int n = ps.size();
    if (n < cfg.token_count) {
        throw ArgumentError("tokenize: point count " + std::to_string(n) +
                            " is below token count " + std::to_string(cfg.token_count));
    }

    int start;
    if (cfg.fps_start) {
        start = *cfg.fps_start;
        if (start >= n) throw ArgumentError("tokenize: fps_start out of range");
    } else {
        start = static_cast<int>(std::uniform_int_distribution<int>(0, n - 1)(rng));
    }

    const std::vector<int> token_idx = fps(ps.points, cfg.token_count, start);
    const int region_size = std::clamp(static_cast<int>(std::floor(cfg.region_scale * n)), 1, n);

    TokenDescriptors out;
    out.token_points.resize(cfg.token_count);
    out.pod.setZero(cfg.token_count, cfg.pod_width());
    out.degenerate.assign(cfg.token_count, 0);

#pragma omp parallel for schedule(static)
    for (int t = 0; t < cfg.token_count; ++t) {
        const int ci = token_idx[t];
        const Vec3 c = ps.points[ci];
        out.token_points[t] = c;

        const std::vector<int> region = knn(c, ps.points, region_size);
        const Lrf lrf = compute_lrf(ps, region, ci);

        double radius = 0.0;
        for (int i : region) radius = std::max(radius, (ps.points[i] - c).norm());
        if (radius <= 0.0) {
            out.degenerate[t] = 1;  // all region points coincide with c; keep a zero row
            continue;
        }
        if (lrf.degenerate) out.degenerate[t] = 1;

        OrientedPointSet local;
        local.points.reserve(region.size());
        local.orientations.reserve(region.size());
        for (int i : region) {
            local.points.push_back(lrf.R * (ps.points[i] - c));
            local.orientations.push_back(lrf.R * ps.orientations[i]);
        }

        const PodGrid pod =
            pod_descriptor(local, radius, cfg.grid, cfg.centered_orientation_moment);
        for (int j = 0; j < cfg.pod_width(); ++j) out.pod(t, j) = pod.cells[j];
    }
    return out;
}

TokenSet tokenize(const OrientedPointSet& ps, const TokenizerConfig& cfg,
                  const TokenizerParams<double>& params, std::mt19937_64& rng) {
    if (params.W.rows() != cfg.pod_width() || params.W.cols() != cfg.feature_width) {
        throw ArgumentError("tokenize: projection weight shape mismatch");
    }
    TokenDescriptors desc = tokenize_descriptors(ps, cfg, rng);

    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> W(
        params.W.values.data(), params.W.rows(), params.W.cols());
    Eigen::Map<const Eigen::RowVectorXd> b(params.b.values.data(), params.b.values.size());

    TokenSet set;
    set.token_points = std::move(desc.token_points);
    set.degenerate = std::move(desc.degenerate);
    set.token_feats = (desc.pod * W).rowwise() + b;
    return set;
}

}  // namespace ript
