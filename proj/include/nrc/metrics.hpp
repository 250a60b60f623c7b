#pragma once

#include "nrc/common.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace nrc {

/// 2D projection of a trajectory for attractor comparison. Either a pair of
/// channels (x, y) = (u(ch_x, t), u(ch_y, t)), or a delay embedding of one
/// channel (x, y) = (s(t), s(t - delay_steps)).
struct Projection {
    enum class Kind { channel_pair, delay };
    Kind kind = Kind::channel_pair;
    int ch_x = 0;
    int ch_y = 1;
    int delay_steps = 0;

    static Projection channels(int x, int y) {
        return {Kind::channel_pair, x, y, 0};
    }
    static Projection delayed(int channel, int steps) {
        return {Kind::delay, channel, channel, steps};
    }
};

struct MetricConfig {
    double r_c = 0.1;       // RMSE / pointwise-error threshold
    long window = 300;      // steps for windowed RMSE
    int n_ensemble = 80;
    int dv_subsample = 1;   // stride through the true-attractor reference set
    Projection projection{};
    bool rmse_sum_channels = false;  // sum over channels instead of mean
    bool horizon_expanding = false;  // expanding-window RMSE variant
};

/// Windowed RMSE over channels and steps on normalized data. Any non-finite
/// prediction entry makes the result +inf.
inline double rmse(const Eigen::Ref<const Matrix>& pred,
                   const Eigen::Ref<const Matrix>& truth,
                   bool sum_channels = false) {
    if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
        throw DimensionError("rmse: shape mismatch");
    if (!pred.allFinite()) return std::numeric_limits<double>::infinity();
    const double mse = (pred - truth).array().square().mean();
    return sum_channels ? std::sqrt(mse * pred.rows()) : std::sqrt(mse);
}

/// Prediction horizon t_s: dt times the index of the first step whose
/// pointwise error e(t) = sqrt(mean_i (pred-truth)^2) exceeds r_c, or dt*T
/// if the error never exceeds the threshold. With expanding=true the error
/// at t is the RMSE over steps [0, t] instead.
inline double horizon(const Eigen::Ref<const Matrix>& pred,
                      const Eigen::Ref<const Matrix>& truth, double r_c,
                      double dt, bool expanding = false) {
    if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
        throw DimensionError("horizon: shape mismatch");
    const long T = pred.cols();
    double acc = 0.0;
    for (long t = 0; t < T; ++t) {
        const double se = (pred.col(t) - truth.col(t)).array().square().mean();
        double e;
        if (expanding) {
            acc += se;
            e = std::sqrt(acc / (t + 1));
        } else {
            e = std::sqrt(se);
        }
        if (!(e <= r_c)) return dt * t; // NaN also exits here
    }
    return dt * T;
}

/// Prediction stability R_s(r_c): fraction of ensemble RMSEs strictly below
/// the threshold.
inline double stability(const std::vector<double>& run_rmses, double r_c) {
    if (run_rmses.empty())
        throw ConfigError("stability: empty ensemble");
    long hits = 0;
    for (double r : run_rmses)
        if (r < r_c) ++hits;
    return static_cast<double>(hits) / run_rmses.size();
}

namespace detail {

/// Uniform-grid index over 2D points for exact nearest-neighbor queries.
/// Search expands in rings until no closer cell can improve the best match.
class GridIndex2D {
  public:
    explicit GridIndex2D(const std::vector<Eigen::Vector2d>& points)
        : points_(points) {
        lo_ = {std::numeric_limits<double>::infinity(),
               std::numeric_limits<double>::infinity()};
        Eigen::Vector2d hi = -lo_;
        for (const auto& q : points_) {
            lo_ = lo_.cwiseMin(q);
            hi = hi.cwiseMax(q);
        }
        diameter_ = (hi - lo_).norm();
        const long n = static_cast<long>(points_.size());
        const long side = std::max<long>(
            1, static_cast<long>(std::floor(std::sqrt(double(n)))));
        nx_ = ny_ = side;
        cell_x_ = std::max((hi.x() - lo_.x()) / nx_, 1e-300);
        cell_y_ = std::max((hi.y() - lo_.y()) / ny_, 1e-300);
        cells_.resize(static_cast<size_t>(nx_ * ny_));
        for (size_t i = 0; i < points_.size(); ++i)
            cells_[cell_of(points_[i])].push_back(i);
    }

    double diameter() const { return diameter_; }

    double nearest_distance(const Eigen::Vector2d& q) const {
        const long cx = clamp_x(static_cast<long>((q.x() - lo_.x()) / cell_x_));
        const long cy = clamp_y(static_cast<long>((q.y() - lo_.y()) / cell_y_));
        double best = std::numeric_limits<double>::infinity();
        const long max_ring = std::max(nx_, ny_);
        for (long ring = 0;; ++ring) {
            // Closest possible distance from q to any cell in this ring.
            if (ring > 0) {
                const double ring_gap =
                    (ring - 1) * std::min(cell_x_, cell_y_);
                if (best < ring_gap) break;
            }
            bool any_cell = false;
            for (long dx = -ring; dx <= ring; ++dx) {
                for (long dy = -ring; dy <= ring; ++dy) {
                    if (std::max(std::abs(dx), std::abs(dy)) != ring) continue;
                    const long x = cx + dx, y = cy + dy;
                    if (x < 0 || x >= nx_ || y < 0 || y >= ny_) continue;
                    any_cell = true;
                    for (size_t idx : cells_[static_cast<size_t>(y * nx_ + x)])
                        best = std::min(best, (points_[idx] - q).norm());
                }
            }
            if (ring >= max_ring && !any_cell) break;
        }
        return best;
    }

  private:
    size_t cell_of(const Eigen::Vector2d& q) const {
        const long x = clamp_x(static_cast<long>((q.x() - lo_.x()) / cell_x_));
        const long y = clamp_y(static_cast<long>((q.y() - lo_.y()) / cell_y_));
        return static_cast<size_t>(y * nx_ + x);
    }
    long clamp_x(long x) const { return std::clamp<long>(x, 0, nx_ - 1); }
    long clamp_y(long y) const { return std::clamp<long>(y, 0, ny_ - 1); }

    const std::vector<Eigen::Vector2d>& points_;
    Eigen::Vector2d lo_;
    double diameter_ = 0, cell_x_ = 1, cell_y_ = 1;
    long nx_ = 1, ny_ = 1;
    std::vector<std::vector<size_t>> cells_;
};

} // namespace detail

/// Project a trajectory (channels x steps) onto the configured 2D plane.
inline std::vector<Eigen::Vector2d> project(const Eigen::Ref<const Matrix>& traj,
                                            const Projection& proj) {
    std::vector<Eigen::Vector2d> pts;
    if (proj.kind == Projection::Kind::channel_pair) {
        if (proj.ch_x >= traj.rows() || proj.ch_y >= traj.rows())
            throw DimensionError("project: channel index out of range");
        pts.reserve(traj.cols());
        for (long t = 0; t < traj.cols(); ++t)
            pts.emplace_back(traj(proj.ch_x, t), traj(proj.ch_y, t));
    } else {
        if (proj.ch_x >= traj.rows())
            throw DimensionError("project: channel index out of range");
        if (traj.cols() <= proj.delay_steps) return pts;
        pts.reserve(traj.cols() - proj.delay_steps);
        for (long t = proj.delay_steps; t < traj.cols(); ++t)
            pts.emplace_back(traj(proj.ch_x, t),
                             traj(proj.ch_x, t - proj.delay_steps));
    }
    return pts;
}

/// Deviation value: mean nearest-neighbor distance from each projected
/// predicted point to the subsampled true-attractor reference set. Non-finite
/// predicted points contribute a capped penalty of 10x the reference-set
/// diameter so diverged runs stay comparable.
inline double deviation_value(const Eigen::Ref<const Matrix>& pred,
                              const Eigen::Ref<const Matrix>& truth_ref,
                              const Projection& proj, int subsample = 1) {
    if (subsample < 1) throw ConfigError("deviation_value: subsample >= 1");
    auto pred_pts = project(pred, proj);
    auto ref_all = project(truth_ref, proj);
    std::vector<Eigen::Vector2d> ref;
    ref.reserve(ref_all.size() / subsample + 1);
    for (size_t i = 0; i < ref_all.size(); i += subsample)
        ref.push_back(ref_all[i]);
    if (ref.empty()) throw ConfigError("deviation_value: empty reference set");
    if (pred_pts.empty())
        throw ConfigError("deviation_value: empty predicted trajectory");

    detail::GridIndex2D index(ref);
    const double penalty = 10.0 * std::max(index.diameter(), 1e-300);
    double acc = 0.0;
    for (const auto& q : pred_pts) {
        if (!q.allFinite()) {
            acc += penalty;
            continue;
        }
        acc += std::min(index.nearest_distance(q), penalty);
    }
    return acc / pred_pts.size();
}

struct ShortTermResult {
    double rmse = 0.0;
    double t_s = 0.0;
    bool stable = false;
};

} // namespace nrc
