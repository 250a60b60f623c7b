#pragma once

#include "nrc/common.hpp"
#include "nrc/metrics.hpp"
#include "nrc/reservoir.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace nrc {

// ---------------------------------------------------------------------------
// Search space
// ---------------------------------------------------------------------------

struct Dimension {
    std::string name;
    double lo = 0.0;
    double hi = 1.0;
    bool log_scale = false;          // searched in log10-exponent space
    std::optional<double> frozen;    // external-units value, excluded from search

    void validate() const {
        if (!(lo < hi)) throw ConfigError("Dimension: lower < upper required");
        if (log_scale && lo <= 0)
            throw ConfigError("Dimension: log-scaled bounds must be positive");
    }
};

struct SearchSpace {
    std::vector<Dimension> dims;

    void validate() const {
        for (const auto& d : dims) d.validate();
    }
    int n_active() const {
        int n = 0;
        for (const auto& d : dims)
            if (!d.frozen) ++n;
        return n;
    }
    std::vector<int> active_indices() const {
        std::vector<int> idx;
        for (int i = 0; i < static_cast<int>(dims.size()); ++i)
            if (!dims[i].frozen) idx.push_back(i);
        return idx;
    }
    // Internal coordinates: active dims only, log dims in exponent space.
    double internal_lo(int dim) const {
        return dims[dim].log_scale ? std::log10(dims[dim].lo) : dims[dim].lo;
    }
    double internal_hi(int dim) const {
        return dims[dim].log_scale ? std::log10(dims[dim].hi) : dims[dim].hi;
    }
    Vector to_external(const Vector& internal) const {
        const auto idx = active_indices();
        Vector full(dims.size());
        for (size_t i = 0; i < dims.size(); ++i)
            if (dims[i].frozen) full(i) = *dims[i].frozen;
        for (size_t a = 0; a < idx.size(); ++a) {
            const auto& d = dims[idx[a]];
            full(idx[a]) =
                d.log_scale ? std::pow(10.0, internal(a)) : internal(a);
        }
        return full;
    }
};

/// The paper-scale six-dimensional hyperparameter space. Bounds contain all
/// published optima; beta and sigma are searched on a log scale.
inline SearchSpace default_hyperparam_space() {
    SearchSpace s;
    s.dims = {{"rho", 0.01, 2.0, false, {}},
              {"gamma", 0.01, 3.0, false, {}},
              {"alpha", 0.05, 1.0, false, {}},
              {"beta", 1e-12, 1e-2, true, {}},
              {"p", 0.01, 1.0, false, {}},
              {"sigma", 1e-8, std::pow(10.0, -0.5), true, {}}};
    return s;
}

/// Map a full external vector from default_hyperparam_space onto Hyperparams.
inline Hyperparams to_hyperparams(const Vector& x, int n_nodes) {
    if (x.size() != 6) throw DimensionError("to_hyperparams: need 6 values");
    Hyperparams hp;
    hp.rho = x(0);
    hp.gamma = x(1);
    hp.alpha = x(2);
    hp.beta = x(3);
    hp.p = x(4);
    hp.sigma = x(5);
    hp.n_nodes = n_nodes;
    return hp;
}

/// Latin hypercube design on the unit cube: one sample per row-stratum per
/// dimension, independently permuted.
inline Matrix latin_hypercube(int n, int d, std::mt19937_64& rng) {
    Matrix pts(n, d);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<int> perm(n);
    for (int j = 0; j < d; ++j) {
        for (int i = 0; i < n; ++i) perm[i] = i;
        std::shuffle(perm.begin(), perm.end(), rng);
        for (int i = 0; i < n; ++i) pts(i, j) = (perm[i] + u(rng)) / n;
    }
    return pts;
}

// ---------------------------------------------------------------------------
// RBF interpolation
// ---------------------------------------------------------------------------

/// Cubic RBF interpolant with an appended linear polynomial tail, fitted on
/// points scaled to the unit cube. Fallback chain for ill-conditioned
/// systems: thin-plate-spline kernel, then a ridge-regularized cubic solve.
class RbfInterpolant {
  public:
    enum class Kernel { cubic, thin_plate };

    static RbfInterpolant fit(const Matrix& points, const Vector& values) {
        if (points.rows() < points.cols() + 1)
            throw ConfigError("RbfInterpolant: need at least d+1 points");
        for (long i = 0; i < points.rows(); ++i)
            for (long j = i + 1; j < points.rows(); ++j)
                if ((points.row(i) - points.row(j)).norm() < 1e-14)
                    throw ConfigError("RbfInterpolant: duplicate points");

        RbfInterpolant r;
        r.points_ = points;
        const double tol =
            1e-8 * std::max(1.0, values.cwiseAbs().maxCoeff());
        for (auto kernel : {Kernel::cubic, Kernel::thin_plate}) {
            r.kernel_ = kernel;
            if (r.solve(values, 0.0) && r.residual(values) <= tol) return r;
        }
        r.kernel_ = Kernel::cubic;
        r.solve(values, 1e-10);
        return r;
    }

    double operator()(const Vector& x) const {
        const long n = points_.rows(), d = points_.cols();
        double v = poly_(0);
        for (long j = 0; j < d; ++j) v += poly_(j + 1) * x(j);
        for (long i = 0; i < n; ++i)
            v += weights_(i) * phi((points_.row(i).transpose() - x).norm());
        return v;
    }

    Kernel kernel() const { return kernel_; }

  private:
    double phi(double r) const {
        if (kernel_ == Kernel::cubic) return r * r * r;
        return r > 0 ? r * r * std::log(r) : 0.0;
    }

    bool solve(const Vector& values, double ridge) {
        const long n = points_.rows(), d = points_.cols();
        Matrix M = Matrix::Zero(n + d + 1, n + d + 1);
        for (long i = 0; i < n; ++i) {
            for (long j = 0; j < n; ++j)
                M(i, j) =
                    phi((points_.row(i) - points_.row(j)).norm());
            M(i, i) += ridge;
            M(i, n) = M(n, i) = 1.0;
            for (long j = 0; j < d; ++j)
                M(i, n + 1 + j) = M(n + 1 + j, i) = points_(i, j);
        }
        Vector rhs = Vector::Zero(n + d + 1);
        rhs.head(n) = values;
        Eigen::FullPivLU<Matrix> lu(M);
        if (!lu.isInvertible() && ridge == 0.0) return false;
        Vector sol = lu.solve(rhs);
        if (!sol.allFinite()) return false;
        weights_ = sol.head(n);
        poly_ = sol.segment(n, d + 1);
        return true;
    }

    double residual(const Vector& values) const {
        double worst = 0.0;
        for (long i = 0; i < points_.rows(); ++i)
            worst = std::max(
                worst, std::abs((*this)(points_.row(i).transpose()) -
                                values(i)));
        return worst;
    }

    Matrix points_;   // n x d
    Vector weights_;  // n
    Vector poly_;     // d+1: constant then linear terms
    Kernel kernel_ = Kernel::cubic;
};

// ---------------------------------------------------------------------------
// Surrogate optimization loop
// ---------------------------------------------------------------------------

struct TraceEntry {
    int eval_index = 0;
    Vector point;       // external units, all dims
    double objective = 0.0;
    double incumbent = 0.0;
};

struct OptResult {
    Vector best_point;  // external units, all dims
    double best_value = std::numeric_limits<double>::infinity();
    std::vector<TraceEntry> trace;
};

struct OptimizeConfig {
    int candidates_per_dim = 500;
    int streak = 3;                 // trust adjustments after this many
    double trust_floor = 1.0 / 64;  // 2^-6
    double trust_init = 1.0;
};

/// Evaluated-point bookkeeping for the surrogate loop. Points are stored in
/// internal coordinates (active dims, exponent space for log dims).
struct SurrogateState {
    std::vector<Vector> points;
    std::vector<double> values;
    std::optional<RbfInterpolant> surrogate;
    Vector incumbent;
    double incumbent_value = std::numeric_limits<double>::infinity();
    double trust = 1.0;
    int successes = 0;
    int failures = 0;
    int merit_cycle = 0;
    std::mt19937_64 rng;
};

namespace detail {

inline double min_distance(const Vector& x, const std::vector<Vector>& pts) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : pts) best = std::min(best, (x - p).norm());
    return best;
}

} // namespace detail

/// One candidate proposal: Gaussian perturbations of the incumbent scored by
/// a merit rule cycling through exploitation weights {0.3, 0.5, 0.8, 0.95}.
inline Vector propose(SurrogateState& state, const Vector& range_lo,
                      const Vector& range_hi, int n_candidates) {
    if (!state.surrogate)
        throw ConfigError("propose: surrogate not fitted");
    const int d = static_cast<int>(state.incumbent.size());
    static constexpr double kWeights[] = {0.3, 0.5, 0.8, 0.95};
    const double w = kWeights[state.merit_cycle % 4];
    state.merit_cycle++;

    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix cands(n_candidates, d);
    Vector svals(n_candidates), dists(n_candidates);
    const Vector range = range_hi - range_lo;
    for (int i = 0; i < n_candidates; ++i) {
        Vector x = state.incumbent;
        for (int j = 0; j < d; ++j)
            x(j) += state.trust * range(j) * gauss(state.rng);
        x = x.cwiseMax(range_lo).cwiseMin(range_hi);
        cands.row(i) = x;
        // Surrogate evaluated on unit-cube coordinates.
        Vector u = (x - range_lo).cwiseQuotient(range);
        svals(i) = (*state.surrogate)(u);
        dists(i) = detail::min_distance(x, state.points);
    }
    const double smin = svals.minCoeff(), smax = svals.maxCoeff();
    const double dmin = dists.minCoeff(), dmax = dists.maxCoeff();
    int best = -1;
    double best_merit = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n_candidates; ++i) {
        const double vs =
            smax > smin ? (svals(i) - smin) / (smax - smin) : 0.0;
        const double vd =
            dmax > dmin ? (dmax - dists(i)) / (dmax - dmin) : 1.0;
        const double merit = w * vs + (1.0 - w) * vd;
        if (merit < best_merit) {
            best_merit = merit;
            best = i;
        }
    }
    // Never re-propose an already evaluated point; fall back to the farthest
    // candidate when all are (near-)duplicates.
    const double dup_tol = 1e-12 * std::max(1.0, range.norm());
    if (dists(best) <= dup_tol) {
        int far = 0;
        for (int i = 1; i < n_candidates; ++i)
            if (dists(i) > dists(far)) far = i;
        best = far;
    }
    return cands.row(best).transpose();
}

/// RBF-surrogate global minimization: Latin-hypercube initial design, then
/// iterate fit / propose / evaluate with a trust scale that halves after
/// `streak` consecutive non-improving evaluations and doubles after the same
/// number of improving ones. Hitting the trust floor triggers a restart with
/// a fresh random design. Log-scaled dimensions are searched in exponent
/// space; frozen dimensions never move.
inline OptResult optimize(const std::function<double(const Vector&)>& objective,
                          const SearchSpace& space, int budget,
                          std::uint64_t seed, const OptimizeConfig& cfg = {}) {
    space.validate();
    const auto idx = space.active_indices();
    const int d = static_cast<int>(idx.size());
    if (d == 0) throw ConfigError("optimize: no active dimensions");
    const int init_n = 2 * (d + 1);
    if (budget < init_n)
        throw ConfigError("optimize: budget below initial design size");

    Vector lo(d), hi(d);
    for (int a = 0; a < d; ++a) {
        lo(a) = space.internal_lo(idx[a]);
        hi(a) = space.internal_hi(idx[a]);
    }

    SurrogateState state;
    state.rng.seed(derive_seed(seed, 0x0F7));
    state.trust = cfg.trust_init;

    OptResult result;
    double worst_finite = 1.0;
    bool any_finite = false;

    auto evaluate = [&](const Vector& internal) {
        Vector external = space.to_external(internal);
        double y = objective(external);
        if (!std::isfinite(y)) y = 10.0 * (any_finite ? worst_finite : 1e11);
        else {
            worst_finite = any_finite ? std::max(worst_finite, y) : y;
            any_finite = true;
        }
        state.points.push_back(internal);
        state.values.push_back(y);
        if (y < state.incumbent_value) {
            state.incumbent_value = y;
            state.incumbent = internal;
            result.best_point = external;
            result.best_value = y;
        }
        result.trace.push_back({static_cast<int>(result.trace.size()),
                                external, y, state.incumbent_value});
        return y;
    };

    auto run_design = [&](int n) {
        Matrix lhs = latin_hypercube(n, d, state.rng);
        for (int i = 0;
             i < n && static_cast<int>(result.trace.size()) < budget; ++i) {
            Vector x =
                lo + lhs.row(i).transpose().cwiseProduct(hi - lo).eval();
            evaluate(x);
        }
    };

    run_design(init_n);

    while (static_cast<int>(result.trace.size()) < budget) {
        // Surrogate fitted on unit-cube coordinates of all evaluated points.
        Matrix P(state.points.size(), d);
        Vector f(state.points.size());
        for (size_t i = 0; i < state.points.size(); ++i) {
            P.row(i) =
                (state.points[i] - lo).cwiseQuotient(hi - lo).transpose();
            f(i) = state.values[i];
        }
        state.surrogate = RbfInterpolant::fit(P, f);

        Vector cand = propose(state, lo, hi, cfg.candidates_per_dim * d);
        const double before = state.incumbent_value;
        const double y = evaluate(cand);
        if (y < before - 1e-13 * std::max(1.0, std::abs(before))) {
            state.successes++;
            state.failures = 0;
            if (state.successes >= cfg.streak) {
                state.trust = std::min(1.0, state.trust * 2.0);
                state.successes = 0;
            }
        } else {
            state.failures++;
            state.successes = 0;
            if (state.failures >= cfg.streak) {
                state.failures = 0;
                if (state.trust <= cfg.trust_floor + 1e-15) {
                    // Restart: fresh design, full trust; history retained.
                    state.trust = cfg.trust_init;
                    run_design(init_n);
                    continue;
                }
                state.trust = std::max(cfg.trust_floor, state.trust * 0.5);
            }
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Reservoir-training objective
// ---------------------------------------------------------------------------

struct ObjectiveConfig {
    long t_opt = 900;     // validation window following the training segment
    int n_rep = 3;        // independent seeds averaged per evaluation
    long warmup = 100;    // ground-truth warmup steps before prediction
    std::uint64_t seed = 0;
    TrainConfig train_cfg{};
    bool rmse_sum_channels = false;
};

/// Objective used by hyperparameter optimization: mean validation RMSE of
/// n_rep independently seeded train/predict runs over the T_opt window that
/// immediately follows the training data. Returns +inf when every repetition
/// diverges (the optimizer records it as a capped value).
inline double reservoir_objective(const Dataset& dataset, const Hyperparams& hp,
                                  const ObjectiveConfig& cfg) {
    dataset.validate();
    const long t0 = dataset.split.test_start;
    if (t0 + cfg.t_opt > dataset.steps())
        throw ConfigError("reservoir_objective: T_opt exceeds test window");
    const Matrix warmup =
        dataset.data.block(0, t0 - cfg.warmup, dataset.channels(), cfg.warmup);
    const Matrix truth =
        dataset.data.block(0, t0, dataset.channels(), cfg.t_opt);

    double acc = 0.0;
    int finite = 0;
    for (int rep = 0; rep < cfg.n_rep; ++rep) {
        const std::uint64_t s = derive_seed(cfg.seed, 0x0B, rep);
        try {
            TrainedModel m = train(dataset, hp, s, cfg.train_cfg);
            Prediction pred = predict(m, warmup, cfg.t_opt);
            const double r =
                rmse(pred.values, truth, cfg.rmse_sum_channels);
            if (std::isfinite(r)) {
                acc += r;
                ++finite;
            }
        } catch (const NumericalError&) {
            // diverged or degenerate repetition; skipped
        }
    }
    if (finite == 0) return std::numeric_limits<double>::infinity();
    return acc / finite;
}

} // namespace nrc
