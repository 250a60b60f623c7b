#pragma once

#include "nrc/common.hpp"
#include "nrc/dynsys.hpp"

#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

namespace nrc {

using SparseMatrix = Eigen::SparseMatrix<double>;

struct Hyperparams {
    double rho = 1.0;    // target spectral radius
    double gamma = 0.5;  // input weight scale
    double alpha = 0.5;  // leakage
    double beta = 1e-6;  // ridge regularization
    double p = 0.1;      // link probability
    double sigma = 0.0;  // training-noise std
    int n_nodes = 1200;

    void validate() const {
        if (!(alpha > 0.0 && alpha <= 1.0))
            throw ConfigError("Hyperparams: alpha in (0,1]");
        if (!(rho > 0.0)) throw ConfigError("Hyperparams: rho > 0");
        if (!(gamma > 0.0)) throw ConfigError("Hyperparams: gamma > 0");
        if (!(p > 0.0 && p <= 1.0)) throw ConfigError("Hyperparams: p in (0,1]");
        if (!(beta >= 0.0)) throw ConfigError("Hyperparams: beta >= 0");
        if (!(sigma >= 0.0)) throw ConfigError("Hyperparams: sigma >= 0");
        if (n_nodes < 1) throw ConfigError("Hyperparams: n_nodes >= 1");
    }
};

/// Magnitude-only estimate of the leading eigenvalue via power iteration.
/// The per-step growth factor oscillates when the leading eigenvalues form a
/// complex pair, so the estimate averages log-growth over a trailing window.
inline double spectral_radius_estimate(const SparseMatrix& A,
                                       std::uint64_t seed,
                                       int max_iters = 1000,
                                       double tol = 1e-6) {
    const long n = A.rows();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Vector v(n);
    for (long i = 0; i < n; ++i) v(i) = u(rng);
    v.normalize();

    constexpr int window = 64;
    std::vector<double> log_growth;
    log_growth.reserve(max_iters);
    double estimate = 0.0, prev = -1.0;
    for (int it = 0; it < max_iters; ++it) {
        Vector w = A * v;
        const double norm = w.norm();
        if (norm < 1e-300) return 0.0;
        v = w / norm;
        log_growth.push_back(std::log(norm));
        const int m = std::min<int>(window, static_cast<int>(log_growth.size()));
        double acc = std::accumulate(log_growth.end() - m, log_growth.end(), 0.0);
        estimate = std::exp(acc / m);
        if (it >= window && std::abs(estimate - prev) < tol * estimate) break;
        prev = estimate;
    }
    return estimate;
}

/// Rescale A in place so its spectral radius is rho. Exposed separately so
/// tests can drive it with hand-built matrices.
inline void rescale_to_spectral_radius(SparseMatrix& A, double rho,
                                       std::uint64_t seed) {
    const double sr = spectral_radius_estimate(A, seed);
    if (sr < 1e-12)
        throw NumericalError(
            "rescale_to_spectral_radius: numerically zero spectral radius");
    A *= rho / sr;
}

struct Reservoir {
    SparseMatrix A;  // n_nodes x n_nodes, spectral radius rho
    Matrix W_in;     // n_nodes x D, one nonzero per row
    double alpha = 1.0;
    Vector state;    // n_nodes

    long n_nodes() const { return A.rows(); }
    long input_dim() const { return W_in.cols(); }
    void reset() { state.setZero(); }

    /// One leaky-tanh update consuming input u.
    void step(const Eigen::Ref<const Vector>& u) {
        state = (1.0 - alpha) * state +
                alpha * (A * state + W_in * u).array().tanh().matrix();
    }
};

/// Erdos-Renyi recurrent matrix with link probability p and uniform [-1,1]
/// weights, rescaled so the power-iteration spectral radius equals rho.
/// W_in assigns each node one input channel (round-robin, then shuffled)
/// with weight uniform in [-gamma, gamma].
inline Reservoir build_reservoir(const Hyperparams& hp, int input_dim,
                                 std::uint64_t seed) {
    hp.validate();
    if (input_dim < 1) throw ConfigError("build_reservoir: input_dim >= 1");
    if (hp.n_nodes < input_dim)
        throw ConfigError("build_reservoir: n_nodes >= input_dim");

    const int n = hp.n_nodes;
    std::mt19937_64 rng(derive_seed(seed, 0xA1));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> w(-1.0, 1.0);

    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<size_t>(hp.p * n * double(n) * 1.1) + 16);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i)
            if (unit(rng) < hp.p) trips.emplace_back(i, j, w(rng));

    Reservoir r;
    r.A.resize(n, n);
    r.A.setFromTriplets(trips.begin(), trips.end());
    if (trips.empty())
        throw NumericalError("build_reservoir: empty recurrent matrix");
    rescale_to_spectral_radius(r.A, hp.rho, derive_seed(seed, 0xA2));

    std::vector<int> channel(n);
    for (int i = 0; i < n; ++i) channel[i] = i % input_dim;
    std::shuffle(channel.begin(), channel.end(), rng);
    std::uniform_real_distribution<double> win(-hp.gamma, hp.gamma);
    r.W_in = Matrix::Zero(n, input_dim);
    for (int i = 0; i < n; ++i) r.W_in(i, channel[i]) = win(rng);

    r.alpha = hp.alpha;
    r.state = Vector::Zero(n);
    return r;
}

enum class NoiseMode { series, input_only };

/// Add i.i.d. Gaussian(0, sigma^2) noise to every entry.
inline Matrix add_noise(const Matrix& series, double sigma,
                        std::uint64_t seed) {
    if (sigma < 0) throw ConfigError("add_noise: sigma >= 0");
    if (sigma == 0.0) return series;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, sigma);
    Matrix out = series;
    for (long j = 0; j < out.cols(); ++j)
        for (long i = 0; i < out.rows(); ++i) out(i, j) += gauss(rng);
    return out;
}

/// Teacher-forced drive: feeds each input column in turn and records the
/// post-update state. The reservoir state is left at its final value.
inline Matrix drive(Reservoir& r, const Eigen::Ref<const Matrix>& inputs) {
    if (inputs.rows() != r.input_dim())
        throw DimensionError("drive: input dimension mismatch");
    const long T = inputs.cols();
    Matrix states(r.n_nodes(), T);
    for (long t = 0; t < T; ++t) {
        r.step(inputs.col(t));
        if (!r.state.allFinite())
            throw DivergedError("drive: non-finite state at step " +
                                std::to_string(t));
        states.col(t) = r.state;
    }
    return states;
}

/// Ridge regression of targets on augmented states [r; r^2]:
/// W_out = Y X^T (X X^T + beta I)^{-1}, solved by LDLT factorization.
inline Matrix train_readout(const Eigen::Ref<const Matrix>& states,
                            const Eigen::Ref<const Matrix>& targets,
                            double beta) {
    if (states.cols() != targets.cols())
        throw DimensionError("train_readout: states/targets length mismatch");
    const long n = states.rows(), T = states.cols();
    Matrix X(2 * n, T);
    X.topRows(n) = states;
    X.bottomRows(n) = states.array().square();

    Matrix G = Matrix::Zero(2 * n, 2 * n);
    G.selfadjointView<Eigen::Lower>().rankUpdate(X);
    G.diagonal().array() += beta;
    Matrix B = X * targets.transpose(); // (2n) x D

    Eigen::LDLT<Matrix> ldlt(G.selfadjointView<Eigen::Lower>());
    const Vector d = ldlt.vectorD();
    const double dmax = d.cwiseAbs().maxCoeff();
    if (beta == 0.0 && d.cwiseAbs().minCoeff() < 1e-12 * dmax)
        throw NumericalError("train_readout: rank-deficient system, beta=0");
    Matrix W_out = ldlt.solve(B).transpose(); // D x 2n
    if (!W_out.allFinite())
        throw NumericalError("train_readout: non-finite readout");
    return W_out;
}

struct TrainConfig {
    long washout = 1000;
    NoiseMode noise_mode = NoiseMode::series;
};

struct TrainedModel {
    Reservoir reservoir;
    Matrix W_out;          // D x 2 n_nodes
    Hyperparams hyperparams;
    std::uint64_t seed = 0;
    double fit_rmse = 0.0;
    NormStats norm;

    /// Readout of an arbitrary state vector.
    Vector readout(const Vector& state) const {
        const long n = state.size();
        Vector aug(2 * n);
        aug.head(n) = state;
        aug.tail(n) = state.array().square();
        return W_out * aug;
    }
};

/// Train a reservoir on the dataset's training segment: inject noise, drive,
/// discard washout, fit the one-step-ahead readout (state after consuming
/// u(t) predicts u(t+1)).
inline TrainedModel train(const Dataset& dataset, const Hyperparams& hp,
                          std::uint64_t seed, const TrainConfig& cfg = {}) {
    dataset.validate();
    const Matrix segment = dataset.train();
    const long T = segment.cols();
    if (cfg.washout + 2 >= T)
        throw ConfigError("train: training segment shorter than washout");

    const Matrix noisy = add_noise(segment, hp.sigma, derive_seed(seed, 0xE1));
    const auto& target_src = cfg.noise_mode == NoiseMode::series ? noisy
                                                                 : segment;

    TrainedModel m;
    m.reservoir = build_reservoir(hp, static_cast<int>(segment.rows()), seed);
    m.hyperparams = hp;
    m.seed = seed;
    m.norm = dataset.norm;

    Matrix states = drive(m.reservoir, noisy.leftCols(T - 1));
    Matrix targets = target_src.rightCols(T - 1);
    m.W_out = train_readout(states.rightCols(T - 1 - cfg.washout),
                            targets.rightCols(T - 1 - cfg.washout), hp.beta);

    // Fit error on the post-washout training segment (open loop).
    const long Tfit = T - 1 - cfg.washout;
    Matrix Xfit(2 * m.reservoir.n_nodes(), Tfit);
    Xfit.topRows(m.reservoir.n_nodes()) = states.rightCols(Tfit);
    Xfit.bottomRows(m.reservoir.n_nodes()) =
        states.rightCols(Tfit).array().square();
    Matrix resid = m.W_out * Xfit - targets.rightCols(Tfit);
    m.fit_rmse = std::sqrt(resid.array().square().mean());
    return m;
}

struct Prediction {
    Matrix values;        // D x horizon; NaN from valid_steps onward
    long valid_steps = 0;
    bool diverged() const { return valid_steps < values.cols(); }
};

/// Closed-loop prediction: drive with clean warmup, then feed the readout
/// back as the next input. A non-finite state ends the run; remaining steps
/// are NaN and the run is reported as diverged rather than throwing.
inline Prediction predict(const TrainedModel& model,
                          const Eigen::Ref<const Matrix>& warmup,
                          long horizon) {
    Reservoir r = model.reservoir;
    r.reset();
    if (warmup.cols() > 0) {
        if (warmup.rows() != r.input_dim())
            throw DimensionError("predict: warmup dimension mismatch");
        for (long t = 0; t < warmup.cols(); ++t) {
            r.step(warmup.col(t));
            if (!r.state.allFinite())
                throw DivergedError("predict: diverged during warmup");
        }
    }
    Prediction pred;
    pred.values = Matrix::Constant(r.input_dim(), horizon,
                                   std::numeric_limits<double>::quiet_NaN());
    for (long t = 0; t < horizon; ++t) {
        Vector v = model.readout(r.state);
        if (!v.allFinite()) break;
        pred.values.col(t) = v;
        pred.valid_steps = t + 1;
        r.step(v);
        if (!r.state.allFinite()) break;
    }
    return pred;
}

} // namespace nrc
