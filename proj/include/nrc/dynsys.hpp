#pragma once

#include "nrc/common.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace nrc {

// ---------------------------------------------------------------------------
// Mackey-Glass: ds/dt = a s(t-tau) / (1 + s(t-tau)^c) - b s(t)
// ---------------------------------------------------------------------------

struct MGParams {
    double a = 0.2;
    double b = 0.1;
    double c = 10.0;
    double tau = 17.0;
    double h = 0.01;
    int sample_every = 100; // sampling step dt = sample_every * h

    void validate() const {
        if (h <= 0) throw ConfigError("MGParams: h must be positive");
        if (tau <= 0) throw ConfigError("MGParams: tau must be positive");
        if (sample_every < 1) throw ConfigError("MGParams: sample_every >= 1");
        const double steps = tau / h;
        if (std::abs(steps - std::round(steps)) > 1e-9 * steps)
            throw ConfigError("MGParams: tau/h must be an integer");
    }

    int delay_steps() const { return static_cast<int>(std::round(tau / h)); }
    double dt() const { return sample_every * h; }
};

using HistoryFn = std::function<double(double)>; // defined on [-tau, 0]

inline HistoryFn constant_history(double value) {
    return [value](double) { return value; };
}

/// Integrate the MG delay equation with fixed-step RK4. The delayed term is
/// read from a circular buffer of past grid values; substage delay values are
/// linearly interpolated between adjacent buffer entries. Returns n_samples
/// values taken every sample_every steps, after discarding transient_samples.
inline Vector mg_integrate(const MGParams& p, const HistoryFn& history,
                           long n_samples, long transient_samples) {
    p.validate();
    if (n_samples < 1) throw ConfigError("mg_integrate: n_samples >= 1");
    if (transient_samples < 0)
        throw ConfigError("mg_integrate: transient_samples >= 0");

    const int d = p.delay_steps();
    const long buf_len = d + 1;
    std::vector<double> buf(buf_len);
    // buf holds s at the most recent buf_len grid times; index via modulo.
    for (int i = 0; i <= d; ++i) buf[i] = history((i - d) * p.h);

    auto rhs = [&p](double s, double s_delayed) {
        return p.a * s_delayed / (1.0 + std::pow(s_delayed, p.c)) - p.b * s;
    };

    Vector out(n_samples);
    double s = buf[d % buf_len];
    long head = d; // grid index of the newest buffer entry
    const long total_steps = (transient_samples + n_samples) * p.sample_every;
    long produced = 0;
    for (long n = 0; n < total_steps; ++n) {
        // Delayed values at t, t+h/2, t+h; d >= 1 so all are already known.
        const double sd0 = buf[(head - d) % buf_len];
        const double sd1 = buf[(head - d + 1) % buf_len];
        const double sdh = 0.5 * (sd0 + sd1);

        const double k1 = rhs(s, sd0);
        const double k2 = rhs(s + 0.5 * p.h * k1, sdh);
        const double k3 = rhs(s + 0.5 * p.h * k2, sdh);
        const double k4 = rhs(s + p.h * k3, sd1);
        s += p.h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!std::isfinite(s))
            throw DivergedError("mg_integrate: non-finite state at step " +
                                std::to_string(n));
        ++head;
        buf[head % buf_len] = s;
        if ((n + 1) % p.sample_every == 0) {
            const long sample_idx = (n + 1) / p.sample_every - 1;
            if (sample_idx >= transient_samples) out(produced++) = s;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Kuramoto-Sivashinsky: u_t + mu u_xxxx + phi (u_xx + u u_x) = 0, periodic.
// ---------------------------------------------------------------------------

struct KSParams {
    double mu = 1.0;
    double phi = 1.0;
    double L = 60.0;
    int Q = 64;
    double dt = 0.25;

    void validate() const {
        if (L <= 0) throw ConfigError("KSParams: L must be positive");
        if (dt <= 0) throw ConfigError("KSParams: dt must be positive");
        if (Q < 16 || (Q & (Q - 1)) != 0)
            throw ConfigError("KSParams: Q must be a power of two >= 16");
    }
};

namespace detail {

// ETDRK4 scalar coefficients, contour-averaged over 16 points on the unit
// circle around each h*lambda to avoid cancellation for small |h*lambda|.
struct Etdrk4Coeffs {
    // Real-valued, stored complex so they combine directly with spectra.
    Eigen::ArrayXcd E, E2, Q, f1, f2, f3;
};

inline Etdrk4Coeffs etdrk4_coeffs(const Vector& lam, double dt) {
    const int n = static_cast<int>(lam.size());
    constexpr int M = 16;
    Etdrk4Coeffs c;
    c.E.resize(n);
    c.E2.resize(n);
    c.Q.resize(n);
    c.f1.resize(n);
    c.f2.resize(n);
    c.f3.resize(n);
    for (int j = 0; j < n; ++j) {
        const double z = dt * lam(j);
        c.E(j) = std::exp(z);
        c.E2(j) = std::exp(0.5 * z);
        std::complex<double> q = 0, f1 = 0, f2 = 0, f3 = 0;
        for (int m = 0; m < M; ++m) {
            const double theta = M_PI * (m + 0.5) / M;
            const std::complex<double> r(std::cos(theta), std::sin(theta));
            const std::complex<double> zr = z + r;
            const std::complex<double> ez = std::exp(zr);
            const std::complex<double> zr3 = zr * zr * zr;
            q += (std::exp(0.5 * zr) - 1.0) / zr;
            f1 += (-4.0 - zr + ez * (4.0 - 3.0 * zr + zr * zr)) / zr3;
            f2 += (2.0 + zr + ez * (-2.0 + zr)) / zr3;
            f3 += (-4.0 - 3.0 * zr - zr * zr + ez * (4.0 - zr)) / zr3;
        }
        c.Q(j) = dt * q.real() / M;
        c.f1(j) = dt * f1.real() / M;
        c.f2(j) = dt * f2.real() / M;
        c.f3(j) = dt * f3.real() / M;
    }
    return c;
}

} // namespace detail

/// Pseudo-spectral ETDRK4 integration of the KS equation with periodic
/// boundary conditions. The nonlinear term u u_x is evaluated in physical
/// space with 2/3-rule dealiasing. Returns a Q x n_samples matrix of real
/// field samples, one per integration step after the transient.
inline Matrix ks_integrate(const KSParams& p, const Vector& u0, long n_samples,
                           long transient_samples) {
    p.validate();
    if (u0.size() != p.Q) throw DimensionError("ks_integrate: u0 size != Q");
    if (n_samples < 1) throw ConfigError("ks_integrate: n_samples >= 1");

    const int Q = p.Q;
    using Cplx = std::complex<double>;
    using CVector = Eigen::VectorXcd;

    // FFT wavenumbers, standard ordering 0..Q/2-1, -Q/2..-1.
    Vector k(Q), lam(Q);
    std::vector<bool> keep(Q);
    for (int j = 0; j < Q; ++j) {
        const int jj = (j <= Q / 2) ? j : j - Q;
        k(j) = 2.0 * M_PI * jj / p.L;
        const double k2 = k(j) * k(j);
        lam(j) = p.phi * k2 - p.mu * k2 * k2;
        keep[j] = std::abs(jj) <= Q / 3; // 2/3-rule dealiasing mask
    }
    const auto c = detail::etdrk4_coeffs(lam, p.dt);

    Eigen::FFT<double> fft;
    CVector v(Q), tmp(Q), phys(Q);
    {
        CVector u0c = u0.cast<Cplx>();
        fft.fwd(v, u0c);
    }

    auto nonlinear = [&](const CVector& vhat, CVector& out) {
        tmp = vhat;
        for (int j = 0; j < Q; ++j)
            if (!keep[j]) tmp(j) = 0.0;
        fft.inv(phys, tmp);
        for (int j = 0; j < Q; ++j) {
            const double u = phys(j).real();
            phys(j) = Cplx(u * u, 0.0);
        }
        fft.fwd(out, phys);
        for (int j = 0; j < Q; ++j)
            out(j) = keep[j] ? Cplx(0.0, -0.5 * p.phi * k(j)) * out(j) : 0.0;
    };

    Matrix out(Q, n_samples);
    CVector nv(Q), na(Q), nb(Q), nc(Q), a(Q), b(Q), cc(Q);
    const long total = transient_samples + n_samples;
    for (long n = 0; n < total; ++n) {
        nonlinear(v, nv);
        a = (c.E2 * v.array() + c.Q * nv.array()).matrix();
        nonlinear(a, na);
        b = (c.E2 * v.array() + c.Q * na.array()).matrix();
        nonlinear(b, nb);
        cc = (c.E2 * a.array() + c.Q * (2.0 * nb.array() - nv.array()))
                 .matrix();
        nonlinear(cc, nc);
        v = (c.E * v.array() + c.f1 * nv.array() +
             c.f2 * 2.0 * (na.array() + nb.array()) + c.f3 * nc.array())
                .matrix();
        if (!v.allFinite())
            throw DivergedError("ks_integrate: non-finite spectrum at step " +
                                std::to_string(n));
        if (n >= transient_samples) {
            fft.inv(phys, v);
            for (int j = 0; j < Q; ++j)
                out(j, n - transient_samples) = phys(j).real();
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization and dataset assembly
// ---------------------------------------------------------------------------

struct NormStats {
    Vector mean; // per channel
    Vector std;  // per channel, population convention
};

/// z-score normalization, population std (divide by n). With shared=true a
/// single (mean, std) over all channels is applied, preserving spatial
/// structure of multichannel fields.
inline std::pair<Matrix, NormStats> normalize(const Matrix& raw,
                                              bool shared = false) {
    const long ch = raw.rows(), n = raw.cols();
    if (n < 1) throw DimensionError("normalize: empty input");
    NormStats stats;
    stats.mean.resize(ch);
    stats.std.resize(ch);
    if (shared) {
        const double m = raw.mean();
        const double sd = std::sqrt((raw.array() - m).square().mean());
        if (sd < 1e-12 * (std::abs(m) + 1.0))
            throw NumericalError("normalize: degenerate (zero-variance) data");
        stats.mean.setConstant(m);
        stats.std.setConstant(sd);
    } else {
        for (long i = 0; i < ch; ++i) {
            const double m = raw.row(i).mean();
            const double sd =
                std::sqrt((raw.row(i).array() - m).square().mean());
            if (sd < 1e-12 * (std::abs(m) + 1.0))
                throw NumericalError("normalize: degenerate channel " +
                                     std::to_string(i));
            stats.mean(i) = m;
            stats.std(i) = sd;
        }
    }
    Matrix z = (raw.colwise() - stats.mean).array().colwise() /
               stats.std.array();
    return {std::move(z), std::move(stats)};
}

inline Matrix denormalize(const Matrix& z, const NormStats& stats) {
    return (z.array().colwise() * stats.std.array()).colwise() +
           stats.mean.array();
}

struct SplitSpec {
    long train_start = 0;
    long train_len = 0;
    long test_start = 0;
    long test_len = 0;
};

struct Dataset {
    std::string system;             // "mg" or "ks"
    Matrix data;                    // channels x steps, normalized
    double dt = 1.0;                // sampling step in time units
    NormStats norm;
    SplitSpec split;
    double lyapunov_time = 0.0;     // 1/lambda_max, metadata
    std::vector<std::pair<std::string, double>> gen_params;

    long channels() const { return data.rows(); }
    long steps() const { return data.cols(); }

    Eigen::Block<const Matrix> train() const {
        return data.block(0, split.train_start, data.rows(), split.train_len);
    }
    Eigen::Block<const Matrix> test() const {
        return data.block(0, split.test_start, data.rows(), split.test_len);
    }

    void validate() const {
        if (!data.allFinite())
            throw NumericalError("Dataset: non-finite entries");
        if (split.train_start < 0 || split.train_len < 1 ||
            split.train_start + split.train_len > steps())
            throw ConfigError("Dataset: train split out of bounds");
        if (split.test_start < split.train_start + split.train_len ||
            split.test_len < 1 || split.test_start + split.test_len > steps())
            throw ConfigError("Dataset: test split invalid");
    }
};

// Largest Lyapunov exponents of the target systems; constants, not computed.
inline double mg_lambda_max(double tau) { return tau >= 25.0 ? 0.011 : 0.006; }
constexpr double ks_lambda_max = 0.089;

struct MGGenConfig {
    MGParams params{};
    long transient = 10000;   // samples discarded, in units of dt
    long train_len = 150000;  // samples
    long test_len = 11000;    // samples
    std::uint64_t seed = 1;
};

struct KSGenConfig {
    KSParams params{};
    // Defaults follow the Lyapunov-time bookkeeping: transient ~300 Lyapunov
    // times, training ~1000, testing 100 (long-term window).
    long transient = -1;  // -1: derive from Lyapunov times
    long train_len = -1;
    long test_len = -1;
    std::uint64_t seed = 1;
};

inline Dataset build_mg_dataset(const MGGenConfig& cfg) {
    cfg.params.validate();
    if (cfg.train_len < 1 || cfg.test_len < 1)
        throw ConfigError("build_mg_dataset: lengths must be positive");
    std::mt19937_64 rng(derive_seed(cfg.seed, 0xD5));
    std::uniform_real_distribution<double> pert(-0.1, 0.1);
    const double init = 1.2 + pert(rng);
    const long total = cfg.train_len + cfg.test_len;
    Vector raw = mg_integrate(cfg.params, constant_history(init), total,
                              cfg.transient);
    Dataset ds;
    ds.system = "mg";
    auto [z, stats] = normalize(raw.transpose());
    ds.data = std::move(z);
    ds.norm = std::move(stats);
    ds.dt = cfg.params.dt();
    ds.split = {0, cfg.train_len, cfg.train_len, cfg.test_len};
    ds.lyapunov_time = 1.0 / mg_lambda_max(cfg.params.tau);
    ds.gen_params = {{"a", cfg.params.a},     {"b", cfg.params.b},
                     {"c", cfg.params.c},     {"tau", cfg.params.tau},
                     {"h", cfg.params.h},
                     {"sample_every", double(cfg.params.sample_every)},
                     {"seed", double(cfg.seed)}};
    ds.validate();
    return ds;
}

inline Dataset build_ks_dataset(const KSGenConfig& cfg) {
    cfg.params.validate();
    const double lyap = 1.0 / ks_lambda_max;
    auto in_steps = [&](double lyap_times) {
        return static_cast<long>(std::ceil(lyap_times * lyap / cfg.params.dt));
    };
    const long transient = cfg.transient >= 0 ? cfg.transient : in_steps(300);
    const long train_len = cfg.train_len > 0 ? cfg.train_len : in_steps(1000);
    const long test_len = cfg.test_len > 0 ? cfg.test_len : in_steps(100);
    std::mt19937_64 rng(derive_seed(cfg.seed, 0xB2));
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    Vector u0(cfg.params.Q);
    for (int i = 0; i < cfg.params.Q; ++i) u0(i) = u(rng);
    Matrix raw =
        ks_integrate(cfg.params, u0, train_len + test_len, transient);
    Dataset ds;
    ds.system = "ks";
    auto [z, stats] = normalize(raw, /*shared=*/true);
    ds.data = std::move(z);
    ds.norm = std::move(stats);
    ds.dt = cfg.params.dt;
    ds.split = {0, train_len, train_len, test_len};
    ds.lyapunov_time = lyap;
    ds.gen_params = {{"mu", cfg.params.mu}, {"phi", cfg.params.phi},
                     {"L", cfg.params.L},   {"Q", double(cfg.params.Q)},
                     {"dt", cfg.params.dt}, {"seed", double(cfg.seed)}};
    ds.validate();
    return ds;
}

} // namespace nrc
