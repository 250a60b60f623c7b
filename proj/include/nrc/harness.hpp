#pragma once

#include "nrc/common.hpp"
#include "nrc/dynsys.hpp"
#include "nrc/hyperopt.hpp"
#include "nrc/io.hpp"
#include "nrc/metrics.hpp"
#include "nrc/reservoir.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace nrc {

// ---------------------------------------------------------------------------
// Small utilities
// ---------------------------------------------------------------------------

inline int thread_count() {
    if (const char* env = std::getenv("NRC_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc ? static_cast<int>(hc) : 1;
}

/// Index-parallel loop; every index writes only its own slot, so scheduling
/// cannot change results.
template <typename Fn>
void parallel_for(long n, Fn&& fn) {
    const int workers = std::min<long>(thread_count(), n);
    if (workers <= 1) {
        for (long i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<long> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (long i = next.fetch_add(1); i < n; i = next.fetch_add(1))
                fn(i);
        });
    for (auto& t : pool) t.join();
}

inline double mean_of(const std::vector<double>& v) {
    double acc = 0;
    for (double x : v) acc += x;
    return v.empty() ? 0.0 : acc / v.size();
}

inline double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double acc = 0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / v.size());
}

inline double median_of(std::vector<double> v) {
    if (v.empty()) throw ConfigError("median_of: empty");
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// Ensemble evaluation
// ---------------------------------------------------------------------------

struct RunResult {
    double rmse = 0.0;
    double t_s = 0.0;
    bool stable = false;
    double dv = 0.0;
};

struct EnsembleConfig {
    int n = 80;
    std::uint64_t master_seed = 1;
    std::uint64_t sigma_index = 0;  // stream index separating sweep points
    MetricConfig metric{};
    long dv_window = 10000;  // steps of closed-loop run scored by DV
    long warmup = 100;
    TrainConfig train_cfg{};
};

struct EnsembleResult {
    std::vector<RunResult> runs;
    double rmse_mean = 0, rmse_std = 0;
    double Rs = 0;
    double ts_mean = 0, ts_std = 0;
    double dv_mean = 0, dv_std = 0;

    void aggregate(double r_c) {
        std::vector<double> rs, ts, dvs;
        for (const auto& r : runs) {
            rs.push_back(r.rmse);
            ts.push_back(r.t_s);
            dvs.push_back(r.dv);
        }
        rmse_mean = mean_of(rs);
        rmse_std = std_of(rs);
        Rs = stability(rs, r_c);
        ts_mean = mean_of(ts);
        ts_std = std_of(ts);
        dv_mean = mean_of(dvs);
        dv_std = std_of(dvs);
    }
};

/// Train/predict `n` independently seeded reservoirs and score each run with
/// the short-term measures (windowed RMSE, horizon, stability indicator) and
/// the long-term deviation value. Per-run seeds depend only on
/// (master_seed, sigma_index, run_index). Diverged runs are recorded with
/// rmse = +inf and a capped DV, never aborted.
inline EnsembleResult run_ensemble(const Dataset& dataset,
                                   const Hyperparams& hp,
                                   const EnsembleConfig& cfg) {
    dataset.validate();
    if (cfg.n < 1) throw ConfigError("run_ensemble: n >= 1");
    const long t0 = dataset.split.test_start;
    const long L = std::min<long>(std::max(cfg.metric.window, cfg.dv_window),
                                  dataset.split.test_len);
    const Matrix warm =
        dataset.data.block(0, t0 - cfg.warmup, dataset.channels(), cfg.warmup);
    const Matrix truth = dataset.data.block(0, t0, dataset.channels(), L);
    const Matrix truth_ref = dataset.test();
    const long w = std::min<long>(cfg.metric.window, L);

    EnsembleResult res;
    res.runs.resize(cfg.n);
    parallel_for(cfg.n, [&](long i) {
        const std::uint64_t seed =
            derive_seed(cfg.master_seed, cfg.sigma_index, i);
        RunResult r;
        try {
            TrainedModel m = train(dataset, hp, seed, cfg.train_cfg);
            Prediction pred = predict(m, warm, L);
            r.rmse = rmse(pred.values.leftCols(w), truth.leftCols(w),
                          cfg.metric.rmse_sum_channels);
            r.t_s = horizon(pred.values, truth, cfg.metric.r_c, dataset.dt,
                            cfg.metric.horizon_expanding);
            r.stable = r.rmse < cfg.metric.r_c;
            r.dv = deviation_value(pred.values, truth_ref,
                                   cfg.metric.projection,
                                   cfg.metric.dv_subsample);
        } catch (const NumericalError&) {
            r.rmse = std::numeric_limits<double>::infinity();
            r.t_s = 0.0;
            r.stable = false;
            // Capped penalty: same convention deviation_value applies to
            // non-finite points.
            r.dv = 10.0;
        }
        res.runs[i] = r;
    });
    res.aggregate(cfg.metric.r_c);
    return res;
}

// ---------------------------------------------------------------------------
// Noise-amplitude sweep with per-sigma re-optimization
// ---------------------------------------------------------------------------

struct SweepConfig {
    std::vector<double> sigma_grid;  // within [1e-8, 10^-0.5]
    int n_ensemble = 80;
    int opt_budget = 150;
    int opt_n_rep = 3;
    long t_opt = 300;
    int n_nodes = 1200;
    MetricConfig metric{};
    long dv_window = 10000;
    long warmup = 100;
    TrainConfig train_cfg{};
    std::uint64_t master_seed = 1;
    SearchSpace space = default_hyperparam_space();
    std::string checkpoint_dir;  // empty disables checkpointing

    void validate() const {
        if (sigma_grid.empty()) throw ConfigError("SweepConfig: empty grid");
        for (double s : sigma_grid)
            if (s < 1e-8 * (1 - 1e-9) || s > std::pow(10.0, -0.5) * (1 + 1e-9))
                throw ConfigError(
                    "SweepConfig: sigma outside [1e-8, 10^-0.5]");
    }
};

struct SweepRecord {
    double sigma = 0.0;
    Hyperparams hp;  // the five optimized values plus the frozen sigma
    EnsembleResult ensemble;
};

namespace detail {

inline std::string record_path(const std::string& dir, size_t idx) {
    return dir + "/sigma_" + std::to_string(idx) + ".rec";
}

inline void save_record(const SweepRecord& r, const std::string& path) {
    std::ofstream os(path + ".tmp");
    if (!os) throw ConfigError("save_record: cannot open " + path);
    auto f = io::format_double;
    os << "sigma " << f(r.sigma) << "\n";
    os << "rho " << f(r.hp.rho) << "\n";
    os << "gamma " << f(r.hp.gamma) << "\n";
    os << "alpha " << f(r.hp.alpha) << "\n";
    os << "beta " << f(r.hp.beta) << "\n";
    os << "p " << f(r.hp.p) << "\n";
    os << "n_nodes " << r.hp.n_nodes << "\n";
    os << "runs " << r.ensemble.runs.size() << "\n";
    for (const auto& run : r.ensemble.runs)
        os << "run " << f(run.rmse) << " " << f(run.t_s) << " "
           << (run.stable ? 1 : 0) << " " << f(run.dv) << "\n";
    os.close();
    std::filesystem::rename(path + ".tmp", path);
}

inline SweepRecord load_record(const std::string& path, double r_c) {
    std::ifstream is(path);
    if (!is) throw ConfigError("load_record: cannot open " + path);
    SweepRecord r;
    std::string key;
    long n_runs = 0;
    while (is >> key) {
        std::string v;
        if (key == "run") {
            RunResult run;
            std::string a, b, c, d;
            is >> a >> b >> c >> d;
            run.rmse = io::parse_double(a);
            run.t_s = io::parse_double(b);
            run.stable = c == "1";
            run.dv = io::parse_double(d);
            r.ensemble.runs.push_back(run);
            continue;
        }
        is >> v;
        if (key == "sigma") r.sigma = io::parse_double(v);
        else if (key == "rho") r.hp.rho = io::parse_double(v);
        else if (key == "gamma") r.hp.gamma = io::parse_double(v);
        else if (key == "alpha") r.hp.alpha = io::parse_double(v);
        else if (key == "beta") r.hp.beta = io::parse_double(v);
        else if (key == "p") r.hp.p = io::parse_double(v);
        else if (key == "n_nodes") r.hp.n_nodes = std::stoi(v);
        else if (key == "runs") n_runs = std::stol(v);
        else throw ConfigError("load_record: unknown key " + key);
    }
    if (static_cast<long>(r.ensemble.runs.size()) != n_runs)
        throw ConfigError("load_record: run count mismatch in " + path);
    r.hp.sigma = r.sigma;
    r.ensemble.aggregate(r_c);
    return r;
}

} // namespace detail

/// For each sigma on the grid: freeze it, optimize the remaining five
/// hyperparameters with the surrogate optimizer, then evaluate an ensemble.
/// A completed record file per sigma makes interrupted sweeps resumable;
/// resumed and uninterrupted sweeps produce identical records.
inline std::vector<SweepRecord> run_sweep(const Dataset& dataset,
                                          const SweepConfig& cfg) {
    cfg.validate();
    dataset.validate();
    const bool ckpt = !cfg.checkpoint_dir.empty();
    if (ckpt) std::filesystem::create_directories(cfg.checkpoint_dir);

    std::vector<SweepRecord> records;
    for (size_t si = 0; si < cfg.sigma_grid.size(); ++si) {
        const double sigma = cfg.sigma_grid[si];
        if (ckpt) {
            const auto path = detail::record_path(cfg.checkpoint_dir, si);
            if (std::filesystem::exists(path)) {
                records.push_back(detail::load_record(path, cfg.metric.r_c));
                continue;
            }
        }
        SearchSpace space = cfg.space;
        bool found = false;
        for (auto& d : space.dims)
            if (d.name == "sigma") {
                d.frozen = sigma;
                found = true;
            }
        if (!found) throw ConfigError("run_sweep: space lacks sigma dim");

        ObjectiveConfig ocfg;
        ocfg.t_opt = cfg.t_opt;
        ocfg.n_rep = cfg.opt_n_rep;
        ocfg.warmup = cfg.warmup;
        ocfg.train_cfg = cfg.train_cfg;
        ocfg.rmse_sum_channels = cfg.metric.rmse_sum_channels;
        ocfg.seed = derive_seed(cfg.master_seed, 0x0A11, si);

        auto objective = [&](const Vector& x) {
            return reservoir_objective(dataset, to_hyperparams(x, cfg.n_nodes),
                                       ocfg);
        };
        OptResult opt = optimize(objective, space, cfg.opt_budget,
                                 derive_seed(cfg.master_seed, 0x50, si));

        SweepRecord rec;
        rec.sigma = sigma;
        rec.hp = to_hyperparams(opt.best_point, cfg.n_nodes);
        EnsembleConfig ecfg;
        ecfg.n = cfg.n_ensemble;
        ecfg.master_seed = cfg.master_seed;
        ecfg.sigma_index = si;
        ecfg.metric = cfg.metric;
        ecfg.dv_window = cfg.dv_window;
        ecfg.warmup = cfg.warmup;
        ecfg.train_cfg = cfg.train_cfg;
        rec.ensemble = run_ensemble(dataset, rec.hp, ecfg);
        if (ckpt)
            detail::save_record(rec,
                                detail::record_path(cfg.checkpoint_dir, si));
        records.push_back(std::move(rec));
    }
    return records;
}

// ---------------------------------------------------------------------------
// Reporting: CSV + SVG
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& report_columns() {
    static const std::vector<std::string> cols = {
        "sigma",   "rmse_mean", "rmse_std", "Rs",   "ts_mean", "ts_std",
        "dv_mean", "dv_std",    "rho",      "gamma", "alpha",  "beta", "p"};
    return cols;
}

inline std::vector<Vector> report_rows(std::vector<SweepRecord> records) {
    std::sort(records.begin(), records.end(),
              [](const auto& a, const auto& b) { return a.sigma < b.sigma; });
    std::vector<Vector> rows;
    for (const auto& r : records) {
        Vector row(13);
        row << r.sigma, r.ensemble.rmse_mean, r.ensemble.rmse_std,
            r.ensemble.Rs, r.ensemble.ts_mean, r.ensemble.ts_std,
            r.ensemble.dv_mean, r.ensemble.dv_std, r.hp.rho, r.hp.gamma,
            r.hp.alpha, r.hp.beta, r.hp.p;
        rows.push_back(row);
    }
    return rows;
}

inline void write_report_csv(const std::vector<SweepRecord>& records,
                             const std::string& path) {
    std::ofstream os(path);
    if (!os) throw ConfigError("write_report_csv: cannot open " + path);
    const auto& cols = report_columns();
    for (size_t i = 0; i < cols.size(); ++i)
        os << cols[i] << (i + 1 < cols.size() ? "," : "\n");
    for (const auto& row : report_rows(records)) {
        for (long i = 0; i < row.size(); ++i)
            os << io::format_double(row(i)) << (i + 1 < row.size() ? "," : "\n");
    }
    if (!os) throw ConfigError("write_report_csv: write failed for " + path);
}

inline std::vector<Vector> parse_report_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("parse_report_csv: cannot open " + path);
    std::string line;
    if (!std::getline(is, line))
        throw ConfigError("parse_report_csv: empty file " + path);
    std::vector<Vector> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> vals;
        while (std::getline(ss, cell, ',')) vals.push_back(io::parse_double(cell));
        rows.push_back(Eigen::Map<Vector>(vals.data(), vals.size()));
    }
    return rows;
}

namespace detail {

/// Minimal SVG line plot with error bars on a log10 x axis.
inline void write_svg_plot(const std::string& path, const std::string& title,
                           const std::vector<double>& x,
                           const std::vector<double>& y,
                           const std::vector<double>& yerr) {
    const int W = 640, H = 420, ml = 70, mr = 20, mt = 40, mb = 50;
    std::vector<double> lx(x.size());
    for (size_t i = 0; i < x.size(); ++i) lx[i] = std::log10(x[i]);
    double xmin = lx.front(), xmax = lx.back();
    double ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
    for (size_t i = 0; i < y.size(); ++i) {
        if (!std::isfinite(y[i])) continue;
        ymin = std::min(ymin, y[i] - yerr[i]);
        ymax = std::max(ymax, y[i] + yerr[i]);
    }
    if (!std::isfinite(ymin)) { ymin = 0; ymax = 1; }
    if (ymax <= ymin) ymax = ymin + 1;
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;
    auto px = [&](double v) {
        return ml + (v - xmin) / (xmax - xmin + 1e-300) * (W - ml - mr);
    };
    auto py = [&](double v) {
        return H - mb - (v - ymin) / (ymax - ymin) * (H - mt - mb);
    };
    std::ofstream os(path);
    if (!os) throw ConfigError("write_svg_plot: cannot open " + path);
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W
       << "' height='" << H << "'>\n"
       << "<rect width='100%' height='100%' fill='white'/>\n"
       << "<text x='" << W / 2 << "' y='24' text-anchor='middle' "
          "font-size='16'>" << title << "</text>\n"
       << "<line x1='" << ml << "' y1='" << H - mb << "' x2='" << W - mr
       << "' y2='" << H - mb << "' stroke='black'/>\n"
       << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='"
       << H - mb << "' stroke='black'/>\n";
    for (size_t i = 0; i < lx.size(); ++i) {
        os << "<text x='" << px(lx[i]) << "' y='" << H - mb + 18
           << "' text-anchor='middle' font-size='10'>1e" << lx[i]
           << "</text>\n";
    }
    os << "<text x='" << W / 2 << "' y='" << H - 12
       << "' text-anchor='middle' font-size='12'>noise amplitude "
          "(log scale)</text>\n";
    std::ostringstream poly;
    for (size_t i = 0; i < lx.size(); ++i) {
        if (!std::isfinite(y[i])) continue;
        poly << px(lx[i]) << "," << py(y[i]) << " ";
        os << "<line x1='" << px(lx[i]) << "' y1='" << py(y[i] - yerr[i])
           << "' x2='" << px(lx[i]) << "' y2='" << py(y[i] + yerr[i])
           << "' stroke='steelblue'/>\n"
           << "<circle cx='" << px(lx[i]) << "' cy='" << py(y[i])
           << "' r='3' fill='steelblue'/>\n";
    }
    os << "<polyline points='" << poly.str()
       << "' fill='none' stroke='steelblue'/>\n</svg>\n";
    if (!os) throw ConfigError("write_svg_plot: write failed for " + path);
}

} // namespace detail

/// Write the sweep CSV plus one SVG plot per measure into out_dir.
inline void report(const std::vector<SweepRecord>& records,
                   const std::string& out_dir) {
    if (records.empty()) throw ConfigError("report: no records");
    std::filesystem::create_directories(out_dir);
    write_report_csv(records, out_dir + "/sweep.csv");
    const auto rows = report_rows(records);
    std::vector<double> x, zeros(rows.size(), 0.0);
    for (const auto& r : rows) x.push_back(r(0));
    auto col = [&](int j) {
        std::vector<double> v;
        for (const auto& r : rows) v.push_back(r(j));
        return v;
    };
    detail::write_svg_plot(out_dir + "/rmse_vs_sigma.svg", "RMSE vs sigma", x,
                           col(1), col(2));
    detail::write_svg_plot(out_dir + "/stability_vs_sigma.svg",
                           "Stability R_s vs sigma", x, col(3), zeros);
    detail::write_svg_plot(out_dir + "/horizon_vs_sigma.svg",
                           "Prediction horizon vs sigma", x, col(4), col(5));
    detail::write_svg_plot(out_dir + "/dv_vs_sigma.svg",
                           "Deviation value vs sigma", x, col(6), col(7));
}

// ---------------------------------------------------------------------------
// Key-value config files
// ---------------------------------------------------------------------------

/// Parser for the `key = value` config format used by the CLI. `#` starts a
/// comment; keys are single tokens; values run to end of line.
class Config {
  public:
    static Config from_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("Config: cannot open " + path);
        std::ostringstream buf;
        buf << is.rdbuf();
        return from_string(buf.str());
    }

    static Config from_string(const std::string& text) {
        Config c;
        std::istringstream is(text);
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                if (line.find_first_not_of(" \t\r") != std::string::npos)
                    throw ConfigError("Config: bad line " +
                                      std::to_string(lineno));
                continue;
            }
            auto trim = [](std::string s) {
                const auto a = s.find_first_not_of(" \t\r");
                const auto b = s.find_last_not_of(" \t\r");
                return a == std::string::npos ? std::string{}
                                              : s.substr(a, b - a + 1);
            };
            const std::string key = trim(line.substr(0, eq));
            const std::string val = trim(line.substr(eq + 1));
            if (key.empty())
                throw ConfigError("Config: empty key at line " +
                                  std::to_string(lineno));
            c.values_[key] = val;
        }
        return c;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_str(const std::string& key, std::string def = {}) const {
        auto it = values_.find(key);
        return it == values_.end() ? def : it->second;
    }
    double get_double(const std::string& key, double def) const {
        auto it = values_.find(key);
        return it == values_.end() ? def : io::parse_double(it->second);
    }
    long get_long(const std::string& key, long def) const {
        auto it = values_.find(key);
        return it == values_.end() ? def : std::stol(it->second);
    }
    std::vector<double> get_list(const std::string& key) const {
        std::vector<double> out;
        auto it = values_.find(key);
        if (it == values_.end()) return out;
        std::stringstream ss(it->second);
        std::string tok;
        while (std::getline(ss, tok, ','))
            if (!tok.empty()) out.push_back(io::parse_double(tok));
        return out;
    }

  private:
    std::map<std::string, std::string> values_;
};

} // namespace nrc
