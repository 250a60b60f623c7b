#pragma once

#include "nrc/common.hpp"
#include "nrc/dynsys.hpp"
#include "nrc/reservoir.hpp"

#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace nrc::io {

// Binary container layout (little-endian, 64-bit sizes):
//   magic, then a string/scalar header, then raw row-major doubles.
// Strings are u64 length + bytes. All numeric fields are doubles or u64.

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void put_f64(std::ostream& os, double v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void put_str(std::ostream& os, const std::string& s) {
    put_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline void put_matrix(std::ostream& os, const Matrix& m) {
    put_u64(os, static_cast<std::uint64_t>(m.rows()));
    put_u64(os, static_cast<std::uint64_t>(m.cols()));
    for (long i = 0; i < m.rows(); ++i)
        for (long j = 0; j < m.cols(); ++j) put_f64(os, m(i, j));
}
inline void put_vector(std::ostream& os, const Vector& v) {
    put_u64(os, static_cast<std::uint64_t>(v.size()));
    for (long i = 0; i < v.size(); ++i) put_f64(os, v(i));
}

inline std::uint64_t get_u64(std::istream& is) {
    std::uint64_t v;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw ConfigError("io: truncated file");
    return v;
}
inline double get_f64(std::istream& is) {
    double v;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw ConfigError("io: truncated file");
    return v;
}
inline std::string get_str(std::istream& is) {
    const auto n = get_u64(is);
    if (n > (1ULL << 32)) throw ConfigError("io: corrupt string length");
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw ConfigError("io: truncated file");
    return s;
}
inline Matrix get_matrix(std::istream& is) {
    const auto r = get_u64(is), c = get_u64(is);
    Matrix m(static_cast<long>(r), static_cast<long>(c));
    for (long i = 0; i < m.rows(); ++i)
        for (long j = 0; j < m.cols(); ++j) m(i, j) = get_f64(is);
    return m;
}
inline Vector get_vector(std::istream& is) {
    const auto n = get_u64(is);
    Vector v(static_cast<long>(n));
    for (long i = 0; i < v.size(); ++i) v(i) = get_f64(is);
    return v;
}

inline void expect_magic(std::istream& is, const std::string& magic) {
    std::string got(magic.size(), '\0');
    is.read(got.data(), static_cast<std::streamsize>(magic.size()));
    if (!is || got != magic)
        throw ConfigError("io: bad magic, expected " + magic);
}

} // namespace detail

inline constexpr const char* kDatasetMagic = "NRCDATA1";
inline constexpr const char* kModelMagic = "NRCMODL1";

inline void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("save_dataset: cannot open " + path);
    os.write(kDatasetMagic, 8);
    detail::put_str(os, ds.system);
    detail::put_u64(os, ds.gen_params.size());
    for (const auto& [k, v] : ds.gen_params) {
        detail::put_str(os, k);
        detail::put_f64(os, v);
    }
    detail::put_f64(os, ds.dt);
    detail::put_f64(os, ds.lyapunov_time);
    detail::put_vector(os, ds.norm.mean);
    detail::put_vector(os, ds.norm.std);
    detail::put_u64(os, static_cast<std::uint64_t>(ds.split.train_start));
    detail::put_u64(os, static_cast<std::uint64_t>(ds.split.train_len));
    detail::put_u64(os, static_cast<std::uint64_t>(ds.split.test_start));
    detail::put_u64(os, static_cast<std::uint64_t>(ds.split.test_len));
    detail::put_matrix(os, ds.data);
    if (!os) throw ConfigError("save_dataset: write failed for " + path);
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("load_dataset: cannot open " + path);
    detail::expect_magic(is, kDatasetMagic);
    Dataset ds;
    ds.system = detail::get_str(is);
    const auto np = detail::get_u64(is);
    for (std::uint64_t i = 0; i < np; ++i) {
        std::string k = detail::get_str(is);
        ds.gen_params.emplace_back(std::move(k), detail::get_f64(is));
    }
    ds.dt = detail::get_f64(is);
    ds.lyapunov_time = detail::get_f64(is);
    ds.norm.mean = detail::get_vector(is);
    ds.norm.std = detail::get_vector(is);
    ds.split.train_start = static_cast<long>(detail::get_u64(is));
    ds.split.train_len = static_cast<long>(detail::get_u64(is));
    ds.split.test_start = static_cast<long>(detail::get_u64(is));
    ds.split.test_len = static_cast<long>(detail::get_u64(is));
    ds.data = detail::get_matrix(is);
    ds.validate();
    return ds;
}

inline void save_model(const TrainedModel& m, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("save_model: cannot open " + path);
    os.write(kModelMagic, 8);
    const auto& hp = m.hyperparams;
    detail::put_f64(os, hp.rho);
    detail::put_f64(os, hp.gamma);
    detail::put_f64(os, hp.alpha);
    detail::put_f64(os, hp.beta);
    detail::put_f64(os, hp.p);
    detail::put_f64(os, hp.sigma);
    detail::put_u64(os, static_cast<std::uint64_t>(hp.n_nodes));
    detail::put_u64(os, m.seed);
    detail::put_f64(os, m.fit_rmse);
    detail::put_f64(os, m.reservoir.alpha);
    detail::put_vector(os, m.norm.mean);
    detail::put_vector(os, m.norm.std);
    detail::put_matrix(os, m.W_out);
    detail::put_matrix(os, m.reservoir.W_in);
    // Sparse A as coordinate triplets.
    detail::put_u64(os, static_cast<std::uint64_t>(m.reservoir.A.rows()));
    detail::put_u64(os, static_cast<std::uint64_t>(m.reservoir.A.nonZeros()));
    for (int k = 0; k < m.reservoir.A.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(m.reservoir.A, k); it; ++it) {
            detail::put_u64(os, static_cast<std::uint64_t>(it.row()));
            detail::put_u64(os, static_cast<std::uint64_t>(it.col()));
            detail::put_f64(os, it.value());
        }
    if (!os) throw ConfigError("save_model: write failed for " + path);
}

inline TrainedModel load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("load_model: cannot open " + path);
    detail::expect_magic(is, kModelMagic);
    TrainedModel m;
    m.hyperparams.rho = detail::get_f64(is);
    m.hyperparams.gamma = detail::get_f64(is);
    m.hyperparams.alpha = detail::get_f64(is);
    m.hyperparams.beta = detail::get_f64(is);
    m.hyperparams.p = detail::get_f64(is);
    m.hyperparams.sigma = detail::get_f64(is);
    m.hyperparams.n_nodes = static_cast<int>(detail::get_u64(is));
    m.seed = detail::get_u64(is);
    m.fit_rmse = detail::get_f64(is);
    m.reservoir.alpha = detail::get_f64(is);
    m.norm.mean = detail::get_vector(is);
    m.norm.std = detail::get_vector(is);
    m.W_out = detail::get_matrix(is);
    m.reservoir.W_in = detail::get_matrix(is);
    const long n = static_cast<long>(detail::get_u64(is));
    const auto nnz = detail::get_u64(is);
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(nnz);
    for (std::uint64_t k = 0; k < nnz; ++k) {
        const long i = static_cast<long>(detail::get_u64(is));
        const long j = static_cast<long>(detail::get_u64(is));
        trips.emplace_back(static_cast<int>(i), static_cast<int>(j),
                           detail::get_f64(is));
    }
    m.reservoir.A.resize(n, n);
    m.reservoir.A.setFromTriplets(trips.begin(), trips.end());
    m.reservoir.state = Vector::Zero(n);
    return m;
}

// ---------------------------------------------------------------------------
// Lossless text formatting for checkpoint / CSV round-trips.
// ---------------------------------------------------------------------------

/// Shortest decimal representation that round-trips the double exactly.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, ptr);
}

inline double parse_double(const std::string& s) {
    double v{};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        // from_chars rejects "inf"/"nan" spellings produced by to_chars.
        std::istringstream iss(s);
        iss >> v;
        if (iss.fail()) throw ConfigError("parse_double: bad number " + s);
    }
    return v;
}

} // namespace nrc::io
