#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <initializer_list>
#include <string>
#include <thread>
#include <vector>

#include "copi/errors.hpp"

namespace copi {

/// Dense row-major matrix of doubles. The one numeric carrier used everywhere:
/// weights, batches (columns are samples), activations, error signals.
///
/// All operations below are pure functions with a fixed, documented summation
/// order, so any run with identical inputs produces bit-identical output. The
/// worker partitioning in detail::parallel_rows assigns every output row to
/// exactly one worker, which keeps multi-threaded results bit-identical to a
/// single-threaded run.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data; // row-major, data[i * cols + j]

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    Matrix(std::initializer_list<std::initializer_list<double>> init) {
        rows = init.size();
        cols = rows ? init.begin()->size() : 0;
        data.reserve(rows * cols);
        for (const auto& r : init) {
            if (r.size() != cols) throw ContractError("Matrix initializer rows have unequal lengths");
            data.insert(data.end(), r.begin(), r.end());
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m.data[i * n + i] = 1.0;
        return m;
    }

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    double* row(std::size_t i) { return data.data() + i * cols; }
    const double* row(std::size_t i) const { return data.data() + i * cols; }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    std::size_t size() const { return data.size(); }
};

namespace detail {

inline unsigned thread_count() {
    static const unsigned n = [] {
        if (const char* e = std::getenv("COPI_THREADS")) {
            long v = std::strtol(e, nullptr, 10);
            if (v >= 1 && v <= 1024) return static_cast<unsigned>(v);
        }
        unsigned hc = std::thread::hardware_concurrency();
        return hc ? hc : 1u;
    }();
    return n;
}

/// Splits [0, rows) into contiguous chunks, one per worker. fn(lo, hi) must
/// write only rows in [lo, hi), so the result does not depend on the number
/// of workers.
template <typename Fn>
void parallel_rows(std::size_t rows, std::size_t work_per_row, Fn&& fn) {
    const unsigned want = thread_count();
    // Not worth spawning below ~1M flops of work.
    if (want <= 1 || rows * work_per_row < (1u << 20) || rows < 2) {
        fn(std::size_t{0}, rows);
        return;
    }
    const unsigned t = static_cast<unsigned>(std::min<std::size_t>(want, rows));
    std::vector<std::thread> pool;
    pool.reserve(t - 1);
    const std::size_t chunk = (rows + t - 1) / t;
    for (unsigned w = 1; w < t; ++w) {
        const std::size_t lo = std::min(rows, w * chunk);
        const std::size_t hi = std::min(rows, lo + chunk);
        if (lo < hi) pool.emplace_back(fn, lo, hi);
    }
    fn(std::size_t{0}, std::min(rows, chunk));
    for (auto& th : pool) th.join();
}

inline void check(bool cond, const char* msg) {
    if (!cond) throw ContractError(msg);
}

} // namespace detail

/// Dot product of two length-n ranges with a fixed 8-lane accumulation scheme.
/// Every batch-mean reduction in the library funnels through this one routine,
/// so e.g. diag_sq_mean(x) and the diagonal of outer_mean(x, x) are computed
/// by literally the same instruction sequence and agree bit-exactly.
inline double dot_rows(const double* a, const double* b, std::size_t n) {
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
        s4 += a[i + 4] * b[i + 4];
        s5 += a[i + 5] * b[i + 5];
        s6 += a[i + 6] * b[i + 6];
        s7 += a[i + 7] * b[i + 7];
    }
    double tail = 0;
    for (; i < n; ++i) tail += a[i] * b[i];
    return (((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7))) + tail;
}

/// Standard product a * b. Contraction index advances in ascending order for
/// every output element.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows)
        throw ContractError("matmul: inner dimensions differ (" + std::to_string(a.cols) + " vs " +
                            std::to_string(b.rows) + ")");
    const std::size_t m = a.rows, k = a.cols, n = b.cols;
    Matrix c(m, n);
    constexpr std::size_t kBlock = 64; // keep a block of b rows hot in L2
    detail::parallel_rows(m, 2 * k * n + 1, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t p0 = 0; p0 < k; p0 += kBlock) {
            const std::size_t p1 = std::min(k, p0 + kBlock);
            for (std::size_t i = lo; i < hi; ++i) {
                double* ci = c.row(i);
                const double* ai = a.row(i);
                for (std::size_t p = p0; p < p1; ++p) {
                    const double aip = ai[p];
                    if (aip == 0.0) continue; // exact no-op on finite inputs
                    const double* bp = b.row(p);
                    for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
                }
            }
        }
    });
    return c;
}

/// a^T * b without materializing the transpose.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows)
        throw ContractError("matmul_tn: contraction dimensions differ (" + std::to_string(a.rows) +
                            " vs " + std::to_string(b.rows) + ")");
    const std::size_t m = a.cols, k = a.rows, n = b.cols;
    Matrix c(m, n);
    detail::parallel_rows(m, 2 * k * n + 1, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t p = 0; p < k; ++p) {
            const double* ap = a.row(p);
            const double* bp = b.row(p);
            for (std::size_t i = lo; i < hi; ++i) {
                const double aip = ap[i];
                if (aip == 0.0) continue;
                double* ci = c.row(i);
                for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
            }
        }
    });
    return c;
}

/// a * b^T via row dot products (shares dot_rows with diag_sq_mean).
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols)
        throw ContractError("matmul_nt: contraction dimensions differ (" + std::to_string(a.cols) +
                            " vs " + std::to_string(b.cols) + ")");
    const std::size_t m = a.rows, k = a.cols, n = b.rows;
    Matrix c(m, n);
    detail::parallel_rows(m, 2 * k * n + 1, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            double* ci = c.row(i);
            const double* ai = a.row(i);
            for (std::size_t j = 0; j < n; ++j) ci[j] = dot_rows(ai, b.row(j), k);
        }
    });
    return c;
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
    return t;
}

/// Batch mean of z x^T over columns: (1/N) sum_n z(:,n) x(:,n)^T.
/// Columns are samples; z and x must agree on the batch size N.
inline Matrix outer_mean(const Matrix& z, const Matrix& x) {
    if (z.cols != x.cols)
        throw ContractError("outer_mean: batch sizes differ (" + std::to_string(z.cols) + " vs " +
                            std::to_string(x.cols) + ")");
    if (x.cols == 0) throw ContractError("outer_mean: empty batch");
    Matrix c = matmul_nt(z, x);
    const double inv_n = 1.0 / static_cast<double>(x.cols);
    for (double& v : c.data) v *= inv_n;
    return c;
}

/// Per-row mean of squares: result[i] = (1/N) sum_n x(i,n)^2.
inline std::vector<double> row_mean_square(const Matrix& x) {
    if (x.cols == 0) throw ContractError("row_mean_square: empty batch");
    std::vector<double> out(x.rows);
    const double inv_n = 1.0 / static_cast<double>(x.cols);
    for (std::size_t i = 0; i < x.rows; ++i) out[i] = dot_rows(x.row(i), x.row(i), x.cols) * inv_n;
    return out;
}

/// diag(E[x^2]) as a square matrix; the (i,i) entry equals the (i,i) entry of
/// outer_mean(x, x) bit-exactly.
inline Matrix diag_sq_mean(const Matrix& x) {
    const std::vector<double> ms = row_mean_square(x);
    Matrix d(x.rows, x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) d(i, i) = ms[i];
    return d;
}

inline Matrix operator+(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ContractError("Matrix +: shape mismatch");
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data[i] += b.data[i];
    return c;
}

inline Matrix operator-(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ContractError("Matrix -: shape mismatch");
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data[i] -= b.data[i];
    return c;
}

inline Matrix operator*(double s, const Matrix& a) {
    Matrix c = a;
    for (double& v : c.data) v *= s;
    return c;
}

/// a += s * b, elementwise.
inline void add_scaled(Matrix& a, double s, const Matrix& b) {
    if (!a.same_shape(b)) throw ContractError("add_scaled: shape mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) a.data[i] += s * b.data[i];
}

inline double frobenius_norm(const Matrix& a) {
    return std::sqrt(dot_rows(a.data.data(), a.data.data(), a.size()));
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ContractError("max_abs_diff: shape mismatch");
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

inline bool all_finite(const Matrix& a) {
    for (double v : a.data)
        if (!std::isfinite(v)) return false;
    return true;
}

/// Row index of the maximum in each column; ties resolve to the lowest index.
inline std::vector<std::size_t> argmax_columns(const Matrix& a) {
    std::vector<std::size_t> out(a.cols, 0);
    for (std::size_t j = 0; j < a.cols; ++j) {
        double best = a(0, j);
        for (std::size_t i = 1; i < a.rows; ++i)
            if (a(i, j) > best) {
                best = a(i, j);
                out[j] = i;
            }
    }
    return out;
}

} // namespace copi
