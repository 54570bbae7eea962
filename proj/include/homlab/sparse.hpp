#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <sstream>
#include <tuple>
#include <vector>

#include "homlab/error.hpp"

namespace homlab {

/// Compressed sparse row matrix with sorted column indices per row.
struct CsrMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::size_t> row_ptr{0};
    std::vector<int> col;
    std::vector<double> val;

    std::size_t nnz() const { return val.size(); }

    double at(std::size_t i, std::size_t j) const {
        const auto b = col.begin() + static_cast<std::ptrdiff_t>(row_ptr[i]);
        const auto e = col.begin() + static_cast<std::ptrdiff_t>(row_ptr[i + 1]);
        const auto it = std::lower_bound(b, e, static_cast<int>(j));
        if (it == e || *it != static_cast<int>(j)) return 0.0;
        return val[static_cast<std::size_t>(it - col.begin())];
    }

    void multiply(std::span<const double> x, std::span<double> y) const {
        for (std::size_t i = 0; i < rows; ++i) {
            double s = 0.0;
            for (std::size_t p = row_ptr[i]; p < row_ptr[i + 1]; ++p) s += val[p] * x[static_cast<std::size_t>(col[p])];
            y[i] = s;
        }
    }

    std::vector<double> operator*(std::span<const double> x) const {
        std::vector<double> y(rows);
        multiply(x, y);
        return y;
    }

    std::vector<double> diagonal() const {
        std::vector<double> d(rows, 0.0);
        for (std::size_t i = 0; i < rows; ++i) d[i] = at(i, i);
        return d;
    }

    /// Max |a_ij - a_ji| relative to max |a_ij|.
    double asymmetry() const {
        double amax = 0.0, dmax = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t p = row_ptr[i]; p < row_ptr[i + 1]; ++p) {
                amax = std::max(amax, std::abs(val[p]));
                dmax = std::max(dmax, std::abs(val[p] - at(static_cast<std::size_t>(col[p]), i)));
            }
        }
        return amax > 0.0 ? dmax / amax : 0.0;
    }

    bool is_symmetric(double rtol = 1e-14) const { return rows == cols && asymmetry() <= rtol; }

    double quadratic(std::span<const double> x, std::span<const double> y) const {
        double s = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
            double r = 0.0;
            for (std::size_t p = row_ptr[i]; p < row_ptr[i + 1]; ++p) r += val[p] * x[static_cast<std::size_t>(col[p])];
            s += y[i] * r;
        }
        return s;
    }
};

/// Coordinate-format accumulator. Duplicates are summed in insertion order,
/// which keeps the result bit-reproducible for a fixed assembly order.
class TripletList {
public:
    TripletList(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols) {}

    void add(int i, int j, double v) { entries_.emplace_back(i, j, v); }
    void reserve(std::size_t n) { entries_.reserve(n); }

    CsrMatrix to_csr() const {
        std::vector<std::size_t> order(entries_.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [this](std::size_t a, std::size_t b) {
            const auto& ea = entries_[a];
            const auto& eb = entries_[b];
            return std::tie(std::get<0>(ea), std::get<1>(ea)) < std::tie(std::get<0>(eb), std::get<1>(eb));
        });
        CsrMatrix m;
        m.rows = rows_;
        m.cols = cols_;
        m.row_ptr.assign(rows_ + 1, 0);
        int last_i = -1, last_j = -1;
        for (std::size_t idx : order) {
            const auto& [i, j, v] = entries_[idx];
            if (i == last_i && j == last_j) {
                m.val.back() += v;
                continue;
            }
            m.col.push_back(j);
            m.val.push_back(v);
            ++m.row_ptr[static_cast<std::size_t>(i) + 1];
            last_i = i;
            last_j = j;
        }
        for (std::size_t i = 0; i < rows_; ++i) m.row_ptr[i + 1] += m.row_ptr[i];
        return m;
    }

private:
    std::size_t rows_, cols_;
    std::vector<std::tuple<int, int, double>> entries_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

struct IterativeResult {
    std::vector<double> x;
    int iterations = 0;
    double relative_residual = 0.0;
};

/// Jacobi-preconditioned conjugate gradients. Converged when
/// ||b - A x|| <= rtol ||b||.
inline IterativeResult pcg(const CsrMatrix& a, std::span<const double> b, double rtol = 1e-10,
                           std::span<const double> x0 = {}, int max_iter = 0) {
    const std::size_t n = a.rows;
    IterativeResult res;
    res.x.assign(n, 0.0);
    if (n == 0) return res;
    if (x0.size() == n) std::copy(x0.begin(), x0.end(), res.x.begin());
    if (max_iter <= 0) max_iter = static_cast<int>(10 * n) + 1000;

    std::vector<double> inv_diag = a.diagonal();
    for (double& d : inv_diag) {
        if (!(d > 0.0)) throw Error("solver", "non-positive diagonal in SPD solve");
        d = 1.0 / d;
    }
    const double bnorm = norm2(b);
    if (bnorm == 0.0) {
        std::fill(res.x.begin(), res.x.end(), 0.0);
        return res;
    }
    std::vector<double> r(n), z(n), p(n), ap(n);
    a.multiply(res.x, r);
    for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - r[i];
    std::vector<double> history;
    double rnorm = norm2(r);
    history.push_back(rnorm / bnorm);
    if (rnorm <= rtol * bnorm) {
        res.relative_residual = rnorm / bnorm;
        return res;
    }
    for (std::size_t i = 0; i < n; ++i) z[i] = inv_diag[i] * r[i];
    p = z;
    double rz = dot(r, z);
    for (int it = 1; it <= max_iter; ++it) {
        a.multiply(p, ap);
        const double pap = dot(p, ap);
        if (!(pap > 0.0)) throw SolverError("matrix is not positive definite (p^T A p <= 0)", history);
        const double alpha = rz / pap;
        for (std::size_t i = 0; i < n; ++i) {
            res.x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rnorm = norm2(r);
        history.push_back(rnorm / bnorm);
        if (rnorm <= rtol * bnorm) {
            res.iterations = it;
            res.relative_residual = rnorm / bnorm;
            return res;
        }
        for (std::size_t i = 0; i < n; ++i) z[i] = inv_diag[i] * r[i];
        const double rz_new = dot(r, z);
        const double beta = rz_new / rz;
        rz = rz_new;
        for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
    }
    std::ostringstream os;
    os << "CG did not converge in " << max_iter << " iterations (relative residual " << history.back() << ")";
    throw SolverError(os.str(), history);
}

/// Jacobi-preconditioned BiCGSTAB for the nonsymmetric systems that appear
/// when A(x) is not symmetric.
inline IterativeResult bicgstab(const CsrMatrix& a, std::span<const double> b, double rtol = 1e-10,
                                std::span<const double> x0 = {}, int max_iter = 0) {
    const std::size_t n = a.rows;
    IterativeResult res;
    res.x.assign(n, 0.0);
    if (n == 0) return res;
    if (x0.size() == n) std::copy(x0.begin(), x0.end(), res.x.begin());
    if (max_iter <= 0) max_iter = static_cast<int>(10 * n) + 1000;
    std::vector<double> inv_diag = a.diagonal();
    for (double& d : inv_diag) {
        if (d == 0.0) throw Error("solver", "zero diagonal");
        d = 1.0 / d;
    }
    const double bnorm = norm2(b);
    if (bnorm == 0.0) {
        std::fill(res.x.begin(), res.x.end(), 0.0);
        return res;
    }
    std::vector<double> r(n), r0(n), p(n, 0.0), v(n, 0.0), s(n), t(n), y(n), zz(n);
    a.multiply(res.x, r);
    for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - r[i];
    r0 = r;
    std::vector<double> history{norm2(r) / bnorm};
    if (history.back() <= rtol) {
        res.relative_residual = history.back();
        return res;
    }
    double rho = 1.0, alpha = 1.0, omega = 1.0;
    for (int it = 1; it <= max_iter; ++it) {
        const double rho_new = dot(r0, r);
        if (rho_new == 0.0) throw SolverError("BiCGSTAB breakdown (rho = 0)", history);
        const double beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * (p[i] - omega * v[i]);
        for (std::size_t i = 0; i < n; ++i) y[i] = inv_diag[i] * p[i];
        a.multiply(y, v);
        alpha = rho / dot(r0, v);
        for (std::size_t i = 0; i < n; ++i) s[i] = r[i] - alpha * v[i];
        for (std::size_t i = 0; i < n; ++i) zz[i] = inv_diag[i] * s[i];
        a.multiply(zz, t);
        const double tt = dot(t, t);
        omega = tt > 0.0 ? dot(t, s) / tt : 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            res.x[i] += alpha * y[i] + omega * zz[i];
            r[i] = s[i] - omega * t[i];
        }
        history.push_back(norm2(r) / bnorm);
        if (history.back() <= rtol) {
            res.iterations = it;
            res.relative_residual = history.back();
            return res;
        }
        if (omega == 0.0) throw SolverError("BiCGSTAB breakdown (omega = 0)", history);
    }
    throw SolverError("BiCGSTAB did not converge", history);
}

}  // namespace homlab
