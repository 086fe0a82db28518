#pragma once

#include "hjsing/types.hpp"

#include <cmath>
#include <functional>

namespace hjsing {

struct Minimum1D {
    double x;
    double f;
};

/// Brent's method on [a, b]. Robust for unimodal objectives, never leaves the bracket.
template <class F>
Minimum1D brent_minimize(F&& f, double a, double b, double xtol = 1e-10, int max_iter = 200) {
    const double golden = 0.3819660112501051;
    double x = a + golden * (b - a), w = x, v = x;
    double fx = f(x), fw = fx, fv = fx;
    double d = 0.0, e = 0.0;
    for (int it = 0; it < max_iter; ++it) {
        double m = 0.5 * (a + b);
        double tol1 = xtol * 0.5 + 1e-14 * std::fabs(x);
        double tol2 = 2.0 * tol1;
        if (std::fabs(x - m) <= tol2 - 0.5 * (b - a)) break;
        bool use_golden = true;
        if (std::fabs(e) > tol1) {
            double r = (x - w) * (fx - fv);
            double q = (x - v) * (fx - fw);
            double p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if (q > 0) p = -p;
            q = std::fabs(q);
            double etemp = e;
            e = d;
            if (std::fabs(p) < std::fabs(0.5 * q * etemp) && p > q * (a - x) && p < q * (b - x)) {
                d = p / q;
                double u = x + d;
                if (u - a < tol2 || b - u < tol2) d = (m >= x) ? tol1 : -tol1;
                use_golden = false;
            }
        }
        if (use_golden) {
            e = (x >= m) ? a - x : b - x;
            d = golden * e;
        }
        double u = (std::fabs(d) >= tol1) ? x + d : x + (d > 0 ? tol1 : -tol1);
        double fu = f(u);
        if (fu <= fx) {
            if (u >= x) a = x;
            else b = x;
            v = w; fv = fw;
            w = x; fw = fx;
            x = u; fx = fu;
        } else {
            if (u < x) a = u;
            else b = u;
            if (fu <= fw || w == x) {
                v = w; fv = fw;
                w = u; fw = fu;
            } else if (fu <= fv || v == x || v == w) {
                v = u; fv = fu;
            }
        }
    }
    return {x, fx};
}

/// Golden-section search; slower than Brent but makes no smoothness assumption.
template <class F>
Minimum1D golden_minimize(F&& f, double a, double b, double xtol = 1e-10, int max_iter = 200) {
    const double r = 0.6180339887498949;
    double c = b - r * (b - a), d = a + r * (b - a);
    double fc = f(c), fd = f(d);
    for (int it = 0; it < max_iter && (b - a) > xtol; ++it) {
        if (fc <= fd) {
            b = d; d = c; fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c; c = d; fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    return fc <= fd ? Minimum1D{c, fc} : Minimum1D{d, fd};
}

/// Block tridiagonal SPD solve (block Thomas with Cholesky pivots).
/// diag[k], off[k] = block (k, k+1). Returns false if a pivot is not positive definite.
inline bool block_tridiagonal_solve(std::vector<Mat> diag, const std::vector<Mat>& off, std::vector<Vec>& rhs) {
    const std::size_t m = diag.size();
    if (m == 0) return true;
    std::vector<Mat> c(m);
    for (std::size_t k = 0; k < m; ++k) {
        if (k > 0) {
            diag[k] -= off[k - 1].transpose() * c[k - 1];
            rhs[k] -= off[k - 1].transpose() * rhs[k - 1];
        }
        Eigen::LLT<Mat> llt(diag[k]);
        if (llt.info() != Eigen::Success) return false;
        if (k + 1 < m) c[k] = llt.solve(off[k]);
        rhs[k] = llt.solve(rhs[k]);
        if (!rhs[k].allFinite()) return false;
    }
    for (std::size_t k = m - 1; k-- > 0;) rhs[k] -= c[k] * rhs[k + 1];
    return true;
}

}  // namespace hjsing
