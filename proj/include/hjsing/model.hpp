#pragma once

#include "hjsing/optimize.hpp"
#include "hjsing/types.hpp"

#include <cmath>
#include <functional>
#include <cstdint>
#include <optional>
#include <random>
#include <string>

namespace hjsing {

using ScalarFn = std::function<double(double)>;
using LagFn = std::function<double(double, const Vec&, const Vec&)>;
using LagVecFn = std::function<Vec(double, const Vec&, const Vec&)>;
using LagMatFn = std::function<Mat(double, const Vec&, const Vec&)>;

/// Convex conjugate theta*(s) = sup_{r >= 0} (r s - theta(r)) of a superlinear function.
/// Ladder for an upper search limit, dense scan, then golden refinement.
inline double convex_conjugate(const ScalarFn& theta, double s) {
    const double base = -theta(0.0);
    double r_max = 1.0;
    for (int k = 0;; ++k) {
        double th = theta(r_max);
        if (th / r_max > std::max(s, 0.0) + 1.0 && r_max * s - th < base) break;
        r_max *= 2.0;
        if (k > 60) return kInf;
    }
    const int n = 512;
    double best_r = 0.0, best = base;
    for (int i = 1; i <= n; ++i) {
        double r = r_max * i / n;
        double val = r * s - theta(r);
        if (val > best) {
            best = val;
            best_r = r;
        }
    }
    double lo = std::max(0.0, best_r - r_max / n), hi = std::min(r_max, best_r + r_max / n);
    auto m = golden_minimize([&](double r) { return theta(r) - r * s; }, lo, hi, 1e-12 * (1.0 + r_max));
    return std::max(best, -m.f);
}

/// Growth data of a Lagrangian on the horizon [0, T].
struct GrowthData {
    double horizon = 1.0;
    double c_T = 0.0;
    ScalarFn theta_lower;
    ScalarFn theta_upper;
    double ct1 = 0.0;
    double ct2 = 0.0;
    ScalarFn theta_lower_conjugate;
    ScalarFn theta_upper_conjugate;
};

inline GrowthData make_growth(double T, double c_T, ScalarFn lower, ScalarFn upper, double ct1 = 0.0,
                              double ct2 = 0.0) {
    GrowthData g;
    g.horizon = T;
    g.c_T = c_T;
    g.theta_lower = lower;
    g.theta_upper = upper;
    g.ct1 = ct1;
    g.ct2 = ct2;
    g.theta_lower_conjugate = [lower](double s) { return convex_conjugate(lower, s); };
    g.theta_upper_conjugate = [upper](double s) { return convex_conjugate(upper, s); };
    return g;
}

inline ScalarFn half_square() {
    return [](double r) { return 0.5 * r * r; };
}

struct GrowthCheck {
    bool ordered = true;
    bool superlinear = true;
    bool fenchel = true;
    double worst_fenchel = 0.0;
    bool pass() const { return ordered && superlinear && fenchel; }
};

/// Sampled checks of theta_lower <= theta_upper, superlinearity and the Fenchel inequality.
inline GrowthCheck check_growth(const GrowthData& g) {
    GrowthCheck out;
    for (double r = 0.0; r <= 64.0; r += 0.25)
        if (g.theta_lower(r) > g.theta_upper(r) + 1e-12 * (1.0 + std::fabs(g.theta_upper(r)))) out.ordered = false;
    double prev = -kInf;
    int increasing_tail = 0;
    for (double r = 1.0; r <= 1e6; r *= 2.0) {
        double q = g.theta_lower(r) / r;
        increasing_tail = q > prev ? increasing_tail + 1 : 0;
        prev = q;
    }
    out.superlinear = increasing_tail >= 8 && prev > 1e3;
    for (double r = 0.0; r <= 8.0; r += 0.5)
        for (double s = -4.0; s <= 8.0; s += 0.5) {
            double m = g.theta_lower(r) + g.theta_lower_conjugate(s) - r * s;
            out.worst_fenchel = std::min(out.worst_fenchel, m);
            if (m < -1e-9) out.fenchel = false;
        }
    return out;
}

enum class TimeStructure { Autonomous, ExponentialScaling, General };

/// Value and first/second partials of L at one point.
struct LagDerivs {
    double L = 0.0;
    Vec Lv, Lx;
    Mat Lvv, Lvx, Lxx;
};

using LagDerivFn = std::function<void(double, const Vec&, const Vec&, LagDerivs&)>;

/// Lagrangian L(s, x, v) with partials and growth metadata.
/// L_vx(i, j) = d^2 L / dv_i dx_j.
struct LagrangianModel {
    std::string name;
    int dim = 1;
    bool time_dependent = false;
    TimeStructure structure = TimeStructure::Autonomous;
    double scaling_rate = 0.0;  ///< lambda when structure is ExponentialScaling: L(s,.) = e^{lambda s} L(0,.)
    LagFn L;
    LagVecFn L_v, L_x;
    LagFn L_t;
    LagMatFn L_vv, L_vx, L_xx;
    /// Fused evaluation of L and all partials; filled from the separate callables if absent.
    LagDerivFn derivs;
    std::function<GrowthData(double)> growth;
    /// Set when L = |v|^2/2 + c with c independent of (s, x).
    std::optional<double> kinetic_offset;
    /// Closed-form A_{s,t}(x, y) when known.
    std::function<double(double, double, const Vec&, const Vec&)> closed_action;
};

using HamFn = std::function<double(double, const Vec&, const Vec&)>;
using HamVecFn = std::function<Vec(double, const Vec&, const Vec&)>;

struct HamiltonianModel {
    std::string name;
    int dim = 1;
    HamFn H;
    HamVecFn H_p, H_x;
    HamFn H_t;
};

/// Discounted problem lambda v + H(x, Dv) = 0 with bounds theta2(|v|) + c2 >= L >= theta1(|v|) - c1.
struct DiscountedProblem {
    double lambda = 1.0;
    LagrangianModel lagrangian;
    HamiltonianModel hamiltonian;
    double c1 = 0.0;
    double c2 = 0.0;
    ScalarFn theta1 = half_square();
    ScalarFn theta2 = half_square();
};

// ---------------------------------------------------------------- finite differences

inline constexpr double kFirstStep = 1e-6;
inline constexpr double kSecondStep = 1e-4;

inline Vec fd_gradient_v(const LagFn& f, double s, const Vec& x, const Vec& v, double h = kFirstStep) {
    Vec g(v.size());
    Vec w = v;
    for (int i = 0; i < v.size(); ++i) {
        w[i] = v[i] + h;
        double fp = f(s, x, w);
        w[i] = v[i] - h;
        double fm = f(s, x, w);
        w[i] = v[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

inline Vec fd_gradient_x(const LagFn& f, double s, const Vec& x, const Vec& v, double h = kFirstStep) {
    Vec g(x.size());
    Vec y = x;
    for (int i = 0; i < x.size(); ++i) {
        y[i] = x[i] + h;
        double fp = f(s, y, v);
        y[i] = x[i] - h;
        double fm = f(s, y, v);
        y[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

inline double fd_time(const LagFn& f, double s, const Vec& x, const Vec& v, double h = kFirstStep) {
    return (f(s + h, x, v) - f(s - h, x, v)) / (2.0 * h);
}

/// Second-order mixed differences of f in the (a, b) block, a, b in {x, v}.
inline Mat fd_hessian(const LagFn& f, double s, const Vec& x, const Vec& v, bool first_is_v, bool second_is_v,
                      double h = kSecondStep) {
    const int n = static_cast<int>(x.size());
    Mat m(n, n);
    auto eval = [&](int i, double di, int j, double dj) {
        Vec xx = x, vv = v;
        (first_is_v ? vv : xx)[i] += di;
        (second_is_v ? vv : xx)[j] += dj;
        return f(s, xx, vv);
    };
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            m(i, j) = (eval(i, h, j, h) - eval(i, h, j, -h) - eval(i, -h, j, h) + eval(i, -h, j, -h)) / (4.0 * h * h);
    if (first_is_v == second_is_v) m = 0.5 * (m + m.transpose()).eval();
    return m;
}

/// Fills every missing partial of `m` by finite differences of m.L.
inline void complete_partials(LagrangianModel& m) {
    LagFn L = m.L;
    if (!m.L_v) m.L_v = [L](double s, const Vec& x, const Vec& v) { return fd_gradient_v(L, s, x, v); };
    if (!m.L_x) m.L_x = [L](double s, const Vec& x, const Vec& v) { return fd_gradient_x(L, s, x, v); };
    if (!m.L_t) {
        if (m.time_dependent) m.L_t = [L](double s, const Vec& x, const Vec& v) { return fd_time(L, s, x, v); };
        else m.L_t = [](double, const Vec&, const Vec&) { return 0.0; };
    }
    if (!m.L_vv) m.L_vv = [L](double s, const Vec& x, const Vec& v) { return fd_hessian(L, s, x, v, true, true); };
    if (!m.L_vx) m.L_vx = [L](double s, const Vec& x, const Vec& v) { return fd_hessian(L, s, x, v, true, false); };
    if (!m.L_xx) m.L_xx = [L](double s, const Vec& x, const Vec& v) { return fd_hessian(L, s, x, v, false, false); };
    if (!m.growth)
        m.growth = [](double T) { return make_growth(T, 0.0, half_square(), half_square()); };
    if (!m.derivs) {
        LagrangianModel c = m;
        m.derivs = [c](double s, const Vec& x, const Vec& v, LagDerivs& d) {
            d.L = c.L(s, x, v);
            d.Lv = c.L_v(s, x, v);
            d.Lx = c.L_x(s, x, v);
            d.Lvv = c.L_vv(s, x, v);
            d.Lvx = c.L_vx(s, x, v);
            d.Lxx = c.L_xx(s, x, v);
        };
    }
}

// ---------------------------------------------------------------- Legendre transform

struct LegendreResult {
    Vec v_star;
    double h_value;
    int iterations;
};

/// Solves L_v(s, x, v) = p by damped Newton on phi(v) = L - <p, v>.
/// Armijo backtracking; golden-section along the Newton ray when backtracking stalls.
inline LegendreResult legendre(const LagrangianModel& model, double s, const Vec& x, const Vec& p,
                               const Vec* guess = nullptr, double tol = 1e-10, int max_iter = 100) {
    const int n = static_cast<int>(p.size());
    Vec v = guess ? *guess : Vec::Zero(n);
    auto phi = [&](const Vec& w) { return model.L(s, x, w) - p.dot(w); };
    double f = phi(v);
    for (int it = 0; it < max_iter; ++it) {
        Vec g = model.L_v(s, x, v) - p;
        if (g.norm() <= tol * (1.0 + p.norm())) return {v, -f, it};
        Mat hess = model.L_vv(s, x, v);
        Eigen::LLT<Mat> llt(hess);
        if (llt.info() != Eigen::Success) throw NotConvex("L_vv not positive definite in Legendre transform");
        Vec d = -llt.solve(g);
        double slope = g.dot(d);
        double alpha = 1.0;
        double f_new = phi(v + d);
        if (std::isfinite(f_new) && (model.L_v(s, x, Vec(v + d)) - p).norm() <= 0.5 * g.norm()) {
            v += d;
            f = f_new;
            continue;
        }
        int back = 0;
        while (!(std::isfinite(f_new) && f_new <= f + 1e-4 * alpha * slope) && back < 40) {
            alpha *= 0.5;
            f_new = phi(v + alpha * d);
            ++back;
        }
        if (back == 40) {
            auto line = [&](double a) { return phi(v + a * d); };
            auto m = golden_minimize(line, 0.0, 1.0, 1e-14);
            alpha = m.x;
            f_new = m.f;
            if (!(f_new < f)) {
                if (g.norm() <= 1e3 * tol * (1.0 + p.norm())) return {v, -f, it};
                throw NoConvergence("Legendre line search stalled");
            }
        }
        v += alpha * d;
        f = f_new;
    }
    Vec g = model.L_v(s, x, v) - p;
    if (g.norm() <= tol * (1.0 + p.norm())) return {v, -f, max_iter};
    throw NoConvergence("Legendre root-find hit the iteration cap");
}

/// Hamiltonian of a Lagrangian through the Legendre transform; partials by the envelope identities.
inline HamiltonianModel hamiltonian_from_lagrangian(const LagrangianModel& lag) {
    HamiltonianModel h;
    h.name = lag.name;
    h.dim = lag.dim;
    h.H = [lag](double s, const Vec& x, const Vec& p) { return legendre(lag, s, x, p).h_value; };
    h.H_p = [lag](double s, const Vec& x, const Vec& p) { return legendre(lag, s, x, p).v_star; };
    h.H_x = [lag](double s, const Vec& x, const Vec& p) {
        Vec v = legendre(lag, s, x, p).v_star;
        return Vec(-lag.L_x(s, x, v));
    };
    h.H_t = [lag](double s, const Vec& x, const Vec& p) {
        Vec v = legendre(lag, s, x, p).v_star;
        return -lag.L_t(s, x, v);
    };
    return h;
}

// ---------------------------------------------------------------- discounted -> evolutionary

inline double checked_exp(double a) {
    double e = std::exp(a);
    if (!std::isfinite(e)) throw Overflow("exp(" + std::to_string(a) + ") is not representable");
    return e;
}

/// Closed-form fundamental solution of L = |v|^2/2 + c.
inline double kinetic_action(double c, double s, double t, const Vec& x, const Vec& y) {
    double dt = t - s;
    return (y - x).squaredNorm() / (2.0 * dt) + c * dt;
}

/// Closed-form fundamental solution of e^{lambda s}(|v|^2/2 + c).
inline double scaled_kinetic_action(double lambda, double c, double s, double t, const Vec& x, const Vec& y) {
    double denom = std::exp(-lambda * s) - std::exp(-lambda * t);
    return (y - x).squaredNorm() * lambda / (2.0 * denom) + c * (std::exp(lambda * t) - std::exp(lambda * s)) / lambda;
}

struct EvolutionaryPair {
    LagrangianModel lagrangian;
    HamiltonianModel hamiltonian;
};

/// Lhat(t,x,v) = e^{lambda t} L(x,v), Hhat(t,x,p) = e^{lambda t} H(x, e^{-lambda t} p).
inline EvolutionaryPair to_evolutionary(const DiscountedProblem& problem) {
    const double lambda = problem.lambda;
    if (!(lambda > 0.0)) throw InvalidProblem("discount rate must be positive");
    LagrangianModel base = problem.lagrangian;
    complete_partials(base);
    const HamiltonianModel hb = problem.hamiltonian;
    EvolutionaryPair out;
    LagrangianModel& m = out.lagrangian;
    m.name = base.name + "_transformed";
    m.dim = base.dim;
    m.time_dependent = true;
    m.structure = TimeStructure::ExponentialScaling;
    m.scaling_rate = lambda;
    m.L = [base, lambda](double t, const Vec& x, const Vec& v) { return std::exp(lambda * t) * base.L(0.0, x, v); };
    m.L_v = [base, lambda](double t, const Vec& x, const Vec& v) { return Vec(std::exp(lambda * t) * base.L_v(0.0, x, v)); };
    m.L_x = [base, lambda](double t, const Vec& x, const Vec& v) { return Vec(std::exp(lambda * t) * base.L_x(0.0, x, v)); };
    m.L_t = [base, lambda](double t, const Vec& x, const Vec& v) {
        return lambda * std::exp(lambda * t) * base.L(0.0, x, v);
    };
    m.L_vv = [base, lambda](double t, const Vec& x, const Vec& v) { return Mat(std::exp(lambda * t) * base.L_vv(0.0, x, v)); };
    m.L_vx = [base, lambda](double t, const Vec& x, const Vec& v) { return Mat(std::exp(lambda * t) * base.L_vx(0.0, x, v)); };
    m.L_xx = [base, lambda](double t, const Vec& x, const Vec& v) { return Mat(std::exp(lambda * t) * base.L_xx(0.0, x, v)); };
    m.derivs = [base, lambda](double t, const Vec& x, const Vec& v, LagDerivs& d) {
        base.derivs(0.0, x, v, d);
        double e = std::exp(lambda * t);
        d.L *= e;
        d.Lv *= e;
        d.Lx *= e;
        d.Lvv *= e;
        d.Lvx *= e;
        d.Lxx *= e;
    };
    const double c1 = problem.c1, c2 = problem.c2;
    const ScalarFn th1 = problem.theta1, th2 = problem.theta2;
    m.growth = [=](double T) {
        double e = checked_exp(lambda * T);
        return make_growth(
            T, e * c1, th1, [th2, c2, e](double r) { return e * (th2(r) + c2); }, 2.0 * lambda * e * c1, lambda);
    };
    if (base.kinetic_offset) {
        double c = *base.kinetic_offset;
        m.closed_action = [lambda, c](double s, double t, const Vec& x, const Vec& y) {
            return scaled_kinetic_action(lambda, c, s, t, x, y);
        };
    }

    HamiltonianModel& h = out.hamiltonian;
    h.name = hb.name + "_transformed";
    h.dim = hb.dim;
    h.H = [hb, lambda](double t, const Vec& x, const Vec& p) {
        double e = std::exp(lambda * t);
        return e * hb.H(0.0, x, Vec(p / e));
    };
    h.H_p = [hb, lambda](double t, const Vec& x, const Vec& p) {
        double e = std::exp(lambda * t);
        return hb.H_p(0.0, x, Vec(p / e));
    };
    h.H_x = [hb, lambda](double t, const Vec& x, const Vec& p) {
        double e = std::exp(lambda * t);
        return Vec(e * hb.H_x(0.0, x, Vec(p / e)));
    };
    h.H_t = [hb, lambda](double t, const Vec& x, const Vec& p) {
        double e = std::exp(lambda * t);
        Vec q = p / e;
        return lambda * e * hb.H(0.0, x, q) - lambda * q.dot(hb.H_p(0.0, x, q)) * e;
    };
    return out;
}

// ---------------------------------------------------------------- Tonelli checks

struct TonelliReport {
    double min_eigenvalue = kInf;
    double upper_margin = kInf;   ///< min of theta_upper(|v|) - L
    double lower_margin = kInf;   ///< min of L - theta_lower(|v|) + c_T
    double l3_margin = kInf;      ///< min of ct1 + ct2 L - |L_t|
    Vec worst_eigen_point_v;
    GrowthCheck growth;
    bool l1 = true, l2 = true, l3 = true;
    bool pass() const { return l1 && l2 && l3 && growth.pass(); }
};

/// Empirical check of strict convexity, two-sided growth and the time-derivative bound.
inline TonelliReport check_tonelli(const LagrangianModel& model, const Box& box, double T, int samples,
                                   double v_max = 10.0, std::uint64_t seed = 7, double tol = 1e-8) {
    if (samples < 1) throw InvalidProblem("samples must be >= 1");
    box.validate();
    TonelliReport rep;
    GrowthData g = model.growth(T);
    rep.growth = check_growth(g);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int n = model.dim;
    for (int k = 0; k < samples; ++k) {
        double s = T * unit(rng);
        Vec x(n), dir(n);
        for (int i = 0; i < n; ++i) x[i] = box.lo[i] + (box.hi[i] - box.lo[i]) * unit(rng);
        std::normal_distribution<double> gauss;
        for (int i = 0; i < n; ++i) dir[i] = gauss(rng);
        if (dir.norm() == 0) dir[0] = 1.0;
        dir.normalize();
        double speed = k == 0 ? 0.0 : v_max * std::pow(unit(rng), 2.0);
        Vec v = speed * dir;
        double L = model.L(s, x, v);
        Eigen::SelfAdjointEigenSolver<Mat> es(model.L_vv(s, x, v));
        double ev = es.eigenvalues().minCoeff();
        if (ev < rep.min_eigenvalue) {
            rep.min_eigenvalue = ev;
            rep.worst_eigen_point_v = v;
        }
        double r = v.norm();
        double scale = 1.0 + std::fabs(L);
        rep.upper_margin = std::min(rep.upper_margin, (g.theta_upper(r) - L) / scale);
        rep.lower_margin = std::min(rep.lower_margin, (L - g.theta_lower(r) + g.c_T) / scale);
        rep.l3_margin = std::min(rep.l3_margin, (g.ct1 + g.ct2 * L - std::fabs(model.L_t(s, x, v))) / scale);
    }
    rep.l1 = rep.min_eigenvalue > tol;
    rep.l2 = rep.upper_margin >= -tol && rep.lower_margin >= -tol;
    rep.l3 = rep.l3_margin >= -tol;
    return rep;
}

}  // namespace hjsing
