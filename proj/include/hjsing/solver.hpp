#pragma once

#include "hjsing/laxoleinik.hpp"

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

namespace hjsing {

struct KBounds {
    double K1 = 0.0;
    double K2 = 0.0;
};

/// K1 = c1 / lambda, K2 = (theta2(0) + c2) / lambda.
inline KBounds bounds_K(const DiscountedProblem& p) {
    if (!(p.lambda > 0.0)) throw InvalidProblem("discount rate must be positive");
    return {p.c1 / p.lambda, (p.theta2(0.0) + p.c2) / p.lambda};
}

/// Lipschitz bound theta2(1) + c2 + lambda sup|v| for bounded dominated functions.
inline double fixed_point_lipschitz_bound(const DiscountedProblem& p, double sup_norm) {
    return p.theta2(1.0) + p.c2 + p.lambda * sup_norm;
}

/// Ball radius of one unit discounted step acting on functions with the fixed point's Lipschitz bound.
inline double discounted_pad(const DiscountedProblem& p) {
    auto k = bounds_K(p);
    double lip = fixed_point_lipschitz_bound(p, std::max(k.K1, k.K2));
    auto model = to_evolutionary(p).lagrangian;
    return localization_radius(model.growth(1.0), 1.0, lip);
}

/// Grid of a region enlarged by at least `pad` on every side, keeping the region's nodes.
struct PaddedGrid {
    Box region;
    Box box;
    std::vector<int> resolution;
    std::vector<int> offset;  ///< index of the region's first node per axis

    GridFunction layout() const { return GridFunction(box, resolution); }
    bool in_region(const Vec& x, double slack = 1e-12) const { return region.contains(x, slack); }
};

inline PaddedGrid pad_grid(const Box& region, const std::vector<int>& res, double pad) {
    region.validate();
    if (static_cast<int>(res.size()) != region.dim()) throw ConfigError("resolution rank differs from box dimension");
    PaddedGrid g;
    g.region = region;
    g.box = region;
    g.resolution = res;
    g.offset.assign(res.size(), 0);
    for (int i = 0; i < region.dim(); ++i) {
        if (res[i] < 2) throw ConfigError("resolution must be at least 2 per axis");
        double h = (region.hi[i] - region.lo[i]) / (res[i] - 1);
        int extra = pad > 0 ? static_cast<int>(std::ceil(pad / h - 1e-9)) : 0;
        g.box.lo[i] = region.lo[i] - extra * h;
        g.box.hi[i] = region.hi[i] + extra * h;
        g.resolution[i] = res[i] + 2 * extra;
        g.offset[i] = extra;
    }
    return g;
}

struct SolveReport {
    int iterations = 0;
    std::vector<double> sup_changes;
    double K1 = 0.0;
    double K2 = 0.0;
    double final_residual = 0.0;  ///< last sup-change
    bool converged = false;
    double epsilon_grid = 0.0;    ///< largest polish gain over all sweeps
    double min_increment = kInf;  ///< min over sweeps and nodes of v_{k+1} - v_k
    double min_value = kInf;
    double max_value = -kInf;
    double lipschitz = 0.0;
    double lipschitz_bound = 0.0;
    double radius = 0.0;
    int iteration_cap = 0;

    std::string to_json() const {
        std::ostringstream os;
        os.precision(17);
        os << "{\"iterations\": " << iterations << ", \"sup_changes\": [";
        for (std::size_t i = 0; i < sup_changes.size(); ++i) os << (i ? ", " : "") << sup_changes[i];
        os << "], \"K1\": " << K1 << ", \"K2\": " << K2 << ", \"residual\": " << final_residual
           << ", \"converged\": " << (converged ? "true" : "false") << ", \"epsilon_grid\": " << epsilon_grid
           << ", \"lipschitz\": " << lipschitz << ", \"lipschitz_bound\": " << lipschitz_bound << "}";
        return os.str();
    }
};

struct SolveOptions {
    double tol = 1e-3;
    int jobs = 1;
    /// Starting value; NaN means -K1.
    double initial = std::numeric_limits<double>::quiet_NaN();
    LocalizationAudit* audit = nullptr;
    KernelOptions kernel;
    std::function<void(int, const GridFunction&)> on_iterate;
};

/// Iteration cap ceil(ln((K1 + K2) / tol) / lambda) + 10.
inline int iteration_cap(const DiscountedProblem& p, double tol) {
    auto k = bounds_K(p);
    double span = k.K1 + k.K2;
    double base = span > tol ? std::log(span / tol) / p.lambda : 0.0;
    return static_cast<int>(std::ceil(base)) + 10;
}

struct DiscountedSolution {
    GridFunction v;
    SolveReport report;
};

/// Fixed point of the unit-time discounted operator on the given (padded) box.
inline DiscountedSolution solve_discounted(const DiscountedProblem& problem, const Box& box,
                                           const std::vector<int>& resolution, const SolveOptions& opt = {}) {
    if (!(opt.tol > 0.0)) throw InvalidProblem("tolerance must be positive");
    auto k = bounds_K(problem);
    SolveReport rep;
    rep.K1 = k.K1;
    rep.K2 = k.K2;
    rep.iteration_cap = iteration_cap(problem, opt.tol);
    GridFunction v(box, resolution);
    double start = std::isnan(opt.initial) ? -k.K1 : opt.initial;
    v.set_values(std::vector<double>(v.size(), start));
    v.lambda = problem.lambda;
    rep.lipschitz_bound = fixed_point_lipschitz_bound(problem, std::max(k.K1, k.K2));
    OperatorOptions oo;
    oo.boundary = BoundaryPolicy::Clip;
    oo.audit = opt.audit;
    double range = k.K1 + k.K2 + 2.0 * opt.tol + std::fabs(start + k.K1);
    DiscountedOperator op(problem, v, 1.0, rep.lipschitz_bound, range, oo, opt.jobs, opt.kernel);
    rep.radius = op.radius();
    const double stop = opt.tol * (1.0 - std::exp(-problem.lambda));
    for (int it = 0; it < rep.iteration_cap; ++it) {
        SweepStats st;
        GridFunction w = op.apply(v, &st);
        double change = w.sup_distance(v);
        for (std::size_t i = 0; i < w.size(); ++i) rep.min_increment = std::min(rep.min_increment, w[i] - v[i]);
        rep.epsilon_grid = std::max(rep.epsilon_grid, st.max_polish_gain);
        rep.min_value = std::min(rep.min_value, w.min_value());
        rep.max_value = std::max(rep.max_value, w.max_value());
        rep.sup_changes.push_back(change);
        rep.iterations = it + 1;
        w.lambda = problem.lambda;
        v = std::move(w);
        if (opt.on_iterate) opt.on_iterate(it + 1, v);
        if (change <= stop) {
            rep.converged = true;
            break;
        }
    }
    rep.final_residual = rep.sup_changes.empty() ? 0.0 : rep.sup_changes.back();
    rep.lipschitz = v.lipschitz_estimate();
    if (!rep.converged)
        throw NoConvergence("discounted iteration did not reach tolerance within " +
                            std::to_string(rep.iteration_cap) + " sweeps");
    return {std::move(v), std::move(rep)};
}

struct EvolveOptions {
    int jobs = 1;
    LocalizationAudit* audit = nullptr;
    /// Strict rejects any node whose localization ball leaves the box.
    BoundaryPolicy boundary = BoundaryPolicy::Clip;
};

/// u(t_j, .) = T^-_{0,t_j} u0 on the nodes of u0's grid, one operator application per time.
inline std::vector<GridFunction> solve_evolutionary(const ActionKernel& A, const GridFunction& u0,
                                                    const std::vector<double>& times, const EvolveOptions& opt = {}) {
    for (std::size_t j = 0; j < times.size(); ++j) {
        if (!(times[j] > 0.0)) throw InvalidProblem("evolution times must be positive");
        if (j && !(times[j] > times[j - 1])) throw InvalidProblem("evolution times must be increasing");
    }
    std::vector<GridFunction> out;
    OperatorOptions oo;
    oo.boundary = BoundaryPolicy::Clip;
    oo.audit = opt.audit;
    for (double t : times) {
        GridOperator op(A, u0, 0.0, t, u0.lipschitz_estimate(), u0.max_value() - u0.min_value(), oo, opt.jobs);
        if (opt.boundary == BoundaryPolicy::Strict) {
            double r = op.radius() * t;
            for (std::size_t i = 0; i < u0.size(); ++i)
                if (u0.box().inner_margin(u0.node(i)) < r)
                    throw BoundaryClipped("node localization ball leaves the grid box");
        }
        GridFunction g = op.apply(u0);
        g.metadata["time"] = GridFunction::fmt(t);
        out.push_back(std::move(g));
    }
    return out;
}

// ---------------------------------------------------------------- residuals

struct ResidualReport {
    double tol = 0.0;
    double sup_residual = 0.0;           ///< over stable samples
    double worst_subsolution = -kInf;    ///< max residual over the one-sided hull at concave kinks
    double worst_supersolution = kInf;   ///< min residual over the one-sided hull at convex kinks
    int stable = 0;
    int unstable = 0;
    bool pass() const { return sup_residual <= tol && worst_subsolution <= tol && worst_supersolution >= -tol; }
};

/// Centered differences at h and 2h agree within 10 tol, and the one-sided jumps at h and 2h
/// scale linearly with the step (a kink leaves a jump that does not shrink with h).
inline bool gradient_stable(const Vec& g1, const Vec& g2, const Vec& jump1, const Vec& jump2, double tol) {
    double centered = (g1 - g2).lpNorm<Eigen::Infinity>();
    return centered <= 10 * tol && (2 * jump1 - jump2).lpNorm<Eigen::Infinity>() <= 10 * tol;
}

namespace detail {

/// Adds one sample: the residual at the centered gradient when stable; otherwise the sub- or
/// supersolution inequality on the segment between second-order one-sided gradients, chosen by
/// the orientation of the kink.
inline void residual_sample(ResidualReport& r, const std::function<double(const Vec&)>& f, const Vec& x, double h,
                            const std::function<double(const Vec&)>& residual) {
    const int n = static_cast<int>(x.size());
    Vec g1(n), g2(n), pm(n), pp(n), jump1(n), jump2(n);
    double f0 = f(x);
    for (int i = 0; i < n; ++i) {
        Vec a = x, b = x, a2 = x, b2 = x;
        a[i] += h;
        b[i] -= h;
        a2[i] += 2 * h;
        b2[i] -= 2 * h;
        double fa = f(a), fb = f(b), fa2 = f(a2), fb2 = f(b2);
        g1[i] = (fa - fb) / (2 * h);
        g2[i] = (fa2 - fb2) / (4 * h);
        jump1[i] = (fa - 2 * f0 + fb) / h;
        jump2[i] = (fa2 - 2 * f0 + fb2) / (2 * h);
        pm[i] = (3 * f0 - 4 * fb + fb2) / (2 * h);
        pp[i] = (-3 * f0 + 4 * fa - fa2) / (2 * h);
    }
    if (gradient_stable(g1, g2, jump1, jump2, r.tol)) {
        ++r.stable;
        r.sup_residual = std::max(r.sup_residual, std::fabs(residual(g1)));
        return;
    }
    ++r.unstable;
    bool concave = (pp - pm).sum() <= 0.0;
    for (int k = 0; k <= 20; ++k) {
        double res = residual(Vec(pm + (k / 20.0) * (pp - pm)));
        if (concave)
            r.worst_subsolution = std::max(r.worst_subsolution, res);
        else
            r.worst_supersolution = std::min(r.worst_supersolution, res);
    }
}

}  // namespace detail

/// Checks lambda v + H(x, Dv) = 0 at samples where the gradient is stable under step changes,
/// and the viscosity inequalities at detected kinks.
inline ResidualReport residual_check(const DiscountedProblem& p, const std::function<double(const Vec&)>& v,
                                     const std::vector<Vec>& samples, double h, double tol) {
    ResidualReport r;
    r.tol = tol;
    for (const Vec& x : samples) {
        double lv = p.lambda * v(x);
        detail::residual_sample(r, v, x, h, [&](const Vec& q) { return lv + p.hamiltonian.H(0.0, x, q); });
    }
    return r;
}

/// Evolutionary version: D_t u + H(t, x, D_x u) at samples (t, x).
inline ResidualReport residual_check(const HamiltonianModel& ham,
                                     const std::function<double(double, const Vec&)>& u,
                                     const std::vector<std::pair<double, Vec>>& samples, double h, double tol) {
    ResidualReport r;
    r.tol = tol;
    for (const auto& sample : samples) {
        const double t = sample.first;
        const Vec& x = sample.second;
        double dt = std::min(h, 0.5 * t);
        double ut = (u(t + dt, x) - u(t - dt, x)) / (2 * dt);
        detail::residual_sample(r, [&](const Vec& y) { return u(t, y); }, x, h,
                                [&](const Vec& q) { return ut + ham.H(t, x, q); });
    }
    return r;
}

}  // namespace hjsing
