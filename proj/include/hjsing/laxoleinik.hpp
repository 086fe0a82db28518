#pragma once

#include "hjsing/action.hpp"
#include "hjsing/grid.hpp"
#include "hjsing/model.hpp"
#include "hjsing/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <mutex>
#include <vector>

namespace hjsing {

/// lambda_1(T, K) = theta_T^*(K + 1) + c_T + theta_upper_T(0).
inline double localization_radius(const GrowthData& g, double T, double K) {
    if (!(K >= 0.0)) throw InvalidProblem("Lipschitz constant must be nonnegative");
    if (!(T > 0.0)) throw InvalidProblem("horizon must be positive");
    return g.theta_lower_conjugate(K + 1.0) + g.c_T + g.theta_upper(0.0);
}

struct LipschitzBound {
    double F1 = 0.0;  ///< spatial gradient bound
    double F2 = 0.0;  ///< time derivative bound
    double F0 = 0.0;  ///< sqrt(F1^2 + F2^2)
};

/// Energy-chain bound on Lip[u] for u(t, .) = T^-_{0,t} u0, t <= T.
/// c0 is the lower-growth constant at time 0 (defaults to c_T).
inline LipschitzBound solution_lipschitz_bound(const GrowthData& g, double T, double lip_u0, double c0 = -1.0) {
    if (!(T > 0.0)) throw InvalidProblem("horizon must be positive");
    if (c0 < 0.0) c0 = g.c_T;
    double lam1 = localization_radius(g, T, lip_u0);
    LipschitzBound b;
    b.F1 = g.theta_lower_conjugate(lip_u0) + g.c_T + g.ct1 * T + g.ct2 * T * g.theta_upper(lam1 * T) +
           g.theta_upper(1.0);
    b.F2 = g.theta_lower_conjugate(b.F1) + c0 + std::fabs(g.theta_upper_conjugate(b.F1));
    b.F0 = std::hypot(b.F1, b.F2);
    return b;
}

/// lambda_2(T) = lambda_1(T, F0(T)).
inline double trace_radius(const GrowthData& g, double T, double lip_u0, double c0 = -1.0) {
    return localization_radius(g, T, solution_lipschitz_bound(g, T, lip_u0, c0).F0);
}

/// Records |z - x| against radius * dt + one cell for every reported argpoint.
class LocalizationAudit {
public:
    void record(double distance, double bound) {
        std::lock_guard<std::mutex> lock(mu_);
        ++checks_;
        double excess = distance - bound;
        worst_excess_ = std::max(worst_excess_, excess);
        if (excess > 1e-12 * (1.0 + bound)) ++violations_;
    }
    long checks() const { return checks_; }
    long violations() const { return violations_; }
    double worst_excess() const { return worst_excess_; }
    void reset() {
        std::lock_guard<std::mutex> lock(mu_);
        checks_ = violations_ = 0;
        worst_excess_ = -kInf;
    }

private:
    std::mutex mu_;
    long checks_ = 0;
    long violations_ = 0;
    double worst_excess_ = -kInf;
};

/// Localization ball with the near-optimal points found inside it.
struct ArgBall {
    Vec center;
    double radius = 0.0;
    std::vector<Vec> argpoints;
    std::vector<double> values;
};

enum class BoundaryPolicy { Strict, Clip };

struct OperatorOptions {
    double tie_tol = 1e-6;
    int polish_rounds = 3;
    BoundaryPolicy boundary = BoundaryPolicy::Strict;
    LocalizationAudit* audit = nullptr;
    double radius_override = 0.0;  ///< when > 0, replaces radius / (t2 - t1)
    int max_candidates = 32;
};

struct OperatorResult {
    double value = 0.0;
    ArgBall arg;
    double polish_gain = 0.0;
    bool clipped = false;
};

namespace detail {

/// Index sub-box of grid nodes within `radius` of x, intersected with the grid.
struct IndexWindow {
    std::array<int, 3> lo{0, 0, 0}, hi{0, 0, 0}, ext{1, 1, 1};
    std::size_t count = 0;
    bool clipped = false;

    std::size_t local(const std::array<int, 3>& idx, int d) const {
        std::size_t f = 0;
        for (int i = 0; i < d; ++i) f = f * ext[i] + static_cast<std::size_t>(idx[i] - lo[i]);
        return f;
    }
    std::array<int, 3> global(std::size_t f, int d) const {
        std::array<int, 3> idx{0, 0, 0};
        for (int i = d - 1; i >= 0; --i) {
            idx[i] = lo[i] + static_cast<int>(f % ext[i]);
            f /= ext[i];
        }
        return idx;
    }
};

inline IndexWindow window(const GridFunction& g, const Vec& x, double radius) {
    IndexWindow w;
    w.count = 1;
    for (int i = 0; i < g.dim(); ++i) {
        double h = g.spacing(i);
        double a = (x[i] - radius - g.box().lo[i]) / h, b = (x[i] + radius - g.box().lo[i]) / h;
        int lo = static_cast<int>(std::ceil(a - 1e-9)), hi = static_cast<int>(std::floor(b + 1e-9));
        if (lo < 0 || hi > g.resolution()[i] - 1) w.clipped = true;
        lo = std::clamp(lo, 0, g.resolution()[i] - 1);
        hi = std::clamp(hi, 0, g.resolution()[i] - 1);
        if (hi < lo) {
            int k = std::clamp(static_cast<int>(std::lround((x[i] - g.box().lo[i]) / h)), 0, g.resolution()[i] - 1);
            lo = hi = k;
        }
        w.lo[i] = lo;
        w.hi[i] = hi;
        w.ext[i] = hi - lo + 1;
        w.count *= static_cast<std::size_t>(w.ext[i]);
    }
    return w;
}

inline Vec grid_point(const GridFunction& g, const std::array<int, 3>& idx) {
    Vec z(g.dim());
    for (int i = 0; i < g.dim(); ++i) z[i] = g.coordinate(i, idx[i]);
    return z;
}

struct Candidate {
    Vec z;
    double value;
};

/// Minimizes phi(z) = w f(z) + K(z) over the ball: uses scan values on the window
/// (NaN = excluded), polishes the discrete local minima near the best one inside
/// their neighboring cells, and groups the polished minima within tie_tol.
template <class KernelAt>
OperatorResult finish_scan(const GridFunction& f, double w, const KernelAt& kernel, const IndexWindow& win,
                           const std::vector<double>& phi, const Vec& x, double radius, const OperatorOptions& opt) {
    const int d = f.dim();
    OperatorResult res;
    res.arg.center = x;
    res.arg.radius = radius;
    res.clipped = win.clipped;
    std::size_t best = win.count;
    for (std::size_t j = 0; j < win.count; ++j)
        if (!std::isnan(phi[j]) && (best == win.count || phi[j] < phi[best])) best = j;
    if (best == win.count) throw NoMinimizer("no admissible grid node inside the localization ball");
    const double best_scan = phi[best];
    auto neighbors = [&](std::size_t j, auto&& visit) {
        auto idx = win.global(j, d);
        for (int a = 0; a < d; ++a)
            for (int s : {-1, 1}) {
                auto nb = idx;
                nb[a] += s;
                if (nb[a] < win.lo[a] || nb[a] > win.hi[a]) continue;
                std::size_t k = win.local(nb, d);
                if (!std::isnan(phi[k])) visit(k);
            }
    };
    double spread = 0.0;
    neighbors(best, [&](std::size_t k) { spread = std::max(spread, std::fabs(phi[k] - best_scan)); });
    const double window_gap = opt.tie_tol + 2.0 * spread;
    std::vector<std::pair<double, std::size_t>> cands;
    for (std::size_t j = 0; j < win.count; ++j) {
        if (std::isnan(phi[j]) || phi[j] > best_scan + window_gap) continue;
        bool local_min = true;
        neighbors(j, [&](std::size_t k) {
            if (phi[k] < phi[j]) local_min = false;
        });
        if (local_min || j == best) cands.push_back({phi[j], j});
    }
    std::sort(cands.begin(), cands.end());
    if (static_cast<int>(cands.size()) > opt.max_candidates) cands.resize(opt.max_candidates);

    auto objective = [&](const Vec& z) { return w * f(z) + kernel(z); };
    std::vector<Candidate> polished;
    const Box& gb = f.box();
    for (auto [val, j] : cands) {
        auto idx = win.global(j, d);
        Vec z = grid_point(f, idx);
        double fz = val;
        Vec lo(d), hi(d);
        for (int a = 0; a < d; ++a) {
            double h = f.spacing(a);
            lo[a] = std::max({z[a] - h, gb.lo[a], x[a] - radius});
            hi[a] = std::min({z[a] + h, gb.hi[a], x[a] + radius});
        }
        int rounds = d == 1 ? 1 : std::max(1, opt.polish_rounds);
        for (int r = 0; r < rounds; ++r) {
            for (int a = 0; a < d; ++a) {
                double za = z[a];
                double node = grid_point(f, idx)[a];
                Vec trial = z;
                auto line = [&](double c) {
                    trial[a] = c;
                    return objective(trial);
                };
                double xtol = 1e-9 * (1.0 + std::fabs(node)) + 1e-6 * f.spacing(a) * 1e-3;
                if (lo[a] < node) {
                    auto m = brent_minimize(line, lo[a], node, xtol);
                    if (m.f < fz) {
                        fz = m.f;
                        za = m.x;
                    }
                }
                if (node < hi[a]) {
                    auto m = brent_minimize(line, node, hi[a], xtol);
                    if (m.f < fz) {
                        fz = m.f;
                        za = m.x;
                    }
                }
                z[a] = za;
            }
        }
        polished.push_back({z, fz});
    }
    double best_val = kInf;
    for (const auto& c : polished) best_val = std::min(best_val, c.value);
    std::sort(polished.begin(), polished.end(), [](const Candidate& a, const Candidate& b) { return a.value < b.value; });
    const double merge = 0.5 * f.max_spacing();
    for (const auto& c : polished) {
        if (c.value > best_val + opt.tie_tol) continue;
        bool dup = false;
        for (const auto& p : res.arg.argpoints)
            if ((p - c.z).norm() < merge) dup = true;
        if (dup) continue;
        res.arg.argpoints.push_back(c.z);
        res.arg.values.push_back(c.value);
    }
    res.value = best_val;
    res.polish_gain = std::max(0.0, best_scan - best_val);
    return res;
}

inline void audit_result(const OperatorResult& r, const GridFunction& f, double bound, LocalizationAudit* audit) {
    if (!audit) return;
    for (const auto& z : r.arg.argpoints) audit->record((z - r.arg.center).norm(), bound + f.cell_diameter());
}

}  // namespace detail

/// Ball radius per unit time for the operator on [t1, t2] acting on f.
inline double operator_radius(const ActionKernel& A, const GridFunction& f, double t2, const OperatorOptions& opt) {
    if (opt.radius_override > 0) return opt.radius_override;
    return localization_radius(A.model().growth(t2), t2, f.lipschitz_estimate());
}

/// T^-_{t1,t2} f(x) = inf_z { f(z) + A_{t1,t2}(z, x) } over the localization ball.
inline OperatorResult lax_oleinik_minus(const ActionKernel& A, const GridFunction& f, double t1, double t2,
                                        const Vec& x, const OperatorOptions& opt = {}) {
    if (!(t2 > t1)) throw InvalidProblem("lax_oleinik_minus needs t2 > t1");
    const double dt = t2 - t1;
    const double radius = operator_radius(A, f, t2, opt) * dt;
    if (opt.boundary == BoundaryPolicy::Strict && f.box().inner_margin(x) < radius)
        throw BoundaryClipped("localization ball of radius " + std::to_string(radius) + " leaves the grid box");
    auto win = detail::window(f, x, radius);
    auto kernel = [&](const Vec& z) { return A(t1, t2, z, x); };
    const double a_self = A(t1, t2, x, x);
    const double upper = f(x) + a_self;
    const double fmin = f.min_value();
    const ActionLowerBound lb = A.lower_bound(t1, t2);
    std::vector<double> phi(win.count, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t j = 0; j < win.count; ++j) {
        auto idx = win.global(j, f.dim());
        Vec z = detail::grid_point(f, idx);
        double dist = (z - x).norm();
        if (dist > radius * (1 + 1e-12)) continue;
        if (fmin + lb(dt, dist) > upper + opt.tie_tol) continue;
        phi[j] = f[f.flat_index(idx)] + kernel(z);
    }
    bool any = false;
    for (double p : phi) any = any || !std::isnan(p);
    if (!any) {
        auto idx = win.global(0, f.dim());
        double best = kInf;
        for (std::size_t j = 0; j < win.count; ++j) {
            auto id2 = win.global(j, f.dim());
            double dist = (detail::grid_point(f, id2) - x).norm();
            if (dist < best) {
                best = dist;
                idx = id2;
            }
        }
        std::size_t j = win.local(idx, f.dim());
        phi[j] = f[f.flat_index(idx)] + kernel(detail::grid_point(f, idx));
    }
    auto res = detail::finish_scan(f, 1.0, kernel, win, phi, x, radius, opt);
    detail::audit_result(res, f, radius, opt.audit);
    return res;
}

/// T^+_{t1,t2} f(x) = sup_y { f(y) - A_{t1,t2}(x, y) }.
inline OperatorResult lax_oleinik_plus(const ActionKernel& A, const GridFunction& f, double t1, const Vec& x,
                                       double t2, const OperatorOptions& opt = {}) {
    if (!(t2 > t1)) throw InvalidProblem("lax_oleinik_plus needs t2 > t1");
    const double dt = t2 - t1;
    const double radius = operator_radius(A, f, t2, opt) * dt;
    if (opt.boundary == BoundaryPolicy::Strict && f.box().inner_margin(x) < radius)
        throw BoundaryClipped("localization ball of radius " + std::to_string(radius) + " leaves the grid box");
    auto win = detail::window(f, x, radius);
    auto kernel = [&](const Vec& y) { return A(t1, t2, x, y); };
    const double upper = -f(x) + A(t1, t2, x, x);
    const double neg_min = -f.max_value();
    const ActionLowerBound lb = A.lower_bound(t1, t2);
    std::vector<double> phi(win.count, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t j = 0; j < win.count; ++j) {
        auto idx = win.global(j, f.dim());
        Vec y = detail::grid_point(f, idx);
        double dist = (y - x).norm();
        if (dist > radius * (1 + 1e-12)) continue;
        if (neg_min + lb(dt, dist) > upper + opt.tie_tol) continue;
        phi[j] = -f[f.flat_index(idx)] + kernel(y);
    }
    bool any = false;
    for (double p : phi) any = any || !std::isnan(p);
    if (!any) throw NoMinimizer("no admissible grid node inside the localization ball");
    auto res = detail::finish_scan(f, -1.0, kernel, win, phi, x, radius, opt);
    res.value = -res.value;
    for (double& v : res.arg.values) v = -v;
    detail::audit_result(res, f, radius, opt.audit);
    return res;
}

// ---------------------------------------------------------------- grid sweeps

struct SweepStats {
    double max_polish_gain = 0.0;
    std::size_t clipped_nodes = 0;
    std::size_t scanned_pairs = 0;
};

/// T^-_{t1,t2} on every node of a fixed grid layout. Kernel values between nodes are
/// computed once per layout and reused across applications.
class GridOperator {
public:
    GridOperator(ActionKernel A, const GridFunction& layout, double t1, double t2, double lip_budget,
                 double range_budget, OperatorOptions opt = {}, int jobs = 1)
        : A_(std::move(A)), layout_(layout), t1_(t1), t2_(t2), opt_(opt), jobs_(jobs) {
        if (!(t2 > t1)) throw InvalidProblem("GridOperator needs t2 > t1");
        build(lip_budget, range_budget);
    }

    double radius() const { return radius_; }
    double lip_budget() const { return lip_budget_; }
    const ActionKernel& kernel() const { return A_; }

    /// Applies the operator; rebuilds the stencils when f exceeds the Lipschitz or range budget.
    GridFunction apply(const GridFunction& f, SweepStats* stats = nullptr) {
        if (!f.same_layout(layout_)) throw InvalidProblem("grid layout differs from the operator layout");
        double range = f.max_value() - f.min_value();
        if (f.lipschitz_estimate() > lip_budget_ * (1 + 1e-12) || range > range_budget_ * (1 + 1e-12))
            build(std::max(f.lipschitz_estimate(), lip_budget_) * 1.25 + 1e-9,
                  std::max(range, range_budget_) * 1.25 + 1e-9);
        std::vector<double> out(f.size());
        std::vector<double> gain(f.size(), 0.0);
        const double dt = t2_ - t1_;
        parallel_for(f.size(), jobs_, [&](std::size_t i) {
            const Stencil& st = stencils_[i];
            Vec x = layout_.node(i);
            std::vector<double> phi(st.win.count, std::numeric_limits<double>::quiet_NaN());
            for (std::size_t j = 0; j < st.win.count; ++j) {
                if (std::isnan(st.kval[j])) continue;
                phi[j] = f[f.flat_index(st.win.global(j, f.dim()))] + st.kval[j];
            }
            auto kernel = [&](const Vec& z) { return A_(t1_, t2_, z, x); };
            auto res = detail::finish_scan(f, 1.0, kernel, st.win, phi, x, radius_ * dt, opt_);
            detail::audit_result(res, f, radius_ * dt, opt_.audit);
            out[i] = res.value;
            gain[i] = res.polish_gain;
        });
        GridFunction g = f;
        g.set_values(std::move(out));
        if (stats) {
            stats->max_polish_gain = *std::max_element(gain.begin(), gain.end());
            stats->clipped_nodes = clipped_;
            stats->scanned_pairs = pairs_;
        }
        return g;
    }

private:
    struct Stencil {
        detail::IndexWindow win;
        std::vector<double> kval;
    };

    void build(double lip_budget, double range_budget) {
        lip_budget_ = lip_budget;
        range_budget_ = range_budget;
        const double dt = t2_ - t1_;
        radius_ = opt_.radius_override > 0 ? opt_.radius_override
                                           : localization_radius(A_.model().growth(t2_), t2_, lip_budget);
        const double r = radius_ * dt;
        const ActionLowerBound lb = A_.lower_bound(t1_, t2_);
        stencils_.assign(layout_.size(), {});
        std::vector<std::size_t> counts(layout_.size(), 0);
        parallel_for(layout_.size(), jobs_, [&](std::size_t i) {
            Vec x = layout_.node(i);
            Stencil& st = stencils_[i];
            st.win = detail::window(layout_, x, r);
            st.kval.assign(st.win.count, std::numeric_limits<double>::quiet_NaN());
            double a_self = A_(t1_, t2_, x, x);
            for (std::size_t j = 0; j < st.win.count; ++j) {
                Vec z = detail::grid_point(layout_, st.win.global(j, layout_.dim()));
                double dist = (z - x).norm();
                if (dist > r * (1 + 1e-12)) continue;
                if (lb(dt, dist) > a_self + range_budget + opt_.tie_tol) continue;
                st.kval[j] = dist == 0.0 ? a_self : A_(t1_, t2_, z, x);
                ++counts[i];
            }
        });
        clipped_ = 0;
        pairs_ = 0;
        for (std::size_t i = 0; i < layout_.size(); ++i) {
            if (stencils_[i].win.clipped) ++clipped_;
            pairs_ += counts[i];
        }
    }

    ActionKernel A_;
    GridFunction layout_;
    double t1_, t2_;
    OperatorOptions opt_;
    int jobs_;
    double radius_ = 0.0;
    double lip_budget_ = 0.0;
    double range_budget_ = 0.0;
    std::vector<Stencil> stencils_;
    std::size_t clipped_ = 0;
    std::size_t pairs_ = 0;
};

// ---------------------------------------------------------------- discounted operator

inline constexpr double kExponentCap = 40.0;

/// Kernel of the transformed problem (Lhat = e^{lambda t} L).
inline ActionKernel discounted_kernel(const DiscountedProblem& problem, KernelOptions ko = {}) {
    return ActionKernel(to_evolutionary(problem).lagrangian, ko);
}

/// T_t^- v(x) = inf over curves ending at x of e^{-lambda t} v(xi(0)) + int_0^t e^{lambda(s-t)} L,
/// evaluated as e^{-lambda t} (That^-_{0,t} v)(x) for the transformed Lagrangian.
inline OperatorResult discounted_lax_oleinik(const DiscountedProblem& problem, const GridFunction& v, double t,
                                             const Vec& x, const OperatorOptions& opt = {},
                                             const ActionKernel* kernel = nullptr) {
    if (!(t > 0.0)) throw InvalidProblem("discounted operator needs t > 0");
    if (problem.lambda * t > kExponentCap) throw Overflow("lambda t exceeds the exponent cap");
    ActionKernel own;
    if (!kernel) {
        own = discounted_kernel(problem);
        kernel = &own;
    }
    auto r = lax_oleinik_minus(*kernel, v, 0.0, t, x, opt);
    double e = std::exp(-problem.lambda * t);
    r.value *= e;
    for (double& val : r.arg.values) val *= e;
    return r;
}

/// Grid version of T_t^- for a fixed layout.
class DiscountedOperator {
public:
    DiscountedOperator(const DiscountedProblem& problem, const GridFunction& layout, double t, double lip_budget,
                       double range_budget, OperatorOptions opt = {}, int jobs = 1, KernelOptions ko = {})
        : lambda_(problem.lambda), t_(t),
          op_((check(problem, t), discounted_kernel(problem, ko)), layout, 0.0, t, lip_budget, range_budget, opt,
              jobs) {}

    GridFunction apply(const GridFunction& v, SweepStats* stats = nullptr) {
        GridFunction g = op_.apply(v, stats);
        std::vector<double> vals = g.values();
        double e = std::exp(-lambda_ * t_);
        for (double& x : vals) x *= e;
        g.set_values(std::move(vals));
        if (stats) stats->max_polish_gain *= e;
        return g;
    }

    double radius() const { return op_.radius(); }
    double time() const { return t_; }
    const ActionKernel& kernel() const { return op_.kernel(); }

private:
    static void check(const DiscountedProblem& p, double t) {
        if (!(t > 0.0)) throw InvalidProblem("discounted operator needs t > 0");
        if (p.lambda * t > kExponentCap) throw Overflow("lambda t exceeds the exponent cap");
    }
    double lambda_;
    double t_;
    GridOperator op_;
};

}  // namespace hjsing
