#pragma once

#include "hjsing/laxoleinik.hpp"
#include "hjsing/solver.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace hjsing {

/// One reachable gradient: momentum p = D_y u, time derivative q = -H, and the minimizer z producing it.
struct GradientElement {
    Vec p;
    double q = 0.0;
    Vec z;
    double value = 0.0;  ///< objective value at z
    Vec dv;              ///< Dv for discounted fields (p without the e^{lambda t} factor), else p
};

struct ReachableGradientSet {
    double t = 0.0;
    Vec x;
    std::vector<GradientElement> elements;
    double diameter = 0.0;
    std::string source = "minimizer-enumeration";

    bool singleton() const { return elements.size() <= 1 || diameter <= 1e-4; }
};

struct FieldOptions {
    double tie_tol = 1e-6;
    double merge_tol = 1e-4;
    LocalizationAudit* audit = nullptr;
};

/// Solution u(t, y) of an evolutionary problem given by a representation formula.
class SolutionField {
public:
    virtual ~SolutionField() = default;

    virtual bool discounted() const = 0;
    /// Accurate value.
    virtual double value(double t, const Vec& y) const = 0;
    /// Cheap interpolated value.
    virtual double proxy(double t, const Vec& y) const = 0;
    /// Near-optimal minimizers of the representation formula at (t, y).
    virtual std::vector<GradientElement> minimizers(double t, const Vec& y) const = 0;
    /// Objective of the representation formula for candidate z, and the element it produces.
    virtual double objective(double t, const Vec& y, const Vec& z) const = 0;
    virtual GradientElement element(double t, const Vec& y, const Vec& z) const = 0;
    /// Radius of the minimizer search ball at (t, y).
    virtual double search_radius(double t) const = 0;

    virtual const ActionKernel& kernel() const = 0;
    virtual const HamiltonianModel& hamiltonian() const = 0;
    virtual const GridFunction& data() const = 0;
    virtual double lipschitz_initial() const { return data().lipschitz_estimate(); }

    int dim() const { return data().dim(); }
    const Box& box() const { return data().box(); }
    double grid_spacing() const { return data().max_spacing(); }
    GrowthData growth(double T) const { return kernel().model().growth(T); }
    /// lambda_2(T) = lambda_1(T, F0(T)).
    double trace_radius(double T) const { return hjsing::trace_radius(growth(T), T, lipschitz_initial()); }
    const FieldOptions& options() const { return opt_; }

protected:
    explicit SolutionField(FieldOptions o) : opt_(o) {}
    FieldOptions opt_;
};

/// u(t, y) = min_z u0(z) + A_{0,t}(z, y).
class EvolutionaryField : public SolutionField {
public:
    EvolutionaryField(ActionKernel A, HamiltonianModel H, GridFunction u0, FieldOptions o = {})
        : SolutionField(o), A_(std::move(A)), H_(std::move(H)), u0_(std::move(u0)) {}

    bool discounted() const override { return false; }

    double value(double t, const Vec& y) const override {
        if (t <= 0.0) return u0_(y);
        return solve(t, y).value;
    }
    double proxy(double t, const Vec& y) const override { return value(t, y); }

    std::vector<GradientElement> minimizers(double t, const Vec& y) const override {
        if (!(t > 0.0)) throw InvalidProblem("reachable gradients of an evolutionary field need t > 0");
        auto r = solve(t, y);
        std::vector<GradientElement> out;
        for (std::size_t i = 0; i < r.arg.argpoints.size(); ++i) out.push_back(element(t, y, r.arg.argpoints[i]));
        return out;
    }

    double objective(double t, const Vec& y, const Vec& z) const override { return u0_(z) + A_(0.0, t, z, y); }

    GradientElement element(double t, const Vec& y, const Vec& z) const override {
        GradientElement e;
        e.z = z;
        e.value = objective(t, y, z);
        e.p = A_.grad_y(0.0, t, z, y);
        e.q = -H_.H(t, y, e.p);
        e.dv = e.p;
        return e;
    }

    double search_radius(double t) const override {
        return localization_radius(A_.model().growth(t), t, u0_.lipschitz_estimate()) * t;
    }

    const ActionKernel& kernel() const override { return A_; }
    const HamiltonianModel& hamiltonian() const override { return H_; }
    const GridFunction& data() const override { return u0_; }

private:
    OperatorResult solve(double t, const Vec& y) const {
        OperatorOptions oo;
        oo.boundary = BoundaryPolicy::Clip;
        oo.tie_tol = opt_.tie_tol;
        oo.audit = opt_.audit;
        return lax_oleinik_minus(A_, u0_, 0.0, t, y, oo);
    }

    ActionKernel A_;
    HamiltonianModel H_;
    GridFunction u0_;
};

/// Transformed field u(t, y) = e^{lambda t} v(y) of a discounted fixed point v. Values off the grid
/// use the reconstruction R = T_sigma^- v, which equals v at the fixed point and places kinks
/// between nodes.
class DiscountedField : public SolutionField {
public:
    DiscountedField(DiscountedProblem problem, GridFunction v, double sigma = 0.25, FieldOptions o = {})
        : SolutionField(o), problem_(std::move(problem)), v_(std::move(v)), sigma_(sigma) {
        if (!(sigma_ > 0.0)) throw InvalidProblem("reconstruction time must be positive");
        auto ev = to_evolutionary(problem_);
        A_ = ActionKernel(ev.lagrangian);
        H_ = ev.hamiltonian;
    }

    bool discounted() const override { return true; }
    const DiscountedProblem& problem() const { return problem_; }
    double sigma() const { return sigma_; }

    /// R(y) = T_sigma^- v(y).
    double reconstruct(const Vec& y) const { return solve(y).value; }

    double value(double t, const Vec& y) const override { return checked_exp(problem_.lambda * t) * reconstruct(y); }
    double proxy(double t, const Vec& y) const override { return checked_exp(problem_.lambda * t) * v_(y); }

    std::vector<GradientElement> minimizers(double t, const Vec& y) const override {
        auto r = solve(y);
        std::vector<GradientElement> out;
        for (const auto& z : r.arg.argpoints) out.push_back(element(t, y, z));
        return out;
    }

    double objective(double, const Vec& y, const Vec& z) const override {
        return std::exp(-problem_.lambda * sigma_) * (v_(z) + A_(0.0, sigma_, z, y));
    }

    GradientElement element(double t, const Vec& y, const Vec& z) const override {
        GradientElement e;
        e.z = z;
        e.value = objective(t, y, z);
        e.dv = std::exp(-problem_.lambda * sigma_) * A_.grad_y(0.0, sigma_, z, y);
        e.p = checked_exp(problem_.lambda * t) * e.dv;
        e.q = -H_.H(t, y, e.p);
        return e;
    }

    double search_radius(double) const override {
        return localization_radius(A_.model().growth(sigma_), sigma_, v_.lipschitz_estimate()) * sigma_;
    }

    const ActionKernel& kernel() const override { return A_; }
    const HamiltonianModel& hamiltonian() const override { return H_; }
    const GridFunction& data() const override { return v_; }

private:
    OperatorResult solve(const Vec& y) const {
        OperatorOptions oo;
        oo.boundary = BoundaryPolicy::Clip;
        oo.tie_tol = opt_.tie_tol;
        oo.audit = opt_.audit;
        return discounted_lax_oleinik(problem_, v_, sigma_, y, oo, &A_);
    }

    DiscountedProblem problem_;
    GridFunction v_;
    double sigma_;
    ActionKernel A_;
    HamiltonianModel H_;
};

// ---------------------------------------------------------------- reachable gradients

namespace detail {

/// Coordinate-wise Brent descent of f inside [center - w, center + w] clipped to the box.
inline Vec local_descent(const std::function<double(const Vec&)>& f, Vec z, double w, const Box& box, int rounds = 3) {
    for (int r = 0; r < rounds; ++r)
        for (int a = 0; a < z.size(); ++a) {
            Vec trial = z;
            auto line = [&](double c) {
                trial[a] = c;
                return f(trial);
            };
            double lo = std::max(z[a] - w, box.lo[a]), hi = std::min(z[a] + w, box.hi[a]);
            if (hi <= lo) continue;
            auto m = brent_minimize(line, lo, hi, 1e-10 * (1.0 + std::fabs(z[a])));
            if (m.f < f(z)) z[a] = m.x;
        }
    return z;
}

inline double p_diameter(const std::vector<GradientElement>& els) {
    double d = 0.0;
    for (std::size_t i = 0; i < els.size(); ++i)
        for (std::size_t j = i + 1; j < els.size(); ++j) d = std::max(d, (els[i].p - els[j].p).norm());
    return d;
}

}  // namespace detail

/// Enumerates the distinct minimizers at (t, x): the grid scan of the operator plus `restarts`
/// local descents seeded over the search ball; elements with momenta within merge_tol are merged.
inline ReachableGradientSet reachable_gradients(const SolutionField& field, double t, const Vec& x,
                                                int restarts = 5, std::uint64_t seed = 1) {
    ReachableGradientSet out;
    out.t = t;
    out.x = x;
    std::vector<GradientElement> els = field.minimizers(t, x);
    const int n = static_cast<int>(x.size());
    if (restarts > 0) {
        double radius = field.search_radius(t);
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> unit(-1.0, 1.0);
        auto f = [&](const Vec& z) { return field.objective(t, x, z); };
        double best = kInf;
        for (const auto& e : els) best = std::min(best, e.value);
        double w = std::max(radius / restarts, 2.0 * field.grid_spacing());
        for (int k = 0; k < restarts; ++k) {
            Vec z0(n);
            for (int i = 0; i < n; ++i) z0[i] = x[i] + radius * (n == 1 ? (2.0 * k + 1) / restarts - 1.0 : unit(rng));
            z0 = field.box().clamp(z0);
            Vec z = detail::local_descent(f, z0, w, field.box());
            double val = f(z);
            if (val < best - field.options().tie_tol) {
                best = val;
                els.clear();
            }
            if (val <= best + field.options().tie_tol) els.push_back(field.element(t, x, z));
        }
        std::vector<GradientElement> kept;
        for (const auto& e : els)
            if (e.value <= best + field.options().tie_tol) kept.push_back(e);
        els.swap(kept);
    }
    if (els.empty()) throw NoMinimizer("no minimizer found at the requested point");
    std::sort(els.begin(), els.end(), [](const GradientElement& a, const GradientElement& b) {
        for (int i = 0; i < a.p.size(); ++i)
            if (a.p[i] != b.p[i]) return a.p[i] < b.p[i];
        return false;
    });
    for (const auto& e : els) {
        bool dup = false;
        for (const auto& k : out.elements)
            if ((k.p - e.p).norm() <= field.options().merge_tol) dup = true;
        if (!dup) out.elements.push_back(e);
    }
    out.diameter = detail::p_diameter(out.elements);
    return out;
}

struct SingularityFlag {
    bool singular = false;
    ReachableGradientSet certificate;
};

inline SingularityFlag is_singular(const SolutionField& field, double t, const Vec& x, double singular_tol = 1e-2,
                                   int restarts = 5) {
    SingularityFlag f;
    f.certificate = reachable_gradients(field, t, x, restarts);
    f.singular = f.certificate.diameter > singular_tol;
    return f;
}

// ---------------------------------------------------------------- propagation

struct TraceOptions {
    double singular_tol = 1e-2;
    double block = 1.0;             ///< schedule block length T
    int ladder = 2;                 ///< argmax evaluations per step
    double tie_tol = 1e-6;          ///< relative tie tolerance of the argmax
    int max_halvings = 6;
    double search_radius = 2.0;     ///< cap on the argmax ball radius
    double semiconcavity_radius = 0.5;
    double safety = 1.5;
    double min_step = 1e-6;
    int constant_samples = 48;
    std::uint64_t seed = 11;
    int restarts = 5;
    bool certify = true;
    bool override_start = false;    ///< trace even when the start is not singular
};

struct StepConstants {
    double C = 0.0;        ///< semiconcavity of u near the start
    ConvexityConstants convexity;
    double lambda2 = 0.0;
    double t_step = 0.0;
};

struct StepResult {
    double t_step = 0.0;
    std::vector<double> times;
    std::vector<Vec> points;
    std::vector<double> certificates;  ///< reachable-gradient diameters (-1 when not certified)
    int halvings = 0;
    bool tie_broken = false;
    StepConstants constants;
};

/// Largest sampled second difference of u(t, .) / |z|^2 on B(x, radius) clipped to the box.
inline double semiconcavity_constant(const SolutionField& field, double t, const Vec& x, double radius,
                                     std::uint64_t seed = 5, int samples = 64) {
    const int n = field.dim();
    const double hs = 2.0 * field.grid_spacing();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::normal_distribution<double> gauss;
    double C = 0.0;
    for (int k = 0; k < samples; ++k) {
        Vec y(n), d(n);
        for (int i = 0; i < n; ++i) {
            y[i] = x[i] + radius * (n == 1 ? (2.0 * k + 1) / samples - 1.0 : unit(rng));
            d[i] = n == 1 ? 1.0 : gauss(rng);
        }
        if (d.norm() == 0) d[0] = 1;
        d.normalize();
        if (!field.box().contains(y - hs * d) || !field.box().contains(y + hs * d)) continue;
        double sd = field.proxy(t, Vec(y + hs * d)) + field.proxy(t, Vec(y - hs * d)) - 2 * field.proxy(t, y);
        C = std::max(C, sd / (hs * hs));
    }
    return C;
}

/// Constants of one schedule block: C from u on [t1, t_end], C2 from the action cone at (t1, x).
/// The cone height starts at t_end - t1 and is halved until the sampled C2 is positive.
inline StepConstants step_constants(const SolutionField& field, double t1, const Vec& x, double t_end,
                                    const TraceOptions& opt) {
    StepConstants k;
    double height = std::max(t_end - t1, 1e-6);
    k.lambda2 = field.trace_radius(std::max(t_end, 1e-6));
    double r = std::min(opt.semiconcavity_radius, k.lambda2 * height);
    k.C = std::max(semiconcavity_constant(field, t1, x, r, opt.seed), semiconcavity_constant(field, t_end, x, r, opt.seed));
    for (int halving = 0;; ++halving) {
        k.convexity = estimate_constants(field.kernel(), t1, x, t1 + height, opt.search_radius, k.lambda2,
                                         opt.constant_samples, opt.seed);
        if (k.convexity.C2 > 0) break;
        if (halving >= opt.max_halvings) throw ConcavityFailure("action is not uniformly convex near the start point");
        height *= 0.5;
    }
    double C2 = k.convexity.C2;
    k.t_step = k.C > 0 ? C2 / (2.0 * k.C) / opt.safety : kInf;
    k.t_step = std::clamp(k.t_step, opt.min_step, height);
    return k;
}

namespace detail {

struct ArgmaxResult {
    Vec y;
    double value = -kInf;
    bool unique = true;
    std::vector<Vec> ties;
};

/// Maximizes u(t, .) - A_{t1,t}(x1, .) over the capped ball: proxy scan, then value-based refinement.
inline ArgmaxResult ball_argmax(const SolutionField& field, double t1, const Vec& x1, double t, double radius,
                                double tie_tol) {
    const int n = field.dim();
    const double h = field.grid_spacing();
    const ActionKernel& A = field.kernel();
    const Box& box = field.box();
    const double step = 0.5 * h;
    int m = std::max(1, static_cast<int>(std::ceil(radius / step)));
    std::array<int, 3> ext{1, 1, 1};
    std::size_t total = 1;
    for (int i = 0; i < n; ++i) {
        ext[i] = 2 * m + 1;
        total *= ext[i];
    }
    std::vector<double> scan(total, -kInf);
    std::vector<Vec> pts(total);
    for (std::size_t f = 0; f < total; ++f) {
        std::size_t g = f;
        Vec y(n);
        for (int i = n - 1; i >= 0; --i) {
            int k = static_cast<int>(g % ext[i]) - m;
            g /= ext[i];
            y[i] = x1[i] + k * step;
        }
        pts[f] = y;
        if ((y - x1).norm() > radius + 1e-12 || !box.contains(y)) continue;
        scan[f] = field.proxy(t, y) - A(t1, t, x1, y);
    }
    std::size_t best = 0;
    for (std::size_t f = 1; f < total; ++f)
        if (scan[f] > scan[best]) best = f;
    double spread = 0.0;
    std::vector<std::size_t> cands;
    auto neighbors = [&](std::size_t f, auto&& visit) {
        std::size_t stride = 1;
        for (int i = n - 1; i >= 0; --i) {
            int k = static_cast<int>((f / stride) % ext[i]);
            if (k > 0) visit(f - stride);
            if (k + 1 < ext[i]) visit(f + stride);
            stride *= ext[i];
        }
    };
    neighbors(best, [&](std::size_t k) {
        if (std::isfinite(scan[k])) spread = std::max(spread, scan[best] - scan[k]);
    });
    for (std::size_t f = 0; f < total; ++f) {
        if (!std::isfinite(scan[f]) || scan[f] < scan[best] - 4.0 * spread - tie_tol) continue;
        bool local = true;
        neighbors(f, [&](std::size_t k) {
            if (scan[k] > scan[f]) local = false;
        });
        if (local) cands.push_back(f);
    }
    auto phi = [&](const Vec& y) { return field.value(t, y) - A(t1, t, x1, y); };
    auto neg = [&](const Vec& y) { return -phi(y); };
    std::vector<std::pair<Vec, double>> refined;
    for (std::size_t f : cands) {
        Vec y = local_descent(neg, pts[f], 1.5 * h, box, n == 1 ? 1 : 3);
        refined.push_back({y, phi(y)});
    }
    ArgmaxResult r;
    for (const auto& [y, v] : refined)
        if (v > r.value) {
            r.value = v;
            r.y = y;
        }
    double tol = tie_tol * (1.0 + std::fabs(r.value));
    for (const auto& [y, v] : refined)
        if (v >= r.value - tol && (y - r.y).norm() > 2.0 * h) r.ties.push_back(y);
    r.unique = r.ties.empty();
    if (!r.unique) r.ties.push_back(r.y);
    return r;
}

/// Sampled second differences of the argmax objective around y must sit below -kappa |z|^2.
inline bool concave_near(const SolutionField& field, double t1, const Vec& x1, double t, const Vec& y, double kappa) {
    const int n = field.dim();
    const ActionKernel& A = field.kernel();
    auto phi = [&](const Vec& w) { return field.value(t, w) - A(t1, t, x1, w); };
    double f0 = phi(y);
    double rho = 4.0 * field.grid_spacing();
    for (double scale : {1.0, 0.5})
        for (int a = 0; a < n; ++a) {
            Vec z = Vec::Zero(n);
            z[a] = scale * rho;
            if (!field.box().contains(y + z) || !field.box().contains(y - z)) continue;
            double sd = phi(Vec(y + z)) + phi(Vec(y - z)) - 2 * f0;
            if (sd > -kappa * z.squaredNorm() + 1e-9 * (1.0 + std::fabs(f0))) return false;
        }
    return true;
}

}  // namespace detail

/// One step of the singular characteristic from (t1, x1): for a ladder of t in (t1, t1 + t_step],
/// y(t) = argmax over the ball of u(t, .) - A_{t1,t}(x1, .).
inline StepResult propagation_step(const SolutionField& field, double t1, const Vec& x1, double T,
                                   const TraceOptions& opt = {}, const StepConstants* given = nullptr,
                                   double max_step = kInf, const Vec* previous = nullptr) {
    StepResult out;
    out.constants = given ? *given : step_constants(field, t1, x1, t1 + T, opt);
    double t_step = std::min({out.constants.t_step, max_step, T});
    if (!(t_step > 0)) throw ScheduleStall("propagation step has zero length");
    const double C2 = out.constants.convexity.C2;
    const double C = out.constants.C;
    const Vec& prev = previous ? *previous : x1;
    for (int attempt = 0;; ++attempt) {
        out.times.clear();
        out.points.clear();
        out.certificates.clear();
        bool failed = false;
        std::string why;
        bool tie = false;
        for (int k = 1; k <= opt.ladder && !failed; ++k) {
            double t = t1 + t_step * k / opt.ladder;
            double dt = t - t1;
            double kappa = 0.5 * (C2 / dt - C);
            if (!(kappa > 0)) {
                failed = true;
                why = "concavity";
                break;
            }
            double radius = std::min(out.constants.lambda2 * dt, opt.search_radius);
            auto am = detail::ball_argmax(field, t1, x1, t, radius, opt.tie_tol);
            Vec y = am.y;
            if (!am.unique) {
                if (attempt < opt.max_halvings) {
                    failed = true;
                    why = "tie";
                    break;
                }
                std::sort(am.ties.begin(), am.ties.end(), [&](const Vec& a, const Vec& b) {
                    double da = (a - prev).norm(), db = (b - prev).norm();
                    if (da != db) return da < db;
                    for (int i = 0; i < a.size(); ++i)
                        if (a[i] != b[i]) return a[i] < b[i];
                    return false;
                });
                y = am.ties.front();
                tie = true;
            }
            if (!detail::concave_near(field, t1, x1, t, y, kappa)) {
                failed = true;
                why = "concavity";
                break;
            }
            out.times.push_back(t);
            out.points.push_back(y);
            double diam = -1.0;
            if (opt.certify) diam = reachable_gradients(field, t, y, opt.restarts).diameter;
            out.certificates.push_back(diam);
        }
        if (!failed) {
            out.t_step = t_step;
            out.halvings = attempt;
            out.tie_broken = tie;
            return out;
        }
        if (attempt >= opt.max_halvings) {
            if (why == "tie") throw NonUniqueArgmax("argmax is not unique after step halving");
            throw ConcavityFailure("argmax objective is not strictly concave after step halving");
        }
        t_step *= 0.5;
        if (t_step < opt.min_step) throw ScheduleStall("propagation step underflow");
    }
}

struct SingularCurve {
    double t0 = 0.0;
    Vec start;
    std::vector<double> times;
    std::vector<Vec> points;
    std::vector<double> step_sizes;
    std::vector<double> certificates;
    std::vector<int> schedule;          ///< k_i per block
    std::vector<double> block_steps;    ///< t_i per block
    std::vector<StepConstants> block_constants;
    int localization_violations = 0;
    bool start_singular = false;
    double start_diameter = 0.0;
    std::string warning;

    std::size_t size() const { return times.size(); }

    std::string to_csv() const {
        std::ostringstream os;
        os.precision(17);
        os << "s";
        int n = static_cast<int>(start.size());
        for (int i = 1; i <= n; ++i) os << ",x" << i;
        os << ",step_size,certificate_diameter\n";
        for (std::size_t k = 0; k < times.size(); ++k) {
            os << times[k];
            for (int i = 0; i < n; ++i) os << "," << points[k][i];
            os << "," << step_sizes[k] << "," << certificates[k] << "\n";
        }
        return os.str();
    }
};

/// Global singular curve from (t0, x) to T_total: on block i, steps of length t_i (nonincreasing)
/// are repeated k_i = floor((iT - sum k_j t_j - t0) / t_i) times; a final step reaches T_total.
inline SingularCurve trace_singular_curve(const SolutionField& field, double t0, const Vec& x, double T_total,
                                          const TraceOptions& opt = {}) {
    SingularCurve c;
    c.t0 = t0;
    c.start = x;
    c.times.push_back(t0);
    c.points.push_back(x);
    c.step_sizes.push_back(0.0);
    double start_diam = -1.0;
    if (opt.certify || !opt.override_start) {
        auto rg = reachable_gradients(field, t0, x, opt.restarts);
        start_diam = rg.diameter;
        c.start_singular = rg.diameter > opt.singular_tol;
    }
    c.start_diameter = start_diam;
    c.certificates.push_back(start_diam);
    if (!c.start_singular && !opt.override_start) {
        c.warning = "start point is not singular; nothing traced";
        c.times.clear();
        c.points.clear();
        c.step_sizes.clear();
        c.certificates.clear();
        return c;
    }
    if (!(T_total > t0)) return c;
    const double T = opt.block;
    double cur = t0;
    Vec pos = x;
    double t_prev = kInf;
    for (int i = 1; cur < T_total - 1e-12; ++i) {
        double block_end = std::min(i * T, T_total);
        if (block_end <= cur + 1e-12) {
            c.schedule.push_back(0);
            c.block_steps.push_back(t_prev);
            continue;
        }
        StepConstants k = step_constants(field, cur, x, i * T, opt);
        double ti = std::min({k.t_step, t_prev, T});
        if (ti < opt.min_step) throw ScheduleStall("schedule step t_i fell below the minimum");
        k.t_step = ti;
        t_prev = ti;
        c.block_constants.push_back(k);
        c.block_steps.push_back(ti);
        int count = 0;
        auto advance = [&](double len) {
            const Vec* prev = c.points.size() >= 2 ? &c.points[c.points.size() - 2] : nullptr;
            auto st = propagation_step(field, cur, pos, T, opt, &k, len, prev);
            for (std::size_t j = 0; j < st.times.size(); ++j) {
                c.times.push_back(st.times[j]);
                c.points.push_back(st.points[j]);
                c.step_sizes.push_back(st.t_step);
                c.certificates.push_back(st.certificates[j]);
                double s = st.times[j];
                double lam = field.trace_radius(std::ceil(s / T - 1e-12) * T);
                if ((st.points[j] - x).norm() > lam * (s - t0) + 1e-9) ++c.localization_violations;
            }
            cur = st.times.back();
            pos = st.points.back();
        };
        while (cur + ti <= block_end + 1e-12 * (1.0 + block_end)) {
            advance(ti);
            ++count;
        }
        if (block_end >= T_total && cur < T_total - 1e-12) {
            advance(T_total - cur);
            ++count;
        }
        c.schedule.push_back(count);
    }
    return c;
}

// ---------------------------------------------------------------- Lipschitz certificate

struct LipschitzCertificate {
    double C4 = 0.0;
    double C1_used = 0.0;
    double max_quotient = 0.0;
    double slack = 0.1;
    bool pass = false;
};

/// C4 = C3/C2 + (K + sqrt(C1 + K)) / (2 C1), with C1 floored at c1_floor * C2; compares
/// every consecutive difference quotient of the curve with C4 (1 + slack).
inline LipschitzCertificate lipschitz_certificate(const SingularCurve& curve, const ConvexityConstants& k, double K_T,
                                                  double slack = 0.1, double c1_floor = 1e-2) {
    LipschitzCertificate r;
    r.slack = slack;
    r.C1_used = std::max(k.C1, c1_floor * k.C2);
    r.C4 = k.C3 / k.C2 + (K_T + std::sqrt(r.C1_used + K_T)) / (2.0 * r.C1_used);
    for (std::size_t i = 1; i < curve.size(); ++i) {
        double dt = curve.times[i] - curve.times[i - 1];
        if (dt <= 0) continue;
        r.max_quotient = std::max(r.max_quotient, (curve.points[i] - curve.points[i - 1]).norm() / dt);
    }
    r.pass = r.max_quotient <= r.C4 * (1.0 + slack);
    return r;
}

/// Step-map Lipschitz ratio |y(xa) - y(xb)| / |xa - xb| for the argmax map at (t1, t).
inline double step_map_ratio(const SolutionField& field, double t1, const Vec& xa, const Vec& xb, double t,
                             const TraceOptions& opt = {}) {
    double r = std::min(field.trace_radius(std::max(t, 1e-6)) * (t - t1), opt.search_radius);
    auto a = detail::ball_argmax(field, t1, xa, t, r, opt.tie_tol);
    auto b = detail::ball_argmax(field, t1, xb, t, r, opt.tie_tol);
    return (a.y - b.y).norm() / (xa - xb).norm();
}

// ---------------------------------------------------------------- cut time

struct CutTimeOptions {
    double horizon = 0.0;       ///< 0 means 20 / lambda
    double calib_tol = 1e-2;
    double singular_tol = 1e-2;
    double max_step = 1e-2;
    int restarts = 5;
};

struct CutTimeResult {
    double tau = 0.0;
    bool clamped = false;
    bool singular_start = false;
    bool stationary = false;
    double horizon = 0.0;
    Vec endpoint;  ///< gamma(tau)
    Vec momentum;  ///< Dv at the start
};

inline double cut_horizon(const DiscountedProblem& p, const CutTimeOptions& o) {
    return o.horizon > 0 ? o.horizon : 20.0 / p.lambda;
}

/// Normalized calibration defect |v(gamma(t)) - e^{-lambda t} (v(x) + int_0^t e^{lambda s} L)|.
inline double calibration_defect(const DiscountedField& f, double v_start, double t, const Vec& y, double action) {
    double lam = f.problem().lambda;
    return std::fabs(f.data()(y) - std::exp(-lam * t) * (v_start + action));
}

/// Supremum of t such that the characteristic from (x, Dv(x)) stays calibrated on [0, t].
inline CutTimeResult cut_time(const DiscountedField& field, const Vec& x, const CutTimeOptions& opt = {}) {
    const auto& prob = field.problem();
    CutTimeResult r;
    r.horizon = cut_horizon(prob, opt);
    r.endpoint = x;
    auto rg = reachable_gradients(field, 0.0, x, opt.restarts);
    if (rg.diameter > opt.singular_tol) {
        r.singular_start = true;
        r.tau = 0.0;
        return r;
    }
    Vec p = rg.elements.front().dv;
    r.momentum = p;
    const double v0 = field.reconstruct(x);
    const double lam = prob.lambda;
    Vec hp = prob.hamiltonian.H_p(0.0, x, p);
    if (hp.norm() <= field.grid_spacing()) {
        Vec zero = Vec::Zero(x.size());
        double l0 = prob.lagrangian.L(0.0, x, zero);
        double defect = std::fabs(v0 - l0 / lam) * (1.0 - std::exp(-lam * r.horizon));
        if (defect <= opt.calib_tol) {
            r.stationary = true;
            r.clamped = true;
            r.tau = r.horizon;
            return r;
        }
    }
    FlowOptions fo;
    fo.max_step = opt.max_step;
    fo.tol = 1e-10;
    double last_ok = 0.0;
    Vec last_point = x;
    bool violated = false;
    auto observer = [&](double t, const Vec& y, const Vec&, double action) {
        if (!field.box().contains(y)) {
            violated = true;
            return false;
        }
        if (calibration_defect(field, v0, t, y, action) > opt.calib_tol * (1.0 + t)) {
            violated = true;
            return false;
        }
        last_ok = t;
        last_point = y;
        return true;
    };
    hamiltonian_flow(field.hamiltonian(), 0.0, x, p, r.horizon, fo, observer);
    r.tau = violated ? last_ok : r.horizon;
    r.clamped = !violated;
    r.endpoint = last_point;
    return r;
}

/// Point on the calibrated characteristic from x at time t <= tau.
inline Vec calibrated_point(const DiscountedField& field, const Vec& x, const Vec& p, double t, double max_step = 1e-2) {
    if (t <= 0) return x;
    FlowOptions fo;
    fo.max_step = max_step;
    auto tr = hamiltonian_flow(field.hamiltonian(), 0.0, x, p, t, fo);
    return tr.states.back();
}

struct CutTimeField {
    GridFunction tau;
    GridFunction alpha;
    double horizon = 0.0;
    double calib_tol = 0.0;
    std::vector<char> stationary;

    /// Continuous majorant at x, raised to tau_x + margin when interpolation dips below.
    double alpha_at(const Vec& x, double tau_x, double margin = 0.1) const {
        return std::max(alpha(x), tau_x + margin);
    }
};

/// alpha = 3-node max then 3-node average of tau, plus margin.
inline GridFunction majorant(const GridFunction& tau, double margin = 0.1) {
    const int n = tau.dim();
    auto stencil = [&](std::size_t f, auto&& visit) {
        auto idx = tau.multi_index(f);
        int offs = 1;
        for (int i = 0; i < n; ++i) offs *= 3;
        for (int o = 0; o < offs; ++o) {
            auto nb = idx;
            int rem = o;
            bool ok = true;
            for (int i = 0; i < n; ++i) {
                nb[i] += rem % 3 - 1;
                rem /= 3;
                if (nb[i] < 0 || nb[i] >= tau.resolution()[i]) ok = false;
            }
            if (ok) visit(tau.flat_index(nb));
        }
    };
    std::vector<double> mx(tau.size()), av(tau.size());
    for (std::size_t f = 0; f < tau.size(); ++f) {
        double m = -kInf;
        stencil(f, [&](std::size_t k) { m = std::max(m, tau[k]); });
        mx[f] = m;
    }
    for (std::size_t f = 0; f < tau.size(); ++f) {
        double s = 0.0;
        int c = 0;
        stencil(f, [&](std::size_t k) {
            s += mx[k];
            ++c;
        });
        av[f] = s / c + margin;
    }
    GridFunction a = tau;
    a.set_values(std::move(av));
    return a;
}

/// tau on a grid layout (typically the unpadded region) and its majorant alpha.
inline CutTimeField cut_time_field(const DiscountedField& field, const GridFunction& layout,
                                   const CutTimeOptions& opt = {}, int jobs = 1) {
    CutTimeField out;
    out.horizon = cut_horizon(field.problem(), opt);
    out.calib_tol = opt.calib_tol;
    std::vector<double> vals(layout.size());
    out.stationary.assign(layout.size(), 0);
    parallel_for(layout.size(), jobs, [&](std::size_t i) {
        auto r = cut_time(field, layout.node(i), opt);
        vals[i] = r.tau;
        out.stationary[i] = r.stationary ? 1 : 0;
    });
    out.tau = layout;
    out.tau.set_values(vals);
    out.tau.clamped_marker = out.horizon;
    out.tau.lambda = field.problem().lambda;
    out.alpha = majorant(out.tau);
    out.alpha.lambda = field.problem().lambda;
    return out;
}

// ---------------------------------------------------------------- homotopy

struct HomotopyPoint {
    Vec point;
    double tau = 0.0;
    double alpha = 0.0;
    double parameter = 0.0;
    bool singular = false;
    double diameter = 0.0;
};

/// F(x, r): follows the calibrated characteristic up to tau, then the singular curve from gamma(tau).
inline HomotopyPoint homotopy(const DiscountedField& field, const Vec& x, double r, const CutTimeOptions& copt = {},
                              const TraceOptions& topt = {}, const CutTimeResult* known = nullptr) {
    HomotopyPoint h;
    h.parameter = r;
    if (r <= 0.0) {
        h.point = x;
        return h;
    }
    CutTimeResult ct = known ? *known : cut_time(field, x, copt);
    h.tau = ct.tau;
    if (ct.singular_start) {
        auto c = trace_singular_curve(field, 0.0, x, r, topt);
        h.point = c.points.back();
    } else if (r <= ct.tau) {
        h.point = calibrated_point(field, x, ct.momentum, r, copt.max_step);
    } else {
        TraceOptions o = topt;
        o.override_start = true;
        auto c = trace_singular_curve(field, 0.0, ct.endpoint, r - ct.tau, o);
        h.point = c.points.back();
    }
    auto flag = is_singular(field, 0.0, h.point, topt.singular_tol, topt.restarts);
    h.singular = flag.singular;
    h.diameter = flag.certificate.diameter;
    return h;
}

/// G(x, s) = F(x, s alpha(x)); G(x, 0) = x exactly.
inline HomotopyPoint retraction_G(const DiscountedField& field, const CutTimeField& cut, const Vec& x, double s,
                                  const CutTimeOptions& copt = {}, const TraceOptions& topt = {}) {
    if (s < 0.0 || s > 1.0) throw InvalidProblem("retraction parameter must lie in [0, 1]");
    if (s == 0.0) {
        HomotopyPoint h;
        h.point = x;
        return h;
    }
    auto ct = cut_time(field, x, copt);
    if (ct.clamped) throw InvalidProblem("retraction is undefined on the numerical Aubry set");
    double alpha = cut.alpha_at(x, ct.tau);
    auto h = homotopy(field, x, s * alpha, copt, topt, &ct);
    h.alpha = alpha;
    return h;
}

// ---------------------------------------------------------------- strong critical points and Aubry set

struct StrongCriticalReport {
    bool critical = false;
    double lambda_v = 0.0;       ///< reported separately for n > 1
    bool interpretation_dependent = false;
    double lo = 0.0, hi = 0.0;   ///< 1D hull of lambda v + H_p
    double hull_distance = 0.0;  ///< n > 1: distance from 0 to hull{H_p}
};

/// 1D: 0 in hull{lambda v(x) + H_p(x, p) : p in hull D*}. n > 1: 0 in hull{H_p(x, p)}.
inline StrongCriticalReport strong_critical_test(const SolutionField& field, double t, const Vec& x, int samples = 21) {
    StrongCriticalReport r;
    auto rg = reachable_gradients(field, t, x);
    const int n = field.dim();
    double lam_v = 0.0;
    std::function<Vec(const Vec&)> hp;
    if (field.discounted()) {
        const auto& df = static_cast<const DiscountedField&>(field);
        lam_v = df.problem().lambda * df.reconstruct(x);
        hp = [&](const Vec& p) { return df.problem().hamiltonian.H_p(0.0, x, p); };
    } else {
        hp = [&](const Vec& p) { return field.hamiltonian().H_p(t, x, p); };
    }
    r.lambda_v = lam_v;
    std::vector<Vec> ps;
    for (const auto& e : rg.elements) ps.push_back(e.dv);
    std::vector<Vec> hs;
    if (ps.size() == 1) hs.push_back(hp(ps[0]));
    for (std::size_t i = 0; i < ps.size(); ++i)
        for (std::size_t j = i + 1; j < ps.size(); ++j)
            for (int k = 0; k < samples; ++k) hs.push_back(hp(Vec(ps[i] + (ps[j] - ps[i]) * (k / (samples - 1.0)))));
    if (n == 1) {
        r.lo = kInf;
        r.hi = -kInf;
        for (const auto& h : hs) {
            r.lo = std::min(r.lo, lam_v + h[0]);
            r.hi = std::max(r.hi, lam_v + h[0]);
        }
        r.critical = r.lo <= 1e-9 && r.hi >= -1e-9;
        return r;
    }
    r.interpretation_dependent = true;
    Vec w = hs[0];
    for (int it = 0; it < 500; ++it) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < hs.size(); ++k)
            if (hs[k].dot(w) < hs[best].dot(w)) best = k;
        Vec d = hs[best] - w;
        double dd = d.squaredNorm();
        if (dd == 0) break;
        double gamma = std::clamp(-w.dot(d) / dd, 0.0, 1.0);
        if (gamma == 0) break;
        w += gamma * d;
    }
    r.hull_distance = w.norm();
    double scale = 0.0;
    for (const auto& h : hs) scale = std::max(scale, h.norm());
    r.critical = r.hull_distance <= 1e-6 * (1.0 + scale);
    return r;
}

/// Backward calibration along x' = H_p(x, Dv(x)) over the horizon.
inline bool backward_calibrated(const DiscountedField& field, const Vec& x, const CutTimeOptions& opt = {}) {
    const auto& prob = field.problem();
    const double lam = prob.lambda;
    const double horizon = cut_horizon(prob, opt);
    const GridFunction& v = field.data();
    auto vel = [&](const Vec& y) { return Vec(prob.hamiltonian.H_p(0.0, y, v.gradient(y))); };
    const double dt = 0.05;
    Vec y = x;
    double integral = 0.0;  // int_{-t}^0 e^{lambda s} L(gamma, gamma')
    const double vx = field.reconstruct(x);
    for (double t = 0.0; t < horizon - 1e-12;) {
        double h = std::min(dt, horizon - t);
        Vec k1 = vel(y);
        Vec k2 = vel(Vec(y - 0.5 * h * k1));
        Vec k3 = vel(Vec(y - 0.5 * h * k2));
        Vec k4 = vel(Vec(y - h * k3));
        Vec ynew = y - (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4);
        Vec mid = 0.5 * (y + ynew);
        Vec speed = (y - ynew) / h;
        integral += h * std::exp(-lam * (t + 0.5 * h)) * prob.lagrangian.L(0.0, mid, speed);
        y = ynew;
        t += h;
        if (!field.box().contains(y)) return false;
        double defect = std::fabs(vx - std::exp(-lam * t) * v(y) - integral);
        if (defect > opt.calib_tol * (1.0 + t)) return false;
    }
    return true;
}

/// Nodes with tau clamped at the horizon whose backward calibration also holds to the horizon.
inline std::vector<Vec> aubry_candidates(const SolutionField& field, const CutTimeField& cut,
                                         const CutTimeOptions& opt = {}) {
    if (!field.discounted()) throw InvalidProblem("the Aubry set is defined for discounted problems only");
    const auto& df = static_cast<const DiscountedField&>(field);
    std::vector<Vec> out;
    for (std::size_t i = 0; i < cut.tau.size(); ++i) {
        if (cut.tau[i] < cut.horizon) continue;
        Vec x = cut.tau.node(i);
        if (backward_calibrated(df, x, opt)) out.push_back(x);
    }
    return out;
}

}  // namespace hjsing
