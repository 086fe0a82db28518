#pragma once

#include "hjsing/model.hpp"
#include "hjsing/optimize.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <random>
#include <vector>

namespace hjsing {

/// Discretized extremal: states, velocities, dual arc and energy at increasing times.
struct Trajectory {
    std::vector<double> times;
    std::vector<Vec> states;
    std::vector<Vec> velocities;
    std::vector<Vec> momenta;
    std::vector<double> energy;
    std::vector<double> running_action;  ///< int_s^tau L along the curve (flow-derived only)
    std::vector<double> running_ht;      ///< int_s^tau H_t along the curve (flow-derived only)
    double action = 0.0;
    double direct_value = 0.0;
    int segments = 0;
    bool refined = false;
    bool multiple_minimizers = false;

    std::size_t size() const { return times.size(); }
};

// ---------------------------------------------------------------- Hamiltonian flow

struct FlowOptions {
    double tol = 1e-10;
    double max_step = kInf;
    double blowup = 1e8;
    long max_steps = 2000000;
    double initial_step = 1e-3;
};

/// Called after each accepted step; return false to stop the integration there.
using FlowObserver = std::function<bool(double t, const Vec& x, const Vec& p, double action)>;

/// Integrates xi' = H_p, p' = -H_x from (s, x, p0) to t (t < s integrates backward)
/// with adaptive Dormand-Prince 5(4). Also accumulates int (<p, H_p> - H) and int H_t.
inline Trajectory hamiltonian_flow(const HamiltonianModel& ham, double s, const Vec& x, const Vec& p0, double t,
                                   const FlowOptions& opt = {}, const FlowObserver& observer = {}) {
    const int n = static_cast<int>(x.size());
    const int m = 2 * n + 2;
    using State = Eigen::VectorXd;
    auto rhs = [&](double tau, const State& y) {
        Vec xi = y.head(n), p = y.segment(n, n);
        Vec hp = ham.H_p(tau, xi, p);
        Vec hx = ham.H_x(tau, xi, p);
        double H = ham.H(tau, xi, p);
        State f(m);
        f.head(n) = hp;
        f.segment(n, n) = -hx;
        f[2 * n] = p.dot(hp) - H;
        f[2 * n + 1] = ham.H_t(tau, xi, p);
        return f;
    };
    Trajectory tr;
    auto record = [&](double tau, const State& y) {
        Vec xi = y.head(n), p = y.segment(n, n);
        tr.times.push_back(tau);
        tr.states.push_back(xi);
        tr.momenta.push_back(p);
        tr.velocities.push_back(ham.H_p(tau, xi, p));
        tr.energy.push_back(ham.H(tau, xi, p));
        tr.running_action.push_back(y[2 * n]);
        tr.running_ht.push_back(y[2 * n + 1]);
    };
    State y(m);
    y.head(n) = x;
    y.segment(n, n) = p0;
    y[2 * n] = 0.0;
    y[2 * n + 1] = 0.0;
    record(s, y);
    if (t == s) return tr;
    const double dir = t > s ? 1.0 : -1.0;
    const double span = std::fabs(t - s);
    double h = std::min({opt.initial_step, span, opt.max_step});
    double tau = s;
    static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    static constexpr double a21 = 1.0 / 5;
    static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
    static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                            a65 = -5103.0 / 18656;
    static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                            b6 = 11.0 / 84;
    static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                            e6 = 22.0 / 525, e7 = -1.0 / 40;
    State k1 = rhs(tau, y);
    long steps = 0;
    while (dir * (t - tau) > 1e-14 * (1.0 + std::fabs(t))) {
        if (++steps > opt.max_steps) throw NoConvergence("Hamiltonian flow exceeded the step budget");
        double remaining = dir * (t - tau);
        if (h > remaining) h = remaining;
        double hs = dir * h;
        State k2 = rhs(tau + c2 * hs, y + hs * (a21 * k1));
        State k3 = rhs(tau + c3 * hs, y + hs * (a31 * k1 + a32 * k2));
        State k4 = rhs(tau + c4 * hs, y + hs * (a41 * k1 + a42 * k2 + a43 * k3));
        State k5 = rhs(tau + c5 * hs, y + hs * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
        State k6 = rhs(tau + hs, y + hs * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
        State ynew = y + hs * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
        State k7 = rhs(tau + hs, ynew);
        State err = hs * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
        double en = 0.0;
        for (int i = 0; i < m; ++i) {
            double sc = opt.tol + opt.tol * std::max(std::fabs(y[i]), std::fabs(ynew[i]));
            en += (err[i] / sc) * (err[i] / sc);
        }
        en = std::sqrt(en / m);
        if (!std::isfinite(en)) {
            h *= 0.25;
            if (h < 1e-14 * (1.0 + span)) throw BlowUp("Hamiltonian flow produced non-finite values");
            continue;
        }
        if (en <= 1.0) {
            tau += hs;
            y = ynew;
            k1 = k7;
            if (y.head(2 * n).cwiseAbs().maxCoeff() > opt.blowup)
                throw BlowUp("Hamiltonian flow left the bound " + std::to_string(opt.blowup));
            record(tau, y);
            if (observer && !observer(tau, tr.states.back(), tr.momenta.back(), y[2 * n])) break;
        }
        double fac = en == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(en, -0.2), 0.2, 5.0);
        h = std::min(h * fac, opt.max_step);
        if (h < 1e-14 * (1.0 + span)) throw BlowUp("Hamiltonian flow step size underflow");
    }
    tr.action = tr.running_action.back();
    tr.refined = true;
    return tr;
}

// ---------------------------------------------------------------- direct method

struct DirectOptions {
    int max_iter = 100;
    double rel_tol = 1e-15;
};

struct DirectSolution {
    std::vector<Vec> nodes;
    double value = 0.0;
    int iterations = 0;
    bool converged = false;
    bool saddle = false;  ///< converged to a critical point whose Hessian is not positive definite
};

inline std::vector<Vec> straight_nodes(const Vec& x, const Vec& y, int N) {
    std::vector<Vec> nodes(N + 1);
    for (int k = 0; k <= N; ++k) nodes[k] = x + (static_cast<double>(k) / N) * (y - x);
    return nodes;
}

/// Doubles the number of segments by linear midpoint insertion.
inline std::vector<Vec> prolong(const std::vector<Vec>& nodes) {
    std::vector<Vec> out;
    out.reserve(2 * nodes.size() - 1);
    for (std::size_t k = 0; k + 1 < nodes.size(); ++k) {
        out.push_back(nodes[k]);
        out.push_back(0.5 * (nodes[k] + nodes[k + 1]));
    }
    out.push_back(nodes.back());
    return out;
}

/// Midpoint-rule discrete action sum_k h L(tau_k + h/2, (xi_k + xi_{k+1})/2, (xi_{k+1} - xi_k)/h).
inline double discrete_action(const LagrangianModel& m, double s, double t, const std::vector<Vec>& nodes) {
    const int N = static_cast<int>(nodes.size()) - 1;
    const double h = (t - s) / N;
    double total = 0.0;
    for (int k = 0; k < N; ++k)
        total += h * m.L(s + (k + 0.5) * h, 0.5 * (nodes[k] + nodes[k + 1]), (nodes[k + 1] - nodes[k]) / h);
    return total;
}

/// Newton on the interior nodes with the exact block-tridiagonal Hessian,
/// Levenberg shift when it is indefinite, Armijo backtracking.
inline DirectSolution discrete_minimize(const LagrangianModel& m, double s, double t, std::vector<Vec> nodes,
                                        const DirectOptions& opt = {}) {
    const int N = static_cast<int>(nodes.size()) - 1;
    const int n = static_cast<int>(nodes[0].size());
    const int inner = N - 1;
    const double h = (t - s) / N;
    DirectSolution out;
    std::vector<Vec> g(std::max(inner, 0));
    std::vector<Mat> D(std::max(inner, 0)), U(std::max(inner - 1, 0));
    LagDerivs d;
    auto evaluate = [&](const std::vector<Vec>& xi) {
        for (int i = 0; i < inner; ++i) {
            g[i] = Vec::Zero(n);
            D[i] = Mat::Zero(n, n);
        }
        double total = 0.0;
        for (int k = 0; k < N; ++k) {
            Vec mid = 0.5 * (xi[k] + xi[k + 1]);
            Vec w = (xi[k + 1] - xi[k]) / h;
            m.derivs(s + (k + 0.5) * h, mid, w, d);
            total += h * d.L;
            Mat S = d.Lvx + d.Lvx.transpose();
            Mat q = (0.25 * h) * d.Lxx;
            Mat lv = d.Lvv / h;
            if (k >= 1) {
                g[k - 1] += 0.5 * h * d.Lx - d.Lv;
                D[k - 1] += q - 0.5 * S + lv;
            }
            if (k + 1 <= inner) {
                g[k] += 0.5 * h * d.Lx + d.Lv;
                D[k] += q + 0.5 * S + lv;
            }
            if (k >= 1 && k + 1 <= inner) U[k - 1] = q + 0.5 * (d.Lvx.transpose() - d.Lvx) - lv;
        }
        return total;
    };
    double f = evaluate(nodes);
    if (!std::isfinite(f)) throw NoConvergence("discrete action is not finite at the initial path");
    if (inner == 0) {
        out.nodes = nodes;
        out.value = f;
        out.converged = true;
        return out;
    }
    std::vector<Vec> trial = nodes;
    double mu = 0.0;
    for (int it = 0; it < opt.max_iter; ++it) {
        out.iterations = it + 1;
        std::vector<Vec> step;
        double shift = mu;
        double scale = 0.0;
        for (int i = 0; i < inner; ++i) scale = std::max(scale, D[i].cwiseAbs().maxCoeff());
        bool solved = false;
        for (int attempt = 0; attempt < 40; ++attempt) {
            std::vector<Mat> Dm = D;
            if (shift > 0)
                for (auto& b : Dm) b += shift * Mat::Identity(n, n);
            step = g;
            for (auto& v : step) v = -v;
            if (block_tridiagonal_solve(Dm, U, step)) {
                solved = true;
                break;
            }
            shift = shift == 0.0 ? 1e-10 * (1.0 + scale) : shift * 10.0;
        }
        if (!solved) throw NoConvergence("direct method: Hessian regularization failed");
        mu = shift > 0 ? shift * 0.1 : 0.0;
        if (mu < 1e-10 * (1.0 + scale)) mu = 0.0;
        double dec = 0.0;
        for (int i = 0; i < inner; ++i) dec -= g[i].dot(step[i]);
        if (dec <= opt.rel_tol * (1.0 + std::fabs(f))) {
            for (int i = 0; i < inner; ++i) nodes[i + 1] += step[i];
            out.converged = true;
            break;
        }
        double alpha = 1.0;
        double f_new = 0.0;
        int bt = 0;
        for (; bt < 60; ++bt) {
            for (int i = 0; i < inner; ++i) trial[i + 1] = nodes[i + 1] + alpha * step[i];
            f_new = evaluate(trial);
            if (std::isfinite(f_new) && f_new <= f - 1e-4 * alpha * dec) break;
            alpha *= 0.5;
        }
        if (bt == 60) {
            evaluate(nodes);
            out.converged = dec <= 1e-10 * (1.0 + std::fabs(f));
            break;
        }
        nodes.swap(trial);
        trial = nodes;
        bool stalled = f - f_new <= 1e-14 * (1.0 + std::fabs(f));
        f = f_new;
        if (stalled && dec <= 1e-10 * (1.0 + std::fabs(f))) {
            out.converged = true;
            break;
        }
    }
    if (out.converged) {
        evaluate(nodes);
        std::vector<Vec> rhs(inner, Vec::Zero(n));
        out.saddle = !block_tridiagonal_solve(D, U, rhs);
    }
    out.value = discrete_action(m, s, t, nodes);
    out.nodes = std::move(nodes);
    return out;
}

/// Richardson-extrapolated action from N and 2N segments, straight-line start.
inline double fast_action(const LagrangianModel& m, double s, double t, const Vec& x, const Vec& y, int N = 16) {
    auto coarse = discrete_minimize(m, s, t, straight_nodes(x, y, N));
    if (coarse.saddle) {
        const double amp = 0.05 * (t - s) * (1.0 + (y - x).norm());
        for (int axis = 0; axis < x.size(); ++axis)
            for (double sign : {-1.0, 1.0}) {
                auto nodes = straight_nodes(x, y, N);
                for (int k = 1; k < N; ++k) nodes[k][axis] += sign * amp * std::sin(std::numbers::pi * k / N);
                auto trial = discrete_minimize(m, s, t, nodes);
                if (trial.converged && trial.value < coarse.value) coarse = std::move(trial);
            }
    }
    auto fine = discrete_minimize(m, s, t, prolong(coarse.nodes));
    if (!coarse.converged || !fine.converged) throw NoConvergence("direct method did not converge");
    return (4.0 * fine.value - coarse.value) / 3.0;
}

// ---------------------------------------------------------------- fundamental solution

struct ActionOptions {
    int initial_segments = 64;
    int max_segments = 1024;
    double refine_tol = 1e-8;
    int restarts = 5;
    bool shooting = true;
    std::uint64_t seed = 1;
    FlowOptions flow{1e-12};
};

struct ActionResult {
    double value = 0.0;
    Trajectory minimizer;
};

inline Trajectory trajectory_from_nodes(const LagrangianModel& m, const HamiltonianModel* ham, double s, double t,
                                        const std::vector<Vec>& nodes) {
    const int N = static_cast<int>(nodes.size()) - 1;
    const double h = (t - s) / N;
    Trajectory tr;
    tr.segments = N;
    std::vector<Vec> w(N);
    std::vector<Vec> left(N), right(N);
    LagDerivs d;
    for (int k = 0; k < N; ++k) {
        w[k] = (nodes[k + 1] - nodes[k]) / h;
        m.derivs(s + (k + 0.5) * h, 0.5 * (nodes[k] + nodes[k + 1]), w[k], d);
        left[k] = d.Lv - 0.5 * h * d.Lx;
        right[k] = d.Lv + 0.5 * h * d.Lx;
    }
    for (int k = 0; k <= N; ++k) {
        double tau = s + k * h;
        Vec v = k == 0 ? w[0] : (k == N ? w[N - 1] : Vec(0.5 * (w[k - 1] + w[k])));
        Vec p = k == 0 ? left[0] : (k == N ? right[N - 1] : Vec(0.5 * (right[k - 1] + left[k])));
        tr.times.push_back(tau);
        tr.states.push_back(nodes[k]);
        tr.velocities.push_back(v);
        tr.momenta.push_back(p);
        tr.energy.push_back(ham ? ham->H(tau, nodes[k], p) : p.dot(v) - m.L(tau, nodes[k], v));
    }
    return tr;
}

/// Minimal action over curves from (s, x) to (t, y): direct method with segment doubling,
/// random restarts, then shooting on the Hamiltonian system to refine.
inline ActionResult fundamental_solution(const LagrangianModel& m, double s, double t, const Vec& x, const Vec& y,
                                         const HamiltonianModel* ham = nullptr, const ActionOptions& opt = {}) {
    if (!(t > s)) throw InvalidProblem("fundamental solution needs t > s");
    HamiltonianModel built;
    if (!ham && opt.shooting) {
        built = hamiltonian_from_lagrangian(m);
        ham = &built;
    }
    const int n = static_cast<int>(x.size());
    int N = opt.initial_segments;
    DirectSolution coarse = discrete_minimize(m, s, t, straight_nodes(x, y, N));
    bool multiple = false;
    if (opt.restarts > 0) {
        std::mt19937_64 rng(opt.seed);
        std::normal_distribution<double> gauss;
        double amp = 0.5 * (y - x).norm() + 0.5 * std::sqrt(t - s);
        for (int r = 0; r < opt.restarts; ++r) {
            std::vector<Vec> init = straight_nodes(x, y, N);
            Vec a1(n), a2(n);
            for (int i = 0; i < n; ++i) {
                a1[i] = amp * gauss(rng);
                a2[i] = 0.5 * amp * gauss(rng);
            }
            for (int k = 1; k < N; ++k) {
                double u = static_cast<double>(k) / N;
                init[k] += a1 * std::sin(std::numbers::pi * u) + a2 * std::sin(2 * std::numbers::pi * u);
            }
            DirectSolution cand;
            try {
                cand = discrete_minimize(m, s, t, init);
            } catch (const NumericalError&) {
                continue;
            }
            if (!cand.converged) continue;
            double dist = 0.0;
            for (int k = 0; k <= N; ++k) dist = std::max(dist, (cand.nodes[k] - coarse.nodes[k]).norm());
            if (dist > 1e-3 * (1.0 + (y - x).norm())) {
                multiple = true;
                if (cand.value < coarse.value - 1e-12 * (1.0 + std::fabs(coarse.value))) coarse = cand;
            }
        }
    }
    if (!coarse.converged) throw NoConvergence("direct minimization stalled");
    DirectSolution prev = coarse, fine = coarse;
    double extrapolated = coarse.value;
    while (N < opt.max_segments) {
        N *= 2;
        fine = discrete_minimize(m, s, t, prolong(prev.nodes));
        if (!fine.converged) throw NoConvergence("direct minimization stalled after refinement");
        extrapolated = (4.0 * fine.value - prev.value) / 3.0;
        bool done = std::fabs(fine.value - prev.value) < opt.refine_tol;
        prev = fine;
        if (done) break;
    }
    ActionResult res;
    res.value = extrapolated;
    Trajectory direct = trajectory_from_nodes(m, ham, s, t, fine.nodes);
    direct.action = extrapolated;
    direct.direct_value = extrapolated;
    direct.multiple_minimizers = multiple;
    res.minimizer = direct;
    if (!opt.shooting) return res;

    FlowOptions fo = opt.flow;
    fo.max_step = std::min(fo.max_step, (t - s) / 64.0);
    auto endpoint = [&](const Vec& p0, Vec& end) {
        try {
            Trajectory tr = hamiltonian_flow(*ham, s, x, p0, t, fo);
            end = tr.states.back();
            return end.allFinite();
        } catch (const NumericalError&) {
            return false;
        }
    };
    Vec p = direct.momenta.front();
    Vec end;
    if (!endpoint(p, end)) return res;
    Vec F = end - y;
    bool ok = false;
    for (int it = 0; it < 30; ++it) {
        if (F.norm() <= 1e-11 * (1.0 + y.norm())) {
            ok = true;
            break;
        }
        Mat J(n, n);
        for (int i = 0; i < n; ++i) {
            double del = 1e-7 * (1.0 + p.norm());
            Vec pp = p;
            pp[i] += del;
            Vec e2;
            if (!endpoint(pp, e2)) return res;
            J.col(i) = (e2 - end) / del;
        }
        Vec dp = J.colPivHouseholderQr().solve(-F);
        if (!dp.allFinite()) return res;
        double alpha = 1.0;
        bool improved = false;
        for (int bt = 0; bt < 12; ++bt) {
            Vec e2;
            Vec pn = p + alpha * dp;
            if (endpoint(pn, e2) && (e2 - y).norm() < F.norm()) {
                p = pn;
                end = e2;
                F = e2 - y;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!improved) return res;
    }
    if (!ok) return res;
    Trajectory tr;
    try {
        tr = hamiltonian_flow(*ham, s, x, p, t, fo);
    } catch (const NumericalError&) {
        return res;
    }
    if (std::fabs(tr.action - extrapolated) > 1e-4 * (1.0 + std::fabs(extrapolated))) return res;
    tr.states.back() = y;
    tr.segments = N;
    tr.direct_value = extrapolated;
    tr.multiple_minimizers = multiple;
    res.value = tr.action;
    res.minimizer = std::move(tr);
    return res;
}

struct ActionGradients {
    Vec dx;
    Vec dy;
    double dt = 0.0;
};

/// D_y A = L_v at the end, D_x A = -L_v at the start, D_t A = -E at the end.
inline ActionGradients action_gradients(const Trajectory& minimizer) {
    if (minimizer.size() < 2) throw InvalidProblem("trajectory has fewer than two nodes");
    return {-minimizer.momenta.front(), minimizer.momenta.back(), -minimizer.energy.back()};
}

// ---------------------------------------------------------------- kernel

/// Lower bound A_{s,t}(x,y) >= max_k [k d - (theta*(k) + c_T)(t - s)] from the growth data.
class ActionLowerBound {
public:
    ActionLowerBound() = default;
    ActionLowerBound(const GrowthData& g, double factor = 1.0) : c_T_(g.c_T), factor_(factor) {
        for (double k = 1.0 / 64; k <= 4096.0; k *= 1.25) {
            double c = g.theta_lower_conjugate(k);
            if (std::isfinite(c)) table_.push_back({k, c});
        }
        base_ = -g.theta_lower(0.0);
    }

    double operator()(double dt, double d) const {
        double best = -(base_ + c_T_) * dt;
        for (const auto& [k, c] : table_) best = std::max(best, k * d - (c + c_T_) * dt);
        return factor_ * best;
    }

private:
    std::vector<std::pair<double, double>> table_;
    double c_T_ = 0.0;
    double base_ = 0.0;
    double factor_ = 1.0;
};

struct KernelOptions {
    int segments = 16;
};

/// A_{s,t}(x, y) for grid operators: closed form when known, otherwise a Richardson-extrapolated
/// direct method. Exponentially scaled models use A_{s,t} = e^{lambda s} A_{0,t-s}.
class ActionKernel {
public:
    ActionKernel() = default;
    explicit ActionKernel(LagrangianModel m, KernelOptions o = {})
        : model_(std::make_shared<const LagrangianModel>(std::move(m))), opt_(o) {}

    const LagrangianModel& model() const { return *model_; }
    bool closed_form() const { return static_cast<bool>(model_->closed_action); }

    double operator()(double s, double t, const Vec& x, const Vec& y) const {
        if (model_->closed_action) return model_->closed_action(s, t, x, y);
        switch (model_->structure) {
            case TimeStructure::Autonomous: return fast_action(*model_, 0.0, t - s, x, y, opt_.segments);
            case TimeStructure::ExponentialScaling:
                return std::exp(model_->scaling_rate * s) * fast_action(*model_, 0.0, t - s, x, y, opt_.segments);
            case TimeStructure::General: break;
        }
        return fast_action(*model_, s, t, x, y, opt_.segments);
    }

    Vec grad_y(double s, double t, const Vec& x, const Vec& y) const {
        Vec g(y.size());
        for (int i = 0; i < y.size(); ++i) {
            double h = 1e-5 * (1.0 + std::fabs(y[i]));
            Vec a = y, b = y;
            a[i] += h;
            b[i] -= h;
            g[i] = ((*this)(s, t, x, a) - (*this)(s, t, x, b)) / (2 * h);
        }
        return g;
    }

    Vec grad_x(double s, double t, const Vec& x, const Vec& y) const {
        Vec g(x.size());
        for (int i = 0; i < x.size(); ++i) {
            double h = 1e-5 * (1.0 + std::fabs(x[i]));
            Vec a = x, b = x;
            a[i] += h;
            b[i] -= h;
            g[i] = ((*this)(s, t, a, y) - (*this)(s, t, b, y)) / (2 * h);
        }
        return g;
    }

    /// Lower bound on A_{s,t}(x, .) as a function of |y - x|, valid for this (s, t).
    ActionLowerBound lower_bound(double s, double t) const {
        if (model_->structure == TimeStructure::ExponentialScaling)
            return ActionLowerBound(model_->growth(t - s), std::exp(model_->scaling_rate * s));
        return ActionLowerBound(model_->growth(t));
    }

private:
    std::shared_ptr<const LagrangianModel> model_;
    KernelOptions opt_;
};

// ---------------------------------------------------------------- convexity constants

struct ConvexityConstants {
    double C0 = 0.0, C1 = 0.0, C2 = 0.0, C3 = 0.0;
    double apex_time = 0.0;
    Vec apex;
    double slope = 0.0;
    double height = 0.0;
    int probes = 0;
};

/// Sampled second differences of A_{s,.}(x,.) on the cone {(t,y): s < t <= s + height, |y - x| <= slope (t - s)}.
/// The cone height is T - s. Probe radii are capped at R.
inline ConvexityConstants estimate_constants(const ActionKernel& A, double s, const Vec& x, double T, double R,
                                             double slope, int samples = 48, std::uint64_t seed = 11) {
    ConvexityConstants out;
    out.apex_time = s;
    out.apex = x;
    out.slope = slope;
    out.height = T - s;
    if (!(out.height > 0) || !(slope > 0) || !(R > 0)) throw DegenerateSample("cone is degenerate");
    const int n = static_cast<int>(x.size());
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss;
    auto random_dir = [&] {
        Vec d(n);
        for (int i = 0; i < n; ++i) d[i] = gauss(rng);
        if (d.norm() == 0) d[0] = 1;
        return Vec(d.normalized());
    };
    double c0 = -kInf, c1 = 0.0, c2 = kInf, c3 = 0.0;
    int used = 0;
    for (int k = 0; k < samples; ++k) {
        double dt = out.height * (0.25 + 0.75 * unit(rng));
        double t = s + dt;
        double reach = std::min(slope * dt, R);
        Vec y = x + (reach * 0.5 * unit(rng)) * random_dir();
        double zr = reach * (0.1 + 0.4 * unit(rng));
        Vec z = zr * random_dir();
        double a0 = A(s, t, x, y);
        double dz = A(s, t, x, Vec(y + z)) + A(s, t, x, Vec(y - z)) - 2 * a0;
        if (zr * zr > 1e-14) {
            c2 = std::min(c2, dz * dt / (zr * zr));
            c0 = std::max(c0, dz * dt / (zr * zr));
            c1 = std::max(c1, -dz * dt / (zr * zr));
            ++used;
        }
        double h = 0.5 * dt * (0.1 + 0.8 * unit(rng));
        double joint = A(s, t + h, x, Vec(y + z)) + A(s, t - h, x, Vec(y - z)) - 2 * a0;
        double q = h * h + zr * zr;
        if (q > 1e-14) {
            c0 = std::max(c0, joint * dt / q);
            c1 = std::max(c1, -joint * dt / q);
            ++used;
        }
        if (h > 1e-10) {
            Vec g1 = A.grad_y(s, t + h, x, y), g0 = A.grad_y(s, t, x, y);
            c3 = std::max(c3, (g1 - g0).norm() * dt / h);
        }
    }
    if (used == 0 || !std::isfinite(c2)) throw DegenerateSample("all convexity probes collapsed");
    out.C0 = c0;
    out.C1 = c1;
    out.C2 = c2;
    out.C3 = c3;
    out.probes = used;
    return out;
}

}  // namespace hjsing
