#pragma once

#include "hjsing/expression.hpp"
#include "hjsing/model.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace hjsing {

/// A catalog model: Lagrangian, Hamiltonian and the bounds theta2 + c2 >= L >= theta1 - c1.
struct ModelSpec {
    LagrangianModel lagrangian;
    HamiltonianModel hamiltonian;
    double c1 = 0.0;
    double c2 = 0.0;
    ScalarFn theta1 = half_square();
    ScalarFn theta2 = half_square();
    bool reversible = true;
};

inline void attach_autonomous_growth(ModelSpec& m) {
    double c1 = m.c1, c2 = m.c2;
    ScalarFn th1 = m.theta1, th2 = m.theta2;
    m.lagrangian.growth = [=](double T) {
        return make_growth(T, c1, th1, [th2, c2](double r) { return th2(r) + c2; });
    };
    complete_partials(m.lagrangian);
}

/// L = |v|^2/2 + c, H = |p|^2/2 - c.
inline ModelSpec kinetic_model(const std::string& name, int n, double c) {
    ModelSpec m;
    LagrangianModel& l = m.lagrangian;
    l.name = name;
    l.dim = n;
    l.L = [c](double, const Vec&, const Vec& v) { return 0.5 * v.squaredNorm() + c; };
    l.L_v = [](double, const Vec&, const Vec& v) { return v; };
    l.L_x = [](double, const Vec& x, const Vec&) { return Vec(Vec::Zero(x.size())); };
    l.L_t = [](double, const Vec&, const Vec&) { return 0.0; };
    l.L_vv = [](double, const Vec& x, const Vec&) { return Mat(Mat::Identity(x.size(), x.size())); };
    l.L_vx = [](double, const Vec& x, const Vec&) { return Mat(Mat::Zero(x.size(), x.size())); };
    l.L_xx = l.L_vx;
    l.kinetic_offset = c;
    l.closed_action = [c](double s, double t, const Vec& x, const Vec& y) { return kinetic_action(c, s, t, x, y); };
    HamiltonianModel& h = m.hamiltonian;
    h.name = name;
    h.dim = n;
    h.H = [c](double, const Vec&, const Vec& p) { return 0.5 * p.squaredNorm() - c; };
    h.H_p = [](double, const Vec&, const Vec& p) { return p; };
    h.H_x = [](double, const Vec& x, const Vec&) { return Vec(Vec::Zero(x.size())); };
    h.H_t = [](double, const Vec&, const Vec&) { return 0.0; };
    m.c1 = std::max(0.0, -c);
    m.c2 = std::max(0.0, c);
    attach_autonomous_growth(m);
    return m;
}

/// Separable potential V(x) = sum_i g(x_i): L = |v|^2/2 - V, H = |p|^2/2 + V.
struct Potential {
    std::function<double(double)> g, dg, d2g;
    double g_min, g_max;
    bool first_axis_only = false;
    std::function<void(double, double&, double&, double&)> fused;

    void all(double x, double& v, double& d1, double& d2) const {
        if (fused) return fused(x, v, d1, d2);
        v = g(x);
        d1 = dg(x);
        d2 = d2g(x);
    }
};

inline ModelSpec mechanical_model(const std::string& name, int n, const Potential& pot) {
    ModelSpec m;
    auto V = [pot](const Vec& x) {
        if (pot.first_axis_only) return pot.g(x[0]);
        double s = 0;
        for (int i = 0; i < x.size(); ++i) s += pot.g(x[i]);
        return s;
    };
    auto dV = [pot](const Vec& x) {
        Vec d = Vec::Zero(x.size());
        for (int i = 0; i < x.size(); ++i)
            if (!pot.first_axis_only || i == 0) d[i] = pot.dg(x[i]);
        return d;
    };
    auto d2V = [pot](const Vec& x) {
        Mat d = Mat::Zero(x.size(), x.size());
        for (int i = 0; i < x.size(); ++i)
            if (!pot.first_axis_only || i == 0) d(i, i) = pot.d2g(x[i]);
        return d;
    };
    LagrangianModel& l = m.lagrangian;
    l.name = name;
    l.dim = n;
    l.L = [V](double, const Vec& x, const Vec& v) { return 0.5 * v.squaredNorm() - V(x); };
    l.L_v = [](double, const Vec&, const Vec& v) { return v; };
    l.L_x = [dV](double, const Vec& x, const Vec&) { return Vec(-dV(x)); };
    l.L_t = [](double, const Vec&, const Vec&) { return 0.0; };
    l.L_vv = [](double, const Vec& x, const Vec&) { return Mat(Mat::Identity(x.size(), x.size())); };
    l.L_vx = [](double, const Vec& x, const Vec&) { return Mat(Mat::Zero(x.size(), x.size())); };
    l.L_xx = [d2V](double, const Vec& x, const Vec&) { return Mat(-d2V(x)); };
    l.derivs = [pot](double, const Vec& x, const Vec& v, LagDerivs& d) {
        const int k = static_cast<int>(x.size());
        double V = 0.0;
        d.Lx = Vec::Zero(k);
        d.Lxx = Mat::Zero(k, k);
        for (int i = 0; i < k; ++i) {
            if (pot.first_axis_only && i > 0) break;
            double g, dg, d2g;
            pot.all(x[i], g, dg, d2g);
            V += g;
            d.Lx[i] = -dg;
            d.Lxx(i, i) = -d2g;
        }
        d.L = 0.5 * v.squaredNorm() - V;
        d.Lv = v;
        d.Lvv = Mat::Identity(k, k);
        d.Lvx = Mat::Zero(k, k);
    };
    HamiltonianModel& h = m.hamiltonian;
    h.name = name;
    h.dim = n;
    h.H = [V](double, const Vec& x, const Vec& p) { return 0.5 * p.squaredNorm() + V(x); };
    h.H_p = [](double, const Vec&, const Vec& p) { return p; };
    h.H_x = [dV](double, const Vec& x, const Vec&) { return dV(x); };
    h.H_t = [](double, const Vec&, const Vec&) { return 0.0; };
    int terms = pot.first_axis_only ? 1 : n;
    m.c1 = std::max(0.0, terms * pot.g_max);
    m.c2 = std::max(0.0, -terms * pot.g_min);
    attach_autonomous_growth(m);
    return m;
}

inline constexpr double kKinkSmoothing = 1e-4;

/// V = |sin x|_eps - cos^2 x / 2 with |s|_eps = sqrt(s^2 + eps^2) - eps, so that
/// H = p^2/2 - f(x), f = cos^2 x/2 - |sin x|, and lambda = 1 has solution v = -|sin x|.
inline Potential sine_kink_potential(double eps = kKinkSmoothing) {
    Potential p;
    p.g = [eps](double x) {
        double s = std::sin(x), c = std::cos(x);
        return std::sqrt(s * s + eps * eps) - eps - 0.5 * c * c;
    };
    p.dg = [eps](double x) {
        double s = std::sin(x), c = std::cos(x);
        return s * c / std::sqrt(s * s + eps * eps) + s * c;
    };
    p.d2g = [eps](double x) {
        double s = std::sin(x), c = std::cos(x);
        double R = std::sqrt(s * s + eps * eps);
        double c2x = c * c - s * s;
        return c2x / R - s * s * c * c / (R * R * R) + c2x;
    };
    p.fused = [eps](double x, double& v, double& d1, double& d2) {
        double s = std::sin(x), c = std::cos(x);
        double R = std::sqrt(s * s + eps * eps);
        double c2x = c * c - s * s;
        v = R - eps - 0.5 * c * c;
        d1 = s * c / R + s * c;
        d2 = c2x / R - s * s * c * c / (R * R * R) + c2x;
    };
    p.g_min = -0.5;
    p.g_max = 1.0;
    return p;
}

inline Potential pendulum_potential() {
    Potential p;
    p.g = [](double x) { return -std::cos(x); };
    p.dg = [](double x) { return std::sin(x); };
    p.d2g = [](double x) { return std::cos(x); };
    p.g_min = -1.0;
    p.g_max = 1.0;
    return p;
}

inline Potential double_well_potential() {
    Potential p;
    p.g = [](double x) { return -std::exp(-(x - 1) * (x - 1)) - std::exp(-(x + 1) * (x + 1)); };
    p.dg = [](double x) {
        return 2 * (x - 1) * std::exp(-(x - 1) * (x - 1)) + 2 * (x + 1) * std::exp(-(x + 1) * (x + 1));
    };
    p.d2g = [](double x) {
        double a = x - 1, b = x + 1;
        return (2 - 4 * a * a) * std::exp(-a * a) + (2 - 4 * b * b) * std::exp(-b * b);
    };
    p.g_min = -1.02;
    p.g_max = 0.0;
    p.first_axis_only = true;
    return p;
}

/// L = sum_i (cosh v_i - 1), H = sum_i (p_i asinh p_i - sqrt(1 + p_i^2) + 1).
inline ModelSpec cosh_model(int n) {
    ModelSpec m;
    LagrangianModel& l = m.lagrangian;
    l.name = "cosh";
    l.dim = n;
    l.L = [](double, const Vec&, const Vec& v) { return (v.array().cosh() - 1.0).sum(); };
    l.L_v = [](double, const Vec&, const Vec& v) { return Vec(v.array().sinh()); };
    l.L_x = [](double, const Vec& x, const Vec&) { return Vec(Vec::Zero(x.size())); };
    l.L_t = [](double, const Vec&, const Vec&) { return 0.0; };
    l.L_vv = [](double, const Vec&, const Vec& v) { return Mat(Vec(v.array().cosh()).asDiagonal()); };
    l.L_vx = [](double, const Vec& x, const Vec&) { return Mat(Mat::Zero(x.size(), x.size())); };
    l.L_xx = l.L_vx;
    HamiltonianModel& h = m.hamiltonian;
    h.name = "cosh";
    h.dim = n;
    h.H = [](double, const Vec&, const Vec& p) {
        double s = 0;
        for (int i = 0; i < p.size(); ++i) s += p[i] * std::asinh(p[i]) - std::sqrt(1 + p[i] * p[i]) + 1;
        return s;
    };
    h.H_p = [](double, const Vec&, const Vec& p) { return Vec(p.array().asinh()); };
    h.H_x = [](double, const Vec& x, const Vec&) { return Vec(Vec::Zero(x.size())); };
    h.H_t = [](double, const Vec&, const Vec&) { return 0.0; };
    m.theta2 = [n](double r) { return n * (std::cosh(std::min(r, 700.0)) - 1.0); };
    attach_autonomous_growth(m);
    return m;
}

/// L = |v|^2/2 - |v|^3: fails strict convexity for |v| > 1/6.
inline ModelSpec broken_model(int n) {
    ModelSpec m;
    LagrangianModel& l = m.lagrangian;
    l.name = "broken";
    l.dim = n;
    l.L = [](double, const Vec&, const Vec& v) {
        double r = v.norm();
        return 0.5 * r * r - r * r * r;
    };
    l.L_v = [](double, const Vec&, const Vec& v) { return Vec(v * (1.0 - 3.0 * v.norm())); };
    l.L_x = [](double, const Vec& x, const Vec&) { return Vec(Vec::Zero(x.size())); };
    l.L_t = [](double, const Vec&, const Vec&) { return 0.0; };
    l.L_vv = [](double, const Vec&, const Vec& v) {
        const int k = static_cast<int>(v.size());
        double r = v.norm();
        Mat M = (1.0 - 3.0 * r) * Mat::Identity(k, k);
        if (r > 0) M -= 3.0 * v * v.transpose() / r;
        return M;
    };
    l.L_vx = [](double, const Vec& x, const Vec&) { return Mat(Mat::Zero(x.size(), x.size())); };
    l.L_xx = l.L_vx;
    m.hamiltonian = hamiltonian_from_lagrangian(l);
    attach_autonomous_growth(m);
    return m;
}

inline std::vector<std::string> catalog_keys() {
    return {"free", "free_plus_one", "pendulum", "sine_kink", "double_well", "cosh", "broken"};
}

inline ModelSpec catalog_model(const std::string& key, int n = 1) {
    if (n < 1 || n > 3) throw ConfigError("dimension must be 1, 2 or 3");
    if (key == "free") return kinetic_model("free", n, 0.0);
    if (key == "free_plus_one") return kinetic_model("free_plus_one", n, 1.0);
    if (key == "pendulum") return mechanical_model("pendulum", n, pendulum_potential());
    if (key == "sine_kink") return mechanical_model("sine_kink", n, sine_kink_potential());
    if (key == "double_well") return mechanical_model("double_well", n, double_well_potential());
    if (key == "cosh") return cosh_model(n);
    if (key == "broken") return broken_model(n);
    throw ConfigError("unknown model '" + key + "'");
}

/// True when `text` refers to one of `names` (compilation fails once they are removed).
inline bool expression_uses(const std::string& text, std::map<std::string, int> slots,
                            std::initializer_list<std::string> names) {
    for (const auto& n : names) slots.erase(n);
    try {
        Expression e(text, slots);
        return false;
    } catch (const ConfigError&) {
        return true;
    }
}

/// Models given by expression strings in t, x (x1..x3), v (v1..v3) and optionally p (p1..p3).
/// Partials by central differences; H by the Legendre transform unless supplied.
inline ModelSpec expression_model(int n, const std::string& lagrangian, const std::string& hamiltonian = "",
                                  double c1 = 0.0, double c2 = 0.0) {
    if (n < 1 || n > 3) throw ConfigError("dimension must be 1, 2 or 3");
    auto slots = std::make_shared<std::map<std::string, int>>();
    (*slots)["t"] = 0;
    (*slots)["s"] = 0;
    for (int i = 0; i < n; ++i) {
        (*slots)["x" + std::to_string(i + 1)] = 1 + i;
        (*slots)["v" + std::to_string(i + 1)] = 4 + i;
        (*slots)["p" + std::to_string(i + 1)] = 4 + i;
    }
    (*slots)["x"] = 1;
    (*slots)["v"] = 4;
    (*slots)["p"] = 4;
    std::map<std::string, int> lag_slots = *slots, ham_slots = *slots;
    for (auto it = lag_slots.begin(); it != lag_slots.end();)
        it = it->first[0] == 'p' ? lag_slots.erase(it) : std::next(it);
    for (auto it = ham_slots.begin(); it != ham_slots.end();)
        it = it->first[0] == 'v' ? ham_slots.erase(it) : std::next(it);
    auto lexpr = std::make_shared<Expression>(lagrangian, lag_slots);
    auto pack = [](double t, const Vec& x, const Vec& v, double* a) {
        a[0] = t;
        for (int i = 0; i < 3; ++i) {
            a[1 + i] = i < x.size() ? x[i] : 0.0;
            a[4 + i] = i < v.size() ? v[i] : 0.0;
        }
    };
    ModelSpec m;
    LagrangianModel& l = m.lagrangian;
    l.name = "expression";
    l.dim = n;
    l.L = [lexpr, pack](double t, const Vec& x, const Vec& v) {
        double a[7];
        pack(t, x, v, a);
        return lexpr->eval(a);
    };
    l.time_dependent = expression_uses(lagrangian, lag_slots, {"t", "s"});
    l.structure = l.time_dependent ? TimeStructure::General : TimeStructure::Autonomous;
    complete_partials(l);
    m.c1 = c1;
    m.c2 = c2;
    m.reversible = false;
    attach_autonomous_growth(m);
    if (hamiltonian.empty()) {
        m.hamiltonian = hamiltonian_from_lagrangian(l);
    } else {
        auto hexpr = std::make_shared<Expression>(hamiltonian, ham_slots);
        LagFn H = [hexpr, pack](double t, const Vec& x, const Vec& p) {
            double a[7];
            pack(t, x, p, a);
            return hexpr->eval(a);
        };
        HamiltonianModel& h = m.hamiltonian;
        h.name = "expression";
        h.dim = n;
        h.H = H;
        h.H_p = [H](double t, const Vec& x, const Vec& p) { return fd_gradient_v(H, t, x, p); };
        h.H_x = [H](double t, const Vec& x, const Vec& p) { return fd_gradient_x(H, t, x, p); };
        h.H_t = [H](double t, const Vec& x, const Vec& p) { return fd_time(H, t, x, p); };
    }
    return m;
}

inline DiscountedProblem make_discounted(const ModelSpec& spec, double lambda) {
    if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
    if (spec.lagrangian.time_dependent) throw InvalidProblem("discounted problems need a time-independent Lagrangian");
    DiscountedProblem p;
    p.lambda = lambda;
    p.lagrangian = spec.lagrangian;
    p.hamiltonian = spec.hamiltonian;
    p.c1 = spec.c1;
    p.c2 = spec.c2;
    p.theta1 = spec.theta1;
    p.theta2 = spec.theta2;
    return p;
}

}  // namespace hjsing
