/// hjsing: command-line driver for the discounted and evolutionary solvers and the
/// singular-set tools.

#include "hjsing/hjsing.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace {

using json = nlohmann::ordered_json;
using namespace hjsing;

constexpr const char* kVersion = "0.1.0";

struct Flags {
    std::string config;
    std::string out;
    int jobs = 0;
    long long seed = -1;
    double tol = 0.0;
    double t0 = std::numeric_limits<double>::quiet_NaN();
    std::string x0;
};

/// Loaded configuration plus the run-level overrides and outputs.
struct Context {
    RunConfig cfg;
    ModelSpec spec;
    std::filesystem::path out;
    std::string command;
    std::string hash;
    json notes = json::array();

    void note(const std::string& msg) {
        std::cerr << "note: " << msg << "\n";
        notes.push_back(msg);
    }

    std::vector<std::pair<std::string, std::string>> metadata() const {
        return {{"tool", "hjsing"},
                {"version", kVersion},
                {"command", command},
                {"config_hash", hash},
                {"tol", GridFunction::fmt(cfg.tol)},
                {"singular_tol", GridFunction::fmt(cfg.singular_tol)},
                {"calib_tol", GridFunction::fmt(cfg.calib_tol)},
                {"seed", std::to_string(cfg.seed)},
                {"modules", "model,action,laxoleinik,solver,singular,cli@" + std::string(kVersion)}};
    }

    json metadata_json() const {
        json j;
        for (const auto& [k, v] : metadata()) j[k] = v;
        return j;
    }

    std::string csv_header() const {
        std::string s;
        for (const auto& [k, v] : metadata()) s += "# " + k + " " + v + "\n";
        return s;
    }

    std::filesystem::path path(const std::string& name) const { return out / name; }

    void write_text(const std::string& name, const std::string& text) const {
        std::ofstream os(path(name));
        if (!os) throw ConfigError("cannot write '" + path(name).string() + "'");
        os << text;
    }

    void write_json(const std::string& name, json body) const {
        json j;
        j["metadata"] = metadata_json();
        for (auto& [k, v] : body.items()) j[k] = v;
        write_text(name, j.dump(2) + "\n");
    }

    void write_grid(const std::string& name, GridFunction g) const {
        for (const auto& [k, v] : metadata()) g.metadata[k] = v;
        std::ostringstream os;
        g.write(os);
        write_text(name, os.str());
    }
};

Context make_context(const Flags& f, const std::string& command) {
    if (f.config.empty()) throw ConfigError("--config is required");
    Context c;
    c.command = command;
    c.cfg = load_run_config(f.config);
    std::string overrides;
    if (!f.out.empty()) c.cfg.out = f.out;
    if (f.jobs > 0) c.cfg.jobs = f.jobs;
    if (f.seed >= 0) {
        c.cfg.seed = static_cast<std::uint64_t>(f.seed);
        overrides += "\nseed=" + std::to_string(f.seed);
    }
    if (f.tol > 0) {
        c.cfg.tol = f.tol;
        overrides += "\ntol=" + GridFunction::fmt(f.tol);
    }
    if (!std::isnan(f.t0)) {
        c.cfg.t0 = f.t0;
        overrides += "\nt0=" + GridFunction::fmt(f.t0);
    }
    if (!f.x0.empty()) {
        std::istringstream is(f.x0);
        std::string tok;
        std::vector<double> xs;
        while (std::getline(is, tok, ',')) xs.push_back(std::stod(tok));
        if (static_cast<int>(xs.size()) != c.cfg.dim) throw ConfigError("--x0 dimension differs from grid.box");
        for (int i = 0; i < c.cfg.dim; ++i) c.cfg.x0[i] = xs[i];
        overrides += "\nx0=" + f.x0;
    }
    RunConfig tmp;
    tmp.text = c.cfg.text + overrides;
    c.hash = tmp.hash();
    c.spec = c.cfg.spec();
    c.out = c.cfg.out;
    std::filesystem::create_directories(c.out);
    return c;
}

json box_json(const Box& b) {
    json j = json::array();
    for (int i = 0; i < b.dim(); ++i) j.push_back({b.lo[i], b.hi[i]});
    return j;
}

json vec_json(const Vec& v) {
    json j = json::array();
    for (int i = 0; i < v.size(); ++i) j.push_back(v[i]);
    return j;
}

json audit_json(const LocalizationAudit& a) {
    return {{"checks", a.checks()}, {"violations", a.violations()}, {"worst_excess", a.worst_excess()}};
}

json residual_json(const ResidualReport& r) {
    return {{"tol", r.tol},
            {"sup_residual", r.sup_residual},
            {"worst_subsolution", std::isfinite(r.worst_subsolution) ? json(r.worst_subsolution) : json(nullptr)},
            {"worst_supersolution", std::isfinite(r.worst_supersolution) ? json(r.worst_supersolution) : json(nullptr)},
            {"stable", r.stable},
            {"unstable", r.unstable},
            {"pass", r.pass()}};
}

json convexity_json(const ConvexityConstants& k) {
    return {{"C0", k.C0}, {"C1", k.C1}, {"C2", k.C2}, {"C3", k.C3}, {"height", k.height}, {"slope", k.slope}};
}

DiscountedProblem discounted_problem(const Context& c) {
    if (!c.cfg.discounted()) throw InvalidProblem("this command needs problem.kind = discounted");
    return make_discounted(c.spec, c.cfg.lambda);
}

PaddedGrid discounted_grid(Context& c, const DiscountedProblem& p) {
    double pad = discounted_pad(p);
    PaddedGrid g = pad_grid(c.cfg.box, c.cfg.resolution, pad);
    c.note("grid box expanded by " + GridFunction::fmt(g.region.lo[0] - g.box.lo[0]) +
           " per side to cover the localization radius " + GridFunction::fmt(pad));
    return g;
}

/// Region nodes away from the region boundary, at most `limit` of them, evenly strided.
std::vector<Vec> interior_samples(const PaddedGrid& pg, const GridFunction& g, std::size_t limit) {
    std::vector<Vec> nodes;
    double margin = 3.0 * g.max_spacing();
    for (std::size_t i = 0; i < g.size(); ++i) {
        Vec x = g.node(i);
        if (pg.region.inner_margin(x) >= margin) nodes.push_back(x);
    }
    if (nodes.size() <= limit) return nodes;
    std::vector<Vec> out;
    for (std::size_t k = 0; k < limit; ++k) out.push_back(nodes[k * nodes.size() / limit]);
    return out;
}

/// First-order difference quotients at kinks are accurate to O(h).
double residual_tolerance(const Context& c, const GridFunction& v) {
    return std::max({5e-3, 5 * c.cfg.tol, v.max_spacing()});
}

struct SolvedValue {
    GridFunction v;
    PaddedGrid grid;
    json report;
};

/// Solves the discounted problem, or reads solver.input when set.
SolvedValue obtain_value(Context& c, const DiscountedProblem& p, LocalizationAudit* audit) {
    SolvedValue s;
    s.grid = discounted_grid(c, p);
    if (!c.cfg.input.empty()) {
        std::ifstream in(c.cfg.input);
        if (!in) throw ConfigError("cannot open solver.input '" + c.cfg.input + "'");
        s.v = GridFunction::read(in);
        if (s.v.dim() != c.cfg.dim) throw ConfigError("solver.input dimension differs from grid.box");
        if (!s.v.box().contains(s.grid.box.lo, 1e-9) || !s.v.box().contains(s.grid.box.hi, 1e-9))
            throw ConfigError("solver.input does not cover the padded box");
        s.report = {{"source", c.cfg.input}};
        return s;
    }
    SolveOptions so;
    so.tol = c.cfg.tol;
    so.jobs = c.cfg.jobs;
    so.audit = audit;
    auto sol = solve_discounted(p, s.grid.box, s.grid.resolution, so);
    s.v = std::move(sol.v);
    s.report = json::parse(sol.report.to_json());
    s.report["iteration_cap"] = sol.report.iteration_cap;
    s.report["min_increment"] = sol.report.min_increment;
    s.report["min_value"] = sol.report.min_value;
    s.report["max_value"] = sol.report.max_value;
    s.report["radius"] = sol.report.radius;
    return s;
}

FieldOptions field_options(const Context& c, LocalizationAudit* audit) {
    FieldOptions fo;
    fo.tie_tol = c.cfg.tie_tol > 0 ? c.cfg.tie_tol : c.cfg.tol;
    fo.audit = audit;
    return fo;
}

/// Initial datum for evolutionary runs on a box padded for horizon T plus `extra`.
struct InitialData {
    GridFunction u0;
    PaddedGrid grid;
    double pad = 0.0;
};

InitialData initial_data(Context& c, double T, double extra) {
    InitialData d;
    const GrowthData g = c.spec.lagrangian.growth(T);
    if (!c.cfg.u0_file.empty()) {
        std::ifstream in(c.cfg.u0_file);
        if (!in) throw ConfigError("cannot open evolve.u0_file '" + c.cfg.u0_file + "'");
        d.u0 = GridFunction::read(in);
        if (d.u0.dim() != c.cfg.dim) throw ConfigError("evolve.u0_file dimension differs from grid.box");
        d.pad = localization_radius(g, T, d.u0.lipschitz_estimate()) * T + extra;
        Box need = c.cfg.box.padded(d.pad);
        if (!d.u0.box().contains(need.lo, 1e-9) || !d.u0.box().contains(need.hi, 1e-9))
            throw ConfigError("evolve.u0_file does not cover the box padded by " + GridFunction::fmt(d.pad));
        d.grid.region = c.cfg.box;
        d.grid.box = d.u0.box();
        d.grid.resolution = d.u0.resolution();
        return d;
    }
    auto f = c.cfg.initial_function();
    double lip = GridFunction::sample(c.cfg.box, c.cfg.resolution, f).lipschitz_estimate();
    for (int round = 0; round < 3; ++round) {
        d.pad = localization_radius(g, T, lip) * T + extra;
        d.grid = pad_grid(c.cfg.box, c.cfg.resolution, d.pad);
        d.u0 = GridFunction::sample(d.grid.box, d.grid.resolution, f);
        if (d.u0.lipschitz_estimate() <= lip * (1 + 1e-9)) break;
        lip = d.u0.lipschitz_estimate();
    }
    c.note("grid box expanded by " + GridFunction::fmt(d.grid.region.lo[0] - d.grid.box.lo[0]) +
           " per side to cover the localization radius");
    return d;
}

// ---------------------------------------------------------------- subcommands

int cmd_solve(Context& c) {
    auto p = discounted_problem(c);
    LocalizationAudit audit;
    auto s = obtain_value(c, p, &audit);
    auto samples = interior_samples(s.grid, s.v, 400);
    auto res = residual_check(p, [&](const Vec& x) { return s.v(x); }, samples, s.v.max_spacing(),
                              residual_tolerance(c, s.v));
    c.write_grid("v.grid", s.v);
    json body;
    body["solve"] = s.report;
    body["region"] = box_json(s.grid.region);
    body["box"] = box_json(s.grid.box);
    body["resolution"] = s.grid.resolution;
    body["residual"] = residual_json(res);
    body["localization"] = audit_json(audit);
    body["notes"] = c.notes;
    c.write_json("report.json", body);
    return 0;
}

int cmd_evolve(Context& c) {
    if (c.cfg.times.empty()) throw ConfigError("evolve.times is required");
    auto d = initial_data(c, c.cfg.times.back(), 0.0);
    ActionKernel A(c.spec.lagrangian);
    LocalizationAudit audit;
    EvolveOptions eo;
    eo.jobs = c.cfg.jobs;
    eo.audit = &audit;
    auto slices = solve_evolutionary(A, d.u0, c.cfg.times, eo);
    c.write_grid("u_0.grid", d.u0);
    json files = json::array();
    for (std::size_t j = 0; j < slices.size(); ++j) {
        std::string name = "u_" + std::to_string(j + 1) + ".grid";
        c.write_grid(name, slices[j]);
        files.push_back({{"time", c.cfg.times[j]},
                         {"file", name},
                         {"min", slices[j].min_value()},
                         {"max", slices[j].max_value()},
                         {"lipschitz", slices[j].lipschitz_estimate()}});
    }
    json body;
    body["slices"] = files;
    body["region"] = box_json(d.grid.region);
    body["box"] = box_json(d.grid.box);
    body["pad"] = d.pad;
    body["localization"] = audit_json(audit);
    body["notes"] = c.notes;
    c.write_json("report.json", body);
    return 0;
}

int cmd_trace(Context& c) {
    const double t0 = c.cfg.t0, T = c.cfg.horizon;
    TraceOptions to;
    to.singular_tol = c.cfg.singular_tol;
    to.block = c.cfg.block;
    to.seed = c.cfg.seed;
    LocalizationAudit audit;
    std::unique_ptr<SolutionField> field;
    double K = 0.0;
    const double T_eff = std::max({T, t0, 1e-6});
    if (c.cfg.discounted()) {
        auto p = discounted_problem(c);
        auto s = obtain_value(c, p, nullptr);
        auto fo = field_options(c, &audit);
        to.tie_tol = std::max(to.tie_tol, fo.tie_tol);
        field = std::make_unique<DiscountedField>(p, std::move(s.v), c.cfg.sigma, fo);
        K = p.lambda * solution_lipschitz_bound(field->growth(T_eff), T_eff, field->lipschitz_initial()).F0;
    } else {
        auto d = initial_data(c, T_eff, to.search_radius);
        FieldOptions fo;
        fo.audit = &audit;
        ActionKernel A(c.spec.lagrangian);
        field = std::make_unique<EvolutionaryField>(A, c.spec.hamiltonian, std::move(d.u0), fo);
        K = 2.0 * solution_lipschitz_bound(field->growth(T_eff), T_eff, field->lipschitz_initial()).F2;
    }
    auto curve = trace_singular_curve(*field, t0, c.cfg.x0, T, to);
    if (!curve.warning.empty()) std::cerr << "warning: " << curve.warning << "\n";
    c.write_text("curve.csv", c.csv_header() + curve.to_csv());

    json body;
    body["start"] = {{"t0", t0}, {"x0", vec_json(c.cfg.x0)}, {"horizon", T}};
    body["start_singular"] = curve.start_singular;
    body["start_diameter"] = curve.start_diameter;
    body["warning"] = curve.warning;
    body["points"] = curve.size();
    double min_diam = kInf;
    for (double d : curve.certificates)
        if (d >= 0) min_diam = std::min(min_diam, d);
    body["min_certificate_diameter"] = std::isfinite(min_diam) ? json(min_diam) : json(nullptr);
    body["certificate_diameters"] = curve.certificates;
    body["schedule"] = curve.schedule;
    body["block_steps"] = curve.block_steps;
    json blocks = json::array();
    for (const auto& k : curve.block_constants)
        blocks.push_back({{"C", k.C}, {"lambda2", k.lambda2}, {"t_step", k.t_step}, {"convexity", convexity_json(k.convexity)}});
    body["block_constants"] = blocks;
    body["localization_violations"] = curve.localization_violations;
    if (!curve.block_constants.empty() && curve.size() > 1) {
        auto lc = lipschitz_certificate(curve, curve.block_constants.front().convexity, K);
        body["lipschitz"] = {{"K", K}, {"C4", lc.C4}, {"C1_used", lc.C1_used}, {"max_quotient", lc.max_quotient},
                             {"slack", lc.slack}, {"pass", lc.pass}};
    }
    body["operator_localization"] = audit_json(audit);
    body["notes"] = c.notes;
    c.write_json("certificates.json", body);
    return 0;
}

int cmd_cutlocus(Context& c) {
    auto p = discounted_problem(c);
    auto s = obtain_value(c, p, nullptr);
    LocalizationAudit audit;
    DiscountedField field(p, s.v, c.cfg.sigma, field_options(c, &audit));
    CutTimeOptions co;
    co.horizon = c.cfg.cut_horizon;
    co.calib_tol = c.cfg.calib_tol;
    co.singular_tol = c.cfg.singular_tol;
    TraceOptions to;
    to.singular_tol = c.cfg.singular_tol;
    to.tie_tol = std::max(to.tie_tol, field.options().tie_tol);
    to.seed = c.cfg.seed;

    GridFunction layout(c.cfg.box, c.cfg.resolution);
    auto cut = cut_time_field(field, layout, co, c.cfg.jobs);
    GridFunction tau = cut.tau;
    tau.clamped_marker = cut.horizon;
    c.write_grid("tau.grid", tau);
    c.write_grid("alpha.grid", cut.alpha);

    auto aubry = aubry_candidates(field, cut, co);
    std::ostringstream as;
    as.precision(17);
    as << c.csv_header();
    for (int i = 1; i <= c.cfg.dim; ++i) as << (i > 1 ? "," : "") << "x" << i;
    as << "\n";
    for (const Vec& x : aubry) {
        for (int i = 0; i < x.size(); ++i) as << (i ? "," : "") << x[i];
        as << "\n";
    }
    c.write_text("aubry.csv", as.str());

    std::mt19937_64 rng(c.cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::ostringstream rs;
    rs.precision(17);
    rs << c.csv_header();
    const int n = c.cfg.dim;
    for (int i = 1; i <= n; ++i) rs << (i > 1 ? "," : "") << "x" << i;
    rs << ",tau,alpha";
    for (int i = 1; i <= n; ++i) rs << ",G0_x" << i;
    for (int i = 1; i <= n; ++i) rs << ",G1_x" << i;
    rs << ",singular,certificate_diameter\n";
    const double h = layout.max_spacing();
    int written = 0, skipped = 0;
    for (int attempt = 0; written < c.cfg.retraction_samples && attempt < 20 * (c.cfg.retraction_samples + 1);
         ++attempt) {
        Vec x(n);
        for (int i = 0; i < n; ++i) x[i] = c.cfg.box.lo[i] + (c.cfg.box.hi[i] - c.cfg.box.lo[i]) * unit(rng);
        bool near = false;
        for (const Vec& a : aubry) near = near || (a - x).norm() < 2 * h;
        if (near) {
            ++skipped;
            continue;
        }
        auto ct = cut_time(field, x, co);
        if (ct.clamped) {
            ++skipped;
            continue;
        }
        auto g0 = retraction_G(field, cut, x, 0.0, co, to);
        auto g1 = retraction_G(field, cut, x, 1.0, co, to);
        for (int i = 0; i < n; ++i) rs << (i ? "," : "") << x[i];
        rs << "," << ct.tau << "," << g1.alpha;
        for (int i = 0; i < n; ++i) rs << "," << g0.point[i];
        for (int i = 0; i < n; ++i) rs << "," << g1.point[i];
        rs << "," << (g1.singular ? 1 : 0) << "," << g1.diameter << "\n";
        ++written;
    }
    c.write_text("retraction_demo.csv", rs.str());
    if (skipped > 0) c.note(std::to_string(skipped) + " retraction samples skipped near the numerical Aubry set");

    int clamped = 0;
    for (std::size_t i = 0; i < cut.tau.size(); ++i) clamped += cut.tau[i] >= cut.horizon;
    json body;
    body["horizon"] = cut.horizon;
    body["clamped_nodes"] = clamped;
    body["aubry_candidates"] = aubry.size();
    body["retraction_samples"] = written;
    body["solve"] = s.report;
    body["localization"] = audit_json(audit);
    body["notes"] = c.notes;
    c.write_json("report.json", body);
    return 0;
}

/// Runs every diagnostic; returns 2 when any check fails.
int cmd_verify(Context& c) {
    json checks = json::object();
    bool ok = true;
    auto record = [&](const std::string& name, bool pass, json detail) {
        detail["pass"] = pass;
        checks[name] = detail;
        ok = ok && pass;
    };
    const auto& L = c.spec.lagrangian;
    auto tonelli = check_tonelli(L, c.cfg.box, 1.0, 200, 10.0, c.cfg.seed);
    record("tonelli",
           tonelli.pass(),
           {{"L1_convexity", tonelli.l1},
            {"L2_growth", tonelli.l2},
            {"L3_time_derivative", tonelli.l3},
            {"min_eigenvalue", tonelli.min_eigenvalue},
            {"upper_margin", tonelli.upper_margin},
            {"lower_margin", tonelli.lower_margin},
            {"growth", tonelli.growth.pass()}});
    if (!tonelli.pass()) {
        json body;
        body["checks"] = checks;
        body["skipped"] = "remaining checks need a Tonelli Lagrangian";
        body["pass"] = false;
        c.write_json("verify.json", body);
        std::cout << "verify: FAIL (Tonelli conditions)\n";
        return 2;
    }

    std::mt19937_64 rng(c.cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int n = c.cfg.dim;
    auto random_point = [&] {
        Vec x(n);
        for (int i = 0; i < n; ++i) x[i] = c.cfg.box.lo[i] + (c.cfg.box.hi[i] - c.cfg.box.lo[i]) * unit(rng);
        return x;
    };

    ActionKernel A(L);
    double worst = 0.0;
    for (int k = 0; k < c.cfg.verify_samples; ++k) {
        double s = unit(rng), dt = 0.5 + 0.5 * unit(rng);
        Vec x = random_point(), y = x;
        for (int i = 0; i < n; ++i) y[i] += unit(rng) - 0.5;
        auto fs = fundamental_solution(L, s, s + dt, x, y, &c.spec.hamiltonian);
        auto g = action_gradients(fs.minimizer);
        Vec fy = A.grad_y(s, s + dt, x, y), fx = A.grad_x(s, s + dt, x, y);
        double e = 1e-5;
        double ft = (A(s, s + dt + e, x, y) - A(s, s + dt - e, x, y)) / (2 * e);
        auto rel = [](double a, double b) { return std::fabs(a - b) / std::max(1.0, std::fabs(b)); };
        for (int i = 0; i < n; ++i) worst = std::max({worst, rel(g.dy[i], fy[i]), rel(g.dx[i], fx[i])});
        worst = std::max(worst, rel(g.dt, ft));
    }
    record("gradient_identities", worst <= 1e-4, {{"samples", c.cfg.verify_samples}, {"worst_relative", worst}});

    if (c.cfg.discounted()) {
        auto p = make_discounted(c.spec, c.cfg.lambda);
        std::vector<int> res = c.cfg.resolution;
        for (int& r : res) r = std::min(r, 65);
        auto pg = pad_grid(c.cfg.box, res, discounted_pad(p));
        GridFunction layout = pg.layout();
        auto k = bounds_K(p);
        OperatorOptions oo;
        oo.boundary = BoundaryPolicy::Clip;
        LocalizationAudit audit;
        oo.audit = &audit;
        DiscountedOperator op(p, layout, 1.0, 2.0, 2.0 * (k.K1 + k.K2) + 2.0, oo, c.cfg.jobs);
        int violations = 0;
        double worst_ratio = 0.0;
        const int pairs = std::max(4, c.cfg.verify_samples / 4);
        for (int q = 0; q < pairs; ++q) {
            auto random_lipschitz = [&] {
                double a = unit(rng), w = 0.5 + unit(rng), ph = 6.283 * unit(rng), b = unit(rng) - 0.5;
                return GridFunction::sample(pg.box, pg.resolution, [=](const Vec& x) {
                    return b + a / w * std::sin(w * x.sum() + ph);
                });
            };
            auto f = random_lipschitz(), g = random_lipschitz();
            SweepStats sf, sg;
            auto tf = op.apply(f, &sf), tg = op.apply(g, &sg);
            double lhs = tf.sup_distance(tg);
            double rhs = std::exp(-p.lambda) * f.sup_distance(g) +
                         2.0 * std::max(sf.max_polish_gain, sg.max_polish_gain);
            if (lhs > rhs + 1e-12) ++violations;
            worst_ratio = std::max(worst_ratio, lhs / std::max(rhs, 1e-300));
        }
        record("contraction", violations == 0, {{"pairs", pairs}, {"violations", violations}, {"worst_ratio", worst_ratio}});
        record("localization", audit.violations() == 0, audit_json(audit));

        SolveOptions so;
        so.tol = c.cfg.tol;
        so.jobs = c.cfg.jobs;
        try {
            auto full = pad_grid(c.cfg.box, c.cfg.resolution, discounted_pad(p));
            auto sol = solve_discounted(p, full.box, full.resolution, so);
            auto samples = interior_samples(full, sol.v, 200);
            auto rr = residual_check(p, [&](const Vec& x) { return sol.v(x); }, samples, sol.v.max_spacing(),
                                     residual_tolerance(c, sol.v));
            json d = residual_json(rr);
            d["iterations"] = sol.report.iterations;
            d["resolution"] = full.resolution;
            record("residual", rr.pass(), d);
        } catch (const NumericalError& e) {
            record("residual", false, {{"error", e.what()}});
        }
    }

    try {
        Vec x0 = c.cfg.x0;
        auto kc = estimate_constants(A, 0.0, x0, 1.0, c.cfg.constants_radius, c.cfg.constants_slope);
        record("constants", kc.C2 > 0, convexity_json(kc));
    } catch (const NumericalError& e) {
        record("constants", false, {{"error", e.what()}});
    }

    json body;
    body["checks"] = checks;
    body["pass"] = ok;
    c.write_json("verify.json", body);
    std::cout << "verify: " << (ok ? "PASS" : "FAIL") << "\n";
    return ok ? 0 : 2;
}

int cmd_constants(Context& c) {
    const double T = c.cfg.horizon > 0 ? c.cfg.horizon : 1.0;
    json body;
    ActionKernel A(c.spec.lagrangian);
    double lip = 0.0;
    if (c.cfg.discounted()) {
        auto p = make_discounted(c.spec, c.cfg.lambda);
        auto k = bounds_K(p);
        lip = fixed_point_lipschitz_bound(p, std::max(k.K1, k.K2));
        body["K1"] = k.K1;
        body["K2"] = k.K2;
        body["iteration_cap"] = iteration_cap(p, c.cfg.tol);
        body["fixed_point_lipschitz_bound"] = lip;
        body["pad"] = discounted_pad(p);
        A = discounted_kernel(p);
    } else if (!c.cfg.u0.empty()) {
        lip = GridFunction::sample(c.cfg.box, c.cfg.resolution, c.cfg.initial_function()).lipschitz_estimate();
    }
    const GrowthData g = A.model().growth(T);
    auto lb = solution_lipschitz_bound(g, T, lip);
    body["horizon"] = T;
    body["lipschitz_data"] = lip;
    body["lambda1"] = localization_radius(g, T, lip);
    body["F1"] = lb.F1;
    body["F2"] = lb.F2;
    body["F0"] = lb.F0;
    body["lambda2"] = trace_radius(g, T, lip);
    auto kc = estimate_constants(A, c.cfg.t0, c.cfg.x0, c.cfg.t0 + T, c.cfg.constants_radius, c.cfg.constants_slope,
                                 48, c.cfg.seed);
    body["convexity"] = convexity_json(kc);
    c.write_json("constants.json", body);
    std::cout << body.dump(2) << "\n";
    return 0;
}

const char* kSolveHelp =
    "Writes v.grid (grid file: '# key value' metadata lines, then dim, box, resolution, lambda\n"
    "headers and one node value per line, row-major) and report.json.";
const char* kEvolveHelp = "Writes u_0.grid, u_<j>.grid for each evolve.times entry, and report.json.";
const char* kTraceHelp =
    "Writes curve.csv with columns s,x1..xn,step_size,certificate_diameter\n"
    "(certificate_diameter is the reachable-gradient diameter, -1 when not certified)\n"
    "and certificates.json.";
const char* kCutlocusHelp =
    "Writes tau.grid, alpha.grid, aubry.csv (columns x1..xn) and retraction_demo.csv with columns\n"
    "x1..xn,tau,alpha,G0_x1..G0_xn,G1_x1..G1_xn,singular,certificate_diameter.";
const char* kVerifyHelp = "Writes verify.json; exit code 2 when a check fails.";
const char* kConstantsHelp = "Writes constants.json and prints it.";

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hamilton-Jacobi solver and singular-set tracer"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    Flags flags;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", flags.config, "Configuration file")->required();
        sub->add_option("--out", flags.out, "Output directory (overrides run.out)");
        sub->add_option("--jobs", flags.jobs, "Worker threads")->check(CLI::PositiveNumber);
        sub->add_option("--seed", flags.seed, "Sampling seed")->check(CLI::NonNegativeNumber);
        sub->add_option("--tol", flags.tol, "Solver tolerance")->check(CLI::PositiveNumber);
    };

    struct Entry {
        const char* name;
        const char* brief;
        const char* footer;
        int (*run)(Context&);
    };
    const Entry entries[] = {
        {"solve", "Solve the discounted equation", kSolveHelp, cmd_solve},
        {"evolve", "Evolve an initial datum with the Lax-Oleinik semigroup", kEvolveHelp, cmd_evolve},
        {"trace", "Trace a singular curve", kTraceHelp, cmd_trace},
        {"cutlocus", "Cut-time field, Aubry candidates and retraction samples", kCutlocusHelp, cmd_cutlocus},
        {"verify", "Model and operator diagnostics", kVerifyHelp, cmd_verify},
        {"constants", "Localization, Lipschitz and convexity constants", kConstantsHelp, cmd_constants},
    };
    std::vector<std::pair<CLI::App*, const Entry*>> subs;
    for (const auto& e : entries) {
        CLI::App* sub = app.add_subcommand(e.name, e.brief);
        sub->footer(e.footer);
        add_common(sub);
        if (std::string(e.name) == "trace") {
            sub->add_option("--t0", flags.t0, "Start time (overrides trace.t0)");
            sub->add_option("--x0", flags.x0, "Start point, comma separated (overrides trace.x0)");
        }
        subs.emplace_back(sub, &e);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 3;
    }

    for (const auto& [sub, entry] : subs) {
        if (!sub->parsed()) continue;
        try {
            Context c = make_context(flags, entry->name);
            return entry->run(c);
        } catch (const ConfigError& e) {
            std::cerr << "config error: " << e.what() << "\n";
            return 3;
        } catch (const std::invalid_argument& e) {
            std::cerr << "invalid input: " << e.what() << "\n";
            return 3;
        } catch (const NumericalError& e) {
            std::cerr << "numerical failure: " << e.what() << "\n";
            return 2;
        } catch (const std::filesystem::filesystem_error& e) {
            std::cerr << "i/o error: " << e.what() << "\n";
            return 3;
        }
    }
    return 3;
}
