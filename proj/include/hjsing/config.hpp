#pragma once

#include "hjsing/catalog.hpp"
#include "hjsing/expression.hpp"
#include "hjsing/grid.hpp"
#include "hjsing/types.hpp"

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace hjsing {

/// Flat key=value text with optional [section] headers. Keys are stored as "section.key".
class ConfigFile {
public:
    static ConfigFile parse(const std::string& text) {
        ConfigFile c;
        std::istringstream is(text);
        std::string line, section;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            std::string s = trim(line);
            if (s.empty() || s[0] == '#' || s[0] == ';') continue;
            if (s.front() == '[') {
                if (s.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": unterminated section header");
                section = trim(s.substr(1, s.size() - 2));
                if (section.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty section name");
                continue;
            }
            auto eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
            std::string key = trim(s.substr(0, eq)), value = trim(s.substr(eq + 1));
            if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
            if (!section.empty() && key.find('.') == std::string::npos) key = section + "." + key;
            if (c.values_.count(key)) throw ConfigError("duplicate key '" + key + "'");
            c.values_[key] = value;
            c.order_.push_back(key);
        }
        return c;
    }

    bool empty() const { return values_.empty(); }
    bool has(const std::string& key) const { return values_.count(key) > 0; }
    const std::vector<std::string>& keys() const { return order_; }

    std::string str(const std::string& key, const std::string& fallback = "") const {
        used_.insert(key);
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double num(const std::string& key, double fallback) const {
        if (!has(key)) return fallback;
        return to_double(key, str(key));
    }

    std::vector<double> nums(const std::string& key) const {
        std::vector<double> out;
        if (!has(key)) return out;
        std::istringstream is(replace_commas(str(key)));
        std::string tok;
        while (is >> tok) out.push_back(to_double(key, tok));
        return out;
    }

    /// Keys never read by the consumer, reported as typos.
    std::vector<std::string> unused() const {
        std::vector<std::string> out;
        for (const auto& k : order_)
            if (!used_.count(k)) out.push_back(k);
        return out;
    }

    static std::string trim(const std::string& s) {
        std::size_t a = s.find_first_not_of(" \t\r\n"), b = s.find_last_not_of(" \t\r\n");
        return a == std::string::npos ? "" : s.substr(a, b - a + 1);
    }

private:
    static std::string replace_commas(std::string s) {
        for (char& ch : s)
            if (ch == ',') ch = ' ';
        return s;
    }

    static double to_double(const std::string& key, const std::string& text) {
        std::map<std::string, int> none;
        try {
            Expression e(text, none);
            return e.eval(nullptr);
        } catch (const ConfigError& err) {
            throw ConfigError("key '" + key + "': " + err.what());
        }
    }

    std::map<std::string, std::string> values_;
    std::vector<std::string> order_;
    mutable std::set<std::string> used_;
};

/// Everything a CLI run needs.
struct RunConfig {
    std::string kind = "discounted";
    std::string model;
    std::string lagrangian;
    std::string hamiltonian;
    double c1 = 0.0;
    double c2 = 0.0;
    int dim = 1;
    double lambda = 1.0;

    Box box;
    std::vector<int> resolution;

    double tol = 1e-3;
    double singular_tol = 1e-2;
    double calib_tol = 1e-2;
    double sigma = 0.25;
    double tie_tol = -1.0;

    std::string u0;
    std::string u0_file;
    std::string input;
    std::vector<double> times;

    double t0 = 0.0;
    Vec x0;
    double horizon = 1.0;
    double block = 1.0;

    double cut_horizon = 0.0;
    int retraction_samples = 20;

    double constants_radius = 1.0;
    double constants_slope = 1.0;
    int verify_samples = 20;

    std::uint64_t seed = 1;
    int jobs = 1;
    std::string out = "out";

    std::vector<std::string> notes;
    std::string text;

    ModelSpec spec() const {
        if (!model.empty()) return catalog_model(model, dim);
        return expression_model(dim, lagrangian, hamiltonian, c1, c2);
    }

    bool discounted() const { return kind == "discounted"; }

    /// Initial datum as a function of the point (for evolutionary runs).
    std::function<double(const Vec&)> initial_function() const {
        if (u0.empty()) throw ConfigError("evolutionary runs need evolve.u0 or evolve.u0_file");
        auto slots = std::make_shared<std::map<std::string, int>>();
        (*slots)["x"] = 0;
        for (int i = 0; i < dim; ++i) (*slots)["x" + std::to_string(i + 1)] = i;
        auto e = std::make_shared<Expression>(u0, *slots);
        return [e](const Vec& x) {
            double a[3] = {0, 0, 0};
            for (int i = 0; i < x.size(); ++i) a[i] = x[i];
            return e->eval(a);
        };
    }

    /// Stable hash of the configuration text, hex encoded.
    std::string hash() const {
        std::uint64_t h = 1469598103934665603ull;
        for (unsigned char ch : text) {
            h ^= ch;
            h *= 1099511628211ull;
        }
        char buf[20];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
        return buf;
    }
};

inline RunConfig parse_run_config(const std::string& text) {
    ConfigFile f = ConfigFile::parse(text);
    if (f.empty()) throw ConfigError("configuration is empty");
    RunConfig c;
    c.text = text;
    c.kind = f.str("problem.kind", "discounted");
    if (c.kind != "discounted" && c.kind != "evolutionary")
        throw ConfigError("problem.kind must be 'discounted' or 'evolutionary'");
    c.model = f.str("problem.model");
    c.lagrangian = f.str("problem.lagrangian");
    c.hamiltonian = f.str("problem.hamiltonian");
    c.c1 = f.num("problem.c1", 0.0);
    c.c2 = f.num("problem.c2", 0.0);
    c.lambda = f.num("problem.lambda", 1.0);
    if (c.model.empty() && c.lagrangian.empty()) throw ConfigError("problem.model or problem.lagrangian is required");
    if (!c.model.empty() && !c.lagrangian.empty())
        throw ConfigError("problem.model and problem.lagrangian are mutually exclusive");

    std::vector<double> b = f.nums("grid.box");
    if (b.empty()) throw ConfigError("grid.box is required (lo hi per axis)");
    if (b.size() % 2 != 0 || b.size() > 6) throw ConfigError("grid.box needs lo hi pairs for 1 to 3 axes");
    c.dim = static_cast<int>(b.size() / 2);
    if (f.has("problem.dim") && static_cast<int>(f.num("problem.dim", c.dim)) != c.dim)
        throw ConfigError("problem.dim disagrees with grid.box");
    c.box.lo.resize(c.dim);
    c.box.hi.resize(c.dim);
    for (int i = 0; i < c.dim; ++i) {
        c.box.lo[i] = b[2 * i];
        c.box.hi[i] = b[2 * i + 1];
    }
    c.box.validate();

    std::vector<double> r = f.nums("grid.resolution");
    if (r.empty()) r.assign(1, 128);
    if (r.size() == 1) r.assign(c.dim, r[0]);
    if (static_cast<int>(r.size()) != c.dim) throw ConfigError("grid.resolution needs one value or one per axis");
    for (double v : r) {
        if (v != std::floor(v) || v < 16) throw ConfigError("grid.resolution must be an integer >= 16 per axis");
        c.resolution.push_back(static_cast<int>(v));
    }

    c.tol = f.num("solver.tol", c.tol);
    c.sigma = f.num("solver.sigma", c.sigma);
    c.tie_tol = f.num("solver.tie_tol", c.tie_tol);
    c.input = f.str("solver.input");
    c.singular_tol = f.num("singular.singular_tol", c.singular_tol);
    c.calib_tol = f.num("singular.calib_tol", c.calib_tol);
    c.cut_horizon = f.num("singular.cut_horizon", c.cut_horizon);
    c.retraction_samples = static_cast<int>(f.num("singular.retraction_samples", c.retraction_samples));

    c.u0 = f.str("evolve.u0");
    c.u0_file = f.str("evolve.u0_file");
    c.times = f.nums("evolve.times");

    c.t0 = f.num("trace.t0", c.t0);
    std::vector<double> x0 = f.nums("trace.x0");
    c.x0 = Vec::Zero(c.dim);
    if (!x0.empty()) {
        if (static_cast<int>(x0.size()) != c.dim) throw ConfigError("trace.x0 dimension differs from grid.box");
        for (int i = 0; i < c.dim; ++i) c.x0[i] = x0[i];
    }
    c.horizon = f.num("trace.horizon", c.horizon);
    c.block = f.num("trace.block", c.block);

    c.constants_radius = f.num("constants.radius", c.constants_radius);
    c.constants_slope = f.num("constants.slope", c.constants_slope);
    c.verify_samples = static_cast<int>(f.num("verify.samples", c.verify_samples));

    c.seed = static_cast<std::uint64_t>(f.num("run.seed", 1.0));
    c.jobs = static_cast<int>(f.num("run.jobs", 1.0));
    c.out = f.str("run.out", c.out);

    for (const auto& k : f.unused()) throw ConfigError("unknown key '" + k + "'");

    if (!(c.tol > 0)) throw ConfigError("solver.tol must be positive");
    if (!(c.singular_tol > 0) || !(c.calib_tol > 0)) throw ConfigError("tolerances must be positive");
    if (!(c.sigma > 0)) throw ConfigError("solver.sigma must be positive");
    if (c.discounted() && !(c.lambda > 0)) throw ConfigError("problem.lambda must be positive");
    if (!(c.block > 0)) throw ConfigError("trace.block must be positive");
    if (c.horizon < 0) throw ConfigError("trace.horizon must be nonnegative");
    if (c.jobs < 1) throw ConfigError("run.jobs must be >= 1");
    if (c.retraction_samples < 0 || c.verify_samples < 1) throw ConfigError("sample counts must be positive");
    for (std::size_t i = 0; i < c.times.size(); ++i) {
        if (!(c.times[i] > 0)) throw ConfigError("evolve.times must be positive");
        if (i > 0 && !(c.times[i] > c.times[i - 1])) throw ConfigError("evolve.times must be increasing");
    }
    if (!c.u0.empty() && !c.u0_file.empty()) throw ConfigError("evolve.u0 and evolve.u0_file are mutually exclusive");
    c.spec();
    if (!c.u0.empty()) c.initial_function();
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

}  // namespace hjsing
