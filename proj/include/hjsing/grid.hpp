#pragma once

#include "hjsing/types.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace hjsing {

/// Scalar field on the nodes of a rectangular grid, multilinear in between.
/// Values are stored row-major (last axis fastest).
class GridFunction {
public:
    GridFunction() = default;

    GridFunction(Box box, std::vector<int> resolution) : box_(std::move(box)), res_(std::move(resolution)) {
        box_.validate();
        if (static_cast<int>(res_.size()) != box_.dim()) throw ConfigError("resolution rank differs from box dimension");
        std::size_t total = 1;
        for (int r : res_) {
            if (r < 2) throw ConfigError("resolution must be at least 2 per axis");
            total *= static_cast<std::size_t>(r);
        }
        values_.assign(total, 0.0);
        strides_.assign(res_.size(), 1);
        for (int i = dim() - 2; i >= 0; --i) strides_[i] = strides_[i + 1] * res_[i + 1];
        lipschitz_ = 0.0;
    }

    static GridFunction sample(const Box& box, const std::vector<int>& res, const std::function<double(const Vec&)>& f) {
        GridFunction g(box, res);
        std::vector<double> v(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) v[i] = f(g.node(i));
        g.set_values(std::move(v));
        return g;
    }

    int dim() const { return box_.dim(); }
    std::size_t size() const { return values_.size(); }
    const Box& box() const { return box_; }
    const std::vector<int>& resolution() const { return res_; }
    double spacing(int axis) const { return (box_.hi[axis] - box_.lo[axis]) / (res_[axis] - 1); }
    double max_spacing() const {
        double h = 0;
        for (int i = 0; i < dim(); ++i) h = std::max(h, spacing(i));
        return h;
    }
    /// Diagonal of one cell.
    double cell_diameter() const {
        double s = 0;
        for (int i = 0; i < dim(); ++i) s += spacing(i) * spacing(i);
        return std::sqrt(s);
    }

    const std::vector<double>& values() const { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }

    void set_values(std::vector<double> v) {
        if (v.size() != values_.size()) throw InvalidProblem("value count differs from grid size");
        for (double x : v)
            if (!std::isfinite(x)) throw InvalidProblem("grid values must be finite");
        values_ = std::move(v);
        recompute_lipschitz();
    }

    void set(std::size_t i, double v) {
        if (!std::isfinite(v)) throw InvalidProblem("grid values must be finite");
        values_[i] = v;
        recompute_lipschitz();
    }

    std::array<int, 3> multi_index(std::size_t flat) const {
        std::array<int, 3> idx{0, 0, 0};
        for (int i = 0; i < dim(); ++i) {
            idx[i] = static_cast<int>(flat / strides_[i]);
            flat %= strides_[i];
        }
        return idx;
    }

    std::size_t flat_index(const std::array<int, 3>& idx) const {
        std::size_t f = 0;
        for (int i = 0; i < dim(); ++i) f += static_cast<std::size_t>(idx[i]) * strides_[i];
        return f;
    }

    std::size_t stride(int axis) const { return strides_[axis]; }

    double coordinate(int axis, int k) const {
        if (k == res_[axis] - 1) return box_.hi[axis];
        return box_.lo[axis] + k * spacing(axis);
    }

    Vec node(std::size_t flat) const {
        auto idx = multi_index(flat);
        Vec x(dim());
        for (int i = 0; i < dim(); ++i) x[i] = coordinate(i, idx[i]);
        return x;
    }

    /// Multilinear interpolation; points outside the box are clamped onto it.
    double operator()(const Vec& x) const {
        int base[3];
        double frac[3];
        locate(x, base, frac);
        double acc = 0.0;
        const int corners = 1 << dim();
        for (int c = 0; c < corners; ++c) {
            double w = 1.0;
            std::size_t f = 0;
            for (int i = 0; i < dim(); ++i) {
                int bit = (c >> i) & 1;
                w *= bit ? frac[i] : 1.0 - frac[i];
                f += static_cast<std::size_t>(base[i] + bit) * strides_[i];
            }
            if (w != 0.0) acc += w * values_[f];
        }
        return acc;
    }

    /// Gradient of the multilinear interpolant inside the cell containing x.
    Vec gradient(const Vec& x) const {
        int base[3];
        double frac[3];
        locate(x, base, frac);
        Vec g = Vec::Zero(dim());
        const int corners = 1 << dim();
        for (int axis = 0; axis < dim(); ++axis) {
            for (int c = 0; c < corners; ++c) {
                double w = 1.0;
                std::size_t f = 0;
                for (int i = 0; i < dim(); ++i) {
                    int bit = (c >> i) & 1;
                    if (i == axis) w *= bit ? 1.0 / spacing(i) : -1.0 / spacing(i);
                    else w *= bit ? frac[i] : 1.0 - frac[i];
                    f += static_cast<std::size_t>(base[i] + bit) * strides_[i];
                }
                g[axis] += w * values_[f];
            }
        }
        return g;
    }

    /// Maximal adjacent difference quotient per axis, combined in the Euclidean norm.
    double lipschitz_estimate() const { return lipschitz_; }

    double min_value() const { return *std::min_element(values_.begin(), values_.end()); }
    double max_value() const { return *std::max_element(values_.begin(), values_.end()); }

    double sup_distance(const GridFunction& other) const {
        double d = 0;
        for (std::size_t i = 0; i < size(); ++i) d = std::max(d, std::fabs(values_[i] - other.values_[i]));
        return d;
    }

    bool same_layout(const GridFunction& other) const {
        if (res_ != other.res_) return false;
        return (box_.lo - other.box_.lo).norm() == 0 && (box_.hi - other.box_.hi).norm() == 0;
    }

    std::optional<double> lambda;
    std::optional<double> clamped_marker;
    std::map<std::string, std::string> metadata;

    void write(std::ostream& os) const {
        for (const auto& [k, v] : metadata) os << "# " << k << " " << v << "\n";
        os << "dim " << dim() << "\n";
        os << "box";
        for (int i = 0; i < dim(); ++i) os << " " << fmt(box_.lo[i]) << " " << fmt(box_.hi[i]);
        os << "\nresolution";
        for (int r : res_) os << " " << r;
        os << "\n";
        if (lambda) os << "lambda " << fmt(*lambda) << "\n";
        if (clamped_marker) os << "clamped " << fmt(*clamped_marker) << "\n";
        for (double v : values_) os << fmt(v) << "\n";
    }

    static GridFunction read(std::istream& is) {
        std::string line;
        int d = 0;
        Box box;
        std::vector<int> res;
        std::optional<double> lam, marker;
        std::map<std::string, std::string> meta;
        std::vector<double> vals;
        bool header = true;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            if (line[0] == '#') {
                std::istringstream ls(line.substr(1));
                std::string k, rest;
                ls >> k;
                std::getline(ls >> std::ws, rest);
                if (!k.empty()) meta[k] = rest;
                continue;
            }
            std::istringstream ls(line);
            if (header) {
                std::string key;
                ls >> key;
                if (key == "dim") {
                    ls >> d;
                    if (d < 1 || d > 3) throw ConfigError("grid file: dim must be 1, 2 or 3");
                    continue;
                }
                if (key == "box") {
                    box.lo.resize(d);
                    box.hi.resize(d);
                    for (int i = 0; i < d; ++i) ls >> box.lo[i] >> box.hi[i];
                    if (!ls) throw ConfigError("grid file: bad box line");
                    continue;
                }
                if (key == "resolution") {
                    res.resize(d);
                    for (int i = 0; i < d; ++i) ls >> res[i];
                    if (!ls) throw ConfigError("grid file: bad resolution line");
                    continue;
                }
                if (key == "lambda") {
                    double l;
                    ls >> l;
                    lam = l;
                    continue;
                }
                if (key == "clamped") {
                    double l;
                    ls >> l;
                    marker = l;
                    continue;
                }
                header = false;
            }
            std::istringstream vs(line);
            double v;
            if (!(vs >> v)) throw ConfigError("grid file: bad value line '" + line + "'");
            vals.push_back(v);
        }
        if (d == 0 || res.empty()) throw ConfigError("grid file: missing dim/box/resolution header");
        GridFunction g(box, res);
        if (vals.size() != g.size())
            throw ConfigError("grid file: expected " + std::to_string(g.size()) + " values, found " +
                              std::to_string(vals.size()));
        g.set_values(std::move(vals));
        g.lambda = lam;
        g.clamped_marker = marker;
        g.metadata = std::move(meta);
        return g;
    }

    static std::string fmt(double v) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return buf;
    }

private:
    void locate(const Vec& x, int* base, double* frac) const {
        for (int i = 0; i < dim(); ++i) {
            double h = spacing(i);
            double u = (std::clamp(x[i], box_.lo[i], box_.hi[i]) - box_.lo[i]) / h;
            double r = std::round(u);
            if (std::fabs(u - r) < 1e-10) u = r;
            int k = static_cast<int>(std::floor(u));
            k = std::clamp(k, 0, res_[i] - 2);
            base[i] = k;
            frac[i] = std::clamp(u - k, 0.0, 1.0);
        }
    }

    void recompute_lipschitz() {
        double acc = 0.0;
        for (int axis = 0; axis < dim(); ++axis) {
            double h = spacing(axis);
            double m = 0.0;
            for (std::size_t f = 0; f < size(); ++f) {
                auto idx = multi_index(f);
                if (idx[axis] + 1 >= res_[axis]) continue;
                m = std::max(m, std::fabs(values_[f + strides_[axis]] - values_[f]) / h);
            }
            acc += m * m;
        }
        lipschitz_ = std::sqrt(acc);
    }

    Box box_;
    std::vector<int> res_;
    std::vector<std::size_t> strides_;
    std::vector<double> values_;
    double lipschitz_ = 0.0;
};

}  // namespace hjsing
