#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace hjsing {

/// Points, velocities and momenta live in R^n with n <= 3; storage stays on the stack.
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, 3, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, 3, 3>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Base of every numerical failure. CLI maps these to exit code 2.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NoConvergence : public NumericalError {
public:
    using NumericalError::NumericalError;
};
class NotConvex : public NumericalError {
public:
    using NumericalError::NumericalError;
};
class Overflow : public NumericalError {
public:
    using NumericalError::NumericalError;
};
class BlowUp : public NumericalError {
public:
    using NumericalError::NumericalError;
};
class BoundaryClipped : public NumericalError {
public:
    using NumericalError::NumericalError;
};
class DegenerateSample : public NumericalError {
public:
    using NumericalError::NumericalError;
};
class ConcavityFailure : public NumericalError {
public:
    using NumericalError::NumericalError;
};
class NonUniqueArgmax : public NumericalError {
public:
    using NumericalError::NumericalError;
};
class ScheduleStall : public NumericalError {
public:
    using NumericalError::NumericalError;
};
class NoMinimizer : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Raised for requests outside an operation's domain (wrong problem type, bad arguments).
class InvalidProblem : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed configuration or input files. CLI exit code 3.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Axis-aligned box [lo_i, hi_i].
struct Box {
    Vec lo;
    Vec hi;

    int dim() const { return static_cast<int>(lo.size()); }

    bool contains(const Vec& x, double slack = 0.0) const {
        for (int i = 0; i < dim(); ++i)
            if (x[i] < lo[i] - slack || x[i] > hi[i] + slack) return false;
        return true;
    }

    /// Distance from x to the nearest face, negative outside.
    double inner_margin(const Vec& x) const {
        double m = kInf;
        for (int i = 0; i < dim(); ++i) m = std::min({m, x[i] - lo[i], hi[i] - x[i]});
        return m;
    }

    Vec clamp(const Vec& x) const {
        Vec y = x;
        for (int i = 0; i < dim(); ++i) y[i] = std::clamp(y[i], lo[i], hi[i]);
        return y;
    }

    Box padded(double pad) const {
        Box b = *this;
        for (int i = 0; i < dim(); ++i) {
            b.lo[i] -= pad;
            b.hi[i] += pad;
        }
        return b;
    }

    void validate() const {
        if (lo.size() == 0 || lo.size() > 3 || lo.size() != hi.size())
            throw ConfigError("box dimension must be 1, 2 or 3");
        for (int i = 0; i < dim(); ++i)
            if (!(lo[i] < hi[i])) throw ConfigError("box has min >= max on axis " + std::to_string(i));
    }
};

inline Vec vec1(double a) {
    Vec v(1);
    v << a;
    return v;
}

inline Vec zeros(int n) { return Vec::Zero(n); }

}  // namespace hjsing
