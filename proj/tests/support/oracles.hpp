#pragma once

// Test-only oracles: central finite differences against tape gradients, and
// small statistics helpers. Independent of the library's backward pass.

#include <cmath>
#include <functional>
#include <vector>

#include "plaid/core.hpp"

namespace oracles {

// Central-difference gradient of scalar_fn w.r.t. every entry of m,
// perturbing in place. scalar_fn must re-read m on every call.
template <class Real, class F>
plaid::Mat<double> fd_grad(plaid::Mat<Real>& m, F scalar_fn, double h = 1e-5) {
    plaid::Mat<double> g(m.rows, m.cols);
    for (size_t i = 0; i < m.size(); ++i) {
        const Real orig = m.a[i];
        const double step = h * std::max(1.0, std::fabs(static_cast<double>(orig)));
        m.a[i] = static_cast<Real>(static_cast<double>(orig) + step);
        const double fp = scalar_fn();
        m.a[i] = static_cast<Real>(static_cast<double>(orig) - step);
        const double fm = scalar_fn();
        m.a[i] = orig;
        g.a[i] = (fp - fm) / (2.0 * step);
    }
    return g;
}

// max |a-b| normalized by the gradient scale
template <class Real>
double grad_rel_error(const plaid::Mat<Real>& analytic, const plaid::Mat<double>& fd) {
    double scale = 1e-8, worst = 0;
    for (size_t i = 0; i < fd.size(); ++i) {
        scale = std::max(scale, std::fabs(static_cast<double>(analytic.a[i])));
        scale = std::max(scale, std::fabs(fd.a[i]));
    }
    for (size_t i = 0; i < fd.size(); ++i)
        worst = std::max(worst, std::fabs(static_cast<double>(analytic.a[i]) - fd.a[i]));
    return worst / scale;
}

struct MeanVar {
    double mean{0};
    double var{0};
    long long n{0};
    void add(double v) {
        ++n;
        const double d = v - mean;
        mean += d / n;
        var += d * (v - mean);
    }
    double variance() const { return n > 1 ? var / (n - 1) : 0.0; }
    double std_err() const { return n > 1 ? std::sqrt(variance() / n) : 0.0; }
};

}  // namespace oracles
