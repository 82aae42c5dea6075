#pragma once

#include <cmath>
#include <functional>

#include "metamirror/rng.hpp"
#include "metamirror/tensor.hpp"

namespace metamirror::testing {

// Relative error with a unit floor in the denominator, the usual gradcheck
// convention: for O(1) quantities this behaves like absolute error, for
// large ones like relative error.
inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
}

using ScalarFn = std::function<double(const Tensor&)>;

// Central finite difference of f at x along coordinate i.
inline double central_diff(const ScalarFn& f, Tensor x, Index i,
                           double h = 1e-5) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f(x);
    x[i] = orig - h;
    const double fm = f(x);
    return (fp - fm) / (2.0 * h);
}

// Full finite-difference gradient; the independent oracle used against
// reverse-mode results throughout the tests.
inline Tensor fd_gradient(const ScalarFn& f, const Tensor& x, double h = 1e-5) {
    Tensor g = Tensor::zeros(x.shape());
    for (Index i = 0; i < x.numel(); ++i) {
        g[i] = central_diff(f, x, i, h);
    }
    return g;
}

inline double max_rel_err(const Tensor& a, const Tensor& b) {
    double worst = 0.0;
    for (Index i = 0; i < a.numel(); ++i) {
        worst = std::max(worst, rel_err(a[i], b[i]));
    }
    return worst;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double worst = 0.0;
    for (Index i = 0; i < a.numel(); ++i) {
        worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    return worst;
}

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
    Tensor t = Tensor::zeros(shape);
    for (Index i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

}  // namespace metamirror::testing
