#pragma once

// Shared helpers for the unit tests: finite-difference gradient checking and
// deterministic random matrices.

#include <Eigen/Dense>
#include <functional>
#include <random>

#include "vicp/autograd.hpp"

namespace test_util {

using vicp::ag::Mat;

inline Mat random_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> d(0.0, scale);
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = d(rng);
    return m;
}

inline Mat random_unit_rows(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
    Mat m = random_mat(r, c, rng);
    for (Eigen::Index i = 0; i < r; ++i) m.row(i) /= m.row(i).norm();
    return m;
}

// Central finite difference of a scalar-valued rebuildable computation with
// respect to one entry of a leaf's value.
inline double fd_entry(const std::function<double()>& eval, double* slot, double h = 1e-5) {
    const double orig = *slot;
    *slot = orig + h;
    const double fp = eval();
    *slot = orig - h;
    const double fm = eval();
    *slot = orig;
    return (fp - fm) / (2.0 * h);
}

// Max relative error between analytic and FD gradients for every entry of a
// leaf parameter. `eval` must rebuild the graph and return the scalar loss;
// `grad_of` must rebuild, run backward, and return the leaf's gradient.
inline double max_grad_rel_err(const std::function<double()>& eval,
                               const std::function<Mat()>& grad_of, vicp::ag::Var leaf,
                               double h = 1e-5, double denom_floor = 1.0) {
    Mat analytic = grad_of();
    double worst = 0.0;
    for (Eigen::Index i = 0; i < leaf.rows(); ++i) {
        for (Eigen::Index j = 0; j < leaf.cols(); ++j) {
            const double fd = fd_entry(eval, &leaf.node()->value(i, j), h);
            const double denom = std::max({denom_floor, std::abs(fd), std::abs(analytic(i, j))});
            worst = std::max(worst, std::abs(fd - analytic(i, j)) / denom);
        }
    }
    return worst;
}

}  // namespace test_util
