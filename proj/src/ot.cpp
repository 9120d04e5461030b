#include "vicp/ot.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace vicp::ot {

namespace {

double marginal_violation(const Mat& T, const Vec& a, const Vec& b) {
    const double r = (T.rowwise().sum() - a).cwiseAbs().maxCoeff();
    const double c = (T.colwise().sum().transpose() - b).cwiseAbs().maxCoeff();
    return std::max(r, c);
}

// Rounds a near-feasible nonnegative plan onto the transport polytope:
// scale rows and columns down where they overshoot, then distribute the
// leftover mass as a rank-one correction. Marginals become exact up to
// floating-point rounding.
void round_to_polytope(Mat& T, const Vec& a, const Vec& b) {
    Vec r = T.rowwise().sum();
    for (Eigen::Index i = 0; i < T.rows(); ++i)
        if (r(i) > a(i) && r(i) > 0.0) T.row(i) *= a(i) / r(i);
    Vec c = T.colwise().sum().transpose();
    for (Eigen::Index j = 0; j < T.cols(); ++j)
        if (c(j) > b(j) && c(j) > 0.0) T.col(j) *= b(j) / c(j);
    Vec ea = (a - T.rowwise().sum()).cwiseMax(0.0);
    Vec eb = (b - Vec(T.colwise().sum().transpose())).cwiseMax(0.0);
    const double mass = ea.sum();
    if (mass > 0.0) T += (ea * eb.transpose()) / mass;
}

}  // namespace

Mat cosine_cost(const Mat& fi, const Mat& fj) {
    if (fi.cols() != fj.cols()) throw ShapeError("cosine_cost: feature width mismatch");
    if (fi.rows() < 1 || fj.rows() < 1) throw ShapeError("cosine_cost: empty feature set");
    if (!fi.allFinite() || !fj.allFinite()) throw NumericError("cosine_cost: non-finite features");
    Mat a = fi, b = fj;
    for (Eigen::Index i = 0; i < a.rows(); ++i) a.row(i) /= std::max(a.row(i).norm(), 1e-12);
    for (Eigen::Index i = 0; i < b.rows(); ++i) b.row(i) /= std::max(b.row(i).norm(), 1e-12);
    Mat c = Mat::Ones(a.rows(), b.rows()) - a * b.transpose();
    return c.cwiseMax(0.0).cwiseMin(2.0);
}

OTResult ipot(const Mat& cost, const IPOTParams& params) {
    params.validate();
    if (!cost.allFinite()) throw NumericError("ipot: non-finite cost matrix");
    const Eigen::Index n = cost.rows(), m = cost.cols();
    const Vec a = Vec::Constant(n, 1.0 / static_cast<double>(n));
    const Vec b = Vec::Constant(m, 1.0 / static_cast<double>(m));

    const Mat G = (-cost / params.beta).array().exp();
    Mat T = Mat::Constant(n, m, 1.0 / static_cast<double>(n * m));
    Vec sigma = Vec::Constant(m, 1.0 / static_cast<double>(m));

    constexpr double kFloor = 1e-300;
    for (int it = 0; it < params.outer_iters; ++it) {
        const Mat Q = G.cwiseProduct(T);
        Vec delta = Vec::Zero(n);
        for (int inner = 0; inner < params.inner_iters; ++inner) {
            delta = a.array() / (Q * sigma).array().max(kFloor);
            sigma = b.array() / (Q.transpose() * delta).array().max(kFloor);
        }
        T = delta.asDiagonal() * Q * sigma.asDiagonal();
    }

    // Finish the last proximal subproblem to the requested feasibility: the
    // single inner scaling leaves a small row-marginal residual.
    for (int it = 0; it < 500 && marginal_violation(T, a, b) > params.marginal_tol; ++it) {
        Vec d = a.array() / T.rowwise().sum().array().max(kFloor);
        T = d.asDiagonal() * T;
        Vec s = b.array() / T.colwise().sum().transpose().array().max(kFloor);
        T = T * s.asDiagonal();
    }

    OTResult out;
    // converged reports the solver's own state; the returned plan is then
    // rounded exactly onto the polytope.
    out.plan.converged = marginal_violation(T, a, b) <= params.marginal_tol;
    round_to_polytope(T, a, b);
    out.plan.T = T;
    out.plan.row_marginal = a;
    out.plan.col_marginal = b;
    out.plan.marginal_violation = marginal_violation(T, a, b);
    out.distance = (T.cwiseProduct(cost)).sum();
    return out;
}

OTResult ot_distance(const Mat& fi, const Mat& fj, const IPOTParams& params) {
    return ipot(cosine_cost(fi, fj), params);
}

double ot_bruteforce_cost(const Mat& cost) {
    const Eigen::Index n = cost.rows();
    if (n != cost.cols()) throw OracleError("ot_bruteforce: requires n == m");
    if (n < 1 || n > 6) throw OracleError("ot_bruteforce: n must be in [1, 6]");
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double c = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) c += cost(i, perm[static_cast<std::size_t>(i)]);
        best = std::min(best, c / static_cast<double>(n));
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

double ot_bruteforce(const Mat& fi, const Mat& fj) {
    if (fi.rows() != fj.rows()) throw OracleError("ot_bruteforce: requires n == m");
    return ot_bruteforce_cost(cosine_cost(fi, fj));
}

TransportPlan sinkhorn_reference(const Mat& cost, const Vec& a, const Vec& b, double epsilon,
                                 int iters) {
    if (epsilon <= 0.0) throw ConfigError("sinkhorn epsilon must be positive");
    if (a.size() != cost.rows() || b.size() != cost.cols())
        throw ShapeError("sinkhorn: marginal sizes must match the cost matrix");
    const Eigen::Index n = cost.rows(), m = cost.cols();
    const Vec log_a = a.array().log();
    const Vec log_b = b.array().log();

    Vec f = Vec::Zero(n), g = Vec::Zero(m);
    auto lse_rows = [&](const Mat& M) {  // log-sum-exp over each row
        Vec out(M.rows());
        for (Eigen::Index i = 0; i < M.rows(); ++i) {
            const double mx = M.row(i).maxCoeff();
            out(i) = mx + std::log((M.row(i).array() - mx).exp().sum());
        }
        return out;
    };

    // Epsilon scaling: anneal from a coarse regularizer down to the target,
    // warm-starting the potentials. Plain iteration at small epsilon stalls.
    std::vector<double> levels{epsilon};
    while (levels.back() * 2.0 < 1.0) levels.push_back(levels.back() * 2.0);
    std::reverse(levels.begin(), levels.end());

    auto plan_matrix = [&](double eps) {
        return Mat(((f.replicate(1, m) + g.transpose().replicate(n, 1) - cost) / eps).array().exp());
    };
    auto run_level = [&](double eps, int level_iters, bool check_stop) {
        for (int it = 0; it < level_iters; ++it) {
            Mat K = ((f.replicate(1, m) + g.transpose().replicate(n, 1) - cost) / eps);
            f += eps * (log_a - lse_rows(K));
            K = ((f.replicate(1, m) + g.transpose().replicate(n, 1) - cost) / eps);
            g += eps * (log_b - lse_rows(K.transpose()));
            if (check_stop && (it % 10 == 9 || it == level_iters - 1)) {
                if (marginal_violation(plan_matrix(eps), a, b) <= 1e-12) return;
            }
        }
    };
    for (std::size_t li = 0; li + 1 < levels.size(); ++li) run_level(levels[li], 200, false);
    run_level(epsilon, iters, true);
    Mat T = plan_matrix(epsilon);
    round_to_polytope(T, a, b);

    TransportPlan plan;
    plan.T = std::move(T);
    plan.row_marginal = a;
    plan.col_marginal = b;
    plan.marginal_violation = marginal_violation(plan.T, a, b);
    plan.converged = true;
    return plan;
}

double plan_cost(const TransportPlan& plan, const Mat& cost) {
    return (plan.T.cwiseProduct(cost)).sum();
}

}  // namespace vicp::ot
