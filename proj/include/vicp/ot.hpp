#pragma once

#include <Eigen/Dense>

#include "vicp/errors.hpp"

namespace vicp::ot {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct IPOTParams {
    double beta = 1.0;
    int outer_iters = 50;
    int inner_iters = 1;
    double marginal_tol = 1e-4;
    void validate() const {
        if (beta <= 0.0) throw ConfigError("ipot beta must be positive");
        if (outer_iters < 1 || inner_iters < 1) throw ConfigError("ipot iteration counts must be >= 1");
        if (marginal_tol <= 0.0) throw ConfigError("ipot marginal_tol must be positive");
    }
};

struct TransportPlan {
    Mat T;
    Vec row_marginal;  // target a
    Vec col_marginal;  // target b
    double marginal_violation = 0.0;  // inf-norm over both constraint sets
    bool converged = true;            // marginal_violation <= tol at return
};

struct OTResult {
    double distance = 0.0;
    TransportPlan plan;
};

// Cost matrix 1 - cosine(F_i[u], F_j[v]) on L2-normalized rows; entries in [0, 2].
Mat cosine_cost(const Mat& fi, const Mat& fj);

// Inexact proximal point OT with uniform marginals over a precomputed cost.
OTResult ipot(const Mat& cost, const IPOTParams& params);

// Convenience: cosine cost + IPOT.
OTResult ot_distance(const Mat& fi, const Mat& fj, const IPOTParams& params);

// Exact minimum over permutation plans; n = m <= 6, uniform marginals.
double ot_bruteforce(const Mat& fi, const Mat& fj);
double ot_bruteforce_cost(const Mat& cost);

// Log-domain entropic OT; independent of the IPOT path.
TransportPlan sinkhorn_reference(const Mat& cost, const Vec& a, const Vec& b, double epsilon,
                                 int iters);
double plan_cost(const TransportPlan& plan, const Mat& cost);

}  // namespace vicp::ot
