#include "vicp/losses.hpp"

#include <cmath>

namespace vicp::losses {

Var triplet_loss(const Var& anchors, const Var& positives, const Var& negatives, double alpha,
                 double norm_tol) {
    if (alpha <= 0.0) throw ConfigError("triplet_loss: alpha must be positive");
    if (anchors.rows() != positives.rows() || anchors.rows() != negatives.rows() ||
        anchors.cols() != positives.cols() || anchors.cols() != negatives.cols())
        throw ShapeError("triplet_loss: anchor/positive/negative shapes differ");
    for (const Var* v : {&anchors, &positives, &negatives}) {
        for (Eigen::Index i = 0; i < v->rows(); ++i) {
            const double n = v->value().row(i).norm();
            if (std::abs(n - 1.0) > norm_tol)
                throw NumericError("triplet_loss: row " + std::to_string(i) +
                                   " is not unit-normalized (|x| = " + std::to_string(n) + ")");
        }
    }
    Var sim_p = ag::row_dot(anchors, positives);
    Var sim_n = ag::row_dot(anchors, negatives);
    Var margin = ag::add_const(ag::sub(sim_n, sim_p), alpha);  // alpha - sim_p + sim_n
    return ag::sum_all(ag::hinge(margin));
}

Var ot_distance_var(const Var& fi, const Var& fj, const ot::IPOTParams& params,
                    ot::OTResult* diagnostics) {
    ag::check_finite(fi.value(), "ot features (left)");
    ag::check_finite(fj.value(), "ot features (right)");
    Var a = ag::l2_normalize_rows(fi);
    Var b = ag::l2_normalize_rows(fj);
    Var cost = ag::add_const(ag::scale(ag::matmul_nt(a, b), -1.0), 1.0);  // 1 - A B^T
    ot::OTResult res = ot::ipot(cost.value(), params);
    if (diagnostics) *diagnostics = res;
    return ag::sum_all(ag::mul_const(cost, res.plan.T));  // plan frozen at convergence
}

Var patch_align_loss(const std::vector<AlignPair>& pairs, const LossWeights& weights,
                     const ot::IPOTParams& params) {
    weights.validate();
    if (pairs.empty()) throw ProtocolError("patch_align_loss: empty pair list");
    const bool hinged = weights.align_mode == "hinged";
    Var total;
    for (const auto& p : pairs) {
        if (p.label != 0 && p.label != 1) throw ConfigError("patch_align_loss: labels must be binary");
        Var d = ot_distance_var(p.fi, p.fj, params);
        Var term;
        if (p.label == 1) {
            term = d;
        } else if (hinged) {
            term = ag::hinge(ag::add_const(ag::scale(d, -1.0), weights.align_margin));
        } else {
            term = ag::scale(d, -1.0);
        }
        total = total.valid() ? ag::add(total, term) : term;
    }
    return total;
}

Var total_loss(const Var& l_id, const Var& l_icl, const Var& l_align, const LossWeights& weights) {
    weights.validate();
    auto check = [](const Var& v, const char* name) {
        if (v.valid() && !std::isfinite(v.value()(0, 0)))
            throw NumericError(std::string("total_loss: component ") + name + " is non-finite");
    };
    check(l_id, "l_id");
    check(l_icl, "l_icl");
    check(l_align, "l_align");

    Var total = l_id.valid() ? l_id : ag::constant(Mat::Zero(1, 1));
    if (l_icl.valid() && weights.lambda_icl != 0.0)
        total = ag::add(total, ag::scale(l_icl, weights.lambda_icl));
    if (l_align.valid() && weights.lambda_align != 0.0)
        total = ag::add(total, ag::scale(l_align, weights.lambda_align));
    return total;
}

}  // namespace vicp::losses
