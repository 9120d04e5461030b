#pragma once

#include <string>
#include <vector>

#include "vicp/autograd.hpp"
#include "vicp/ot.hpp"

namespace vicp::losses {

using ag::Mat;
using ag::Var;

struct LossWeights {
    double margin_alpha = 0.1;
    double lambda_icl = 1.0;
    double lambda_align = 0.1;
    double align_margin = 0.5;
    std::string align_mode = "hinged";  // "hinged" | "literal"
    void validate() const {
        if (margin_alpha <= 0.0) throw ConfigError("margin_alpha must be positive");
        if (lambda_icl < 0.0 || lambda_align < 0.0) throw ConfigError("lambdas must be >= 0");
        if (align_mode != "hinged" && align_mode != "literal")
            throw ConfigError("align_mode must be 'hinged' or 'literal'");
    }
};

// Margin hinge over anchor/positive/negative cosine similarities. Inputs are
// B x d matrices of unit rows (checked to `norm_tol`).
Var triplet_loss(const Var& anchors, const Var& positives, const Var& negatives, double alpha,
                 double norm_tol = 1e-4);

// OT distance with the plan solved outside the graph and treated as constant
// (envelope gradient); differentiable with respect to both feature sets
// through the cosine cost.
Var ot_distance_var(const Var& fi, const Var& fj, const ot::IPOTParams& params,
                    ot::OTResult* diagnostics = nullptr);

struct AlignPair {
    Var fi, fj;  // patch features from the same forward pass
    int label;   // 1 same instance, 0 different
};

// Hinged mode: sum of y * D + (1-y) * max(0, margin - D).
// Literal mode: sum of y * D - (1-y) * D (unbounded below).
Var patch_align_loss(const std::vector<AlignPair>& pairs, const LossWeights& weights,
                     const ot::IPOTParams& params);

// L_total = L_ID + lambda_icl * L_ICL + lambda_align * L_align. Invalid Vars
// stand for absent components and contribute zero.
Var total_loss(const Var& l_id, const Var& l_icl, const Var& l_align, const LossWeights& weights);

}  // namespace vicp::losses
