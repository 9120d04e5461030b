#include <doctest.h>

#include <random>

#include "test_util.hpp"
#include "vicp/losses.hpp"

using namespace vicp;
using ag::Mat;
using ag::Var;
using test_util::random_unit_rows;

namespace {

// Builds a unit-row matrix whose row i has a prescribed cosine against the
// corresponding row of `base`, using an orthogonal direction.
Mat with_cosine(const Mat& base, const std::vector<double>& cosines, std::mt19937_64& rng) {
    Mat out(base.rows(), base.cols());
    for (Eigen::Index i = 0; i < base.rows(); ++i) {
        Eigen::RowVectorXd r = test_util::random_mat(1, base.cols(), rng).row(0);
        r -= r.dot(base.row(i)) * base.row(i);
        r.normalize();
        const double c = cosines[static_cast<std::size_t>(i)];
        out.row(i) = c * base.row(i) + std::sqrt(1.0 - c * c) * r;
    }
    return out;
}

}  // namespace

TEST_CASE("triplet loss matches the margin arithmetic") {
    std::mt19937_64 rng(1);
    Mat a = random_unit_rows(2, 16, rng);
    Mat p = with_cosine(a, {0.9, 0.5}, rng);
    Mat n = with_cosine(a, {0.3, 0.6}, rng);

    // Row 0: max(0, 0.1 - 0.9 + 0.3) = 0. Row 1: max(0, 0.1 - 0.5 + 0.6) = 0.2.
    Var loss = losses::triplet_loss(ag::constant(a), ag::constant(p), ag::constant(n), 0.1);
    CHECK(loss.value()(0, 0) == doctest::Approx(0.2).epsilon(1e-9));

    losses::LossWeights w;
    CHECK(w.margin_alpha == 0.1);  // library default mirrors the training recipe

    Mat bad = a;
    bad.row(0) *= 2.0;
    CHECK_THROWS_AS(
        losses::triplet_loss(ag::constant(bad), ag::constant(p), ag::constant(n), 0.1),
        NumericError);
}

TEST_CASE("triplet loss is zero iff every margin is satisfied") {
    std::mt19937_64 rng(2);
    Mat a = random_unit_rows(4, 12, rng);
    Mat p = with_cosine(a, {0.9, 0.8, 0.95, 0.7}, rng);
    Mat n = with_cosine(a, {0.2, 0.1, 0.3, 0.15}, rng);
    CHECK(losses::triplet_loss(ag::constant(a), ag::constant(p), ag::constant(n), 0.3).value()(0, 0) ==
          0.0);
    // Violate one margin.
    Mat n2 = with_cosine(a, {0.2, 0.85, 0.3, 0.15}, rng);
    CHECK(losses::triplet_loss(ag::constant(a), ag::constant(p), ag::constant(n2), 0.3).value()(0, 0) >
          0.0);
}

TEST_CASE("triplet loss gradient matches finite differences at non-kink points") {
    std::mt19937_64 rng(3);
    int checked = 0;
    for (int seed = 0; seed < 25 && checked < 20; ++seed) {
        Var a = ag::leaf(random_unit_rows(3, 8, rng), true);
        Var p = ag::leaf(random_unit_rows(3, 8, rng), true);
        Var n = ag::leaf(random_unit_rows(3, 8, rng), true);
        const double alpha = 0.3;

        // Skip draws with any margin near the hinge kink.
        bool kink = false;
        for (Eigen::Index i = 0; i < 3; ++i) {
            const double m = alpha - a.value().row(i).dot(p.value().row(i)) +
                             a.value().row(i).dot(n.value().row(i));
            if (std::abs(m) < 1e-3) kink = true;
        }
        if (kink) continue;
        ++checked;

        // FD perturbations break unit norm by O(h); widen the tolerance only.
        auto build = [&] { return losses::triplet_loss(a, p, n, alpha, 1e-2); };
        auto eval = [&] { return build().value()(0, 0); };
        for (Var leaf : {a, p, n}) {
            auto grad_of = [&] {
                Var loss = build();
                ag::backward(loss);
                return leaf.node()->grad_live ? Mat(leaf.grad()) : Mat(Mat::Zero(3, 8));
            };
            CHECK(test_util::max_grad_rel_err(eval, grad_of, leaf, 1e-6) < 1e-4);
        }
    }
    CHECK(checked >= 20);
}

namespace {

// Gap between the best and second-best permutation plans. The OT cost is
// nondifferentiable where two plans tie, so gradient checks sample away from
// ties, the same way the triplet check avoids hinge kinks.
double permutation_gap(const Mat& fi, const Mat& fj) {
    Mat c = ot::cosine_cost(fi, fj);
    std::vector<int> perm(static_cast<std::size_t>(c.rows()));
    std::iota(perm.begin(), perm.end(), 0);
    double best = 1e9, second = 1e9;
    do {
        double s = 0.0;
        for (Eigen::Index i = 0; i < c.rows(); ++i) s += c(i, perm[static_cast<std::size_t>(i)]);
        s /= static_cast<double>(c.rows());
        if (s < best) {
            second = best;
            best = s;
        } else if (s < second) {
            second = s;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return second - best;
}

}  // namespace

TEST_CASE("ot envelope gradient matches finite differences at tight convergence") {
    std::mt19937_64 rng(4);
    ot::IPOTParams params;
    params.outer_iters = 4000;
    params.marginal_tol = 1e-9;
    int checked = 0;
    for (int attempt = 0; attempt < 400 && checked < 20; ++attempt) {
        Var fi = ag::leaf(test_util::random_mat(3, 6, rng), true);
        Var fj = ag::leaf(test_util::random_mat(3, 6, rng), true);
        if (permutation_gap(fi.value(), fj.value()) < 0.05) continue;
        ++checked;
        auto build = [&] { return losses::ot_distance_var(fi, fj, params); };
        auto eval = [&] { return build().value()(0, 0); };
        for (Var leaf : {fi, fj}) {
            auto grad_of = [&] {
                Var loss = build();
                ag::backward(loss);
                return leaf.grad();
            };
            CHECK(test_util::max_grad_rel_err(eval, grad_of, leaf, 1e-5, 1e-2) < 1e-3);
        }
    }
    CHECK(checked >= 20);
}

TEST_CASE("patch align loss: identity positives vanish, hinge caps negatives") {
    std::mt19937_64 rng(5);
    ot::IPOTParams params;
    params.outer_iters = 2000;
    losses::LossWeights w;
    w.align_margin = 0.5;

    Mat f = random_unit_rows(5, 8, rng);
    // Positive pair with identical features contributes ~0.
    std::vector<losses::AlignPair> pos = {{ag::constant(f), ag::constant(f), 1}};
    CHECK(losses::patch_align_loss(pos, w, params).value()(0, 0) <= 1e-6);

    // A negative pair with D >= margin contributes 0 in hinged mode.
    Mat g = -f;  // cosine -1 against f: D_OT = 2
    std::vector<losses::AlignPair> neg = {{ag::constant(f), ag::constant(g), 0}};
    CHECK(losses::patch_align_loss(neg, w, params).value()(0, 0) == 0.0);

    // Literal mode reproduces the signed form: one negative pair gives -D.
    losses::LossWeights lit = w;
    lit.align_mode = "literal";
    ot::OTResult diag;
    Var d = losses::ot_distance_var(ag::constant(f), ag::constant(g), params, &diag);
    const double lit_loss = losses::patch_align_loss(neg, lit, params).value()(0, 0);
    CHECK(lit_loss == doctest::Approx(-d.value()(0, 0)).epsilon(1e-12));
    CHECK(lit_loss < 0.0);

    CHECK_THROWS_AS(losses::patch_align_loss({}, w, params), ProtocolError);
}

TEST_CASE("patch align gradient (hinged, active terms) matches finite differences") {
    std::mt19937_64 rng(6);
    ot::IPOTParams params;
    params.outer_iters = 4000;
    params.marginal_tol = 1e-9;
    losses::LossWeights w;
    w.align_margin = 1.5;  // keep the negative-hinge active for random unit rows

    int checked = 0;
    for (int attempt = 0; attempt < 400 && checked < 20; ++attempt) {
        Var fi = ag::leaf(test_util::random_mat(3, 6, rng), true);
        Var fj = ag::leaf(test_util::random_mat(3, 6, rng), true);
        Var fk = ag::leaf(test_util::random_mat(3, 6, rng), true);
        if (permutation_gap(fi.value(), fj.value()) < 0.05) continue;
        if (permutation_gap(fi.value(), fk.value()) < 0.05) continue;
        // Stay away from the hinge kink of the negative term.
        const double d_neg = losses::ot_distance_var(fi, fk, params).value()(0, 0);
        if (std::abs(w.align_margin - d_neg) < 0.05) continue;
        ++checked;
        auto build = [&] {
            std::vector<losses::AlignPair> pairs = {{fi, fj, 1}, {fi, fk, 0}};
            return losses::patch_align_loss(pairs, w, params);
        };
        auto eval = [&] { return build().value()(0, 0); };
        for (Var leaf : {fi, fj, fk}) {
            auto grad_of = [&] {
                Var loss = build();
                ag::backward(loss);
                return leaf.grad();
            };
            CHECK(test_util::max_grad_rel_err(eval, grad_of, leaf, 1e-5, 1e-2) < 1e-3);
        }
    }
    CHECK(checked >= 20);
}

TEST_CASE("total loss is the stated weighted sum and validates components") {
    losses::LossWeights w;
    w.lambda_icl = 1.0;
    w.lambda_align = 0.1;
    Var id = ag::constant(Mat::Constant(1, 1, 1.0));
    Var icl = ag::constant(Mat::Constant(1, 1, 2.0));
    Var align = ag::constant(Mat::Constant(1, 1, 3.0));
    CHECK(losses::total_loss(id, icl, align, w).value()(0, 0) == doctest::Approx(3.3));

    // Zero weights degenerate to L_ID alone.
    losses::LossWeights w0 = w;
    w0.lambda_icl = 0.0;
    w0.lambda_align = 0.0;
    CHECK(losses::total_loss(id, icl, align, w0).value()(0, 0) == doctest::Approx(1.0));
    // Absent components behave like the corresponding ablation rows.
    CHECK(losses::total_loss(id, icl, Var(), w).value()(0, 0) == doctest::Approx(3.0));

    Var bad = ag::constant(Mat::Constant(1, 1, std::nan("")));
    CHECK_THROWS_WITH_AS(losses::total_loss(id, bad, align, w), doctest::Contains("l_icl"),
                         NumericError);
}

TEST_CASE("total loss is linear in each component") {
    losses::LossWeights w;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int trial = 0; trial < 20; ++trial) {
        const double x = u(rng), y = u(rng), z = u(rng), s = u(rng);
        auto val = [&](double a, double b, double c) {
            return losses::total_loss(ag::constant(Mat::Constant(1, 1, a)),
                                      ag::constant(Mat::Constant(1, 1, b)),
                                      ag::constant(Mat::Constant(1, 1, c)), w)
                .value()(0, 0);
        };
        CHECK(val(x + s, y, z) - val(x, y, z) == doctest::Approx(s).epsilon(1e-9));
        CHECK(val(x, y + s, z) - val(x, y, z) == doctest::Approx(w.lambda_icl * s).epsilon(1e-9));
        CHECK(val(x, y, z + s) - val(x, y, z) == doctest::Approx(w.lambda_align * s).epsilon(1e-9));
    }
}
