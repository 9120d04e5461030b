#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vicp/errors.hpp"

// Reverse-mode autodiff over Eigen double matrices. A Var is a handle to a
// graph node; ops build the graph eagerly and backward() runs a topological
// sweep. Gradients are only materialized for nodes on a path to a leaf with
// requires_grad, so frozen weights cost nothing beyond the forward pass.
namespace vicp::ag {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct Node {
    Mat value;
    Mat grad;  // allocated lazily by backward()
    bool requires_grad = false;
    bool grad_live = false;  // grad has been zero-initialized this sweep
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;  // scatter node.grad into parents
    std::string name;                        // set for named parameters

    Eigen::Index rows() const { return value.rows(); }
    Eigen::Index cols() const { return value.cols(); }
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}
    Var(const Mat& v, bool requires_grad = false) : node_(std::make_shared<Node>()) {
        node_->value = v;
        node_->requires_grad = requires_grad;
    }

    bool valid() const { return node_ != nullptr; }
    const Mat& value() const { return node_->value; }
    Mat& value_mut() { return node_->value; }
    const Mat& grad() const { return node_->grad; }
    bool requires_grad() const { return node_->requires_grad; }
    Eigen::Index rows() const { return node_->value.rows(); }
    Eigen::Index cols() const { return node_->value.cols(); }
    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Leaf constructors.
Var constant(const Mat& v);
Var leaf(const Mat& v, bool requires_grad, const std::string& name = "");

// Core ops. Shapes follow row-major ML convention: rows are tokens/examples.
Var matmul(const Var& a, const Var& b);     // A * B
Var matmul_nt(const Var& a, const Var& b);  // A * B^T
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var add_rowvec(const Var& a, const Var& r);  // r is 1 x cols, broadcast over rows
Var scale(const Var& a, double s);
Var add_const(const Var& a, double c);
Var mul_const(const Var& a, const Mat& c);  // elementwise by a constant matrix
Var transpose(const Var& a);

Var rows(const Var& a, Eigen::Index r0, Eigen::Index n);
Var cols(const Var& a, Eigen::Index c0, Eigen::Index n);
Var vcat(const std::vector<Var>& parts);
Var hcat(const std::vector<Var>& parts);

Var softmax_rows(const Var& a);  // optionally pass an additive mask beforehand
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var gelu(const Var& a);  // tanh approximation, smooth everywhere
Var hinge(const Var& a);  // max(0, x) elementwise; subgradient 1{x>0}
Var l2_normalize_rows(const Var& a, double eps = 1e-12);
Var row_dot(const Var& a, const Var& b);  // n x 1 vector of per-row dots
Var sum_all(const Var& a);
Var mean_all(const Var& a);
// Sum of 2-class cross entropies: logits n x k, one target index per row.
Var cross_entropy_rows(const Var& logits, const std::vector<int>& targets);

// Runs the backward sweep from a 1x1 scalar root. Gradients of all reachable
// requires_grad nodes are zeroed first, then accumulated.
void backward(const Var& root);

inline void check_finite(const Mat& m, const char* what) {
    if (!m.allFinite()) throw NumericError(std::string(what) + " contains non-finite values");
}

}  // namespace vicp::ag
