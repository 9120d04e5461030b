#include "vicp/autograd.hpp"

#include <cmath>
#include <unordered_set>

namespace vicp::ag {

namespace {

std::shared_ptr<Node> make_op(Mat value, std::vector<std::shared_ptr<Node>> parents,
                              std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents) {
        if (p->requires_grad) {
            n->requires_grad = true;
            break;
        }
    }
    if (n->requires_grad) n->backward_fn = std::move(backward_fn);
    return n;
}

// Accumulate g into p->grad, zero-initializing on first touch of the sweep.
void accum(const std::shared_ptr<Node>& p, const Mat& g) {
    if (!p->requires_grad) return;
    if (!p->grad_live) {
        p->grad = Mat::Zero(p->value.rows(), p->value.cols());
        p->grad_live = true;
    }
    p->grad += g;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
}

}  // namespace

Var constant(const Mat& v) { return Var(v, false); }

Var leaf(const Mat& v, bool requires_grad, const std::string& name) {
    Var out(v, requires_grad);
    out.node()->name = name;
    return out;
}

Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dims " + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()));
    auto pa = a.node(), pb = b.node();
    return Var(make_op(a.value() * b.value(), {pa, pb}, [pa, pb](Node& n) {
        if (pa->requires_grad) accum(pa, n.grad * pb->value.transpose());
        if (pb->requires_grad) accum(pb, pa->value.transpose() * n.grad);
    }));
}

Var matmul_nt(const Var& a, const Var& b) {
    if (a.cols() != b.cols())
        throw ShapeError("matmul_nt: inner dims " + std::to_string(a.cols()) + " vs " + std::to_string(b.cols()));
    auto pa = a.node(), pb = b.node();
    return Var(make_op(a.value() * b.value().transpose(), {pa, pb}, [pa, pb](Node& n) {
        if (pa->requires_grad) accum(pa, n.grad * pb->value);
        if (pb->requires_grad) accum(pb, n.grad.transpose() * pa->value);
    }));
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    auto pa = a.node(), pb = b.node();
    return Var(make_op(a.value() + b.value(), {pa, pb}, [pa, pb](Node& n) {
        accum(pa, n.grad);
        accum(pb, n.grad);
    }));
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    auto pa = a.node(), pb = b.node();
    return Var(make_op(a.value() - b.value(), {pa, pb}, [pa, pb](Node& n) {
        accum(pa, n.grad);
        if (pb->requires_grad) accum(pb, -n.grad);
    }));
}

Var hadamard(const Var& a, const Var& b) {
    require_same_shape(a, b, "hadamard");
    auto pa = a.node(), pb = b.node();
    return Var(make_op(a.value().cwiseProduct(b.value()), {pa, pb}, [pa, pb](Node& n) {
        if (pa->requires_grad) accum(pa, n.grad.cwiseProduct(pb->value));
        if (pb->requires_grad) accum(pb, n.grad.cwiseProduct(pa->value));
    }));
}

Var add_rowvec(const Var& a, const Var& r) {
    if (r.rows() != 1 || r.cols() != a.cols()) throw ShapeError("add_rowvec: bias must be 1 x cols");
    auto pa = a.node(), pr = r.node();
    Mat v = a.value();
    v.rowwise() += r.value().row(0);
    return Var(make_op(std::move(v), {pa, pr}, [pa, pr](Node& n) {
        accum(pa, n.grad);
        if (pr->requires_grad) accum(pr, n.grad.colwise().sum());
    }));
}

Var scale(const Var& a, double s) {
    auto pa = a.node();
    return Var(make_op(a.value() * s, {pa}, [pa, s](Node& n) { accum(pa, n.grad * s); }));
}

Var add_const(const Var& a, double c) {
    auto pa = a.node();
    return Var(make_op(a.value().array() + c, {pa}, [pa](Node& n) { accum(pa, n.grad); }));
}

Var mul_const(const Var& a, const Mat& c) {
    if (a.rows() != c.rows() || a.cols() != c.cols()) throw ShapeError("mul_const: shape mismatch");
    auto pa = a.node();
    Mat cc = c;
    return Var(make_op(a.value().cwiseProduct(c), {pa},
                       [pa, cc](Node& n) { accum(pa, n.grad.cwiseProduct(cc)); }));
}

Var transpose(const Var& a) {
    auto pa = a.node();
    return Var(make_op(a.value().transpose(), {pa}, [pa](Node& n) { accum(pa, n.grad.transpose()); }));
}

Var rows(const Var& a, Eigen::Index r0, Eigen::Index n) {
    if (r0 < 0 || n < 0 || r0 + n > a.rows()) throw ShapeError("rows: slice out of range");
    auto pa = a.node();
    return Var(make_op(a.value().middleRows(r0, n), {pa}, [pa, r0, n](Node& nd) {
        if (!pa->requires_grad) return;
        if (!pa->grad_live) {
            pa->grad = Mat::Zero(pa->value.rows(), pa->value.cols());
            pa->grad_live = true;
        }
        pa->grad.middleRows(r0, n) += nd.grad;
    }));
}

Var cols(const Var& a, Eigen::Index c0, Eigen::Index n) {
    if (c0 < 0 || n < 0 || c0 + n > a.cols()) throw ShapeError("cols: slice out of range");
    auto pa = a.node();
    return Var(make_op(a.value().middleCols(c0, n), {pa}, [pa, c0, n](Node& nd) {
        if (!pa->requires_grad) return;
        if (!pa->grad_live) {
            pa->grad = Mat::Zero(pa->value.rows(), pa->value.cols());
            pa->grad_live = true;
        }
        pa->grad.middleCols(c0, n) += nd.grad;
    }));
}

Var vcat(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("vcat: empty");
    Eigen::Index total = 0;
    const Eigen::Index c = parts[0].cols();
    for (const auto& p : parts) {
        if (p.cols() != c) throw ShapeError("vcat: column mismatch");
        total += p.rows();
    }
    Mat v(total, c);
    std::vector<std::shared_ptr<Node>> ps;
    std::vector<Eigen::Index> offs;
    ps.reserve(parts.size());
    Eigen::Index off = 0;
    for (const auto& p : parts) {
        v.middleRows(off, p.rows()) = p.value();
        ps.push_back(p.node());
        offs.push_back(off);
        off += p.rows();
    }
    return Var(make_op(std::move(v), ps, [ps, offs](Node& n) {
        for (std::size_t i = 0; i < ps.size(); ++i)
            if (ps[i]->requires_grad) accum(ps[i], n.grad.middleRows(offs[i], ps[i]->value.rows()));
    }));
}

Var hcat(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("hcat: empty");
    Eigen::Index total = 0;
    const Eigen::Index r = parts[0].rows();
    for (const auto& p : parts) {
        if (p.rows() != r) throw ShapeError("hcat: row mismatch");
        total += p.cols();
    }
    Mat v(r, total);
    std::vector<std::shared_ptr<Node>> ps;
    std::vector<Eigen::Index> offs;
    Eigen::Index off = 0;
    for (const auto& p : parts) {
        v.middleCols(off, p.cols()) = p.value();
        ps.push_back(p.node());
        offs.push_back(off);
        off += p.cols();
    }
    return Var(make_op(std::move(v), ps, [ps, offs](Node& n) {
        for (std::size_t i = 0; i < ps.size(); ++i)
            if (ps[i]->requires_grad) accum(ps[i], n.grad.middleCols(offs[i], ps[i]->value.cols()));
    }));
}

Var softmax_rows(const Var& a) {
    Mat p = a.value();
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        const double mx = p.row(i).maxCoeff();
        p.row(i) = (p.row(i).array() - mx).exp();
        p.row(i) /= p.row(i).sum();
    }
    auto pa = a.node();
    auto out = make_op(std::move(p), {pa}, nullptr);
    auto self = out.get();
    if (out->requires_grad)
        out->backward_fn = [pa, self](Node& n) {
            Mat dx(n.grad.rows(), n.grad.cols());
            for (Eigen::Index i = 0; i < n.grad.rows(); ++i) {
                const auto pr = self->value.row(i);
                const double s = n.grad.row(i).dot(pr);
                dx.row(i) = (n.grad.row(i).array() - s) * pr.array();
            }
            accum(pa, dx);
        };
    return Var(out);
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const Eigen::Index d = x.cols();
    if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d)
        throw ShapeError("layer_norm_rows: gamma/beta must be 1 x d");
    Mat xhat(x.rows(), d);
    Vec rstd(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double mu = x.value().row(i).mean();
        const double var = (x.value().row(i).array() - mu).square().mean();
        const double rs = 1.0 / std::sqrt(var + eps);
        rstd(i) = rs;
        xhat.row(i) = (x.value().row(i).array() - mu) * rs;
    }
    Mat y = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
            beta.value().row(0).array();
    auto px = x.node(), pg = gamma.node(), pb = beta.node();
    auto xh = std::make_shared<Mat>(std::move(xhat));
    auto rs = std::make_shared<Vec>(std::move(rstd));
    return Var(make_op(std::move(y), {px, pg, pb}, [px, pg, pb, xh, rs, d](Node& n) {
        if (pg->requires_grad) accum(pg, (n.grad.cwiseProduct(*xh)).colwise().sum());
        if (pb->requires_grad) accum(pb, n.grad.colwise().sum());
        if (px->requires_grad) {
            Mat dx(n.grad.rows(), d);
            for (Eigen::Index i = 0; i < n.grad.rows(); ++i) {
                Eigen::RowVectorXd dy = n.grad.row(i).cwiseProduct(pg->value.row(0));
                const double m1 = dy.mean();
                const double m2 = dy.cwiseProduct(xh->row(i)).mean();
                dx.row(i) = ((dy.array() - m1) - xh->row(i).array() * m2) * (*rs)(i);
            }
            accum(px, dx);
        }
    }));
}

Var gelu(const Var& a) {
    constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double c = 0.044715;
    const Mat& x = a.value();
    Mat inner = k * (x.array() + c * x.array().cube());
    Mat t = inner.array().tanh();
    Mat y = 0.5 * x.array() * (1.0 + t.array());
    auto pa = a.node();
    auto tc = std::make_shared<Mat>(std::move(t));
    return Var(make_op(std::move(y), {pa}, [pa, tc, k, c](Node& n) {
        const Mat& xv = pa->value;
        // d/dx [0.5 x (1 + tanh(u))], u = k(x + c x^3)
        Mat sech2 = 1.0 - tc->array().square();
        Mat du = k * (1.0 + 3.0 * c * xv.array().square());
        Mat d = 0.5 * (1.0 + tc->array()) + 0.5 * xv.array() * sech2.array() * du.array();
        accum(pa, n.grad.cwiseProduct(d));
    }));
}

Var hinge(const Var& a) {
    auto pa = a.node();
    return Var(make_op(a.value().cwiseMax(0.0), {pa}, [pa](Node& n) {
        Mat mask = (pa->value.array() > 0.0).cast<double>();
        accum(pa, n.grad.cwiseProduct(mask));
    }));
}

Var l2_normalize_rows(const Var& a, double eps) {
    Mat y(a.rows(), a.cols());
    Vec inv(a.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const double nrm = std::max(a.value().row(i).norm(), eps);
        inv(i) = 1.0 / nrm;
        y.row(i) = a.value().row(i) * inv(i);
    }
    auto pa = a.node();
    auto yc = std::make_shared<Mat>(y);
    auto ic = std::make_shared<Vec>(std::move(inv));
    return Var(make_op(std::move(y), {pa}, [pa, yc, ic](Node& n) {
        Mat dx(n.grad.rows(), n.grad.cols());
        for (Eigen::Index i = 0; i < n.grad.rows(); ++i) {
            const double gd = n.grad.row(i).dot(yc->row(i));
            dx.row(i) = (n.grad.row(i) - gd * yc->row(i)) * (*ic)(i);
        }
        accum(pa, dx);
    }));
}

Var row_dot(const Var& a, const Var& b) {
    require_same_shape(a, b, "row_dot");
    Mat y(a.rows(), 1);
    for (Eigen::Index i = 0; i < a.rows(); ++i) y(i, 0) = a.value().row(i).dot(b.value().row(i));
    auto pa = a.node(), pb = b.node();
    return Var(make_op(std::move(y), {pa, pb}, [pa, pb](Node& n) {
        if (pa->requires_grad) {
            Mat da = pb->value;
            da.array().colwise() *= n.grad.col(0).array();
            accum(pa, da);
        }
        if (pb->requires_grad) {
            Mat db = pa->value;
            db.array().colwise() *= n.grad.col(0).array();
            accum(pb, db);
        }
    }));
}

Var sum_all(const Var& a) {
    Mat y(1, 1);
    y(0, 0) = a.value().sum();
    auto pa = a.node();
    return Var(make_op(std::move(y), {pa}, [pa](Node& n) {
        accum(pa, Mat::Constant(pa->value.rows(), pa->value.cols(), n.grad(0, 0)));
    }));
}

Var mean_all(const Var& a) {
    const double inv = 1.0 / static_cast<double>(a.rows() * a.cols());
    return scale(sum_all(a), inv);
}

Var cross_entropy_rows(const Var& logits, const std::vector<int>& targets) {
    if (static_cast<Eigen::Index>(targets.size()) != logits.rows())
        throw ShapeError("cross_entropy_rows: one target per row required");
    const Eigen::Index k = logits.cols();
    for (int t : targets)
        if (t < 0 || t >= k) throw ShapeError("cross_entropy_rows: target out of range");
    double loss = 0.0;
    Mat probs(logits.rows(), k);
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double mx = logits.value().row(i).maxCoeff();
        Eigen::RowVectorXd e = (logits.value().row(i).array() - mx).exp();
        const double z = e.sum();
        probs.row(i) = e / z;
        loss += std::log(z) + mx - logits.value()(i, targets[static_cast<std::size_t>(i)]);
    }
    Mat y(1, 1);
    y(0, 0) = loss;
    auto pl = logits.node();
    auto pc = std::make_shared<Mat>(std::move(probs));
    auto tg = targets;
    return Var(make_op(std::move(y), {pl}, [pl, pc, tg](Node& n) {
        Mat d = *pc;
        for (Eigen::Index i = 0; i < d.rows(); ++i) d(i, tg[static_cast<std::size_t>(i)]) -= 1.0;
        accum(pl, n.grad(0, 0) * d);
    }));
}

void backward(const Var& root) {
    if (!root.valid() || root.rows() != 1 || root.cols() != 1)
        throw ShapeError("backward: root must be a 1x1 scalar");
    if (!root.requires_grad()) return;

    // Iterative post-order topological sort over the reachable graph.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    struct Frame {
        Node* n;
        std::size_t next_child;
    };
    std::vector<Frame> stack;
    stack.push_back({root.node().get(), 0});
    visited.insert(root.node().get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_child < f.n->parents.size()) {
            Node* c = f.n->parents[f.next_child++].get();
            if (c->requires_grad && !visited.count(c)) {
                visited.insert(c);
                stack.push_back({c, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    for (Node* n : order) n->grad_live = false;
    Node* r = root.node().get();
    r->grad = Mat::Ones(1, 1);
    r->grad_live = true;

    // order is post-order (root last); walk it backwards.
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (!n->grad_live || !n->backward_fn) continue;
        n->backward_fn(*n);
    }
}

}  // namespace vicp::ag
