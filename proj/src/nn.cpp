#include "vicp/nn.hpp"

#include <cmath>
#include <cstring>

namespace vicp::nn {

Mat randn(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = dist(rng);
    return m;
}

Var ParamStore::create(const std::string& name, Mat init, bool trainable) {
    if (params_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    Var v = ag::leaf(std::move(init), trainable, name);
    params_.emplace(name, v);
    order_.push_back(name);
    return v;
}

Var ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
}

bool ParamStore::has(const std::string& name) const { return params_.count(name) > 0; }

std::vector<Var> ParamStore::all() const {
    std::vector<Var> out;
    out.reserve(order_.size());
    for (const auto& n : order_) out.push_back(params_.at(n));
    return out;
}

std::vector<Var> ParamStore::trainable() const {
    std::vector<Var> out;
    for (const auto& n : order_) {
        const Var& v = params_.at(n);
        if (v.requires_grad()) out.push_back(v);
    }
    return out;
}

void ParamStore::freeze_all() {
    for (const auto& n : order_) {
        auto node = params_.at(n).node();
        node->requires_grad = false;
        node->grad_live = false;
        node->grad.resize(0, 0);
    }
    frozen_ = true;
}

void ParamStore::unfreeze_all() {
    for (const auto& n : order_) params_.at(n).node()->requires_grad = true;
    frozen_ = false;
}

std::map<std::string, Mat> ParamStore::snapshot() const {
    std::map<std::string, Mat> out;
    for (const auto& [k, v] : params_) out.emplace(k, v.value());
    return out;
}

void ParamStore::load(const std::map<std::string, Mat>& weights) {
    for (const auto& [k, m] : weights) {
        auto it = params_.find(k);
        if (it == params_.end()) throw ConfigError("load: unknown parameter " + k);
        if (it->second.rows() != m.rows() || it->second.cols() != m.cols())
            throw ShapeError("load: shape mismatch for " + k);
        it->second.node()->value = m;
    }
}

std::uint64_t ParamStore::content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& n : order_) {
        h = fnv1a64(n.data(), n.size(), h);
        const Mat& m = params_.at(n).value();
        h = fnv1a64(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()), h);
    }
    return h;
}

std::size_t ParamStore::parameter_count() const {
    std::size_t total = 0;
    for (const auto& [k, v] : params_) total += static_cast<std::size_t>(v.value().size());
    return total;
}

bool snapshots_identical(const std::map<std::string, Mat>& a, const std::map<std::string, Mat>& b) {
    if (a.size() != b.size()) return false;
    for (const auto& [k, m] : a) {
        auto it = b.find(k);
        if (it == b.end()) return false;
        const Mat& o = it->second;
        if (m.rows() != o.rows() || m.cols() != o.cols()) return false;
        if (std::memcmp(m.data(), o.data(), sizeof(double) * static_cast<std::size_t>(m.size())) != 0)
            return false;
    }
    return true;
}

std::uint64_t snapshot_hash(const std::map<std::string, Mat>& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [k, m] : s) {
        h = fnv1a64(k.data(), k.size(), h);
        h = fnv1a64(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()), h);
    }
    return h;
}

Linear::Linear(ParamStore& ps, const std::string& prefix, Eigen::Index in, Eigen::Index out,
               std::mt19937_64& rng) {
    // Fan-in scaled init keeps activations at unit order for small widths.
    W = ps.create(prefix + ".W", randn(in, out, rng, 1.0 / std::sqrt(static_cast<double>(in))));
    b = ps.create(prefix + ".b", Mat::Zero(1, out));
}

Var Linear::forward(const Var& x) const { return ag::add_rowvec(ag::matmul(x, W), b); }

LayerNorm::LayerNorm(ParamStore& ps, const std::string& prefix, Eigen::Index d) {
    gamma = ps.create(prefix + ".gamma", Mat::Ones(1, d));
    beta = ps.create(prefix + ".beta", Mat::Zero(1, d));
}

Var LayerNorm::forward(const Var& x) const { return ag::layer_norm_rows(x, gamma, beta, eps); }

MultiHeadAttention::MultiHeadAttention(ParamStore& ps, const std::string& prefix,
                                       Eigen::Index d_model_, Eigen::Index d_kv, int n_heads_,
                                       std::mt19937_64& rng)
    : n_heads(n_heads_), d_model(d_model_) {
    if (d_model % n_heads != 0) throw ConfigError("attention width not divisible by head count");
    wq = Linear(ps, prefix + ".wq", d_model, d_model, rng);
    wk = Linear(ps, prefix + ".wk", d_kv, d_model, rng);
    wv = Linear(ps, prefix + ".wv", d_kv, d_model, rng);
    wo = Linear(ps, prefix + ".wo", d_model, d_model, rng);
}

Var MultiHeadAttention::forward(const Var& q_in, const Var& kv_in, const Mat* additive_mask) const {
    const Eigen::Index dh = d_model / n_heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    Var q = wq.forward(q_in);
    Var k = wk.forward(kv_in);
    Var v = wv.forward(kv_in);
    std::vector<Var> heads;
    heads.reserve(static_cast<std::size_t>(n_heads));
    for (int h = 0; h < n_heads; ++h) {
        Var qh = ag::cols(q, h * dh, dh);
        Var kh = ag::cols(k, h * dh, dh);
        Var vh = ag::cols(v, h * dh, dh);
        Var logits = ag::scale(ag::matmul_nt(qh, kh), inv_sqrt);
        if (additive_mask) {
            if (additive_mask->rows() != logits.rows() || additive_mask->cols() != logits.cols())
                throw ShapeError("attention mask shape mismatch");
            logits = ag::add(logits, ag::constant(*additive_mask));
        }
        Var attn = ag::softmax_rows(logits);
        heads.push_back(ag::matmul(attn, vh));
    }
    return wo.forward(ag::hcat(heads));
}

TransformerBlock::TransformerBlock(ParamStore& ps, const std::string& prefix, Eigen::Index d_model,
                                   int n_heads, int mlp_ratio, std::mt19937_64& rng) {
    ln1 = LayerNorm(ps, prefix + ".ln1", d_model);
    attn = MultiHeadAttention(ps, prefix + ".attn", d_model, d_model, n_heads, rng);
    ln2 = LayerNorm(ps, prefix + ".ln2", d_model);
    fc1 = Linear(ps, prefix + ".fc1", d_model, d_model * mlp_ratio, rng);
    fc2 = Linear(ps, prefix + ".fc2", d_model * mlp_ratio, d_model, rng);
}

Var TransformerBlock::forward(const Var& x, const Mat* additive_mask) const {
    Var normed = ln1.forward(x);
    Var h = ag::add(x, attn.forward(normed, normed, additive_mask));
    Var m = fc2.forward(ag::gelu(fc1.forward(ln2.forward(h))));
    return ag::add(h, m);
}

CrossAttentionBlock::CrossAttentionBlock(ParamStore& ps, const std::string& prefix,
                                         Eigen::Index d_model, Eigen::Index d_kv, int n_heads,
                                         int mlp_ratio, std::mt19937_64& rng) {
    ln_q = LayerNorm(ps, prefix + ".ln_q", d_model);
    attn = MultiHeadAttention(ps, prefix + ".attn", d_model, d_kv, n_heads, rng);
    ln_mlp = LayerNorm(ps, prefix + ".ln_mlp", d_model);
    fc1 = Linear(ps, prefix + ".fc1", d_model, d_model * mlp_ratio, rng);
    fc2 = Linear(ps, prefix + ".fc2", d_model * mlp_ratio, d_model, rng);
}

Var CrossAttentionBlock::forward(const Var& queries, const Var& context) const {
    Var h = ag::add(queries, attn.forward(ln_q.forward(queries), context));
    Var m = fc2.forward(ag::gelu(fc1.forward(ln_mlp.forward(h))));
    return ag::add(h, m);
}

Mat causal_mask(Eigen::Index n) {
    Mat m = Mat::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) m(i, j) = -1e30;
    return m;
}

void Adam::step(const std::vector<Var>& params) {
    for (const Var& p : params)
        if (!p.requires_grad())
            throw ProtocolError("optimizer step on frozen parameter " + p.node()->name);
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (const Var& p : params) {
        ag::Node* n = p.node().get();
        if (!n->grad_live) continue;  // no gradient reached this parameter this step
        auto& [m, v] = state_[n];
        if (m.size() == 0) {
            m = Mat::Zero(n->value.rows(), n->value.cols());
            v = Mat::Zero(n->value.rows(), n->value.cols());
        }
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * n->grad;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * n->grad.cwiseProduct(n->grad);
        Mat mhat = m / bc1;
        Mat vhat = v / bc2;
        n->value -= cfg_.lr * (mhat.array() / (vhat.array().sqrt() + cfg_.eps) +
                               cfg_.weight_decay * n->value.array())
                                  .matrix();
    }
}

void Adam::zero_grad(const std::vector<Var>& params) {
    for (const Var& p : params) {
        p.node()->grad_live = false;
        p.node()->grad.resize(0, 0);
    }
}

}  // namespace vicp::nn
