#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "vicp/autograd.hpp"
#include "vicp/rng.hpp"

namespace vicp::nn {

using ag::Mat;
using ag::Var;

Mat randn(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double stddev = 0.02);

// Named parameter registry for one model component. Parameters are created
// trainable; freeze_all() drops requires_grad so the graph never tracks them.
class ParamStore {
public:
    Var create(const std::string& name, Mat init, bool trainable = true);
    Var get(const std::string& name) const;
    bool has(const std::string& name) const;
    const std::vector<std::string>& names() const { return order_; }
    std::vector<Var> all() const;
    std::vector<Var> trainable() const;

    void freeze_all();
    void unfreeze_all();
    bool frozen() const { return frozen_; }

    std::map<std::string, Mat> snapshot() const;
    void load(const std::map<std::string, Mat>& weights);  // shapes must match
    std::uint64_t content_hash() const;  // over raw bytes, insertion order

    std::size_t parameter_count() const;

private:
    std::vector<std::string> order_;
    std::map<std::string, Var> params_;
    bool frozen_ = false;
};

// Returns true iff every tensor is bit-identical between the two snapshots
// (same keys, same shapes, same bytes).
bool snapshots_identical(const std::map<std::string, Mat>& a, const std::map<std::string, Mat>& b);
std::uint64_t snapshot_hash(const std::map<std::string, Mat>& s);

struct Linear {
    Var W, b;  // y = x W + b, W is in x out
    Linear() = default;
    Linear(ParamStore& ps, const std::string& prefix, Eigen::Index in, Eigen::Index out,
           std::mt19937_64& rng);
    Var forward(const Var& x) const;
};

struct LayerNorm {
    Var gamma, beta;
    double eps = 1e-5;
    LayerNorm() = default;
    LayerNorm(ParamStore& ps, const std::string& prefix, Eigen::Index d);
    Var forward(const Var& x) const;
};

// Multi-head attention. Query input width dq; key/value input width dkv
// (equal for self-attention). Heads split the model width d_model = dq.
// An optional additive mask (n_q x n_kv) is added to the logits pre-softmax.
struct MultiHeadAttention {
    int n_heads = 1;
    Eigen::Index d_model = 0;
    Linear wq, wk, wv, wo;
    MultiHeadAttention() = default;
    MultiHeadAttention(ParamStore& ps, const std::string& prefix, Eigen::Index d_model,
                       Eigen::Index d_kv, int n_heads, std::mt19937_64& rng);
    Var forward(const Var& q_in, const Var& kv_in, const Mat* additive_mask = nullptr) const;
};

// Pre-LN transformer block: x += attn(ln1(x)); x += mlp(ln2(x)).
struct TransformerBlock {
    LayerNorm ln1, ln2;
    MultiHeadAttention attn;
    Linear fc1, fc2;
    TransformerBlock() = default;
    TransformerBlock(ParamStore& ps, const std::string& prefix, Eigen::Index d_model,
                     int n_heads, int mlp_ratio, std::mt19937_64& rng);
    Var forward(const Var& x, const Mat* additive_mask = nullptr) const;
};

// Cross-attention block used by the query connector: queries attend to a
// fixed set of context tokens, then pass through an MLP. Pre-LN, residual.
struct CrossAttentionBlock {
    LayerNorm ln_q, ln_mlp;
    MultiHeadAttention attn;
    Linear fc1, fc2;
    CrossAttentionBlock() = default;
    CrossAttentionBlock(ParamStore& ps, const std::string& prefix, Eigen::Index d_model,
                        Eigen::Index d_kv, int n_heads, int mlp_ratio, std::mt19937_64& rng);
    Var forward(const Var& queries, const Var& context) const;
};

// Additive causal mask: 0 on/below the diagonal, -1e30 above.
Mat causal_mask(Eigen::Index n);

// Adam with decoupled weight decay and a fixed learning rate.
class Adam {
public:
    struct Config {
        double lr = 1e-4;
        double weight_decay = 1e-4;
        double beta1 = 0.9;
        double beta2 = 0.99;
        double eps = 1e-8;
    };
    explicit Adam(Config cfg) : cfg_(cfg) {}

    // Applies one update to each parameter from its accumulated gradient.
    // Throws ProtocolError if a parameter is not marked trainable.
    void step(const std::vector<Var>& params);
    void zero_grad(const std::vector<Var>& params);
    int steps_taken() const { return t_; }

private:
    Config cfg_;
    int t_ = 0;
    std::map<const ag::Node*, std::pair<Mat, Mat>> state_;
};

}  // namespace vicp::nn
