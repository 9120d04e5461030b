#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "vicp/backbone.hpp"
#include "vicp/nn.hpp"

namespace vicp::connector {

using ag::Mat;
using ag::Var;

struct ConnectorConfig {
    int n_latents = 32;   // N
    int d_llm = 128;      // sequence-model width; connector owns the projection
    int d_vision = 128;   // input token width from the backbone
    int n_blocks = 2;
    int n_heads = 4;
    int mlp_ratio = 2;
    std::uint64_t init_seed = 0;
    void validate() const {
        if (n_latents < 1) throw ConfigError("connector: n_latents must be >= 1");
        if (d_llm % n_heads != 0) throw ConfigError("connector: d_llm must be divisible by n_heads");
    }
};

struct LatentTokens {
    Var tokens;  // N x d_llm, graph-bearing
};

// Token sequence [I_i; I_j; L_ij] x K (+ M prompt slots). label_positions[k]
// indexes pair k's label row within tokens.
struct PairSequence {
    Var tokens;  // L x d_llm
    std::vector<Eigen::Index> label_positions;
    std::vector<int> labels;
    struct Layout {
        int n = 0, k = 0, m = 0;
    } layout;

    Eigen::Index length() const { return tokens.rows(); }
};

class QueryConnector {
public:
    explicit QueryConnector(const ConnectorConfig& cfg);

    const ConnectorConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }

    // Compresses (H*W + 1) x d_vision backbone tokens (prompt-free encoding,
    // CLS included) into N x d_llm latents.
    LatentTokens compress(const Var& image_tokens) const;
    LatentTokens compress(const Mat& image_tokens) const { return compress(ag::constant(image_tokens)); }

    // T_ij = [I_i; I_j; L_ij], label embedding row at the final position.
    PairSequence build_pair(const LatentTokens& li, const LatentTokens& lj, int label) const;

    // Context of K pairs, optionally shuffled (training), followed by M
    // placeholder slots for the learnable prompts. The placeholders are zero
    // rows; the sequence model substitutes its own P_learn rows.
    PairSequence build_context(const std::vector<std::pair<LatentTokens, LatentTokens>>& pairs,
                               const std::vector<int>& labels, int prompt_slots,
                               std::mt19937_64* shuffle_rng = nullptr) const;

    Var label_embedding_row(int label) const;
    Var label_table() const { return label_table_; }

private:
    ConnectorConfig cfg_;
    nn::ParamStore params_;
    Var queries_;      // N x d_llm learned query vectors
    nn::LayerNorm ln_input_;
    std::vector<nn::CrossAttentionBlock> blocks_;
    nn::LayerNorm ln_out_;
    nn::Linear proj_out_;
    Var label_table_;  // 2 x d_llm; row 0 negative, row 1 positive
};

// Debug dump of a pair sequence: little-endian header {n, k, m, d_llm} as
// int32, then row-major float64 tokens, then label positions (int64) and
// labels (int32).
void dump_pair_sequence(const PairSequence& seq, const std::string& path);
PairSequence load_pair_sequence_values(const std::string& path);

}  // namespace vicp::connector
