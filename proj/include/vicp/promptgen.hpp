#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "vicp/backbone.hpp"
#include "vicp/connector.hpp"
#include "vicp/nn.hpp"
#include "vicp/synthdata.hpp"

namespace vicp::promptgen {

using ag::Mat;
using ag::Var;

struct PromptGenConfig {
    int n_layers = 4;
    int d_llm = 128;
    int n_heads = 4;
    int mlp_ratio = 4;
    int m_prompts = 16;          // M learnable prompt tokens
    int visual_hidden = 128;     // visual head hidden width
    int d_vision = 128;          // visual head output width
    std::uint64_t init_seed = 0;
    // Optional light pretraining of the otherwise random frozen reservoir on
    // a synthetic next-token task (0 disables it).
    int synthetic_pretrain_steps = 0;
    void validate() const {
        if (d_llm % n_heads != 0) throw ConfigError("promptgen: d_llm must be divisible by n_heads");
        if (m_prompts < 0) throw ConfigError("promptgen: m_prompts must be >= 0");
        if (n_layers < 1) throw ConfigError("promptgen: n_layers must be >= 1");
    }
};

// Sinusoidal positional encoding rows [length x d].
Mat sinusoidal_positions(Eigen::Index length, Eigen::Index d);

class PromptGenerator {
public:
    explicit PromptGenerator(const PromptGenConfig& cfg);

    const PromptGenConfig& config() const { return cfg_; }
    nn::ParamStore& frozen_params() { return frozen_; }
    const nn::ParamStore& frozen_params() const { return frozen_; }
    nn::ParamStore& trainable_params() { return trainable_; }
    const nn::ParamStore& trainable_params() const { return trainable_; }
    Var learnable_prompts() const { return p_learn_; }

    // Causal pass over the sequence. Prompt slots (the trailing layout.m
    // rows) are replaced by the current P_learn rows; layout.m must equal
    // the configured M or be zero.
    Var forward_context(const connector::PairSequence& seq) const;

    // Masked next-token loss: for each pair, a two-class cross entropy read
    // from the hidden state immediately preceding the pair's label slot,
    // summed over pairs.
    Var icl_loss(const connector::PairSequence& seq, const Var& hidden) const;
    // Same contract expressed over a full-length target/mask pair; positions
    // with mask == 0 never contribute (used by the masking-invariance tests).
    Var icl_loss_masked(const Var& hidden, const std::vector<int>& targets,
                        const std::vector<char>& supervised) const;
    std::vector<double> icl_per_pair_losses(const connector::PairSequence& seq, const Var& hidden) const;
    double icl_accuracy(const connector::PairSequence& seq, const Var& hidden) const;

    // Hidden rows at the prompt positions -> visual head -> M x d_vision.
    Var task_prompt_from_hidden(const Var& hidden) const;

    struct ContextRun {
        connector::PairSequence seq;
        Var hidden;
        Var task_prompt;  // valid iff m_prompts > 0
    };
    // Full graph-bearing pipeline: encode support images (prompt-free,
    // constant), compress, assemble the context, run the sequence model.
    ContextRun run_context(const synth::Corpus& corpus, const synth::SupportSet& support,
                           const backbone::VisionBackbone& bb, const connector::QueryConnector& qc,
                           std::mt19937_64* shuffle_rng = nullptr) const;

    // Inference-time prompt generation; deterministic given support and
    // weights. Errors when M == 0.
    backbone::VisualPrompt generate_prompt(const synth::Corpus& corpus,
                                           const synth::SupportSet& support,
                                           const backbone::VisionBackbone& bb,
                                           const connector::QueryConnector& qc) const;

    long generation_count() const { return generation_count_; }

private:
    PromptGenConfig cfg_;
    nn::ParamStore frozen_;     // decoder blocks + final LN
    nn::ParamStore trainable_;  // P_learn, label head, visual head
    std::vector<nn::TransformerBlock> blocks_;
    nn::LayerNorm ln_final_;
    Var p_learn_;
    nn::Linear label_head_;
    nn::Linear visual_fc1_, visual_fc2_;
    mutable long generation_count_ = 0;

    void synthetic_pretrain(std::mt19937_64& rng, int steps);
};

// Write-once prompt cache keyed by (category_id, support checksum). Entries
// keep the support pair identities so checksum collisions are detected. The
// persisted layout is one JSON key file plus one raw little-endian float64
// tensor file per entry.
class PromptCache {
public:
    struct PairKey {
        int a_instance, a_view, b_instance, b_view, label;
        bool operator==(const PairKey&) const = default;
    };

    PromptCache() = default;
    PromptCache(PromptCache&& other) noexcept {
        std::lock_guard<std::mutex> lock(other.mu_);
        entries_ = std::move(other.entries_);
    }
    PromptCache& operator=(PromptCache&& other) noexcept {
        if (this != &other) {
            std::scoped_lock lock(mu_, other.mu_);
            entries_ = std::move(other.entries_);
        }
        return *this;
    }

    const backbone::VisualPrompt& get_or_generate(const synth::Corpus& corpus,
                                                  const synth::SupportSet& support,
                                                  const PromptGenerator& gen,
                                                  const backbone::VisionBackbone& bb,
                                                  const connector::QueryConnector& qc);
    bool contains(int category_id, std::uint64_t checksum) const;
    std::size_t size() const;
    void clear();

    void save(const std::string& dir) const;
    void load(const std::string& dir);

private:
    struct Entry {
        backbone::VisualPrompt prompt;
        std::vector<PairKey> pairs;
    };
    static std::vector<PairKey> keys_of(const synth::Corpus& corpus, const synth::SupportSet& support);
    mutable std::mutex mu_;
    std::map<std::pair<int, std::uint64_t>, Entry> entries_;
};

}  // namespace vicp::promptgen
