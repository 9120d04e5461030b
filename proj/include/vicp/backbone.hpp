#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "vicp/image.hpp"
#include "vicp/nn.hpp"
#include "vicp/synthdata.hpp"

namespace vicp::backbone {

using ag::Mat;
using ag::Var;

struct BackboneConfig {
    int image_size = 64;
    int patch_size = 8;
    int channels = 3;
    int d_vision = 128;
    int n_layers = 6;
    int n_heads = 4;
    int mlp_ratio = 4;
    bool shallow_prompting = false;  // inject at layer 0 only and propagate
    std::uint64_t init_seed = 0;

    int grid() const { return image_size / patch_size; }
    int patch_count() const { return grid() * grid(); }
    void validate() const {
        if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
            throw ConfigError("image_size must be divisible by patch_size");
        if (d_vision % n_heads != 0) throw ConfigError("d_vision must be divisible by n_heads");
        if (n_layers < 1) throw ConfigError("n_layers must be >= 1");
    }
};

// CLS embedding (L2-normalized) plus patch features, excluding CLS and any
// prompt positions.
struct FeatureBundle {
    Eigen::VectorXd cls;  // d_vision, unit norm
    Mat patches;          // patch_count x d_vision
};

struct VisualPrompt {
    Mat tokens;  // M x d_vision; M = 0 means "no prompt"
    struct Source {
        int category_id = -1;
        std::uint64_t support_seed = 0;
        std::uint64_t checksum = 0;
    } source;

    Eigen::Index size() const { return tokens.rows(); }
    bool empty() const { return tokens.rows() == 0; }
};

class VisionBackbone {
public:
    explicit VisionBackbone(const BackboneConfig& cfg);

    const BackboneConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }
    bool frozen() const { return params_.frozen(); }
    void freeze() { params_.freeze_all(); }

    struct Encoded {
        Var cls_norm;  // 1 x d, unit row
        Var cls_raw;   // 1 x d
        Var patches;   // patch_count x d
    };

    // Graph-building forward pass. `prompt` may be an invalid Var (prompt-free)
    // or an M x d_vision Var; with deep prompting the same prompt rows are
    // appended at every layer and their outputs dropped between layers.
    // `ablate_image_to_prompt` blocks attention from image/CLS tokens to the
    // prompt positions (test hook for the locality property).
    Encoded forward(const Image& img, const Var& prompt, bool ablate_image_to_prompt = false) const;

    // Value-only convenience wrapper around forward().
    FeatureBundle encode(const Image& img, const VisualPrompt* prompt = nullptr) const;

private:
    BackboneConfig cfg_;
    nn::ParamStore params_;
    Var patch_w_, patch_b_, cls_token_, pos_emb_;
    std::vector<nn::TransformerBlock> blocks_;
    nn::LayerNorm ln_final_;
};

struct PretrainConfig {
    int epochs = 4;
    int batch_size = 16;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    std::uint64_t seed = 0;
    int holdout_every = 5;  // every n-th base image held out for the accuracy readout
};

struct PretrainReport {
    double holdout_accuracy = 0.0;
    int n_train = 0;
    int n_holdout = 0;
    int steps = 0;
    double final_loss = 0.0;
};

// Category-classification pretraining on base categories; the classifier head
// is discarded and the backbone is frozen on return. `record_indices` defaults
// to every base-category record; passing any novel-category record raises a
// ProtocolError.
PretrainReport pretrain_backbone(VisionBackbone& bb, const synth::Corpus& corpus,
                                 const PretrainConfig& cfg,
                                 const std::vector<std::size_t>* record_indices = nullptr);

// True iff every parameter tensor is bit-identical between the snapshots.
bool freeze_check(const std::map<std::string, Mat>& before, const std::map<std::string, Mat>& after);

}  // namespace vicp::backbone
