#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vicp/backbone.hpp"
#include "vicp/checkpoint.hpp"
#include "vicp/connector.hpp"
#include "vicp/losses.hpp"
#include "vicp/promptgen.hpp"
#include "vicp/reid_eval.hpp"
#include "vicp/synthdata.hpp"

namespace vicp::pipeline {

using ag::Mat;
using ag::Var;

// Model variants mirroring the component ablation:
//   frozen        - pretrained backbone only, no prompts
//   static_prompt - one learned prompt shared by every category, triplet loss
//   vicp          - in-context generated prompts (full method)
enum class Variant { Frozen, StaticPrompt, Vicp };
std::string variant_name(Variant v);
Variant variant_from_name(const std::string& s);

struct TrainConfig {
    backbone::BackboneConfig backbone;
    connector::ConnectorConfig connector;
    promptgen::PromptGenConfig promptgen;
    backbone::PretrainConfig pretrain;
    losses::LossWeights loss;
    ot::IPOTParams ipot;

    double lr = 1e-4;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.99;
    int epochs = 10;
    int batch_size = 64;  // triplets per step = batch_size / 4
    int k_support = 64;
    int steps_per_epoch = 0;  // 0: two passes over the base categories
    bool augment_hflip = true;
    Variant variant = Variant::Vicp;
    std::uint64_t seed = 0;

    int triplets_per_step() const { return std::max(1, batch_size / 4); }
    void validate() const;
    void sync_widths();  // propagates d_vision/d_llm across component configs
    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
    std::string fingerprint() const;
};

struct EvalOptions {
    int k_support = 64;
    std::uint64_t seed = 0;
    int verification_pairs = 10000;
    int verification_folds = 10;
};

// Frozen backbone + sequence model, trainable connector/prompts/heads, and
// the prompt cache, assembled per variant.
class VicpModel {
public:
    VicpModel(const TrainConfig& cfg);

    const TrainConfig& config() const { return cfg_; }
    Variant variant() const { return cfg_.variant; }
    backbone::VisionBackbone& vision() { return *backbone_; }
    const backbone::VisionBackbone& vision() const { return *backbone_; }
    connector::QueryConnector& connector() { return *connector_; }
    promptgen::PromptGenerator& generator() { return *promptgen_; }
    const promptgen::PromptGenerator& generator() const { return *promptgen_; }
    promptgen::PromptCache& cache() { return cache_; }
    Var static_prompt() const { return static_prompt_; }

    struct Partition {
        std::vector<std::string> frozen;
        std::vector<std::string> trainable;
    };
    Partition partition() const;
    std::vector<Var> trainable_vars() const;
    // Qualified-name snapshot of every parameter in the model.
    std::map<std::string, Mat> snapshot_all() const;

    // Checkpoint directory: backbone.tnsr, seqmodel.tnsr, connector.tnsr,
    // heads.tnsr (+ static.tnsr for the static variant), prompts_cache/,
    // config_snapshot.json.
    void save(const std::string& dir) const;
    static VicpModel load(const std::string& dir);

    // Prompt used to encode test images of one category, per variant.
    backbone::VisualPrompt prompt_for_category(const synth::Corpus& corpus, int category_id,
                                               const EvalOptions& opts);

private:
    TrainConfig cfg_;
    std::unique_ptr<backbone::VisionBackbone> backbone_;
    std::unique_ptr<connector::QueryConnector> connector_;
    std::unique_ptr<promptgen::PromptGenerator> promptgen_;
    nn::ParamStore static_store_;
    Var static_prompt_;
    promptgen::PromptCache cache_;
};

struct TrainResult {
    int steps = 0;
    double last_l_id = 0.0, last_l_icl = 0.0, last_l_align = 0.0, last_total = 0.0;
    std::string checkpoint_dir;
};

struct StepOutcome {
    double l_id = 0.0, l_icl = 0.0, l_align = 0.0, total = 0.0;
    double icl_acc = -1.0;
};

// One optimizer step on one base category: support pairs + triplets are
// sampled, the composite loss is built and the trainable partition updated.
// Sampling a novel category is a protocol error.
StepOutcome train_step(VicpModel& model, const synth::Corpus& corpus, int category_id,
                       nn::Adam& opt, std::mt19937_64& rng);

// End-to-end training on base categories. Requires a pretrained, frozen
// backbone. Writes a JSONL log (one line per step) when log_path is set and
// checkpoints into out_dir after every epoch.
TrainResult train(VicpModel& model, const synth::Corpus& corpus, const std::string& out_dir,
                  const std::string& log_path = "");

// Per-novel-category evaluation with cached prompts; support images never
// enter the query or gallery pools.
reid::RetrievalReport evaluate_novel(VicpModel& model, const synth::Corpus& corpus,
                                     const EvalOptions& opts);

std::string corpus_fingerprint(const synth::Corpus& corpus);

struct AblationCell {
    std::string label;
    reid::RetrievalReport report;
};

// axis: "components" ([i] frozen, [ii] triplet prompt, [iv] icl prompts,
// [vi] + patch align), "K" {32,64,128}, or "N" {16,32,64}. All cells share
// the corpus and the pretrained backbone weights.
std::vector<AblationCell> run_ablation(const synth::Corpus& corpus, const TrainConfig& base_cfg,
                                       const std::string& axis, const EvalOptions& eval_opts,
                                       const std::string& work_dir);

// Applies the VICP_SEED environment override, if present.
TrainConfig load_train_config(const std::string& json_text);

}  // namespace vicp::pipeline
