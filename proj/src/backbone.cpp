#include "vicp/backbone.hpp"

#include <algorithm>
#include <cmath>

namespace vicp::backbone {

VisionBackbone::VisionBackbone(const BackboneConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    auto rng = make_rng(derive_seed(cfg.init_seed, "backbone"));
    const int d = cfg.d_vision;
    const int patch_dim = cfg.channels * cfg.patch_size * cfg.patch_size;
    patch_w_ = params_.create("patch_embed.W",
                              nn::randn(patch_dim, d, rng, 1.0 / std::sqrt(static_cast<double>(patch_dim))));
    patch_b_ = params_.create("patch_embed.b", Mat::Zero(1, d));
    cls_token_ = params_.create("cls_token", nn::randn(1, d, rng, 0.5));
    // Positional embeddings cover CLS + patches only; prompts get none.
    pos_emb_ = params_.create("pos_emb", nn::randn(cfg.patch_count() + 1, d, rng, 0.5));
    blocks_.reserve(static_cast<std::size_t>(cfg.n_layers));
    for (int l = 0; l < cfg.n_layers; ++l)
        blocks_.emplace_back(params_, "layer" + std::to_string(l), d, cfg.n_heads, cfg.mlp_ratio, rng);
    ln_final_ = nn::LayerNorm(params_, "ln_final", d);
}

VisionBackbone::Encoded VisionBackbone::forward(const Image& img, const Var& prompt,
                                                bool ablate_image_to_prompt) const {
    if (img.height != cfg_.image_size || img.width != cfg_.image_size || img.channels != cfg_.channels)
        throw ShapeError("backbone: image does not match configured size");
    const Eigen::Index n_img = cfg_.patch_count() + 1;
    Eigen::Index m = 0;
    if (prompt.valid()) {
        if (prompt.cols() != cfg_.d_vision)
            throw ShapeError("backbone: prompt width " + std::to_string(prompt.cols()) +
                             " != d_vision " + std::to_string(cfg_.d_vision));
        m = prompt.rows();
    }

    Var patches = ag::constant(extract_patches(img, cfg_.patch_size));
    Var x = ag::add_rowvec(ag::matmul(patches, patch_w_), patch_b_);
    Var tokens = ag::add(ag::vcat({cls_token_, x}), pos_emb_);

    Mat mask;  // built lazily; only needed for the locality ablation
    if (m > 0 && ablate_image_to_prompt) {
        mask = Mat::Zero(n_img + m, n_img + m);
        mask.block(0, n_img, n_img, m).setConstant(-1e30);
    }

    bool prompt_attached = false;  // shallow mode: prompt rows ride along
    for (int l = 0; l < cfg_.n_layers; ++l) {
        const bool inject = m > 0 && (!cfg_.shallow_prompting || l == 0);
        if (inject && !prompt_attached) {
            tokens = ag::vcat({tokens, prompt});
            prompt_attached = true;
        }
        const Mat* mp = (prompt_attached && mask.size() > 0) ? &mask : nullptr;
        tokens = blocks_[static_cast<std::size_t>(l)].forward(tokens, mp);
        if (prompt_attached && !cfg_.shallow_prompting) {
            tokens = ag::rows(tokens, 0, n_img);  // deep prompting: drop prompt outputs
            prompt_attached = false;
        }
    }

    Var final = ln_final_.forward(tokens);
    Encoded out;
    out.cls_raw = ag::rows(final, 0, 1);
    out.cls_norm = ag::l2_normalize_rows(out.cls_raw);
    out.patches = ag::rows(final, 1, cfg_.patch_count());
    return out;
}

FeatureBundle VisionBackbone::encode(const Image& img, const VisualPrompt* prompt) const {
    Var pvar;
    if (prompt && !prompt->empty()) {
        ag::check_finite(prompt->tokens, "visual prompt");
        pvar = ag::constant(prompt->tokens);
    }
    Encoded enc = forward(img, pvar);
    FeatureBundle fb;
    fb.cls = enc.cls_norm.value().row(0).transpose();
    fb.patches = enc.patches.value();
    return fb;
}

PretrainReport pretrain_backbone(VisionBackbone& bb, const synth::Corpus& corpus,
                                 const PretrainConfig& cfg,
                                 const std::vector<std::size_t>* record_indices) {
    if (corpus.records.empty()) throw ConfigError("pretrain: empty corpus");
    const auto& manifest = corpus.manifest;

    std::vector<std::size_t> pool;
    if (record_indices) {
        pool = *record_indices;
        for (std::size_t idx : pool)
            if (!manifest.is_base(corpus.records[idx].category_id))
                throw ProtocolError("pretrain: novel-category record " + std::to_string(idx) +
                                    " leaked into pretraining");
    } else {
        for (std::size_t i = 0; i < corpus.records.size(); ++i)
            if (manifest.is_base(corpus.records[i].category_id)) pool.push_back(i);
    }
    if (pool.empty()) throw ConfigError("pretrain: no base-category records available");

    // Contiguous class ids over base categories.
    std::map<int, int> class_of;
    for (int c : manifest.base_categories) class_of.emplace(c, static_cast<int>(class_of.size()));
    const int n_classes = static_cast<int>(class_of.size());

    std::vector<std::size_t> train, holdout;
    for (std::size_t i = 0; i < pool.size(); ++i)
        (cfg.holdout_every > 0 && i % static_cast<std::size_t>(cfg.holdout_every) == 0 ? holdout : train)
            .push_back(pool[i]);
    if (train.empty()) throw ConfigError("pretrain: holdout split left no training images");

    auto rng = make_rng(derive_seed(cfg.seed, "pretrain"));
    nn::ParamStore head_store;
    nn::Linear head(head_store, "cls_head", bb.config().d_vision, n_classes, rng);

    std::vector<Var> trainable = bb.params().all();
    for (const Var& v : head_store.all()) trainable.push_back(v);
    nn::Adam opt({.lr = cfg.lr, .weight_decay = cfg.weight_decay});

    PretrainReport report;
    double last_loss = 0.0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(train.begin(), train.end(), rng);
        for (std::size_t start = 0; start < train.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(train.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Var> logits_parts;
            std::vector<int> targets;
            for (std::size_t i = start; i < end; ++i) {
                const auto& rec = corpus.records[train[i]];
                auto enc = bb.forward(rec.image, Var());
                logits_parts.push_back(head.forward(enc.cls_raw));
                targets.push_back(class_of.at(rec.category_id));
            }
            Var loss = ag::scale(ag::cross_entropy_rows(ag::vcat(logits_parts), targets),
                                 1.0 / static_cast<double>(targets.size()));
            opt.zero_grad(trainable);
            ag::backward(loss);
            opt.step(trainable);
            last_loss = loss.value()(0, 0);
            ++report.steps;
        }
    }

    int correct = 0;
    for (std::size_t idx : holdout) {
        const auto& rec = corpus.records[idx];
        auto enc = bb.forward(rec.image, Var());
        Mat logits = head.forward(enc.cls_raw).value();
        Eigen::Index best;
        logits.row(0).maxCoeff(&best);
        if (static_cast<int>(best) == class_of.at(rec.category_id)) ++correct;
    }
    report.holdout_accuracy = holdout.empty() ? 0.0 : static_cast<double>(correct) / holdout.size();
    report.n_train = static_cast<int>(train.size());
    report.n_holdout = static_cast<int>(holdout.size());
    report.final_loss = last_loss;

    bb.freeze();
    return report;
}

bool freeze_check(const std::map<std::string, Mat>& before, const std::map<std::string, Mat>& after) {
    return nn::snapshots_identical(before, after);
}

}  // namespace vicp::backbone
