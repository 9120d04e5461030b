#include "vicp/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace vicp::pipeline {

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::Frozen: return "frozen";
        case Variant::StaticPrompt: return "static_prompt";
        default: return "vicp";
    }
}

Variant variant_from_name(const std::string& s) {
    if (s == "frozen") return Variant::Frozen;
    if (s == "static_prompt") return Variant::StaticPrompt;
    if (s == "vicp") return Variant::Vicp;
    throw ConfigError("unknown variant: " + s);
}

void TrainConfig::sync_widths() {
    connector.d_vision = backbone.d_vision;
    promptgen.d_llm = connector.d_llm;
    promptgen.d_vision = backbone.d_vision;
    backbone.init_seed = seed;
    connector.init_seed = seed;
    promptgen.init_seed = seed;
    pretrain.seed = seed;
}

void TrainConfig::validate() const {
    backbone.validate();
    connector.validate();
    promptgen.validate();
    loss.validate();
    ipot.validate();
    if (lr <= 0.0 || epochs <= 0 || batch_size <= 0)
        throw ConfigError("lr, epochs and batch_size must be positive");
    if (k_support < 2) throw ConfigError("k_support must be >= 2");
    if (connector.d_vision != backbone.d_vision || promptgen.d_llm != connector.d_llm ||
        promptgen.d_vision != backbone.d_vision)
        throw ConfigError("component widths out of sync; call sync_widths()");
}

std::string TrainConfig::to_json() const {
    json j;
    j["backbone"] = {{"image_size", backbone.image_size}, {"patch_size", backbone.patch_size},
                     {"channels", backbone.channels},     {"d_vision", backbone.d_vision},
                     {"n_layers", backbone.n_layers},     {"n_heads", backbone.n_heads},
                     {"mlp_ratio", backbone.mlp_ratio},   {"shallow_prompting", backbone.shallow_prompting}};
    j["connector"] = {{"n_latents", connector.n_latents},
                      {"d_llm", connector.d_llm},
                      {"n_blocks", connector.n_blocks},
                      {"n_heads", connector.n_heads},
                      {"mlp_ratio", connector.mlp_ratio}};
    j["promptgen"] = {{"n_layers", promptgen.n_layers},
                      {"n_heads", promptgen.n_heads},
                      {"mlp_ratio", promptgen.mlp_ratio},
                      {"m_prompts", promptgen.m_prompts},
                      {"visual_hidden", promptgen.visual_hidden},
                      {"synthetic_pretrain_steps", promptgen.synthetic_pretrain_steps}};
    j["pretrain"] = {{"epochs", pretrain.epochs},
                     {"batch_size", pretrain.batch_size},
                     {"lr", pretrain.lr},
                     {"weight_decay", pretrain.weight_decay},
                     {"holdout_every", pretrain.holdout_every}};
    j["loss"] = {{"margin_alpha", loss.margin_alpha},
                 {"lambda_icl", loss.lambda_icl},
                 {"lambda_align", loss.lambda_align},
                 {"align_margin", loss.align_margin},
                 {"align_mode", loss.align_mode}};
    j["ipot"] = {{"beta", ipot.beta},
                 {"outer_iters", ipot.outer_iters},
                 {"inner_iters", ipot.inner_iters},
                 {"marginal_tol", ipot.marginal_tol}};
    j["train"] = {{"lr", lr},
                  {"weight_decay", weight_decay},
                  {"beta1", beta1},
                  {"beta2", beta2},
                  {"epochs", epochs},
                  {"batch_size", batch_size},
                  {"triplets_per_step", triplets_per_step()},
                  {"k_support", k_support},
                  {"steps_per_epoch", steps_per_epoch},
                  {"augment_hflip", augment_hflip},
                  {"variant", variant_name(variant)},
                  {"seed", seed}};
    return j.dump(2) + "\n";
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError("config parse failure: " + std::string(e.what()));
    }
    TrainConfig c;
    if (j.contains("backbone")) {
        const auto& b = j["backbone"];
        c.backbone.image_size = b.value("image_size", c.backbone.image_size);
        c.backbone.patch_size = b.value("patch_size", c.backbone.patch_size);
        c.backbone.channels = b.value("channels", c.backbone.channels);
        c.backbone.d_vision = b.value("d_vision", c.backbone.d_vision);
        c.backbone.n_layers = b.value("n_layers", c.backbone.n_layers);
        c.backbone.n_heads = b.value("n_heads", c.backbone.n_heads);
        c.backbone.mlp_ratio = b.value("mlp_ratio", c.backbone.mlp_ratio);
        c.backbone.shallow_prompting = b.value("shallow_prompting", c.backbone.shallow_prompting);
    }
    if (j.contains("connector")) {
        const auto& b = j["connector"];
        c.connector.n_latents = b.value("n_latents", c.connector.n_latents);
        c.connector.d_llm = b.value("d_llm", c.connector.d_llm);
        c.connector.n_blocks = b.value("n_blocks", c.connector.n_blocks);
        c.connector.n_heads = b.value("n_heads", c.connector.n_heads);
        c.connector.mlp_ratio = b.value("mlp_ratio", c.connector.mlp_ratio);
    }
    if (j.contains("promptgen")) {
        const auto& b = j["promptgen"];
        c.promptgen.n_layers = b.value("n_layers", c.promptgen.n_layers);
        c.promptgen.n_heads = b.value("n_heads", c.promptgen.n_heads);
        c.promptgen.mlp_ratio = b.value("mlp_ratio", c.promptgen.mlp_ratio);
        c.promptgen.m_prompts = b.value("m_prompts", c.promptgen.m_prompts);
        c.promptgen.visual_hidden = b.value("visual_hidden", c.promptgen.visual_hidden);
        c.promptgen.synthetic_pretrain_steps =
            b.value("synthetic_pretrain_steps", c.promptgen.synthetic_pretrain_steps);
    }
    if (j.contains("pretrain")) {
        const auto& b = j["pretrain"];
        c.pretrain.epochs = b.value("epochs", c.pretrain.epochs);
        c.pretrain.batch_size = b.value("batch_size", c.pretrain.batch_size);
        c.pretrain.lr = b.value("lr", c.pretrain.lr);
        c.pretrain.weight_decay = b.value("weight_decay", c.pretrain.weight_decay);
        c.pretrain.holdout_every = b.value("holdout_every", c.pretrain.holdout_every);
    }
    if (j.contains("loss")) {
        const auto& b = j["loss"];
        c.loss.margin_alpha = b.value("margin_alpha", c.loss.margin_alpha);
        c.loss.lambda_icl = b.value("lambda_icl", c.loss.lambda_icl);
        c.loss.lambda_align = b.value("lambda_align", c.loss.lambda_align);
        c.loss.align_margin = b.value("align_margin", c.loss.align_margin);
        c.loss.align_mode = b.value("align_mode", c.loss.align_mode);
    }
    if (j.contains("ipot")) {
        const auto& b = j["ipot"];
        c.ipot.beta = b.value("beta", c.ipot.beta);
        c.ipot.outer_iters = b.value("outer_iters", c.ipot.outer_iters);
        c.ipot.inner_iters = b.value("inner_iters", c.ipot.inner_iters);
        c.ipot.marginal_tol = b.value("marginal_tol", c.ipot.marginal_tol);
    }
    if (j.contains("train")) {
        const auto& b = j["train"];
        c.lr = b.value("lr", c.lr);
        c.weight_decay = b.value("weight_decay", c.weight_decay);
        c.beta1 = b.value("beta1", c.beta1);
        c.beta2 = b.value("beta2", c.beta2);
        c.epochs = b.value("epochs", c.epochs);
        c.batch_size = b.value("batch_size", c.batch_size);
        c.k_support = b.value("k_support", c.k_support);
        c.steps_per_epoch = b.value("steps_per_epoch", c.steps_per_epoch);
        c.augment_hflip = b.value("augment_hflip", c.augment_hflip);
        c.variant = variant_from_name(b.value("variant", variant_name(c.variant)));
        c.seed = b.value("seed", c.seed);
    }
    c.sync_widths();
    return c;
}

std::string TrainConfig::fingerprint() const {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(to_json())));
    return buf;
}

TrainConfig load_train_config(const std::string& json_text) {
    TrainConfig cfg = TrainConfig::from_json(json_text);
    if (const char* env = std::getenv("VICP_SEED")) {
        cfg.seed = std::strtoull(env, nullptr, 10);
        cfg.sync_widths();
    }
    return cfg;
}

VicpModel::VicpModel(const TrainConfig& cfg) : cfg_(cfg) {
    cfg_.sync_widths();
    cfg_.validate();
    backbone_ = std::make_unique<backbone::VisionBackbone>(cfg_.backbone);
    connector_ = std::make_unique<connector::QueryConnector>(cfg_.connector);
    promptgen_ = std::make_unique<promptgen::PromptGenerator>(cfg_.promptgen);
    if (cfg_.variant == Variant::StaticPrompt) {
        auto rng = make_rng(derive_seed(cfg_.seed, "static_prompt"));
        static_prompt_ = static_store_.create(
            "static_prompt", nn::randn(cfg_.promptgen.m_prompts, cfg_.backbone.d_vision, rng, 0.5));
    }
}

VicpModel::Partition VicpModel::partition() const {
    Partition p;
    for (const auto& n : backbone_->params().names()) p.frozen.push_back("backbone." + n);
    for (const auto& n : promptgen_->frozen_params().names()) p.frozen.push_back("seqmodel." + n);
    switch (cfg_.variant) {
        case Variant::Frozen:
            for (const auto& n : connector_->params().names()) p.frozen.push_back("connector." + n);
            for (const auto& n : promptgen_->trainable_params().names())
                p.frozen.push_back("heads." + n);
            break;
        case Variant::StaticPrompt:
            for (const auto& n : connector_->params().names()) p.frozen.push_back("connector." + n);
            for (const auto& n : promptgen_->trainable_params().names())
                p.frozen.push_back("heads." + n);
            for (const auto& n : static_store_.names()) p.trainable.push_back("static." + n);
            break;
        case Variant::Vicp:
            for (const auto& n : connector_->params().names()) p.trainable.push_back("connector." + n);
            for (const auto& n : promptgen_->trainable_params().names())
                p.trainable.push_back("heads." + n);
            break;
    }
    return p;
}

std::vector<Var> VicpModel::trainable_vars() const {
    std::vector<Var> out;
    switch (cfg_.variant) {
        case Variant::Frozen: break;
        case Variant::StaticPrompt:
            for (const Var& v : static_store_.all()) out.push_back(v);
            break;
        case Variant::Vicp:
            for (const Var& v : connector_->params().all()) out.push_back(v);
            for (const Var& v : promptgen_->trainable_params().all()) out.push_back(v);
            break;
    }
    return out;
}

std::map<std::string, Mat> VicpModel::snapshot_all() const {
    std::map<std::string, Mat> out;
    for (const auto& [k, v] : backbone_->params().snapshot()) out.emplace("backbone." + k, v);
    for (const auto& [k, v] : promptgen_->frozen_params().snapshot()) out.emplace("seqmodel." + k, v);
    for (const auto& [k, v] : connector_->params().snapshot()) out.emplace("connector." + k, v);
    for (const auto& [k, v] : promptgen_->trainable_params().snapshot()) out.emplace("heads." + k, v);
    for (const auto& [k, v] : static_store_.snapshot()) out.emplace("static." + k, v);
    return out;
}

void VicpModel::save(const std::string& dir) const {
    fs::create_directories(dir);
    ckpt::save_store(backbone_->params(), (fs::path(dir) / "backbone.tnsr").string());
    ckpt::save_store(promptgen_->frozen_params(), (fs::path(dir) / "seqmodel.tnsr").string());
    ckpt::save_store(connector_->params(), (fs::path(dir) / "connector.tnsr").string());
    ckpt::save_store(promptgen_->trainable_params(), (fs::path(dir) / "heads.tnsr").string());
    if (cfg_.variant == Variant::StaticPrompt)
        ckpt::save_store(static_store_, (fs::path(dir) / "static.tnsr").string());
    cache_.save((fs::path(dir) / "prompts_cache").string());
    std::ofstream f(fs::path(dir) / "config_snapshot.json");
    f << cfg_.to_json();
}

VicpModel VicpModel::load(const std::string& dir) {
    std::ifstream f(fs::path(dir) / "config_snapshot.json");
    if (!f) throw IoError("checkpoint missing config_snapshot.json: " + dir);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    VicpModel model(TrainConfig::from_json(text));
    const bool bb_frozen =
        ckpt::load_store(model.backbone_->params(), (fs::path(dir) / "backbone.tnsr").string());
    if (bb_frozen) model.backbone_->freeze();
    ckpt::load_store(model.promptgen_->frozen_params(), (fs::path(dir) / "seqmodel.tnsr").string());
    model.promptgen_->frozen_params().freeze_all();
    ckpt::load_store(model.connector_->params(), (fs::path(dir) / "connector.tnsr").string());
    ckpt::load_store(model.promptgen_->trainable_params(), (fs::path(dir) / "heads.tnsr").string());
    if (model.cfg_.variant == Variant::StaticPrompt)
        ckpt::load_store(model.static_store_, (fs::path(dir) / "static.tnsr").string());
    model.cache_.load((fs::path(dir) / "prompts_cache").string());
    return model;
}

backbone::VisualPrompt VicpModel::prompt_for_category(const synth::Corpus& corpus, int category_id,
                                                      const EvalOptions& opts) {
    switch (cfg_.variant) {
        case Variant::Frozen: return backbone::VisualPrompt{};
        case Variant::StaticPrompt: {
            backbone::VisualPrompt p;
            p.tokens = static_prompt_.value();
            p.source.category_id = category_id;
            return p;
        }
        default: {
            auto support = synth::sample_support_set(corpus, category_id, opts.k_support, opts.seed);
            return cache_.get_or_generate(corpus, support, *promptgen_, *backbone_, *connector_);
        }
    }
}

StepOutcome train_step(VicpModel& model, const synth::Corpus& corpus, int category_id,
                       nn::Adam& opt, std::mt19937_64& rng) {
    const TrainConfig& cfg = model.config();
    if (!corpus.manifest.is_base(category_id))
        throw ProtocolError("training sampled novel category " + std::to_string(category_id));
    if (cfg.variant == Variant::Frozen)
        throw ConfigError("the frozen variant has nothing to train");

    const std::uint64_t support_seed = rng();
    const std::uint64_t triplet_seed = rng();
    std::mt19937_64 shuffle_rng(rng());
    std::mt19937_64 flip_rng(rng());

    // Prompt path.
    Var prompt_var;
    Var l_icl;
    StepOutcome out;
    promptgen::PromptGenerator::ContextRun run;
    if (cfg.variant == Variant::Vicp) {
        auto support = synth::sample_support_set(corpus, category_id, cfg.k_support, support_seed);
        run = model.generator().run_context(corpus, support, model.vision(), model.connector(),
                                            &shuffle_rng);
        prompt_var = run.task_prompt;
        l_icl = model.generator().icl_loss(run.seq, run.hidden);
        out.icl_acc = model.generator().icl_accuracy(run.seq, run.hidden);
    } else {
        prompt_var = model.static_prompt();
    }

    auto triplets = synth::sample_triplets(corpus, category_id, cfg.triplets_per_step(), triplet_seed);

    // Encode each distinct record once; horizontal flip applies to triplet
    // images only, never to the support context.
    std::set<std::size_t> uniq;
    for (const auto& t : triplets) {
        uniq.insert(t.anchor);
        uniq.insert(t.positive);
        uniq.insert(t.negative);
    }
    std::map<std::size_t, backbone::VisionBackbone::Encoded> enc;
    for (std::size_t idx : uniq) {
        const auto& rec = corpus.records[idx];
        const bool flip = cfg.augment_hflip && (flip_rng() & 1u);
        enc.emplace(idx, model.vision().forward(flip ? rec.image.hflip() : rec.image, prompt_var));
    }

    std::vector<Var> a_rows, p_rows, n_rows;
    for (const auto& t : triplets) {
        a_rows.push_back(enc.at(t.anchor).cls_norm);
        p_rows.push_back(enc.at(t.positive).cls_norm);
        n_rows.push_back(enc.at(t.negative).cls_norm);
    }
    Var l_id = losses::triplet_loss(ag::vcat(a_rows), ag::vcat(p_rows), ag::vcat(n_rows),
                                    cfg.loss.margin_alpha);

    Var l_align;
    if (cfg.variant == Variant::Vicp && cfg.loss.lambda_align > 0.0) {
        std::vector<losses::AlignPair> pairs;
        for (const auto& t : triplets) {
            pairs.push_back({enc.at(t.anchor).patches, enc.at(t.positive).patches, 1});
            pairs.push_back({enc.at(t.anchor).patches, enc.at(t.negative).patches, 0});
        }
        l_align = losses::patch_align_loss(pairs, cfg.loss, cfg.ipot);
    }

    Var total = losses::total_loss(l_id, l_icl, l_align, cfg.loss);
    out.l_id = l_id.value()(0, 0);
    out.l_icl = l_icl.valid() ? l_icl.value()(0, 0) : 0.0;
    out.l_align = l_align.valid() ? l_align.value()(0, 0) : 0.0;
    out.total = total.value()(0, 0);

    auto trainable = model.trainable_vars();
    opt.zero_grad(trainable);
    ag::backward(total);
    opt.step(trainable);
    return out;
}

TrainResult train(VicpModel& model, const synth::Corpus& corpus, const std::string& out_dir,
                  const std::string& log_path) {
    const TrainConfig& cfg = model.config();
    if (!model.vision().frozen())
        throw ProtocolError("train: backbone must be pretrained and frozen first");
    if (cfg.variant == Variant::Frozen) throw ConfigError("train: frozen variant has no parameters");
    const auto& base = corpus.manifest.base_categories;
    if (base.empty()) throw ConfigError("train: corpus manifest declares no base categories");

    nn::Adam opt({.lr = cfg.lr,
                  .weight_decay = cfg.weight_decay,
                  .beta1 = cfg.beta1,
                  .beta2 = cfg.beta2});
    auto rng = make_rng(derive_seed(cfg.seed, "train_loop"));
    const int steps_per_epoch =
        cfg.steps_per_epoch > 0 ? cfg.steps_per_epoch : 2 * static_cast<int>(base.size());

    std::ofstream log;
    if (!log_path.empty()) {
        log.open(log_path);
        if (!log) throw IoError("cannot open training log: " + log_path);
    }

    // Last-good copy of the trainable values, restored on numeric failure.
    auto snapshot_trainables = [&] {
        std::map<const ag::Node*, Mat> snap;
        for (const Var& v : model.trainable_vars()) snap.emplace(v.node().get(), v.value());
        return snap;
    };
    auto restore = [&](const std::map<const ag::Node*, Mat>& snap) {
        for (const Var& v : model.trainable_vars()) v.node()->value = snap.at(v.node().get());
    };

    TrainResult result;
    auto last_good = snapshot_trainables();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (int s = 0; s < steps_per_epoch; ++s) {
            const int category = base[static_cast<std::size_t>(rng() % base.size())];
            StepOutcome step;
            try {
                step = train_step(model, corpus, category, opt, rng);
            } catch (const NumericError&) {
                restore(last_good);
                if (!out_dir.empty()) model.save(out_dir);
                throw NumericError("non-finite loss at step " + std::to_string(result.steps) +
                                   "; last-good checkpoint retained");
            }
            if (!std::isfinite(step.total)) {
                restore(last_good);
                if (!out_dir.empty()) model.save(out_dir);
                throw NumericError("non-finite loss at step " + std::to_string(result.steps) +
                                   "; last-good checkpoint retained");
            }
            last_good = snapshot_trainables();
            ++result.steps;
            result.last_l_id = step.l_id;
            result.last_l_icl = step.l_icl;
            result.last_l_align = step.l_align;
            result.last_total = step.total;
            if (log)
                log << json({{"step", result.steps},
                             {"epoch", epoch},
                             {"category", category},
                             {"l_id", step.l_id},
                             {"l_icl", step.l_icl},
                             {"l_align", step.l_align},
                             {"l_total", step.total},
                             {"icl_acc", step.icl_acc}})
                           .dump()
                    << "\n";
        }
        if (!out_dir.empty()) model.save(out_dir);
    }
    result.checkpoint_dir = out_dir;
    return result;
}

std::string corpus_fingerprint(const synth::Corpus& corpus) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(synth::manifest_to_json(corpus.manifest))));
    return buf;
}

reid::RetrievalReport evaluate_novel(VicpModel& model, const synth::Corpus& corpus,
                                     const EvalOptions& opts) {
    const auto& novel = corpus.manifest.novel_categories;
    if (novel.empty()) throw ConfigError("evaluate_novel: manifest declares no novel categories");

    std::vector<reid::CategoryReport> rows;
    for (int category : novel) {
        auto prompt = model.prompt_for_category(corpus, category, opts);

        const auto test_records = corpus.category_records(category, "test");
        if (test_records.empty())
            throw ProtocolError("evaluate_novel: category " + std::to_string(category) +
                                " has no test images");
        // Support images must never appear as query or gallery.
        if (model.variant() == Variant::Vicp) {
            auto support = synth::sample_support_set(corpus, category, opts.k_support, opts.seed);
            std::set<std::size_t> support_recs;
            for (const auto& p : support.pairs) {
                support_recs.insert(p.a);
                support_recs.insert(p.b);
            }
            for (std::size_t idx : test_records)
                if (support_recs.count(idx))
                    throw ProtocolError("evaluate_novel: support/test overlap in category " +
                                        std::to_string(category));
        }

        reid::EmbeddingSet set;
        set.category_id = category;
        set.embeddings.resize(static_cast<Eigen::Index>(test_records.size()),
                              model.config().backbone.d_vision);
        for (std::size_t i = 0; i < test_records.size(); ++i) {
            const auto& rec = corpus.records[test_records[i]];
            auto fb = model.vision().encode(rec.image, prompt.empty() ? nullptr : &prompt);
            set.embeddings.row(static_cast<Eigen::Index>(i)) = fb.cls.transpose();
            set.instance_ids.push_back(rec.instance_id);
            set.record_refs.push_back(test_records[i]);
        }

        reid::CategoryReport row;
        row.category_id = category;
        row.ident = reid::identification_eval(set);
        row.verif = reid::verification_eval(set, opts.verification_pairs, opts.verification_folds,
                                            opts.seed);
        if (model.variant() == Variant::Vicp) {
            auto support = synth::sample_support_set(corpus, category, opts.k_support, opts.seed);
            auto run = model.generator().run_context(corpus, support, model.vision(), model.connector());
            row.icl_accuracy = model.generator().icl_accuracy(run.seq, run.hidden);
        }
        rows.push_back(row);
    }

    const std::string fp = model.config().fingerprint() + "-" + corpus_fingerprint(corpus) + "-" +
                           variant_name(model.variant());
    return reid::assemble_report(std::move(rows), fp, opts.seed, opts.k_support);
}

std::vector<AblationCell> run_ablation(const synth::Corpus& corpus, const TrainConfig& base_cfg,
                                       const std::string& axis, const EvalOptions& eval_opts,
                                       const std::string& work_dir) {
    struct CellSpec {
        std::string label;
        TrainConfig cfg;
    };
    std::vector<CellSpec> cells;
    auto with = [&](const std::string& label, auto&& mutate) {
        TrainConfig c = base_cfg;
        mutate(c);
        c.sync_widths();
        cells.push_back({label, c});
    };

    if (axis == "components") {
        with("[i] frozen", [](TrainConfig& c) { c.variant = Variant::Frozen; });
        with("[ii] triplet prompt", [](TrainConfig& c) { c.variant = Variant::StaticPrompt; });
        with("[iv] icl prompts", [](TrainConfig& c) {
            c.variant = Variant::Vicp;
            c.loss.lambda_align = 0.0;
        });
        with("[vi] patch align", [](TrainConfig& c) { c.variant = Variant::Vicp; });
    } else if (axis == "K") {
        for (int k : {32, 64, 128})
            with("K=" + std::to_string(k), [k](TrainConfig& c) { c.k_support = k; });
    } else if (axis == "N") {
        for (int n : {16, 32, 64})
            with("N=" + std::to_string(n), [n](TrainConfig& c) { c.connector.n_latents = n; });
    } else {
        throw ConfigError("unknown ablation axis: " + axis + " (expected components, K or N)");
    }

    // One shared pretrained backbone keeps every cell's frozen features equal.
    VicpModel reference(base_cfg);
    backbone::pretrain_backbone(reference.vision(), corpus, base_cfg.pretrain);
    const auto backbone_weights = reference.vision().params().snapshot();

    std::vector<AblationCell> out;
    for (const auto& cell : cells) {
        VicpModel model(cell.cfg);
        model.vision().params().load(backbone_weights);
        model.vision().freeze();
        EvalOptions opts = eval_opts;
        opts.k_support = cell.cfg.k_support;
        if (cell.cfg.variant != Variant::Frozen) {
            std::string stem = cell.label;
            for (char& ch : stem)
                if (!std::isalnum(static_cast<unsigned char>(ch))) ch = '_';
            const std::string dir = work_dir.empty() ? "" : (fs::path(work_dir) / stem).string();
            train(model, corpus, dir);
        }
        out.push_back({cell.label, evaluate_novel(model, corpus, opts)});
    }
    return out;
}

}  // namespace vicp::pipeline
