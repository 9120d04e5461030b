#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "vicp/pipeline.hpp"

using namespace vicp;
using ag::Mat;
using ag::Var;
using pipeline::TrainConfig;
using pipeline::Variant;
using pipeline::VicpModel;

namespace {

TrainConfig tiny_cfg(Variant variant = Variant::Vicp) {
    TrainConfig cfg;
    cfg.backbone.image_size = 16;
    cfg.backbone.patch_size = 8;
    cfg.backbone.d_vision = 12;
    cfg.backbone.n_layers = 2;
    cfg.backbone.n_heads = 2;
    cfg.backbone.mlp_ratio = 2;
    cfg.connector.n_latents = 2;
    cfg.connector.d_llm = 16;
    cfg.connector.n_blocks = 1;
    cfg.connector.n_heads = 2;
    cfg.promptgen.n_layers = 2;
    cfg.promptgen.n_heads = 2;
    cfg.promptgen.mlp_ratio = 2;
    cfg.promptgen.m_prompts = 2;
    cfg.promptgen.visual_hidden = 16;
    cfg.pretrain.epochs = 1;
    cfg.pretrain.batch_size = 8;
    cfg.ipot.outer_iters = 30;
    cfg.epochs = 1;
    cfg.batch_size = 8;  // 2 triplets per step
    cfg.k_support = 4;
    cfg.steps_per_epoch = 2;
    cfg.variant = variant;
    cfg.seed = 123;
    cfg.sync_widths();
    return cfg;
}

synth::Corpus tiny_corpus() {
    synth::GenerationConfig g;
    g.n_categories = 4;
    g.n_base_categories = 2;
    g.instances_per_category = 3;
    g.views_per_instance = 5;
    g.support_views = 2;
    g.image_size = 16;
    g.seed = 99;
    return synth::generate_corpus(g);
}

}  // namespace

TEST_CASE("train config JSON round-trips and honors the env seed override") {
    auto cfg = tiny_cfg();
    auto text = cfg.to_json();
    auto back = TrainConfig::from_json(text);
    CHECK(back.to_json() == text);
    CHECK(back.fingerprint() == cfg.fingerprint());
    CHECK(text.find("\"triplets_per_step\": 2") != std::string::npos);

    setenv("VICP_SEED", "777", 1);
    auto overridden = pipeline::load_train_config(text);
    CHECK(overridden.seed == 777);
    unsetenv("VICP_SEED");
    CHECK(pipeline::load_train_config(text).seed == 123);
}

TEST_CASE("training requires a pretrained frozen backbone") {
    auto corpus = tiny_corpus();
    VicpModel model(tiny_cfg());
    CHECK_THROWS_AS(pipeline::train(model, corpus, ""), ProtocolError);
}

TEST_CASE("training a novel category is a protocol error") {
    auto corpus = tiny_corpus();
    VicpModel model(tiny_cfg());
    backbone::pretrain_backbone(model.vision(), corpus, model.config().pretrain);
    nn::Adam opt({.lr = 1e-4});
    auto rng = make_rng(1);
    const int novel = corpus.manifest.novel_categories.front();
    CHECK_THROWS_AS(pipeline::train_step(model, corpus, novel, opt, rng), ProtocolError);
}

TEST_CASE("full run touches exactly the trainable partition") {
    auto corpus = tiny_corpus();
    VicpModel model(tiny_cfg());
    backbone::pretrain_backbone(model.vision(), corpus, model.config().pretrain);

    const auto before = model.snapshot_all();
    auto result = pipeline::train(model, corpus, "");
    CHECK(result.steps == 2);
    const auto after = model.snapshot_all();

    auto partition = model.partition();
    std::set<std::string> trainable(partition.trainable.begin(), partition.trainable.end());
    std::set<std::string> changed;
    for (const auto& [name, m] : before) {
        const Mat& o = after.at(name);
        if ((m - o).cwiseAbs().maxCoeff() != 0.0) changed.insert(name);
    }
    CHECK(changed == trainable);

    // Frozen components are bit-identical (hash check agrees).
    CHECK(backbone::freeze_check(before, after) == false);  // trainables did change
    auto frozen_only = [&](const std::map<std::string, Mat>& snap) {
        std::map<std::string, Mat> out;
        for (const auto& [k, v] : snap)
            if (k.rfind("backbone.", 0) == 0 || k.rfind("seqmodel.", 0) == 0) out.emplace(k, v);
        return out;
    };
    CHECK(backbone::freeze_check(frozen_only(before), frozen_only(after)));
}

TEST_CASE("id loss gradient reaches P_learn through prompt injection") {
    auto corpus = tiny_corpus();
    VicpModel model(tiny_cfg());
    backbone::pretrain_backbone(model.vision(), corpus, model.config().pretrain);

    const int cat = corpus.manifest.base_categories.front();
    auto support = synth::sample_support_set(corpus, cat, 4, 5);
    auto run = model.generator().run_context(corpus, support, model.vision(), model.connector());
    auto triplets = synth::sample_triplets(corpus, cat, 2, 6);

    std::vector<Var> a, p, n;
    for (const auto& t : triplets) {
        a.push_back(model.vision().forward(corpus.records[t.anchor].image, run.task_prompt).cls_norm);
        p.push_back(model.vision().forward(corpus.records[t.positive].image, run.task_prompt).cls_norm);
        n.push_back(model.vision().forward(corpus.records[t.negative].image, run.task_prompt).cls_norm);
    }
    Var l_id = losses::triplet_loss(ag::vcat(a), ag::vcat(p), ag::vcat(n), 0.5);
    ag::backward(l_id);

    auto p_learn = model.generator().trainable_params().get("p_learn");
    REQUIRE(p_learn.node()->grad_live);
    CHECK(p_learn.grad().cwiseAbs().maxCoeff() > 0.0);
    auto vh = model.generator().trainable_params().get("visual_head.fc1.W");
    CHECK(vh.node()->grad_live);
    for (const Var& v : model.vision().params().all()) CHECK_FALSE(v.node()->grad_live);
}

TEST_CASE("checkpoints round-trip bit-exactly, including the prompt cache") {
    namespace fs = std::filesystem;
    auto corpus = tiny_corpus();
    VicpModel model(tiny_cfg());
    backbone::pretrain_backbone(model.vision(), corpus, model.config().pretrain);
    pipeline::train(model, corpus, "");

    pipeline::EvalOptions opts;
    opts.k_support = 4;
    opts.seed = 11;
    opts.verification_pairs = 40;
    opts.verification_folds = 3;
    auto report = pipeline::evaluate_novel(model, corpus, opts);
    CHECK(model.cache().size() == corpus.manifest.novel_categories.size());

    const auto dir = (fs::temp_directory_path() / "vicp_ckpt_test").string();
    fs::remove_all(dir);
    model.save(dir);
    auto loaded = VicpModel::load(dir);
    CHECK(nn::snapshots_identical(model.snapshot_all(), loaded.snapshot_all()));
    CHECK(loaded.vision().frozen());
    CHECK(loaded.cache().size() == model.cache().size());

    // The reloaded model (with its persisted cache) reproduces the report.
    auto report2 = pipeline::evaluate_novel(loaded, corpus, opts);
    CHECK(report2.to_json() == report.to_json());
    fs::remove_all(dir);
}

TEST_CASE("evaluation covers exactly the novel categories and is deterministic") {
    auto corpus = tiny_corpus();
    VicpModel model(tiny_cfg());
    backbone::pretrain_backbone(model.vision(), corpus, model.config().pretrain);
    pipeline::train(model, corpus, "");

    pipeline::EvalOptions opts;
    opts.k_support = 4;
    opts.seed = 3;
    opts.verification_pairs = 40;
    opts.verification_folds = 3;
    auto r1 = pipeline::evaluate_novel(model, corpus, opts);
    std::vector<int> cats;
    for (const auto& row : r1.per_category) cats.push_back(row.category_id);
    CHECK(cats == corpus.manifest.novel_categories);
    for (const auto& row : r1.per_category) CHECK(row.icl_accuracy >= 0.0);

    VicpModel model2(tiny_cfg());
    backbone::pretrain_backbone(model2.vision(), corpus, model2.config().pretrain);
    pipeline::train(model2, corpus, "");
    auto r2 = pipeline::evaluate_novel(model2, corpus, opts);
    CHECK(r1.to_json() == r2.to_json());  // bit-identical reports
}

TEST_CASE("cached and regenerated prompts encode identically") {
    auto corpus = tiny_corpus();
    VicpModel model(tiny_cfg());
    backbone::pretrain_backbone(model.vision(), corpus, model.config().pretrain);
    pipeline::train(model, corpus, "");

    const int cat = corpus.manifest.novel_categories.front();
    auto support = synth::sample_support_set(corpus, cat, 4, 7);
    const auto& cached = model.cache().get_or_generate(corpus, support, model.generator(),
                                                       model.vision(), model.connector());
    auto fresh = model.generator().generate_prompt(corpus, support, model.vision(), model.connector());
    const auto& img = corpus.records[corpus.category_records(cat, "test").front()].image;
    auto e1 = model.vision().encode(img, &cached);
    auto e2 = model.vision().encode(img, &fresh);
    CHECK(e1.cls == e2.cls);
    CHECK(e1.patches == e2.patches);
}

TEST_CASE("static prompt variant trains only its own parameter") {
    auto corpus = tiny_corpus();
    VicpModel model(tiny_cfg(Variant::StaticPrompt));
    backbone::pretrain_backbone(model.vision(), corpus, model.config().pretrain);

    const auto before = model.snapshot_all();
    pipeline::train(model, corpus, "");
    const auto after = model.snapshot_all();
    std::set<std::string> changed;
    for (const auto& [name, m] : before)
        if ((m - after.at(name)).cwiseAbs().maxCoeff() != 0.0) changed.insert(name);
    CHECK(changed == std::set<std::string>{"static.static_prompt"});

    pipeline::EvalOptions opts;
    opts.verification_pairs = 40;
    opts.verification_folds = 3;
    auto report = pipeline::evaluate_novel(model, corpus, opts);
    CHECK(report.per_category.size() == corpus.manifest.novel_categories.size());
    for (const auto& row : report.per_category) CHECK(row.icl_accuracy == -1.0);
}

TEST_CASE("ablation cells share the corpus fingerprint") {
    auto corpus = tiny_corpus();
    auto cfg = tiny_cfg();
    pipeline::EvalOptions opts;
    opts.k_support = 4;
    opts.verification_pairs = 40;
    opts.verification_folds = 3;

    auto cells = pipeline::run_ablation(corpus, cfg, "K", opts, "");
    REQUIRE(cells.size() == 3);
    CHECK(cells[0].label == "K=32");
    CHECK(cells[2].label == "K=128");
    const std::string fp = pipeline::corpus_fingerprint(corpus);
    for (const auto& cell : cells)
        CHECK(cell.report.config_fingerprint.find(fp) != std::string::npos);

    CHECK_THROWS_AS(pipeline::run_ablation(corpus, cfg, "bogus", opts, ""), ConfigError);
}
