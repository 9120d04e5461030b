// Command-line front end: corpus generation, backbone pretraining, VICP
// training, novel-category evaluation, ablations, and prompt-cache upkeep.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "vicp/pipeline.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace vicp;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read file: " + path);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

synth::GenerationConfig parse_generation(const std::string& config_text) {
    synth::GenerationConfig g;
    json j = json::parse(config_text);
    if (!j.contains("generation")) return g;
    const auto& b = j["generation"];
    g.n_categories = b.value("n_categories", g.n_categories);
    g.n_base_categories = b.value("n_base_categories", g.n_base_categories);
    g.instances_per_category = b.value("instances_per_category", g.instances_per_category);
    g.views_per_instance = b.value("views_per_instance", g.views_per_instance);
    g.support_views = b.value("support_views", g.support_views);
    g.image_size = b.value("image_size", g.image_size);
    g.seed = b.value("seed", g.seed);
    g.signal_mode = b.value("signal_mode", g.signal_mode);
    g.min_identity_separation = b.value("min_identity_separation", g.min_identity_separation);
    g.lighting_delta = b.value("lighting_delta", g.lighting_delta);
    g.rotation_max_deg = b.value("rotation_max_deg", g.rotation_max_deg);
    g.occlusion_probability = b.value("occlusion_probability", g.occlusion_probability);
    g.occlusion_max_fraction = b.value("occlusion_max_fraction", g.occlusion_max_fraction);
    g.background_amplitude = b.value("background_amplitude", g.background_amplitude);
    g.stripe_amplitude = b.value("stripe_amplitude", g.stripe_amplitude);
    g.glyph_radius = b.value("glyph_radius", g.glyph_radius);
    g.hue_shift_max = b.value("hue_shift_max", g.hue_shift_max);
    g.sat_shift_max = b.value("sat_shift_max", g.sat_shift_max);
    g.framing_jitter = b.value("framing_jitter", g.framing_jitter);
    g.tint_delta = b.value("tint_delta", g.tint_delta);
    return g;
}

pipeline::EvalOptions parse_eval(const std::string& config_text, const pipeline::TrainConfig& tc) {
    pipeline::EvalOptions e;
    e.k_support = tc.k_support;
    e.seed = tc.seed;
    json j = json::parse(config_text);
    if (j.contains("eval")) {
        const auto& b = j["eval"];
        e.k_support = b.value("k_support", e.k_support);
        e.seed = b.value("seed", e.seed);
        e.verification_pairs = b.value("verification_pairs", e.verification_pairs);
        e.verification_folds = b.value("verification_folds", e.verification_folds);
    }
    return e;
}

void print_report_table(const reid::RetrievalReport& rep, std::ostream& os) {
    os << "category        mAP   Rank-1  Rank-5     AUC     ACC\n";
    char line[128];
    for (const auto& c : rep.per_category) {
        std::snprintf(line, sizeof(line), "%8d %9.4f %8.4f %7.4f %7.4f %7.4f\n", c.category_id,
                      c.ident.mAP, c.ident.rank1, c.ident.rank5, c.verif.auc, c.verif.acc);
        os << line;
    }
    std::snprintf(line, sizeof(line), "%8s %9.4f %8.4f %7.4f %7.4f %7.4f\n", "mean",
                  rep.mean_ident.mAP, rep.mean_ident.rank1, rep.mean_ident.rank5, rep.mean_verif.auc,
                  rep.mean_verif.acc);
    os << line;
    std::snprintf(line, sizeof(line), "%8s %9.4f %8.4f %7.4f\n", "pooled", rep.pooled_ident.mAP,
                  rep.pooled_ident.rank1, rep.pooled_ident.rank5);
    os << line;
}

pipeline::TrainConfig config_with_overrides(const std::string& text, std::uint64_t* seed_flag) {
    auto cfg = pipeline::load_train_config(text);
    if (seed_flag) {
        cfg.seed = *seed_flag;
        cfg.sync_widths();
    }
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"visual in-context prompting for generalizable object re-identification"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_path, checkpoint_dir, backbone_path, axis = "components";
    std::uint64_t seed_flag = 0;
    bool seed_set = false;
    int k_override = 0;

    auto add_seed = [&](CLI::App* cmd) {
        cmd->add_option_function<std::uint64_t>(
            "--seed",
            [&](const std::uint64_t& v) {
                seed_flag = v;
                seed_set = true;
            },
            "override every seed in the config");
    };

    auto* c_gen = app.add_subcommand("gen", "generate a synthetic corpus");
    c_gen->add_option("--config", config_path, "config file (JSON)")->required();
    c_gen->add_option("--out", out_path, "output directory")->required();
    add_seed(c_gen);

    auto* c_pre = app.add_subcommand("pretrain", "pretrain and freeze the backbone");
    c_pre->add_option("--config", config_path)->required();
    c_pre->add_option("--data", data_dir, "corpus directory (with manifest.json)")->required();
    c_pre->add_option("--out", out_path, "output directory")->required();
    add_seed(c_pre);

    auto* c_train = app.add_subcommand("train", "train the trainable partition on base categories");
    c_train->add_option("--config", config_path)->required();
    c_train->add_option("--data", data_dir)->required();
    c_train->add_option("--backbone", backbone_path, "backbone.tnsr or a directory holding it")
        ->required();
    c_train->add_option("--out", out_path, "checkpoint directory")->required();
    add_seed(c_train);

    auto* c_eval = app.add_subcommand("eval", "evaluate novel categories from a checkpoint");
    c_eval->add_option("--checkpoint", checkpoint_dir)->required();
    c_eval->add_option("--data", data_dir)->required();
    c_eval->add_option("--K", k_override, "support pairs per category");
    c_eval->add_option("--out", out_path, "also write the report JSON here");
    add_seed(c_eval);

    auto* c_abl = app.add_subcommand("ablate", "run an ablation axis");
    c_abl->add_option("--config", config_path)->required();
    c_abl->add_option("--data", data_dir)->required();
    c_abl->add_option("--axis", axis, "components | K | N");
    c_abl->add_option("--out", out_path, "work directory for cell checkpoints");
    add_seed(c_abl);

    auto* c_cache = app.add_subcommand("prompt-cache", "manage the prompt cache of a checkpoint");
    std::string cache_action;
    c_cache->add_option("action", cache_action, "generate | inspect | clear")->required();
    c_cache->add_option("--checkpoint", checkpoint_dir)->required();
    c_cache->add_option("--data", data_dir);
    c_cache->add_option("--K", k_override);
    add_seed(c_cache);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << json({{"error", std::string("usage: ") + e.what()}}).dump() << "\n";
        return 2;
    }

    try {
        if (*c_gen) {
            auto g = parse_generation(slurp(config_path));
            if (seed_set) g.seed = seed_flag;
            auto corpus = synth::generate_corpus(g, out_path);
            std::cout << json({{"records", corpus.records.size()},
                               {"categories", corpus.manifest.categories.size()},
                               {"base", corpus.manifest.base_categories},
                               {"novel", corpus.manifest.novel_categories},
                               {"manifest", (fs::path(out_path) / "manifest.json").string()}})
                             .dump(2)
                      << "\n";
        } else if (*c_pre) {
            const auto text = slurp(config_path);
            auto cfg = config_with_overrides(text, seed_set ? &seed_flag : nullptr);
            auto corpus = synth::load_corpus((fs::path(data_dir) / "manifest.json").string());
            backbone::VisionBackbone bb(cfg.backbone);
            auto report = backbone::pretrain_backbone(bb, corpus, cfg.pretrain);
            fs::create_directories(out_path);
            ckpt::save_store(bb.params(), (fs::path(out_path) / "backbone.tnsr").string());
            std::cout << json({{"holdout_accuracy", report.holdout_accuracy},
                               {"n_train", report.n_train},
                               {"n_holdout", report.n_holdout},
                               {"steps", report.steps},
                               {"backbone", (fs::path(out_path) / "backbone.tnsr").string()}})
                             .dump(2)
                      << "\n";
        } else if (*c_train) {
            const auto text = slurp(config_path);
            auto cfg = config_with_overrides(text, seed_set ? &seed_flag : nullptr);
            auto corpus = synth::load_corpus((fs::path(data_dir) / "manifest.json").string());
            pipeline::VicpModel model(cfg);
            fs::path bb_file = backbone_path;
            if (fs::is_directory(bb_file)) bb_file /= "backbone.tnsr";
            const bool frozen = ckpt::load_store(model.vision().params(), bb_file.string());
            if (!frozen)
                throw ProtocolError("backbone checkpoint is not marked frozen; run pretrain first");
            model.vision().freeze();
            fs::create_directories(out_path);
            auto result = pipeline::train(model, corpus, out_path,
                                          (fs::path(out_path) / "train_log.jsonl").string());
            std::cout << json({{"steps", result.steps},
                               {"l_id", result.last_l_id},
                               {"l_icl", result.last_l_icl},
                               {"l_align", result.last_l_align},
                               {"l_total", result.last_total},
                               {"checkpoint", out_path}})
                             .dump(2)
                      << "\n";
        } else if (*c_eval) {
            auto corpus = synth::load_corpus((fs::path(data_dir) / "manifest.json").string());
            auto model = pipeline::VicpModel::load(checkpoint_dir);
            pipeline::EvalOptions opts;
            opts.k_support = k_override > 0 ? k_override : model.config().k_support;
            opts.seed = seed_set ? seed_flag : model.config().seed;
            auto report = pipeline::evaluate_novel(model, corpus, opts);
            print_report_table(report, std::cerr);
            std::cout << report.to_json();
            if (!out_path.empty()) {
                std::ofstream f(out_path);
                f << report.to_json();
            }
        } else if (*c_abl) {
            const auto text = slurp(config_path);
            auto cfg = config_with_overrides(text, seed_set ? &seed_flag : nullptr);
            auto corpus = synth::load_corpus((fs::path(data_dir) / "manifest.json").string());
            auto opts = parse_eval(text, cfg);
            if (seed_set) opts.seed = seed_flag;
            auto cells = pipeline::run_ablation(corpus, cfg, axis, opts, out_path);
            json table = json::array();
            std::cerr << "cell                          mAP   Rank-1     AUC\n";
            for (const auto& cell : cells) {
                char line[128];
                std::snprintf(line, sizeof(line), "%-24s %8.4f %8.4f %7.4f\n", cell.label.c_str(),
                              cell.report.mean_ident.mAP, cell.report.mean_ident.rank1,
                              cell.report.mean_verif.auc);
                std::cerr << line;
                table.push_back({{"cell", cell.label},
                                 {"mAP", cell.report.mean_ident.mAP},
                                 {"rank1", cell.report.mean_ident.rank1},
                                 {"rank5", cell.report.mean_ident.rank5},
                                 {"auc", cell.report.mean_verif.auc},
                                 {"acc", cell.report.mean_verif.acc}});
            }
            std::cout << table.dump(2) << "\n";
        } else if (*c_cache) {
            auto model = pipeline::VicpModel::load(checkpoint_dir);
            const auto cache_dir = (fs::path(checkpoint_dir) / "prompts_cache").string();
            if (cache_action == "inspect") {
                std::cout << json({{"entries", model.cache().size()}, {"dir", cache_dir}}).dump(2)
                          << "\n";
            } else if (cache_action == "clear") {
                model.cache().clear();
                fs::remove_all(cache_dir);
                std::cout << json({{"entries", 0}}).dump(2) << "\n";
            } else if (cache_action == "generate") {
                if (data_dir.empty()) throw ConfigError("prompt-cache generate requires --data");
                auto corpus = synth::load_corpus((fs::path(data_dir) / "manifest.json").string());
                pipeline::EvalOptions opts;
                opts.k_support = k_override > 0 ? k_override : model.config().k_support;
                opts.seed = seed_set ? seed_flag : model.config().seed;
                for (int category : corpus.manifest.novel_categories)
                    model.prompt_for_category(corpus, category, opts);
                model.cache().save(cache_dir);
                std::cout << json({{"entries", model.cache().size()}, {"dir", cache_dir}}).dump(2)
                          << "\n";
            } else {
                std::cerr << json({{"error", "usage: unknown prompt-cache action " + cache_action}})
                                 .dump()
                          << "\n";
                return 2;
            }
        }
    } catch (const ConfigError& e) {
        std::cerr << json({{"error", e.what()}}).dump() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << json({{"error", e.what()}}).dump() << "\n";
        return 1;
    }
    return 0;
}
