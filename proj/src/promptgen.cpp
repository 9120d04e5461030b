#include "vicp/promptgen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace vicp::promptgen {

Mat sinusoidal_positions(Eigen::Index length, Eigen::Index d) {
    Mat pe(length, d);
    for (Eigen::Index pos = 0; pos < length; ++pos) {
        for (Eigen::Index i = 0; i < d; i += 2) {
            const double div = std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
            pe(pos, i) = std::sin(pos / div);
            if (i + 1 < d) pe(pos, i + 1) = std::cos(pos / div);
        }
    }
    return pe;
}

PromptGenerator::PromptGenerator(const PromptGenConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    auto rng = make_rng(derive_seed(cfg.init_seed, "seqmodel"));
    blocks_.reserve(static_cast<std::size_t>(cfg.n_layers));
    for (int l = 0; l < cfg.n_layers; ++l)
        blocks_.emplace_back(frozen_, "layer" + std::to_string(l), cfg.d_llm, cfg.n_heads,
                             cfg.mlp_ratio, rng);
    ln_final_ = nn::LayerNorm(frozen_, "ln_final", cfg.d_llm);

    if (cfg.synthetic_pretrain_steps > 0) {
        auto prng = make_rng(derive_seed(cfg.init_seed, "seqmodel_pretrain"));
        synthetic_pretrain(prng, cfg.synthetic_pretrain_steps);
    }
    frozen_.freeze_all();  // random-feature reservoir unless pretrained above

    auto trng = make_rng(derive_seed(cfg.init_seed, "promptgen_trainable"));
    p_learn_ = trainable_.create("p_learn", nn::randn(cfg.m_prompts, cfg.d_llm, trng, 0.5));
    label_head_ = nn::Linear(trainable_, "label_head", cfg.d_llm, 2, trng);
    visual_fc1_ = nn::Linear(trainable_, "visual_head.fc1", cfg.d_llm, cfg.visual_hidden, trng);
    visual_fc2_ = nn::Linear(trainable_, "visual_head.fc2", cfg.visual_hidden, cfg.d_vision, trng);
}

void PromptGenerator::synthetic_pretrain(std::mt19937_64& rng, int steps) {
    // Next-token prediction over synthetic pair sequences of pure random
    // vectors: blocks [a_k; b_k; l_k] where b_k either repeats a_k (plus
    // noise) or is independent, and l_k is one of two fixed marker rows.
    // Predicting the marker from the position before it requires comparing
    // the two halves of the block, which builds the generic match-and-read
    // circuitry a pretrained language model would bring. No task data is
    // involved, and the pretraining head and markers are discarded.
    const Eigen::Index d = cfg_.d_llm;
    const Mat markers = nn::randn(2, d, rng, 1.0);

    nn::ParamStore head_store;
    nn::Linear lm_head(head_store, "lm_head", d, 2, rng);
    std::vector<Var> trainable = frozen_.all();
    for (const Var& v : head_store.all()) trainable.push_back(v);
    nn::Adam opt({.lr = 1e-3, .weight_decay = 0.0});

    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int step = 0; step < steps; ++step) {
        const int rows_per_item = 1 << (rng() % 3);           // 1, 2 or 4
        const int k_pairs = 4 + static_cast<int>(rng() % 6);  // 4..9
        const Eigen::Index block = 2 * rows_per_item + 1;
        const Eigen::Index len = k_pairs * block;
        Mat x(len, d);
        std::vector<int> labels(static_cast<std::size_t>(k_pairs));
        std::vector<Eigen::Index> read_pos(static_cast<std::size_t>(k_pairs));
        for (int k = 0; k < k_pairs; ++k) {
            const Mat a = nn::randn(rows_per_item, d, rng, 1.0);
            const int y = static_cast<int>(rng() % 2);
            const Mat b = y ? Mat(a + nn::randn(rows_per_item, d, rng, 0.15))
                            : nn::randn(rows_per_item, d, rng, 1.0);
            const Eigen::Index base = k * block;
            x.middleRows(base, rows_per_item) = a;
            x.middleRows(base + rows_per_item, rows_per_item) = b;
            x.row(base + 2 * rows_per_item) = markers.row(y);
            labels[static_cast<std::size_t>(k)] = y;
            read_pos[static_cast<std::size_t>(k)] = base + 2 * rows_per_item - 1;
        }
        Var h = ag::add(ag::constant(x), ag::constant(sinusoidal_positions(len, d)));
        const Mat mask = nn::causal_mask(len);
        for (const auto& b : blocks_) h = b.forward(h, &mask);
        h = ln_final_.forward(h);
        std::vector<Var> rows;
        rows.reserve(read_pos.size());
        for (Eigen::Index p : read_pos) rows.push_back(ag::rows(h, p, 1));
        Var loss = ag::scale(ag::cross_entropy_rows(lm_head.forward(ag::vcat(rows)), labels),
                             1.0 / k_pairs);
        opt.zero_grad(trainable);
        ag::backward(loss);
        opt.step(trainable);
    }
}

Var PromptGenerator::forward_context(const connector::PairSequence& seq) const {
    if (!seq.tokens.valid()) throw ProtocolError("forward_context: sequence has no tokens");
    if (seq.tokens.cols() != cfg_.d_llm)
        throw ShapeError("forward_context: token width " + std::to_string(seq.tokens.cols()) +
                         " != d_llm " + std::to_string(cfg_.d_llm));
    Var tokens = seq.tokens;
    const Eigen::Index L = tokens.rows();
    if (seq.layout.m > 0) {
        if (seq.layout.m != cfg_.m_prompts)
            throw ShapeError("forward_context: sequence prompt slots != configured M");
        tokens = ag::vcat({ag::rows(tokens, 0, L - seq.layout.m), p_learn_});
    }
    Var h = ag::add(tokens, ag::constant(sinusoidal_positions(L, cfg_.d_llm)));
    const Mat mask = nn::causal_mask(L);
    for (const auto& block : blocks_) h = block.forward(h, &mask);
    return ln_final_.forward(h);
}

namespace {

Var gather_label_logits(const connector::PairSequence& seq, const Var& hidden,
                        const nn::Linear& head) {
    if (seq.label_positions.empty()) throw ProtocolError("icl_loss: no label positions in sequence");
    std::vector<Var> rows;
    rows.reserve(seq.label_positions.size());
    for (Eigen::Index pos : seq.label_positions) {
        if (pos < 1 || pos >= hidden.rows())
            throw ShapeError("icl_loss: label position out of range");
        rows.push_back(ag::rows(hidden, pos - 1, 1));  // next-token prediction of the label slot
    }
    return head.forward(ag::vcat(rows));
}

}  // namespace

Var PromptGenerator::icl_loss(const connector::PairSequence& seq, const Var& hidden) const {
    Var logits = gather_label_logits(seq, hidden, label_head_);
    return ag::cross_entropy_rows(logits, seq.labels);
}

Var PromptGenerator::icl_loss_masked(const Var& hidden, const std::vector<int>& targets,
                                     const std::vector<char>& supervised) const {
    if (targets.size() != supervised.size() ||
        static_cast<Eigen::Index>(targets.size()) != hidden.rows())
        throw ShapeError("icl_loss_masked: targets/mask must cover every position");
    std::vector<Var> rows;
    std::vector<int> kept;
    for (std::size_t p = 0; p < targets.size(); ++p) {
        if (!supervised[p]) continue;  // unsupervised targets contribute exactly zero
        if (p == 0) throw ProtocolError("icl_loss_masked: position 0 has no predecessor");
        rows.push_back(ag::rows(hidden, static_cast<Eigen::Index>(p) - 1, 1));
        kept.push_back(targets[p]);
    }
    if (rows.empty()) throw ProtocolError("icl_loss_masked: no supervised positions");
    return ag::cross_entropy_rows(label_head_.forward(ag::vcat(rows)), kept);
}

std::vector<double> PromptGenerator::icl_per_pair_losses(const connector::PairSequence& seq,
                                                         const Var& hidden) const {
    Mat logits = gather_label_logits(seq, hidden, label_head_).value();
    std::vector<double> out;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double mx = logits.row(i).maxCoeff();
        const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
        out.push_back(lse - logits(i, seq.labels[static_cast<std::size_t>(i)]));
    }
    return out;
}

double PromptGenerator::icl_accuracy(const connector::PairSequence& seq, const Var& hidden) const {
    Mat logits = gather_label_logits(seq, hidden, label_head_).value();
    int correct = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const int pred = logits(i, 1) > logits(i, 0) ? 1 : 0;
        if (pred == seq.labels[static_cast<std::size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

Var PromptGenerator::task_prompt_from_hidden(const Var& hidden) const {
    if (cfg_.m_prompts == 0) throw ConfigError("prompt generation with M = 0 is meaningless");
    Var prompt_hidden = ag::rows(hidden, hidden.rows() - cfg_.m_prompts, cfg_.m_prompts);
    return visual_fc2_.forward(ag::gelu(visual_fc1_.forward(prompt_hidden)));
}

PromptGenerator::ContextRun PromptGenerator::run_context(const synth::Corpus& corpus,
                                                         const synth::SupportSet& support,
                                                         const backbone::VisionBackbone& bb,
                                                         const connector::QueryConnector& qc,
                                                         std::mt19937_64* shuffle_rng) const {
    // Deduplicate support images; each is encoded prompt-free and compressed once.
    std::map<std::size_t, connector::LatentTokens> latents;
    auto latents_of = [&](std::size_t rec_idx) -> const connector::LatentTokens& {
        auto it = latents.find(rec_idx);
        if (it != latents.end()) return it->second;
        const auto& rec = corpus.records[rec_idx];
        auto enc = bb.forward(rec.image, Var());
        Var tokens = ag::vcat({enc.cls_raw, enc.patches});
        return latents.emplace(rec_idx, qc.compress(tokens)).first->second;
    };

    std::vector<std::pair<connector::LatentTokens, connector::LatentTokens>> pairs;
    std::vector<int> labels;
    for (const auto& p : support.pairs) {
        pairs.emplace_back(latents_of(p.a), latents_of(p.b));
        labels.push_back(p.label);
    }

    ContextRun run;
    run.seq = qc.build_context(pairs, labels, cfg_.m_prompts, shuffle_rng);
    run.hidden = forward_context(run.seq);
    if (cfg_.m_prompts > 0) run.task_prompt = task_prompt_from_hidden(run.hidden);
    return run;
}

backbone::VisualPrompt PromptGenerator::generate_prompt(const synth::Corpus& corpus,
                                                        const synth::SupportSet& support,
                                                        const backbone::VisionBackbone& bb,
                                                        const connector::QueryConnector& qc) const {
    if (cfg_.m_prompts == 0) throw ConfigError("prompt generation with M = 0 is meaningless");
    auto run = run_context(corpus, support, bb, qc);
    ++generation_count_;
    backbone::VisualPrompt prompt;
    prompt.tokens = run.task_prompt.value();
    ag::check_finite(prompt.tokens, "generated prompt");
    prompt.source.category_id = support.category_id;
    prompt.source.support_seed = support.seed;
    prompt.source.checksum = support.checksum;
    return prompt;
}

std::vector<PromptCache::PairKey> PromptCache::keys_of(const synth::Corpus& corpus,
                                                       const synth::SupportSet& support) {
    std::vector<PairKey> keys;
    keys.reserve(support.pairs.size());
    for (const auto& p : support.pairs) {
        const auto& a = corpus.records[p.a];
        const auto& b = corpus.records[p.b];
        keys.push_back({a.instance_id, a.view_index, b.instance_id, b.view_index, p.label});
    }
    return keys;
}

const backbone::VisualPrompt& PromptCache::get_or_generate(const synth::Corpus& corpus,
                                                           const synth::SupportSet& support,
                                                           const PromptGenerator& gen,
                                                           const backbone::VisionBackbone& bb,
                                                           const connector::QueryConnector& qc) {
    const auto key = std::make_pair(support.category_id, support.checksum);
    {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = entries_.find(key);
        if (it != entries_.end()) {
            if (it->second.pairs != keys_of(corpus, support))
                throw IntegrityError("prompt cache checksum collision for category " +
                                     std::to_string(support.category_id));
            return it->second.prompt;
        }
    }
    Entry e;
    e.prompt = gen.generate_prompt(corpus, support, bb, qc);
    e.pairs = keys_of(corpus, support);
    std::lock_guard<std::mutex> lock(mu_);
    auto [it, inserted] = entries_.emplace(key, std::move(e));
    return it->second.prompt;
}

bool PromptCache::contains(int category_id, std::uint64_t checksum) const {
    std::lock_guard<std::mutex> lock(mu_);
    return entries_.count({category_id, checksum}) > 0;
}

std::size_t PromptCache::size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return entries_.size();
}

void PromptCache::clear() {
    std::lock_guard<std::mutex> lock(mu_);
    entries_.clear();
}

void PromptCache::save(const std::string& dir) const {
    std::lock_guard<std::mutex> lock(mu_);
    fs::create_directories(dir);
    for (const auto& [key, entry] : entries_) {
        char stem[64];
        std::snprintf(stem, sizeof(stem), "cat%03d_%016llx", key.first,
                      static_cast<unsigned long long>(key.second));
        json j;
        j["category_id"] = key.first;
        j["checksum"] = key.second;
        j["support_seed"] = entry.prompt.source.support_seed;
        j["m"] = entry.prompt.tokens.rows();
        j["d_vision"] = entry.prompt.tokens.cols();
        j["byte_order"] = "little";
        j["pairs"] = json::array();
        for (const auto& p : entry.pairs)
            j["pairs"].push_back({p.a_instance, p.a_view, p.b_instance, p.b_view, p.label});
        std::ofstream kf(fs::path(dir) / (std::string(stem) + ".json"));
        kf << j.dump(2) << "\n";

        std::ofstream bf(fs::path(dir) / (std::string(stem) + ".bin"), std::ios::binary);
        const Mat& t = entry.prompt.tokens;
        for (Eigen::Index i = 0; i < t.rows(); ++i) {
            Eigen::RowVectorXd row = t.row(i);
            bf.write(reinterpret_cast<const char*>(row.data()),
                     static_cast<std::streamsize>(sizeof(double) * t.cols()));
        }
    }
}

void PromptCache::load(const std::string& dir) {
    std::lock_guard<std::mutex> lock(mu_);
    entries_.clear();
    if (!fs::exists(dir)) return;
    std::vector<fs::path> keys;
    for (const auto& de : fs::directory_iterator(dir))
        if (de.path().extension() == ".json") keys.push_back(de.path());
    std::sort(keys.begin(), keys.end());
    for (const auto& kp : keys) {
        std::ifstream kf(kp);
        json j;
        kf >> j;
        Entry e;
        const int category_id = j.at("category_id").get<int>();
        const std::uint64_t checksum = j.at("checksum").get<std::uint64_t>();
        e.prompt.source.category_id = category_id;
        e.prompt.source.checksum = checksum;
        e.prompt.source.support_seed = j.at("support_seed").get<std::uint64_t>();
        const Eigen::Index m = j.at("m").get<Eigen::Index>();
        const Eigen::Index d = j.at("d_vision").get<Eigen::Index>();
        for (const auto& jp : j.at("pairs"))
            e.pairs.push_back({jp[0].get<int>(), jp[1].get<int>(), jp[2].get<int>(), jp[3].get<int>(),
                               jp[4].get<int>()});
        fs::path bin = kp;
        bin.replace_extension(".bin");
        std::ifstream bf(bin, std::ios::binary);
        if (!bf) throw IoError("prompt cache entry missing tensor file: " + bin.string());
        e.prompt.tokens.resize(m, d);
        for (Eigen::Index i = 0; i < m; ++i) {
            Eigen::RowVectorXd row(d);
            bf.read(reinterpret_cast<char*>(row.data()),
                    static_cast<std::streamsize>(sizeof(double) * d));
            e.prompt.tokens.row(i) = row;
        }
        if (!bf) throw IoError("prompt cache entry truncated: " + bin.string());
        entries_.emplace(std::make_pair(category_id, checksum), std::move(e));
    }
}

}  // namespace vicp::promptgen
