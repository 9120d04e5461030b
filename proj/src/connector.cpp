#include "vicp/connector.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

namespace vicp::connector {

QueryConnector::QueryConnector(const ConnectorConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    auto rng = make_rng(derive_seed(cfg.init_seed, "connector"));
    queries_ = params_.create("queries", nn::randn(cfg.n_latents, cfg.d_llm, rng, 0.5));
    ln_input_ = nn::LayerNorm(params_, "ln_input", cfg.d_vision);
    blocks_.reserve(static_cast<std::size_t>(cfg.n_blocks));
    for (int b = 0; b < cfg.n_blocks; ++b)
        blocks_.emplace_back(params_, "block" + std::to_string(b), cfg.d_llm, cfg.d_vision,
                             cfg.n_heads, cfg.mlp_ratio, rng);
    ln_out_ = nn::LayerNorm(params_, "ln_out", cfg.d_llm);
    proj_out_ = nn::Linear(params_, "proj_out", cfg.d_llm, cfg.d_llm, rng);
    label_table_ = params_.create("label_table", nn::randn(2, cfg.d_llm, rng, 0.5));
}

LatentTokens QueryConnector::compress(const Var& image_tokens) const {
    if (image_tokens.cols() != cfg_.d_vision)
        throw ShapeError("connector: input width " + std::to_string(image_tokens.cols()) +
                         " != d_vision " + std::to_string(cfg_.d_vision));
    Var ctx = ln_input_.forward(image_tokens);
    Var x = queries_;
    for (const auto& block : blocks_) x = block.forward(x, ctx);
    LatentTokens out;
    out.tokens = proj_out_.forward(ln_out_.forward(x));
    return out;
}

Var QueryConnector::label_embedding_row(int label) const {
    if (label != 0 && label != 1) throw ConfigError("label must be 0 or 1");
    return ag::rows(label_table_, label, 1);
}

PairSequence QueryConnector::build_pair(const LatentTokens& li, const LatentTokens& lj,
                                        int label) const {
    if (li.tokens.rows() != cfg_.n_latents || lj.tokens.rows() != cfg_.n_latents)
        throw ShapeError("build_pair: latents must have N rows");
    PairSequence seq;
    seq.tokens = ag::vcat({li.tokens, lj.tokens, label_embedding_row(label)});
    seq.label_positions = {static_cast<Eigen::Index>(2 * cfg_.n_latents)};
    seq.labels = {label};
    seq.layout = {cfg_.n_latents, 1, 0};
    return seq;
}

PairSequence QueryConnector::build_context(
    const std::vector<std::pair<LatentTokens, LatentTokens>>& pairs, const std::vector<int>& labels,
    int prompt_slots, std::mt19937_64* shuffle_rng) const {
    if (pairs.empty()) throw ProtocolError("build_context: empty support set");
    if (pairs.size() != labels.size()) throw ShapeError("build_context: one label per pair required");
    if (prompt_slots < 0) throw ConfigError("build_context: prompt_slots must be >= 0");

    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    if (shuffle_rng) std::shuffle(order.begin(), order.end(), *shuffle_rng);

    const int n = cfg_.n_latents;
    const int k = static_cast<int>(pairs.size());
    std::vector<Var> parts;
    parts.reserve(static_cast<std::size_t>(3 * k + (prompt_slots > 0 ? 1 : 0)));
    PairSequence seq;
    seq.layout = {n, k, prompt_slots};
    Eigen::Index pos = 0;
    for (std::size_t oi = 0; oi < order.size(); ++oi) {
        const auto& [li, lj] = pairs[order[oi]];
        const int y = labels[order[oi]];
        if (li.tokens.rows() != n || lj.tokens.rows() != n)
            throw ShapeError("build_context: latents must have N rows");
        parts.push_back(li.tokens);
        parts.push_back(lj.tokens);
        parts.push_back(label_embedding_row(y));
        pos += 2 * n;
        seq.label_positions.push_back(pos);
        seq.labels.push_back(y);
        pos += 1;
    }
    if (prompt_slots > 0) parts.push_back(ag::constant(Mat::Zero(prompt_slots, cfg_.d_llm)));
    seq.tokens = ag::vcat(parts);
    return seq;
}

void dump_pair_sequence(const PairSequence& seq, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write pair sequence dump: " + path);
    const std::int32_t header[4] = {seq.layout.n, seq.layout.k, seq.layout.m,
                                    static_cast<std::int32_t>(seq.tokens.cols())};
    f.write(reinterpret_cast<const char*>(header), sizeof(header));
    const Mat& t = seq.tokens.value();
    for (Eigen::Index i = 0; i < t.rows(); ++i)
        f.write(reinterpret_cast<const char*>(Eigen::RowVectorXd(t.row(i)).data()),
                static_cast<std::streamsize>(sizeof(double) * t.cols()));
    for (Eigen::Index p : seq.label_positions) {
        const std::int64_t v = p;
        f.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
    for (int y : seq.labels) {
        const std::int32_t v = y;
        f.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
}

PairSequence load_pair_sequence_values(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read pair sequence dump: " + path);
    std::int32_t header[4];
    f.read(reinterpret_cast<char*>(header), sizeof(header));
    if (!f) throw IoError("truncated pair sequence dump: " + path);
    PairSequence seq;
    seq.layout = {header[0], header[1], header[2]};
    const Eigen::Index d = header[3];
    const Eigen::Index rows = 2LL * header[0] * header[1] + header[1] + header[2];
    Mat t(rows, d);
    for (Eigen::Index i = 0; i < rows; ++i) {
        Eigen::RowVectorXd row(d);
        f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(sizeof(double) * d));
        t.row(i) = row;
    }
    seq.label_positions.resize(static_cast<std::size_t>(header[1]));
    for (auto& p : seq.label_positions) {
        std::int64_t v;
        f.read(reinterpret_cast<char*>(&v), sizeof(v));
        p = v;
    }
    seq.labels.resize(static_cast<std::size_t>(header[1]));
    for (auto& y : seq.labels) {
        std::int32_t v;
        f.read(reinterpret_cast<char*>(&v), sizeof(v));
        y = v;
    }
    if (!f) throw IoError("truncated pair sequence dump: " + path);
    seq.tokens = ag::constant(t);
    return seq;
}

}  // namespace vicp::connector
