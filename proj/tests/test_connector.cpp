#include <doctest.h>

#include <filesystem>
#include <random>

#include "test_util.hpp"
#include "vicp/connector.hpp"

using namespace vicp;
using ag::Mat;
using ag::Var;
using connector::ConnectorConfig;
using connector::QueryConnector;

namespace {

ConnectorConfig small_cfg(int n_latents = 4) {
    ConnectorConfig cfg;
    cfg.n_latents = n_latents;
    cfg.d_llm = 16;
    cfg.d_vision = 12;
    cfg.n_heads = 2;
    cfg.init_seed = 9;
    return cfg;
}

}  // namespace

TEST_CASE("compress maps (HW+1) x d_vision tokens to N x d_llm latents") {
    std::mt19937_64 rng(1);
    for (int n : {16, 32, 64}) {
        auto cfg = small_cfg(n);
        QueryConnector qc(cfg);
        Mat input = test_util::random_mat(65, cfg.d_vision, rng);
        auto latents = qc.compress(input);
        CHECK(latents.tokens.rows() == n);
        CHECK(latents.tokens.cols() == cfg.d_llm);
    }
}

TEST_CASE("compress depends on its input and is deterministic") {
    QueryConnector qc(small_cfg());
    std::mt19937_64 rng(2);
    Mat a = test_util::random_mat(9, 12, rng);
    Mat b = test_util::random_mat(9, 12, rng);
    CHECK(qc.compress(a).tokens.value() == qc.compress(a).tokens.value());
    CHECK(qc.compress(a).tokens.value() != qc.compress(b).tokens.value());
    CHECK_THROWS_AS(qc.compress(test_util::random_mat(9, 13, rng)), ShapeError);
}

TEST_CASE("build_pair layout: 2N+1 rows, label row last") {
    QueryConnector qc(small_cfg());
    std::mt19937_64 rng(3);
    auto li = qc.compress(test_util::random_mat(9, 12, rng));
    auto lj = qc.compress(test_util::random_mat(9, 12, rng));

    auto pos = qc.build_pair(li, lj, 1);
    CHECK(pos.length() == 2 * 4 + 1);
    CHECK(pos.label_positions == std::vector<Eigen::Index>{8});

    auto neg = qc.build_pair(li, lj, 0);
    // Swapping the label changes exactly the final row.
    Mat d = (pos.tokens.value() - neg.tokens.value()).cwiseAbs();
    int changed_rows = 0;
    for (Eigen::Index r = 0; r < d.rows(); ++r)
        if (d.row(r).maxCoeff() > 0.0) ++changed_rows;
    CHECK(changed_rows == 1);
    CHECK(d.row(8).maxCoeff() > 0.0);
}

TEST_CASE("build_context obeys the sequence length law") {
    std::mt19937_64 seq_rng(4);
    std::mt19937_64 dims(5);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 1 + static_cast<int>(dims() % 6);
        const int k = 1 + static_cast<int>(dims() % 7);
        const int m = static_cast<int>(dims() % 5);
        auto cfg = small_cfg(n);
        QueryConnector qc(cfg);
        std::vector<std::pair<connector::LatentTokens, connector::LatentTokens>> pairs;
        std::vector<int> labels;
        for (int i = 0; i < k; ++i) {
            pairs.emplace_back(qc.compress(test_util::random_mat(9, 12, seq_rng)),
                               qc.compress(test_util::random_mat(9, 12, seq_rng)));
            labels.push_back(static_cast<int>(dims() % 2));
        }
        auto seq = qc.build_context(pairs, labels, m);
        CHECK(seq.length() == 2 * n * k + k + m);
        CHECK(seq.label_positions.size() == static_cast<std::size_t>(k));
        for (int i = 0; i < k; ++i)
            CHECK(seq.label_positions[static_cast<std::size_t>(i)] == i * (2 * n + 1) + 2 * n);
    }
}

TEST_CASE("context blocks are recoverable and labels point at label rows") {
    auto cfg = small_cfg(3);
    QueryConnector qc(cfg);
    std::mt19937_64 rng(6);
    std::vector<std::pair<connector::LatentTokens, connector::LatentTokens>> pairs;
    std::vector<int> labels = {1, 0, 1};
    for (int i = 0; i < 3; ++i)
        pairs.emplace_back(qc.compress(test_util::random_mat(9, 12, rng)),
                           qc.compress(test_util::random_mat(9, 12, rng)));

    auto seq = qc.build_context(pairs, labels, 2);
    const Mat& t = seq.tokens.value();
    for (int k = 0; k < 3; ++k) {
        const Eigen::Index base = k * 7;
        CHECK(t.middleRows(base, 3) == pairs[static_cast<std::size_t>(k)].first.tokens.value());
        CHECK(t.middleRows(base + 3, 3) == pairs[static_cast<std::size_t>(k)].second.tokens.value());
        CHECK(t.row(seq.label_positions[static_cast<std::size_t>(k)]) ==
              qc.label_embedding_row(labels[static_cast<std::size_t>(k)]).value());
    }
    // Prompt slots are zero placeholders at the tail.
    CHECK(t.bottomRows(2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("training-time shuffling permutes pairs; inference keeps sampling order") {
    auto cfg = small_cfg(2);
    QueryConnector qc(cfg);
    std::mt19937_64 rng(7);
    std::vector<std::pair<connector::LatentTokens, connector::LatentTokens>> pairs;
    std::vector<int> labels;
    for (int i = 0; i < 6; ++i) {
        pairs.emplace_back(qc.compress(test_util::random_mat(9, 12, rng)),
                           qc.compress(test_util::random_mat(9, 12, rng)));
        labels.push_back(i % 2);
    }
    auto fixed1 = qc.build_context(pairs, labels, 0);
    auto fixed2 = qc.build_context(pairs, labels, 0);
    CHECK(fixed1.tokens.value() == fixed2.tokens.value());

    std::mt19937_64 shuffle_rng(8);
    auto shuffled = qc.build_context(pairs, labels, 0, &shuffle_rng);
    CHECK(shuffled.tokens.value() != fixed1.tokens.value());
    // Shuffled context still contains the same multiset of label rows.
    CHECK(shuffled.labels.size() == 6);

    CHECK_THROWS_AS(qc.build_context({}, {}, 0), ProtocolError);
}

TEST_CASE("label table gradient reaches both rows") {
    auto cfg = small_cfg(2);
    QueryConnector qc(cfg);
    std::mt19937_64 rng(9);
    std::vector<std::pair<connector::LatentTokens, connector::LatentTokens>> pairs;
    std::vector<int> labels = {0, 1};
    for (int i = 0; i < 2; ++i)
        pairs.emplace_back(qc.compress(test_util::random_mat(9, 12, rng)),
                           qc.compress(test_util::random_mat(9, 12, rng)));
    auto seq = qc.build_context(pairs, labels, 1);
    ag::backward(ag::sum_all(seq.tokens));
    CHECK(qc.label_table().grad().row(0).cwiseAbs().maxCoeff() > 0.0);
    CHECK(qc.label_table().grad().row(1).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("pair sequence dump round-trips") {
    namespace fs = std::filesystem;
    auto cfg = small_cfg(3);
    QueryConnector qc(cfg);
    std::mt19937_64 rng(10);
    std::vector<std::pair<connector::LatentTokens, connector::LatentTokens>> pairs;
    std::vector<int> labels = {1, 0};
    for (int i = 0; i < 2; ++i)
        pairs.emplace_back(qc.compress(test_util::random_mat(9, 12, rng)),
                           qc.compress(test_util::random_mat(9, 12, rng)));
    auto seq = qc.build_context(pairs, labels, 2);

    const auto path = (fs::temp_directory_path() / "vicp_seq.bin").string();
    connector::dump_pair_sequence(seq, path);
    auto loaded = connector::load_pair_sequence_values(path);
    CHECK(loaded.tokens.value() == seq.tokens.value());
    CHECK(loaded.label_positions == seq.label_positions);
    CHECK(loaded.labels == seq.labels);
    fs::remove(path);
}
