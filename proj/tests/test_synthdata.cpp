#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "vicp/synthdata.hpp"

using namespace vicp;
using synth::GenerationConfig;

namespace {

GenerationConfig tiny_config() {
    GenerationConfig cfg;
    cfg.n_categories = 4;
    cfg.instances_per_category = 4;
    cfg.views_per_instance = 5;
    cfg.support_views = 2;
    cfg.image_size = 32;
    cfg.seed = 7;
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("record counts follow the configuration") {
    GenerationConfig cfg;
    cfg.n_categories = 2;
    cfg.instances_per_category = 2;
    cfg.views_per_instance = 3;
    cfg.image_size = 32;
    cfg.seed = 7;
    auto corpus = synth::generate_corpus(cfg);
    CHECK(corpus.records.size() == 12);
    CHECK(corpus.manifest.categories.size() == 2);
    int identities = 0;
    for (const auto& cat : corpus.manifest.categories) identities += static_cast<int>(cat.instances.size());
    CHECK(identities == 4);
    for (const auto& rec : corpus.records) {
        CHECK(rec.image.height == 32);
        CHECK(rec.image.width == 32);
        CHECK(rec.image.channels == 3);
    }
}

TEST_CASE("default split ratio mirrors 7 base / 27 novel out of 34") {
    GenerationConfig cfg;
    cfg.n_categories = 34;
    CHECK(cfg.resolved_base_count() == 7);

    cfg.instances_per_category = 2;
    cfg.views_per_instance = 3;
    cfg.image_size = 16;
    cfg.seed = 3;
    auto corpus = synth::generate_corpus(cfg);
    CHECK(corpus.manifest.base_categories.size() == 7);
    CHECK(corpus.manifest.novel_categories.size() == 27);
}

TEST_CASE("split is disjoint and stratified over signal types") {
    auto corpus = synth::generate_corpus(tiny_config());
    const auto& m = corpus.manifest;
    std::set<int> base(m.base_categories.begin(), m.base_categories.end());
    for (int c : m.novel_categories) CHECK_FALSE(base.count(c));
    CHECK(m.base_categories.size() + m.novel_categories.size() == m.categories.size());

    // category_cue mode alternates cue types; 4 categories -> both kinds exist
    std::set<synth::SignalType> base_types;
    for (int c : m.base_categories) base_types.insert(m.category(c).signal_type);
    CHECK(base_types.size() >= 1);
}

TEST_CASE("same config and seed produce byte-identical manifests") {
    namespace fs = std::filesystem;
    auto cfg = tiny_config();
    const auto dir1 = fs::temp_directory_path() / "vicp_gen_a";
    const auto dir2 = fs::temp_directory_path() / "vicp_gen_b";
    fs::remove_all(dir1);
    fs::remove_all(dir2);
    synth::generate_corpus(cfg, dir1.string());
    synth::generate_corpus(cfg, dir2.string());
    CHECK(slurp((dir1 / "manifest.json").string()) == slurp((dir2 / "manifest.json").string()));

    // Images survive the PNG round trip with 8-bit quantization.
    auto corpus = synth::load_corpus((dir1 / "manifest.json").string());
    auto fresh = synth::generate_corpus(cfg);
    REQUIRE(corpus.records.size() == fresh.records.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < corpus.records.size(); ++i)
        for (std::size_t k = 0; k < corpus.records[i].image.data.size(); ++k)
            worst = std::max(worst,
                             std::abs(corpus.records[i].image.data[k] - fresh.records[i].image.data[k]));
    CHECK(worst <= 0.5 / 255.0 + 1e-12);
    fs::remove_all(dir1);
    fs::remove_all(dir2);
}

TEST_CASE("invalid configurations are rejected") {
    auto cfg = tiny_config();
    cfg.views_per_instance = 2;
    CHECK_THROWS_AS(synth::generate_corpus(cfg), ConfigError);
    cfg = tiny_config();
    cfg.n_categories = 1;
    CHECK_THROWS_AS(synth::generate_corpus(cfg), ConfigError);
    cfg = tiny_config();
    cfg.instances_per_category = 0;
    CHECK_THROWS_AS(synth::generate_corpus(cfg), ConfigError);
    cfg = tiny_config();
    cfg.min_identity_separation = 10.0;  // impossible to satisfy
    CHECK_THROWS_AS(synth::generate_corpus(cfg), ConfigError);
}

TEST_CASE("support sets are balanced, within category, and deterministic") {
    auto corpus = synth::generate_corpus(tiny_config());
    for (int k : {2, 32, 64, 128}) {
        auto s = synth::sample_support_set(corpus, 1, k, 99);
        CHECK(static_cast<int>(s.pairs.size()) == k);
        int pos = 0;
        for (const auto& p : s.pairs) {
            const auto& a = corpus.records[p.a];
            const auto& b = corpus.records[p.b];
            CHECK(a.category_id == 1);
            CHECK(b.category_id == 1);
            CHECK(a.role == "support");
            CHECK(b.role == "support");
            const bool same = a.instance_id == b.instance_id;
            CHECK(p.label == (same ? 1 : 0));
            if (same) CHECK_FALSE(p.a == p.b);
            pos += p.label;
        }
        CHECK(pos == (k + 1) / 2);
    }
    auto s1 = synth::sample_support_set(corpus, 2, 16, 5);
    auto s2 = synth::sample_support_set(corpus, 2, 16, 5);
    CHECK(s1.checksum == s2.checksum);
    auto s3 = synth::sample_support_set(corpus, 2, 16, 6);
    CHECK(s1.checksum != s3.checksum);
}

TEST_CASE("support sampling errors name the category") {
    auto cfg = tiny_config();
    auto corpus = synth::generate_corpus(cfg);
    CHECK_THROWS_WITH_AS(synth::sample_support_set(corpus, 3, 1, 0), doctest::Contains("category 3"),
                         SamplingError);
}

TEST_CASE("triplets stay within category and respect identity structure") {
    auto corpus = synth::generate_corpus(tiny_config());
    auto triplets = synth::sample_triplets(corpus, 0, 8, 11);
    CHECK(triplets.size() == 8);
    for (const auto& t : triplets) {
        const auto& a = corpus.records[t.anchor];
        const auto& p = corpus.records[t.positive];
        const auto& n = corpus.records[t.negative];
        CHECK(a.category_id == 0);
        CHECK(p.category_id == 0);
        CHECK(n.category_id == 0);
        CHECK(a.instance_id == p.instance_id);
        CHECK_FALSE(t.anchor == t.positive);
        CHECK(a.instance_id != n.instance_id);
        CHECK(a.role == "test");
    }
    CHECK_THROWS_AS(synth::sample_triplets(corpus, 0, 0, 1), SamplingError);
}

TEST_CASE("identity features are recoverable: nearest-neighbour rank-1 is perfect") {
    auto corpus = synth::generate_corpus(tiny_config());
    const auto& m = corpus.manifest;
    for (const auto& cat : m.categories) {
        // Min pairwise separation is enforced.
        for (std::size_t i = 0; i < cat.instances.size(); ++i)
            for (std::size_t j = i + 1; j < cat.instances.size(); ++j) {
                const double d = synth::identity_distance(cat.instances[i].identity.features(cat.signal_type),
                                                          cat.instances[j].identity.features(cat.signal_type),
                                                          cat.signal_type);
                CHECK(d >= m.config.min_identity_separation);
            }
    }
    // Every record's identity features match its instance exactly, so NN on
    // the stored features retrieves a same-instance view first.
    for (const auto& cat : m.categories) {
        for (const auto& inst : cat.instances) {
            auto f = inst.identity.features(cat.signal_type);
            int closest = -1;
            double best = 1e9;
            for (const auto& other : cat.instances) {
                if (&other == &inst) continue;
                const double d =
                    synth::identity_distance(f, other.identity.features(cat.signal_type), cat.signal_type);
                if (d < best) {
                    best = d;
                    closest = other.instance_id;
                }
            }
            // Same-instance distance is exactly zero; all others are >= min separation.
            CHECK(best >= m.config.min_identity_separation);
            CHECK(closest != inst.instance_id);
        }
    }
}

TEST_CASE("nuisance changes pixels but not identity features") {
    auto cfg = tiny_config();
    auto corpus = synth::generate_corpus(cfg);
    const auto& cat = corpus.manifest.categories[0];
    const auto& inst = cat.instances[0];

    synth::Nuisance nu1 = inst.views[0].nuisance;
    synth::Nuisance nu2 = nu1;
    nu2.background_seed += 1;
    nu2.rotation_deg = nu1.rotation_deg + 7.0;

    auto img1 = synth::render_view(cfg, cat, inst.identity, nu1);
    auto img1_again = synth::render_view(cfg, cat, inst.identity, nu1);
    auto img2 = synth::render_view(cfg, cat, inst.identity, nu2);

    CHECK(img1.data == img1_again.data);  // rendering is pure
    CHECK(img1.data != img2.data);
}

TEST_CASE("views carry at least three images per instance with correct roles") {
    auto corpus = synth::generate_corpus(tiny_config());
    for (const auto& cat : corpus.manifest.categories)
        for (const auto& inst : cat.instances) {
            CHECK(inst.views.size() >= 3);
            for (const auto& v : inst.views)
                CHECK(v.role == (v.view_index < corpus.manifest.config.support_views ? "support" : "test"));
        }
}
