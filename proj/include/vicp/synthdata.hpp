#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vicp/image.hpp"
#include "vicp/rng.hpp"

namespace vicp::synth {

// Which micro-pattern carries instance identity within a category.
enum class SignalType { Glyph, Stripe, Both };

// Corpus generation knobs. Defaults target the desk-scale regime: 34
// categories split 7 base / 27 novel, 64x64 images.
struct GenerationConfig {
    int n_categories = 34;
    int n_base_categories = -1;  // -1: round(n * 7/34), clamped to [1, n-1]
    int instances_per_category = 8;
    int views_per_instance = 6;
    int support_views = 2;  // leading views reserved for support sampling
    int image_size = 64;
    std::uint64_t seed = 0;

    // Identity signal layout. "category_cue" alternates the identity-bearing
    // micro-pattern per category and randomizes the other one per view;
    // "both" makes glyph and stripe identity-determined everywhere.
    std::string signal_mode = "category_cue";
    double min_identity_separation = 0.25;

    // Nuisance ranges and pattern strengths.
    double lighting_delta = 0.15;       // lighting_scale in [1-d, 1+d]
    double rotation_max_deg = 10.0;
    double occlusion_probability = 0.5;
    double occlusion_max_fraction = 0.20;
    double background_amplitude = 0.35;
    double stripe_amplitude = 0.5;
    double glyph_radius = 0.22;  // in object units (object radius = 1)
    double hue_shift_max = 0.12;
    double sat_shift_max = 0.28;
    double framing_jitter = 0.0;   // object centre offset, fraction of image size
    double tint_delta = 0.04;      // per-view per-channel colour cast

    int resolved_base_count() const;
    void validate() const;
};

struct Nuisance {
    double lighting_scale = 1.0;
    double rotation_deg = 0.0;
    std::uint64_t background_seed = 0;
    double occlusion_fraction = 0.0;
};

// Identity-bearing micro-pattern parameters. The feature vector stored in
// the manifest depends on the category's signal type.
struct IdentitySpec {
    double glyph_u = 0.5, glyph_v = 0.5;
    int glyph_kind = 0;  // 0 disc, 1 square, 2 diamond
    double stripe_phase = 0.0, stripe_angle = 0.0;
    int stripe_freq = 3;
    // Radial two-tone shading: the inner disc is offset by (+hue,+sat) and
    // the area-matched outer ring by the negative offset, so the pooled mean
    // colour stays at the category hue. The contrast itself carries identity.
    double hue_shift = 0.0;  // in +-[0.02, hue_shift_max]
    double sat_shift = 0.0;  // in +-[0.03, sat_shift_max]
    int shape_class = 0;     // shared across the category; non-discriminative
    std::vector<double> features(SignalType st) const;
};

struct ViewRecord {
    int view_index = 0;
    std::string file;  // path relative to the manifest
    std::string role;  // "support" or "test"
    Nuisance nuisance;
};

struct InstanceEntry {
    int instance_id = 0;
    IdentitySpec identity;
    std::vector<ViewRecord> views;
};

struct CategoryEntry {
    int category_id = 0;
    int shape_class = 0;
    double hue = 0.0;
    SignalType signal_type = SignalType::Both;
    std::vector<InstanceEntry> instances;
};

struct SplitManifest {
    int schema_version = 1;
    std::uint64_t seed = 0;
    GenerationConfig config;
    std::vector<CategoryEntry> categories;
    std::vector<int> base_categories;
    std::vector<int> novel_categories;

    const CategoryEntry& category(int category_id) const;
    bool is_base(int category_id) const;
};

// One loaded image together with its labels. Records are owned by a Corpus
// and referenced everywhere by index.
struct InstanceRecord {
    Image image;
    int instance_id = 0;
    int category_id = 0;
    int view_index = 0;
    std::string role;
    Nuisance nuisance;
};

struct Corpus {
    SplitManifest manifest;
    std::vector<InstanceRecord> records;
    // category_id -> record indices, in manifest order
    std::map<int, std::vector<std::size_t>> by_category;

    std::vector<std::size_t> category_records(int category_id, const std::string& role_filter = "") const;
};

struct SupportPair {
    std::size_t a = 0, b = 0;  // record indices
    int label = 0;             // 1 iff same (category, instance)
};

struct SupportSet {
    int category_id = 0;
    int k = 0;
    std::uint64_t seed = 0;
    std::vector<SupportPair> pairs;
    std::uint64_t checksum = 0;  // binds the exact pair list (ids + labels)
};

struct Triplet {
    std::size_t anchor = 0, positive = 0, negative = 0;
};

// Deterministic corpus generation. Writes PNGs plus manifest.json under
// out_dir when out_dir is non-empty; always returns the in-memory corpus.
Corpus generate_corpus(const GenerationConfig& config, const std::string& out_dir = "");

// Renders one view from its parameters; pure function, used by generation
// and by the nuisance-independence tests.
Image render_view(const GenerationConfig& cfg, const CategoryEntry& cat, const IdentitySpec& id,
                  const Nuisance& nu);

SplitManifest load_manifest(const std::string& path);
void save_manifest(const SplitManifest& m, const std::string& path);
std::string manifest_to_json(const SplitManifest& m);

// Loads the manifest and all referenced images.
Corpus load_corpus(const std::string& manifest_path);

// K labeled pairs from one category, ceil(K/2) positive / floor(K/2)
// negative, drawn from the category's support pool.
SupportSet sample_support_set(const Corpus& corpus, int category_id, int k, std::uint64_t seed);

// B (anchor, positive, negative) triplets from one category's test pool.
std::vector<Triplet> sample_triplets(const Corpus& corpus, int category_id, int b, std::uint64_t seed);

// Redraws base/novel with a different seed (stratified by signal type so both
// cue kinds appear on each side whenever counts allow).
void reassign_splits(SplitManifest& m, std::uint64_t split_seed);

std::uint64_t support_checksum(const Corpus& corpus, const std::vector<SupportPair>& pairs, int category_id);

// Distance used by the min-separation rejection sampler and the solvability
// check; wraps periodic dimensions.
double identity_distance(const std::vector<double>& a, const std::vector<double>& b, SignalType st);

}  // namespace vicp::synth
