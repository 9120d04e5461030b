#include "vicp/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <json.hpp>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace vicp::synth {

namespace {

constexpr int kShapeFamilies = 6;

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
    h = h - std::floor(h);
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(hp)) {
        case 0: r = c; g = x; break;
        case 1: r = x; g = c; break;
        case 2: g = c; b = x; break;
        case 3: g = x; b = c; break;
        case 4: r = x; b = c; break;
        default: r = c; b = x; break;
    }
    const double m = v - c;
    rgb[0] = r + m;
    rgb[1] = g + m;
    rgb[2] = b + m;
}

// Signed distance of normalized object-frame point to the shape boundary;
// negative inside. Shapes are scaled so the silhouette fits |p| <~ 1.
double shape_sdf(int shape_class, double x, double y);

// Radius that splits each shape family's body into two equal areas; found
// once by bisection on a fine grid.
double equal_area_radius(int shape_class) {
    static double cache[kShapeFamilies] = {0};
    static bool ready[kShapeFamilies] = {false};
    if (!ready[shape_class]) {
        auto inner_fraction = [shape_class](double r0) {
            int body = 0, inner = 0;
            for (int iy = 0; iy < 256; ++iy)
                for (int ix = 0; ix < 256; ++ix) {
                    const double x = (ix + 0.5) / 128.0 - 1.0;
                    const double y = (iy + 0.5) / 128.0 - 1.0;
                    if (shape_sdf(shape_class, x, y) >= 0.0) continue;
                    ++body;
                    if (std::sqrt(x * x + y * y) < r0) ++inner;
                }
            return body > 0 ? double(inner) / body : 0.5;
        };
        double lo = 0.0, hi = 1.5;
        for (int it = 0; it < 40; ++it) {
            const double mid = 0.5 * (lo + hi);
            (inner_fraction(mid) < 0.5 ? lo : hi) = mid;
        }
        cache[shape_class] = 0.5 * (lo + hi);
        ready[shape_class] = true;
    }
    return cache[shape_class];
}

double shape_sdf(int shape_class, double x, double y) {
    const double ax = std::abs(x), ay = std::abs(y);
    const double len = std::sqrt(x * x + y * y);
    switch (shape_class) {
        case 0: return len - 1.0;                       // disc
        case 1: return std::max(ax, ay) - 0.85;         // square
        case 2: return (ax + ay) / 1.2 - 1.0;           // diamond
        case 3: {                                       // triangle, apex up
            const double e1 = 0.884 * x - 0.467 * (y + 1.0);
            const double e2 = -0.884 * x - 0.467 * (y + 1.0);
            const double e3 = y - 0.8;
            return std::max({e1, e2, e3});
        }
        case 4: return std::max(len - 1.0, 0.55 - len);  // ring
        default: {                                       // cross
            const double bar_h = std::max(ax - 1.0, ay - 0.35);
            const double bar_v = std::max(ay - 1.0, ax - 0.35);
            return std::min(bar_h, bar_v);
        }
    }
}

// Maps the identity's (u, v) in [0,1]^2 to an object-frame glyph centre that
// is guaranteed to land on the shape body for every family.
void glyph_position(int shape_class, double u, double v, double& gx, double& gy) {
    constexpr double tau = 2.0 * std::numbers::pi;
    switch (shape_class) {
        case 0: {  // disc: polar
            const double ang = tau * u, r = 0.15 + 0.55 * v;
            gx = r * std::cos(ang);
            gy = r * std::sin(ang);
            break;
        }
        case 1:
            gx = (2.0 * u - 1.0) * 0.55;
            gy = (2.0 * v - 1.0) * 0.55;
            break;
        case 2: {  // diamond: sheared box
            const double s = (2.0 * u - 1.0) * 0.72, t = (2.0 * v - 1.0) * 0.72;
            gx = (s - t) * 0.5;
            gy = (s + t) * 0.5;
            break;
        }
        case 3: {  // triangle: width shrinks toward the apex
            gy = -0.2 + 0.8 * v;
            const double halfw = 0.38 * (gy + 1.0);
            gx = (2.0 * u - 1.0) * halfw;
            break;
        }
        case 4: {  // ring: stay on the band
            const double ang = tau * u, r = 0.60 + 0.26 * v;
            gx = r * std::cos(ang);
            gy = r * std::sin(ang);
            break;
        }
        default: {  // cross: pick a bar, then along/lateral coordinates
            const double along = (2.0 * u - 1.0) * 0.72;
            if (v < 0.5) {
                gx = along;
                gy = (4.0 * v - 1.0) * 0.22;
            } else {
                gx = (4.0 * (v - 0.5) - 1.0) * 0.22;
                gy = along;
            }
            break;
        }
    }
}

double glyph_sdf(int kind, double px, double py, double radius) {
    const double ax = std::abs(px), ay = std::abs(py);
    switch (kind) {
        case 0: return std::sqrt(px * px + py * py) - radius;
        case 1: return std::max(ax, ay) - radius * 0.9;
        default: return (ax + ay) - radius * 1.3;
    }
}

// 9x9 value-noise grid, bilinearly sampled.
struct NoiseField {
    double grid[9][9];
    explicit NoiseField(std::uint64_t seed) {
        auto rng = make_rng(seed);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (auto& row : grid)
            for (double& cell : row) cell = u(rng);
    }
    double sample(double fx, double fy) const {  // fx, fy in [0,1]
        const double gx = fx * 8.0, gy = fy * 8.0;
        const int x0 = std::min(7, static_cast<int>(gx)), y0 = std::min(7, static_cast<int>(gy));
        const double tx = gx - x0, ty = gy - y0;
        const double a = grid[y0][x0] * (1 - tx) + grid[y0][x0 + 1] * tx;
        const double b = grid[y0 + 1][x0] * (1 - tx) + grid[y0 + 1][x0 + 1] * tx;
        return a * (1 - ty) + b * ty;
    }
};

std::string category_dir(int category_id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "cat%03d", category_id);
    return buf;
}

std::string view_file(int category_id, int instance_id, int view_index) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "images/cat%03d/inst%03d_view%02d.png", category_id, instance_id,
                  view_index);
    return buf;
}

const char* signal_name(SignalType st) {
    switch (st) {
        case SignalType::Glyph: return "glyph";
        case SignalType::Stripe: return "stripe";
        default: return "both";
    }
}

SignalType signal_from_name(const std::string& s) {
    if (s == "glyph") return SignalType::Glyph;
    if (s == "stripe") return SignalType::Stripe;
    if (s == "both") return SignalType::Both;
    throw ConfigError("unknown signal type: " + s);
}

double wrap_dist(double a, double b) {
    double d = std::abs(a - b);
    return std::min(d, 1.0 - d);
}

}  // namespace

int GenerationConfig::resolved_base_count() const {
    if (n_base_categories > 0) return n_base_categories;
    const int n = n_categories;
    int base = static_cast<int>(std::lround(n * 7.0 / 34.0));
    return std::clamp(base, 1, n - 1);
}

void GenerationConfig::validate() const {
    if (n_categories < 2) throw ConfigError("n_categories must be >= 2");
    if (instances_per_category < 2) throw ConfigError("instances_per_category must be >= 2");
    if (views_per_instance < 3) throw ConfigError("views_per_instance must be >= 3");
    if (image_size <= 0 || image_size % 2 != 0) throw ConfigError("image_size must be positive and even");
    if (support_views < 1 || support_views >= views_per_instance)
        throw ConfigError("support_views must be in [1, views_per_instance)");
    if (n_base_categories == 0 || n_base_categories >= n_categories)
        throw ConfigError("n_base_categories must leave at least one novel category");
    if (signal_mode != "category_cue" && signal_mode != "both")
        throw ConfigError("signal_mode must be 'category_cue' or 'both'");
    if (min_identity_separation <= 0.0) throw ConfigError("min_identity_separation must be positive");
}

std::vector<double> IdentitySpec::features(SignalType st) const {
    switch (st) {
        case SignalType::Glyph:
            return {glyph_u, glyph_v, static_cast<double>(glyph_kind), hue_shift, sat_shift};
        case SignalType::Stripe:
            return {stripe_phase, stripe_angle, static_cast<double>(stripe_freq), hue_shift, sat_shift};
        default:
            return {glyph_u,      glyph_v,      static_cast<double>(glyph_kind),
                    stripe_phase, stripe_angle, static_cast<double>(stripe_freq),
                    hue_shift,    sat_shift};
    }
}

double identity_distance(const std::vector<double>& a, const std::vector<double>& b, SignalType st) {
    if (a.size() != b.size()) throw ShapeError("identity_distance: feature length mismatch");
    auto glyph_part = [](const double* x, const double* y) {
        const double du = x[0] - y[0], dv = x[1] - y[1];
        const double dk = (x[2] != y[2]) ? 0.5 : 0.0;
        return du * du + dv * dv + dk * dk;
    };
    auto stripe_part = [](const double* x, const double* y) {
        const double dp = wrap_dist(x[0], y[0]);
        const double da = wrap_dist(x[1], y[1]);
        const double df = (x[2] - y[2]) / 3.0;
        return dp * dp + da * da + df * df;
    };
    auto shade_part = [](const double* x, const double* y) {
        const double dh = (x[0] - y[0]) / 0.12;  // normalized by the full shade range
        const double ds = (x[1] - y[1]) / 0.36;
        return dh * dh + ds * ds;
    };
    double d2 = 0.0;
    switch (st) {
        case SignalType::Glyph:
            d2 = glyph_part(a.data(), b.data()) + shade_part(a.data() + 3, b.data() + 3);
            break;
        case SignalType::Stripe:
            d2 = stripe_part(a.data(), b.data()) + shade_part(a.data() + 3, b.data() + 3);
            break;
        default:
            d2 = glyph_part(a.data(), b.data()) + stripe_part(a.data() + 3, b.data() + 3) +
                 shade_part(a.data() + 6, b.data() + 6);
            break;
    }
    return std::sqrt(d2);
}

const CategoryEntry& SplitManifest::category(int category_id) const {
    for (const auto& c : categories)
        if (c.category_id == category_id) return c;
    throw ConfigError("unknown category_id " + std::to_string(category_id));
}

bool SplitManifest::is_base(int category_id) const {
    return std::find(base_categories.begin(), base_categories.end(), category_id) != base_categories.end();
}

Image render_view(const GenerationConfig& cfg, const CategoryEntry& cat, const IdentitySpec& id,
                  const Nuisance& nu) {
    const int S = cfg.image_size;
    Image img(3, S, S);

    IdentitySpec eff = id;
    if (cat.signal_type == SignalType::Glyph) {
        // Stripe pattern is a per-view distractor in glyph categories.
        auto rng = make_rng(derive_seed(nu.background_seed, "distractor"));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        eff.stripe_phase = u(rng);
        eff.stripe_angle = u(rng);
        eff.stripe_freq = 3 + static_cast<int>(rng() % 4);
    } else if (cat.signal_type == SignalType::Stripe) {
        auto rng = make_rng(derive_seed(nu.background_seed, "distractor"));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        eff.glyph_u = u(rng);
        eff.glyph_v = u(rng);
        eff.glyph_kind = static_cast<int>(rng() % 3);
    }

    NoiseField noise(derive_seed(nu.background_seed, "bg"));

    // Per-view background clutter: colourful soft blobs behind the object.
    struct Blob {
        double cx, cy, rx, ry, rgb[3];
    };
    std::vector<Blob> blobs;
    {
        auto brng = make_rng(derive_seed(nu.background_seed, "clutter"));
        std::uniform_real_distribution<double> bu(0.0, 1.0);
        const int n_blobs = 10 + static_cast<int>(brng() % 6);
        for (int i = 0; i < n_blobs; ++i) {
            Blob b;
            b.cx = bu(brng) * S;
            b.cy = bu(brng) * S;
            b.rx = (0.07 + 0.14 * bu(brng)) * S;
            b.ry = (0.07 + 0.14 * bu(brng)) * S;
            hsv_to_rgb(bu(brng), 0.4 + 0.5 * bu(brng), 0.35 + 0.55 * bu(brng), b.rgb);
            blobs.push_back(b);
        }
    }

    // Inner/outer tones; the boundary at r = 0.71 splits the body into equal
    // areas so mean colour carries no identity.
    double inner_rgb[3], outer_rgb[3];
    hsv_to_rgb(cat.hue + id.hue_shift, std::clamp(0.55 + id.sat_shift, 0.05, 1.0), 0.80, inner_rgb);
    hsv_to_rgb(cat.hue - id.hue_shift, std::clamp(0.55 - id.sat_shift, 0.05, 1.0), 0.80, outer_rgb);
    const double glyph_rgb[3] = {0.05, 0.05, 0.05};

    // Framing jitter and colour cast are per-view draws off the nuisance seed.
    double cx = (S - 1) / 2.0, cy = (S - 1) / 2.0;
    double tint[3] = {1.0, 1.0, 1.0};
    {
        auto frng = make_rng(derive_seed(nu.background_seed, "framing"));
        std::uniform_real_distribution<double> fu(-1.0, 1.0);
        cx += fu(frng) * cfg.framing_jitter * S;
        cy += fu(frng) * cfg.framing_jitter * S;
        for (double& t : tint) t = 1.0 + fu(frng) * cfg.tint_delta;
    }
    const double R = 0.38 * S;
    const double theta = nu.rotation_deg * std::numbers::pi / 180.0;
    const double ct = std::cos(theta), st = std::sin(theta);

    const double split_r = equal_area_radius(cat.shape_class);
    double gx, gy;
    glyph_position(cat.shape_class, eff.glyph_u, eff.glyph_v, gx, gy);
    const double stripe_dir_x = std::cos(std::numbers::pi * eff.stripe_angle);
    const double stripe_dir_y = std::sin(std::numbers::pi * eff.stripe_angle);

    for (int y = 0; y < S; ++y) {
        for (int x = 0; x < S; ++x) {
            double bg_rgb[3];
            {
                const double base = 0.20 + cfg.background_amplitude *
                                               noise.sample(x / double(S - 1), y / double(S - 1));
                bg_rgb[0] = bg_rgb[1] = bg_rgb[2] = base;
                for (const auto& bb : blobs) {
                    const double dxb = (x - bb.cx) / bb.rx, dyb = (y - bb.cy) / bb.ry;
                    const double d = std::sqrt(dxb * dxb + dyb * dyb);
                    const double ba = clamp01(1.5 * (1.0 - d));
                    for (int ch = 0; ch < 3; ++ch)
                        bg_rgb[ch] = bg_rgb[ch] * (1.0 - ba) + bb.rgb[ch] * ba;
                }
            }
            const double dx = x - cx, dy = y - cy;
            const double ox = (ct * dx + st * dy) / R;
            const double oy = (-st * dx + ct * dy) / R;

            const double sd = shape_sdf(cat.shape_class, ox, oy);
            const double alpha = clamp01(0.5 - sd * R / 1.5);

            const double t = ox * stripe_dir_x + oy * stripe_dir_y;
            const double stripe = 1.0 + cfg.stripe_amplitude *
                                            std::sin(2.0 * std::numbers::pi *
                                                     (eff.stripe_freq * (t + 1.0) * 0.5 +
                                                      eff.stripe_phase));

            const double gd = glyph_sdf(eff.glyph_kind, ox - gx, oy - gy, cfg.glyph_radius);
            const double galpha = clamp01(0.5 - gd * R / 1.0) * alpha;

            const double r_obj = std::sqrt(ox * ox + oy * oy);
            const double inner_w = clamp01((split_r - r_obj) * R / 2.0 + 0.5);
            for (int c = 0; c < 3; ++c) {
                const double body = inner_rgb[c] * inner_w + outer_rgb[c] * (1.0 - inner_w);
                double v = bg_rgb[c] * (1.0 - alpha) + body * stripe * alpha;
                v = v * (1.0 - galpha) + glyph_rgb[c] * galpha;
                img.at(c, y, x) = v;
            }
        }
    }

    if (nu.occlusion_fraction > 0.0) {
        auto rng = make_rng(derive_seed(nu.background_seed, "occluder"));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const int side = std::max(1, static_cast<int>(std::sqrt(nu.occlusion_fraction) * S));
        const int x0 = static_cast<int>(u(rng) * (S - side));
        const int y0 = static_cast<int>(u(rng) * (S - side));
        for (int y = y0; y < y0 + side; ++y)
            for (int x = x0; x < x0 + side; ++x)
                for (int c = 0; c < 3; ++c) img.at(c, y, x) = 0.45;
    }

    for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x)
                img.at(ch, y, x) = clamp01(img.at(ch, y, x) * tint[ch] * nu.lighting_scale);
    return img;
}

namespace {

IdentitySpec draw_identity(std::mt19937_64& rng, int shape_class, const GenerationConfig& cfg) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    IdentitySpec id;
    id.glyph_u = u(rng);
    id.glyph_v = u(rng);
    id.glyph_kind = static_cast<int>(rng() % 3);
    id.stripe_phase = u(rng);
    id.stripe_angle = u(rng);
    id.stripe_freq = 3 + static_cast<int>(rng() % 4);
    const double sign_h = u(rng) < 0.5 ? -1.0 : 1.0;
    const double sign_s = u(rng) < 0.5 ? -1.0 : 1.0;
    id.hue_shift = sign_h * (0.02 + u(rng) * (cfg.hue_shift_max - 0.02));
    id.sat_shift = sign_s * (0.03 + u(rng) * (cfg.sat_shift_max - 0.03));
    id.shape_class = shape_class;
    return id;
}

Nuisance draw_nuisance(std::mt19937_64& rng, const GenerationConfig& cfg) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Nuisance nu;
    nu.lighting_scale = 1.0 - cfg.lighting_delta + 2.0 * cfg.lighting_delta * u(rng);
    nu.rotation_deg = -cfg.rotation_max_deg + 2.0 * cfg.rotation_max_deg * u(rng);
    nu.background_seed = rng();
    nu.occlusion_fraction = (u(rng) < cfg.occlusion_probability) ? u(rng) * cfg.occlusion_max_fraction : 0.0;
    return nu;
}

}  // namespace

void reassign_splits(SplitManifest& m, std::uint64_t split_seed) {
    const int n_base = m.config.n_base_categories > 0 ? m.config.n_base_categories
                                                      : m.config.resolved_base_count();
    // Stratify by signal type so base and novel both see each cue kind.
    std::map<std::string, std::vector<int>> groups;
    for (const auto& c : m.categories) groups[signal_name(c.signal_type)].push_back(c.category_id);
    auto rng = make_rng(derive_seed(split_seed, "split"));
    std::vector<std::vector<int>> lists;
    for (auto& [k, ids] : groups) {
        std::shuffle(ids.begin(), ids.end(), rng);
        lists.push_back(ids);
    }
    std::sort(lists.begin(), lists.end(),
              [](const auto& a, const auto& b) { return a.size() > b.size(); });

    std::vector<int> base;
    std::vector<std::size_t> cursor(lists.size(), 0);
    std::size_t li = 0;
    while (static_cast<int>(base.size()) < n_base) {
        bool advanced = false;
        for (std::size_t tries = 0; tries < lists.size(); ++tries) {
            auto& lst = lists[(li + tries) % lists.size()];
            auto& cur = cursor[(li + tries) % lists.size()];
            if (cur < lst.size()) {
                base.push_back(lst[cur++]);
                li = (li + tries + 1) % lists.size();
                advanced = true;
                break;
            }
        }
        if (!advanced) break;
    }
    std::sort(base.begin(), base.end());
    m.base_categories = base;
    m.novel_categories.clear();
    for (const auto& c : m.categories)
        if (!m.is_base(c.category_id)) m.novel_categories.push_back(c.category_id);
}

Corpus generate_corpus(const GenerationConfig& config, const std::string& out_dir) {
    config.validate();

    Corpus corpus;
    SplitManifest& m = corpus.manifest;
    m.seed = config.seed;
    m.config = config;

    for (int ci = 0; ci < config.n_categories; ++ci) {
        auto rng = make_rng(derive_seed(config.seed, "category", static_cast<std::uint64_t>(ci)));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        CategoryEntry cat;
        cat.category_id = ci;
        cat.shape_class = static_cast<int>(rng() % kShapeFamilies);
        // Disjoint hue bands keep categories separable while leaving room for
        // per-instance shade offsets inside the band.
        cat.hue = (ci + 0.3 + 0.4 * u(rng)) / config.n_categories;
        cat.signal_type = (config.signal_mode == "both")
                              ? SignalType::Both
                              : (ci % 2 == 0 ? SignalType::Glyph : SignalType::Stripe);

        std::vector<std::vector<double>> accepted;
        for (int ii = 0; ii < config.instances_per_category; ++ii) {
            IdentitySpec id;
            bool ok = false;
            for (int attempt = 0; attempt < 2000; ++attempt) {
                id = draw_identity(rng, cat.shape_class, config);
                auto feat = id.features(cat.signal_type);
                ok = true;
                for (const auto& other : accepted)
                    if (identity_distance(feat, other, cat.signal_type) < config.min_identity_separation) {
                        ok = false;
                        break;
                    }
                if (ok) {
                    accepted.push_back(feat);
                    break;
                }
            }
            if (!ok)
                throw ConfigError("could not separate " + std::to_string(config.instances_per_category) +
                                  " identities at min_identity_separation=" +
                                  std::to_string(config.min_identity_separation) + " in category " +
                                  std::to_string(ci));

            InstanceEntry inst;
            inst.instance_id = ii;
            inst.identity = id;
            for (int vi = 0; vi < config.views_per_instance; ++vi) {
                ViewRecord view;
                view.view_index = vi;
                view.file = view_file(ci, ii, vi);
                view.role = vi < config.support_views ? "support" : "test";
                view.nuisance = draw_nuisance(rng, config);
                inst.views.push_back(view);
            }
            cat.instances.push_back(std::move(inst));
        }
        m.categories.push_back(std::move(cat));
    }

    reassign_splits(m, config.seed);

    // Render all views (and persist when requested).
    if (!out_dir.empty()) {
        fs::create_directories(fs::path(out_dir) / "images");
        for (const auto& cat : m.categories)
            fs::create_directories(fs::path(out_dir) / "images" / category_dir(cat.category_id));
    }
    for (const auto& cat : m.categories) {
        for (const auto& inst : cat.instances) {
            for (const auto& view : inst.views) {
                InstanceRecord rec;
                rec.image = render_view(config, cat, inst.identity, view.nuisance);
                rec.instance_id = inst.instance_id;
                rec.category_id = cat.category_id;
                rec.view_index = view.view_index;
                rec.role = view.role;
                rec.nuisance = view.nuisance;
                if (!out_dir.empty())
                    png_io::write_rgb8((fs::path(out_dir) / view.file).string(), rec.image);
                corpus.by_category[cat.category_id].push_back(corpus.records.size());
                corpus.records.push_back(std::move(rec));
            }
        }
    }
    if (!out_dir.empty()) save_manifest(m, (fs::path(out_dir) / "manifest.json").string());
    return corpus;
}

std::vector<std::size_t> Corpus::category_records(int category_id, const std::string& role_filter) const {
    auto it = by_category.find(category_id);
    if (it == by_category.end()) throw ConfigError("unknown category_id " + std::to_string(category_id));
    if (role_filter.empty()) return it->second;
    std::vector<std::size_t> out;
    for (std::size_t idx : it->second)
        if (records[idx].role == role_filter) out.push_back(idx);
    return out;
}

std::string manifest_to_json(const SplitManifest& m) {
    json j;
    j["schema_version"] = m.schema_version;
    j["seed"] = m.seed;
    json jc;
    jc["n_categories"] = m.config.n_categories;
    jc["n_base_categories"] = m.config.n_base_categories;
    jc["instances_per_category"] = m.config.instances_per_category;
    jc["views_per_instance"] = m.config.views_per_instance;
    jc["support_views"] = m.config.support_views;
    jc["image_size"] = m.config.image_size;
    jc["signal_mode"] = m.config.signal_mode;
    jc["min_identity_separation"] = m.config.min_identity_separation;
    jc["lighting_delta"] = m.config.lighting_delta;
    jc["rotation_max_deg"] = m.config.rotation_max_deg;
    jc["occlusion_probability"] = m.config.occlusion_probability;
    jc["occlusion_max_fraction"] = m.config.occlusion_max_fraction;
    jc["background_amplitude"] = m.config.background_amplitude;
    jc["stripe_amplitude"] = m.config.stripe_amplitude;
    jc["glyph_radius"] = m.config.glyph_radius;
    jc["hue_shift_max"] = m.config.hue_shift_max;
    jc["sat_shift_max"] = m.config.sat_shift_max;
    jc["framing_jitter"] = m.config.framing_jitter;
    jc["tint_delta"] = m.config.tint_delta;
    j["config"] = jc;

    j["categories"] = json::array();
    for (const auto& cat : m.categories) {
        json jcat;
        jcat["category_id"] = cat.category_id;
        jcat["shape_class"] = cat.shape_class;
        jcat["hue"] = cat.hue;
        jcat["signal_type"] = signal_name(cat.signal_type);
        jcat["instances"] = json::array();
        for (const auto& inst : cat.instances) {
            json ji;
            ji["instance_id"] = inst.instance_id;
            ji["identity_features"] = inst.identity.features(cat.signal_type);
            json raw;
            raw["glyph_u"] = inst.identity.glyph_u;
            raw["glyph_v"] = inst.identity.glyph_v;
            raw["glyph_kind"] = inst.identity.glyph_kind;
            raw["stripe_phase"] = inst.identity.stripe_phase;
            raw["stripe_angle"] = inst.identity.stripe_angle;
            raw["stripe_freq"] = inst.identity.stripe_freq;
            raw["hue_shift"] = inst.identity.hue_shift;
            raw["sat_shift"] = inst.identity.sat_shift;
            ji["identity_params"] = raw;
            ji["views"] = json::array();
            for (const auto& view : inst.views) {
                json jv;
                jv["file"] = view.file;
                jv["view_index"] = view.view_index;
                jv["role"] = view.role;
                jv["nuisance"] = {{"lighting_scale", view.nuisance.lighting_scale},
                                  {"rotation_deg", view.nuisance.rotation_deg},
                                  {"background_seed", view.nuisance.background_seed},
                                  {"occlusion_fraction", view.nuisance.occlusion_fraction}};
                ji["views"].push_back(jv);
            }
            jcat["instances"].push_back(ji);
        }
        j["categories"].push_back(jcat);
    }
    j["splits"] = {{"base", m.base_categories}, {"novel", m.novel_categories}};
    return j.dump(2) + "\n";
}

void save_manifest(const SplitManifest& m, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write manifest: " + path);
    f << manifest_to_json(m);
}

SplitManifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read manifest: " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw IoError("manifest parse failure: " + std::string(e.what()));
    }
    SplitManifest m;
    m.schema_version = j.at("schema_version").get<int>();
    if (m.schema_version != 1) throw IoError("unsupported manifest schema_version");
    m.seed = j.at("seed").get<std::uint64_t>();
    const auto& jc = j.at("config");
    m.config.n_categories = jc.at("n_categories").get<int>();
    m.config.n_base_categories = jc.at("n_base_categories").get<int>();
    m.config.instances_per_category = jc.at("instances_per_category").get<int>();
    m.config.views_per_instance = jc.at("views_per_instance").get<int>();
    m.config.support_views = jc.at("support_views").get<int>();
    m.config.image_size = jc.at("image_size").get<int>();
    m.config.signal_mode = jc.at("signal_mode").get<std::string>();
    m.config.min_identity_separation = jc.at("min_identity_separation").get<double>();
    m.config.lighting_delta = jc.at("lighting_delta").get<double>();
    m.config.rotation_max_deg = jc.at("rotation_max_deg").get<double>();
    m.config.occlusion_probability = jc.at("occlusion_probability").get<double>();
    m.config.occlusion_max_fraction = jc.at("occlusion_max_fraction").get<double>();
    m.config.background_amplitude = jc.at("background_amplitude").get<double>();
    m.config.stripe_amplitude = jc.at("stripe_amplitude").get<double>();
    m.config.glyph_radius = jc.value("glyph_radius", m.config.glyph_radius);
    m.config.hue_shift_max = jc.value("hue_shift_max", m.config.hue_shift_max);
    m.config.sat_shift_max = jc.value("sat_shift_max", m.config.sat_shift_max);
    m.config.framing_jitter = jc.value("framing_jitter", m.config.framing_jitter);
    m.config.tint_delta = jc.value("tint_delta", m.config.tint_delta);
    m.config.seed = m.seed;

    for (const auto& jcat : j.at("categories")) {
        CategoryEntry cat;
        cat.category_id = jcat.at("category_id").get<int>();
        cat.shape_class = jcat.at("shape_class").get<int>();
        cat.hue = jcat.at("hue").get<double>();
        cat.signal_type = signal_from_name(jcat.at("signal_type").get<std::string>());
        for (const auto& ji : jcat.at("instances")) {
            InstanceEntry inst;
            inst.instance_id = ji.at("instance_id").get<int>();
            const auto& raw = ji.at("identity_params");
            inst.identity.glyph_u = raw.at("glyph_u").get<double>();
            inst.identity.glyph_v = raw.at("glyph_v").get<double>();
            inst.identity.glyph_kind = raw.at("glyph_kind").get<int>();
            inst.identity.stripe_phase = raw.at("stripe_phase").get<double>();
            inst.identity.stripe_angle = raw.at("stripe_angle").get<double>();
            inst.identity.stripe_freq = raw.at("stripe_freq").get<int>();
            inst.identity.hue_shift = raw.value("hue_shift", 0.0);
            inst.identity.sat_shift = raw.value("sat_shift", 0.0);
            inst.identity.shape_class = cat.shape_class;
            for (const auto& jv : ji.at("views")) {
                ViewRecord view;
                view.file = jv.at("file").get<std::string>();
                view.view_index = jv.at("view_index").get<int>();
                view.role = jv.at("role").get<std::string>();
                const auto& jn = jv.at("nuisance");
                view.nuisance.lighting_scale = jn.at("lighting_scale").get<double>();
                view.nuisance.rotation_deg = jn.at("rotation_deg").get<double>();
                view.nuisance.background_seed = jn.at("background_seed").get<std::uint64_t>();
                view.nuisance.occlusion_fraction = jn.at("occlusion_fraction").get<double>();
                inst.views.push_back(view);
            }
            cat.instances.push_back(std::move(inst));
        }
        m.categories.push_back(std::move(cat));
    }
    m.base_categories = j.at("splits").at("base").get<std::vector<int>>();
    m.novel_categories = j.at("splits").at("novel").get<std::vector<int>>();
    return m;
}

Corpus load_corpus(const std::string& manifest_path) {
    Corpus corpus;
    corpus.manifest = load_manifest(manifest_path);
    const fs::path root = fs::path(manifest_path).parent_path();
    for (const auto& cat : corpus.manifest.categories) {
        for (const auto& inst : cat.instances) {
            for (const auto& view : inst.views) {
                InstanceRecord rec;
                rec.image = png_io::read_rgb8((root / view.file).string());
                rec.instance_id = inst.instance_id;
                rec.category_id = cat.category_id;
                rec.view_index = view.view_index;
                rec.role = view.role;
                rec.nuisance = view.nuisance;
                corpus.by_category[cat.category_id].push_back(corpus.records.size());
                corpus.records.push_back(std::move(rec));
            }
        }
    }
    return corpus;
}

std::uint64_t support_checksum(const Corpus& corpus, const std::vector<SupportPair>& pairs,
                               int category_id) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    h = fnv1a64(&category_id, sizeof(category_id), h);
    for (const auto& p : pairs) {
        const auto& a = corpus.records[p.a];
        const auto& b = corpus.records[p.b];
        const int fields[5] = {a.instance_id, a.view_index, b.instance_id, b.view_index, p.label};
        h = fnv1a64(fields, sizeof(fields), h);
    }
    return h;
}

SupportSet sample_support_set(const Corpus& corpus, int category_id, int k, std::uint64_t seed) {
    if (k < 2) throw SamplingError("support set requires K >= 2 (category " + std::to_string(category_id) + ")");
    auto pool = corpus.category_records(category_id, "support");

    // Group by instance; positives need >= 2 views within the pool.
    std::map<int, std::vector<std::size_t>> by_instance;
    for (std::size_t idx : pool) by_instance[corpus.records[idx].instance_id].push_back(idx);
    std::vector<int> instances;
    for (const auto& [iid, views] : by_instance) instances.push_back(iid);
    if (instances.size() < 2)
        throw SamplingError("category " + std::to_string(category_id) +
                            " needs >= 2 instances in its support pool");
    for (const auto& [iid, views] : by_instance)
        if (views.size() < 2)
            throw SamplingError("category " + std::to_string(category_id) + " instance " +
                                std::to_string(iid) + " has < 2 support views");

    auto rng = make_rng(derive_seed(seed, "support", static_cast<std::uint64_t>(category_id)));
    const int n_pos = (k + 1) / 2;
    const int n_neg = k / 2;

    SupportSet out;
    out.category_id = category_id;
    out.k = k;
    out.seed = seed;

    auto pick = [&rng](std::size_t n) { return static_cast<std::size_t>(rng() % n); };
    for (int i = 0; i < n_pos; ++i) {
        const int iid = instances[pick(instances.size())];
        const auto& views = by_instance[iid];
        std::size_t a = pick(views.size());
        std::size_t b = pick(views.size() - 1);
        if (b >= a) ++b;
        out.pairs.push_back({views[a], views[b], 1});
    }
    for (int i = 0; i < n_neg; ++i) {
        std::size_t ia = pick(instances.size());
        std::size_t ib = pick(instances.size() - 1);
        if (ib >= ia) ++ib;
        const auto& va = by_instance[instances[ia]];
        const auto& vb = by_instance[instances[ib]];
        out.pairs.push_back({va[pick(va.size())], vb[pick(vb.size())], 0});
    }
    std::shuffle(out.pairs.begin(), out.pairs.end(), rng);
    out.checksum = support_checksum(corpus, out.pairs, category_id);
    return out;
}

std::vector<Triplet> sample_triplets(const Corpus& corpus, int category_id, int b, std::uint64_t seed) {
    if (b <= 0) throw SamplingError("triplet count must be positive (category " +
                                    std::to_string(category_id) + ")");
    auto pool = corpus.category_records(category_id, "test");
    std::map<int, std::vector<std::size_t>> by_instance;
    for (std::size_t idx : pool) by_instance[corpus.records[idx].instance_id].push_back(idx);

    std::vector<int> anchors_ok;  // instances with >= 2 test views
    std::vector<int> instances;
    for (const auto& [iid, views] : by_instance) {
        instances.push_back(iid);
        if (views.size() >= 2) anchors_ok.push_back(iid);
    }
    if (instances.size() < 2 || anchors_ok.empty())
        throw SamplingError("category " + std::to_string(category_id) +
                            " too small for triplet sampling");

    auto rng = make_rng(derive_seed(seed, "triplet", static_cast<std::uint64_t>(category_id)));
    auto pick = [&rng](std::size_t n) { return static_cast<std::size_t>(rng() % n); };

    std::vector<Triplet> out;
    out.reserve(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) {
        const int iid = anchors_ok[pick(anchors_ok.size())];
        const auto& views = by_instance[iid];
        std::size_t a = pick(views.size());
        std::size_t p = pick(views.size() - 1);
        if (p >= a) ++p;
        int nid;
        do {
            nid = instances[pick(instances.size())];
        } while (nid == iid);
        const auto& nviews = by_instance[nid];
        out.push_back({views[a], views[p], nviews[pick(nviews.size())]});
    }
    return out;
}

}  // namespace vicp::synth
