#include "vicp/reid_eval.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "vicp/rng.hpp"

using json = nlohmann::ordered_json;

namespace vicp::reid {

void EmbeddingSet::validate() const {
    if (embeddings.rows() != static_cast<Eigen::Index>(instance_ids.size()))
        throw ShapeError("embedding set: one instance id per row required");
    for (Eigen::Index i = 0; i < embeddings.rows(); ++i)
        if (std::abs(embeddings.row(i).norm() - 1.0) > 1e-6)
            throw NumericError("embedding set: row " + std::to_string(i) + " is not unit norm");
}

double average_precision(const Vec& scores, const std::vector<char>& relevant) {
    const Eigen::Index g = scores.size();
    if (g != static_cast<Eigen::Index>(relevant.size()))
        throw ShapeError("average_precision: scores/relevance size mismatch");
    int n_rel = 0;
    for (char r : relevant) n_rel += r ? 1 : 0;
    if (n_rel == 0) throw ProtocolError("average_precision: query has no relevant gallery item");

    std::vector<Eigen::Index> order(static_cast<std::size_t>(g));
    std::iota(order.begin(), order.end(), 0);
    // Descending score; stable sort keeps index order on ties.
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return scores(a) > scores(b); });

    double sum = 0.0;
    int hits = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
        if (relevant[static_cast<std::size_t>(order[r])]) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(r + 1);
        }
    }
    return sum / static_cast<double>(n_rel);
}

IdentMetrics identification_eval(const EmbeddingSet& set) {
    set.validate();
    const Eigen::Index n = set.embeddings.rows();
    if (n < 2) throw ProtocolError("identification_eval: need at least two images");

    IdentMetrics out;
    out.n_queries = static_cast<int>(n);
    const Mat sims = set.embeddings * set.embeddings.transpose();
    for (Eigen::Index q = 0; q < n; ++q) {
        Vec scores(n - 1);
        std::vector<char> relevant(static_cast<std::size_t>(n - 1), 0);
        Eigen::Index j = 0;
        bool any_rel = false;
        for (Eigen::Index g = 0; g < n; ++g) {
            if (g == q) continue;  // the query never ranks itself
            scores(j) = sims(q, g);
            relevant[static_cast<std::size_t>(j)] =
                set.instance_ids[static_cast<std::size_t>(g)] == set.instance_ids[static_cast<std::size_t>(q)];
            any_rel |= relevant[static_cast<std::size_t>(j)] != 0;
            ++j;
        }
        if (!any_rel)
            throw ProtocolError("identification_eval: instance " +
                                std::to_string(set.instance_ids[static_cast<std::size_t>(q)]) +
                                " has a query with no relevant gallery item");
        out.mAP += average_precision(scores, relevant);

        std::vector<Eigen::Index> order(static_cast<std::size_t>(n - 1));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](Eigen::Index a, Eigen::Index b) { return scores(a) > scores(b); });
        for (int k = 0; k < std::min<Eigen::Index>(5, n - 1); ++k) {
            if (relevant[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])]) {
                if (k < 1) out.rank1 += 1.0;
                out.rank5 += 1.0;
                break;
            }
        }
    }
    out.mAP /= static_cast<double>(n);
    out.rank1 /= static_cast<double>(n);
    out.rank5 /= static_cast<double>(n);
    return out;
}

double map_oracle(const Mat& scores, const Mat& relevance) {
    if (scores.rows() != relevance.rows() || scores.cols() != relevance.cols())
        throw ShapeError("map_oracle: score/relevance shape mismatch");
    if (scores.rows() < 1 || scores.cols() < 1) throw ShapeError("map_oracle: empty matrix");
    if (scores.rows() > 10 || scores.cols() > 10)
        throw OracleError("map_oracle: exhaustive validation is limited to n <= 10");

    double total = 0.0;
    for (Eigen::Index q = 0; q < scores.rows(); ++q) {
        int n_rel = 0;
        for (Eigen::Index j = 0; j < scores.cols(); ++j)
            if (relevance(q, j) != 0.0) ++n_rel;
        if (n_rel == 0)
            throw ProtocolError("map_oracle: query " + std::to_string(q) + " has no relevant item");

        // rank(j) = 1 + #{k: higher score, or equal score with smaller index}
        std::vector<std::pair<int, Eigen::Index>> rel_ranks;  // (rank, item)
        for (Eigen::Index j = 0; j < scores.cols(); ++j) {
            if (relevance(q, j) == 0.0) continue;
            int rank = 1;
            for (Eigen::Index k = 0; k < scores.cols(); ++k) {
                if (k == j) continue;
                if (scores(q, k) > scores(q, j) || (scores(q, k) == scores(q, j) && k < j)) ++rank;
            }
            rel_ranks.push_back({rank, j});
        }
        std::sort(rel_ranks.begin(), rel_ranks.end());
        double ap = 0.0;
        for (const auto& [rank, j] : rel_ranks) {
            int rel_at_or_above = 0;
            for (const auto& [rank2, j2] : rel_ranks)
                if (rank2 <= rank) ++rel_at_or_above;
            ap += static_cast<double>(rel_at_or_above) / static_cast<double>(rank);
        }
        total += ap / static_cast<double>(n_rel);
    }
    return total / static_cast<double>(scores.rows());
}

VerifMetrics verification_eval(const EmbeddingSet& set, int n_pairs, int folds, std::uint64_t seed) {
    set.validate();
    if (folds < 2) throw ConfigError("verification_eval: folds must be >= 2");
    const Eigen::Index n = set.embeddings.rows();

    // All distinct positive pairs.
    std::vector<std::pair<Eigen::Index, Eigen::Index>> pos;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j)
            if (set.instance_ids[static_cast<std::size_t>(i)] == set.instance_ids[static_cast<std::size_t>(j)])
                pos.push_back({i, j});
    if (pos.empty()) throw ProtocolError("verification_eval: no positive pairs available");

    auto rng = make_rng(derive_seed(seed, "verification", static_cast<std::uint64_t>(set.category_id)));
    std::shuffle(pos.begin(), pos.end(), rng);
    const int per_side = std::min<int>(n_pairs / 2, static_cast<int>(pos.size()));
    pos.resize(static_cast<std::size_t>(per_side));

    std::set<std::pair<Eigen::Index, Eigen::Index>> neg_seen;
    std::vector<std::pair<Eigen::Index, Eigen::Index>> neg;
    int guard = 0;
    while (static_cast<int>(neg.size()) < per_side && guard < per_side * 200) {
        ++guard;
        Eigen::Index i = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n));
        Eigen::Index j = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n));
        if (i == j) continue;
        if (i > j) std::swap(i, j);
        if (set.instance_ids[static_cast<std::size_t>(i)] == set.instance_ids[static_cast<std::size_t>(j)])
            continue;
        if (!neg_seen.insert({i, j}).second) continue;
        neg.push_back({i, j});
    }
    if (neg.size() < pos.size()) pos.resize(neg.size());

    struct Scored {
        double score;
        int label;
    };
    std::vector<Scored> samples;
    for (const auto& [i, j] : pos) samples.push_back({set.embeddings.row(i).dot(set.embeddings.row(j)), 1});
    for (const auto& [i, j] : neg) samples.push_back({set.embeddings.row(i).dot(set.embeddings.row(j)), 0});
    if (static_cast<int>(samples.size()) < folds)
        throw ProtocolError("verification_eval: fewer pairs than folds");

    VerifMetrics out;
    out.n_pairs = static_cast<int>(samples.size());

    // Rank-based AUC with half credit on ties.
    {
        std::vector<std::size_t> order(samples.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return samples[a].score < samples[b].score;
        });
        double u = 0.0;
        std::size_t i = 0;
        double rank_sum_pos = 0.0;
        while (i < order.size()) {
            std::size_t j = i;
            while (j + 1 < order.size() &&
                   samples[order[j + 1]].score == samples[order[i]].score)
                ++j;
            const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
            for (std::size_t k = i; k <= j; ++k)
                if (samples[order[k]].label == 1) rank_sum_pos += avg_rank;
            i = j + 1;
        }
        const double p = static_cast<double>(pos.size());
        const double m = static_cast<double>(neg.size());
        u = rank_sum_pos - p * (p + 1.0) / 2.0;
        out.auc = (p > 0 && m > 0) ? u / (p * m) : 0.0;
    }

    // 10-fold accuracy: per fold, pick the threshold maximizing accuracy on
    // the other folds, evaluate on the held-out fold.
    std::shuffle(samples.begin(), samples.end(), rng);
    double acc_sum = 0.0;
    for (int f = 0; f < folds; ++f) {
        std::vector<Scored> train, test;
        for (std::size_t idx = 0; idx < samples.size(); ++idx)
            (static_cast<int>(idx % static_cast<std::size_t>(folds)) == f ? test : train)
                .push_back(samples[idx]);
        if (test.empty() || train.empty()) throw ProtocolError("verification_eval: fold too small");

        std::vector<double> candidates;
        candidates.push_back(-2.0);
        std::vector<double> train_scores;
        for (const auto& s : train) train_scores.push_back(s.score);
        std::sort(train_scores.begin(), train_scores.end());
        for (std::size_t idx = 0; idx + 1 < train_scores.size(); ++idx)
            candidates.push_back(0.5 * (train_scores[idx] + train_scores[idx + 1]));
        candidates.push_back(2.0);

        double best_thr = candidates.front();
        double best_acc = -1.0;
        for (double thr : candidates) {
            int correct = 0;
            for (const auto& s : train) correct += ((s.score > thr) == (s.label == 1)) ? 1 : 0;
            const double a = static_cast<double>(correct) / static_cast<double>(train.size());
            if (a > best_acc) {
                best_acc = a;
                best_thr = thr;
            }
        }
        int correct = 0;
        for (const auto& s : test) correct += ((s.score > best_thr) == (s.label == 1)) ? 1 : 0;
        acc_sum += static_cast<double>(correct) / static_cast<double>(test.size());
    }
    out.acc = acc_sum / static_cast<double>(folds);
    return out;
}

RetrievalReport assemble_report(std::vector<CategoryReport> rows, const std::string& fingerprint,
                                std::uint64_t eval_seed, int k_support) {
    std::sort(rows.begin(), rows.end(),
              [](const CategoryReport& a, const CategoryReport& b) { return a.category_id < b.category_id; });
    RetrievalReport rep;
    rep.config_fingerprint = fingerprint;
    rep.eval_seed = eval_seed;
    rep.k_support = k_support;
    rep.per_category = std::move(rows);

    const double nc = static_cast<double>(rep.per_category.size());
    long q_total = 0, p_total = 0;
    for (const auto& c : rep.per_category) {
        rep.mean_ident.mAP += c.ident.mAP / nc;
        rep.mean_ident.rank1 += c.ident.rank1 / nc;
        rep.mean_ident.rank5 += c.ident.rank5 / nc;
        rep.mean_ident.n_queries += c.ident.n_queries;
        rep.mean_verif.auc += c.verif.auc / nc;
        rep.mean_verif.acc += c.verif.acc / nc;
        rep.mean_verif.n_pairs += c.verif.n_pairs;
        q_total += c.ident.n_queries;
        p_total += c.verif.n_pairs;
    }
    for (const auto& c : rep.per_category) {
        const double w = q_total > 0 ? static_cast<double>(c.ident.n_queries) / q_total : 0.0;
        rep.pooled_ident.mAP += w * c.ident.mAP;
        rep.pooled_ident.rank1 += w * c.ident.rank1;
        rep.pooled_ident.rank5 += w * c.ident.rank5;
    }
    rep.pooled_ident.n_queries = static_cast<int>(q_total);
    (void)p_total;
    return rep;
}

namespace {

json ident_json(const IdentMetrics& m) {
    return {{"mAP", m.mAP}, {"rank1", m.rank1}, {"rank5", m.rank5}, {"n_queries", m.n_queries}};
}

IdentMetrics ident_from(const json& j) {
    IdentMetrics m;
    m.mAP = j.at("mAP").get<double>();
    m.rank1 = j.at("rank1").get<double>();
    m.rank5 = j.at("rank5").get<double>();
    m.n_queries = j.at("n_queries").get<int>();
    return m;
}

}  // namespace

std::string RetrievalReport::to_json() const {
    json j;
    j["schema_version"] = schema_version;
    j["config_fingerprint"] = config_fingerprint;
    j["eval_seed"] = eval_seed;
    j["k_support"] = k_support;
    j["per_category"] = json::array();
    for (const auto& c : per_category) {
        json row;
        row["category_id"] = c.category_id;
        row["identification"] = ident_json(c.ident);
        row["verification"] = {{"auc", c.verif.auc}, {"acc", c.verif.acc}, {"n_pairs", c.verif.n_pairs}};
        row["icl_accuracy"] = c.icl_accuracy;
        j["per_category"].push_back(row);
    }
    j["aggregate"] = {
        {"mean", {{"identification", ident_json(mean_ident)},
                  {"verification",
                   {{"auc", mean_verif.auc}, {"acc", mean_verif.acc}, {"n_pairs", mean_verif.n_pairs}}}}},
        {"pooled", {{"identification", ident_json(pooled_ident)}}}};
    return j.dump(2) + "\n";
}

RetrievalReport RetrievalReport::from_json(const std::string& text) {
    json j = json::parse(text);
    RetrievalReport rep;
    rep.schema_version = j.at("schema_version").get<int>();
    rep.config_fingerprint = j.at("config_fingerprint").get<std::string>();
    rep.eval_seed = j.at("eval_seed").get<std::uint64_t>();
    rep.k_support = j.at("k_support").get<int>();
    for (const auto& row : j.at("per_category")) {
        CategoryReport c;
        c.category_id = row.at("category_id").get<int>();
        c.ident = ident_from(row.at("identification"));
        c.verif.auc = row.at("verification").at("auc").get<double>();
        c.verif.acc = row.at("verification").at("acc").get<double>();
        c.verif.n_pairs = row.at("verification").at("n_pairs").get<int>();
        c.icl_accuracy = row.at("icl_accuracy").get<double>();
        rep.per_category.push_back(c);
    }
    rep.mean_ident = ident_from(j.at("aggregate").at("mean").at("identification"));
    rep.mean_verif.auc = j.at("aggregate").at("mean").at("verification").at("auc").get<double>();
    rep.mean_verif.acc = j.at("aggregate").at("mean").at("verification").at("acc").get<double>();
    rep.mean_verif.n_pairs = j.at("aggregate").at("mean").at("verification").at("n_pairs").get<int>();
    rep.pooled_ident = ident_from(j.at("aggregate").at("pooled").at("identification"));
    return rep;
}

}  // namespace vicp::reid
