#include <doctest.h>

#include <random>

#include "test_util.hpp"
#include "vicp/reid_eval.hpp"

using namespace vicp;
using reid::EmbeddingSet;
using reid::Mat;
using reid::Vec;

namespace {

EmbeddingSet random_set(int instances, int views, int d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    EmbeddingSet set;
    set.category_id = 0;
    set.embeddings = test_util::random_unit_rows(instances * views, d, rng);
    for (int i = 0; i < instances; ++i)
        for (int v = 0; v < views; ++v) set.instance_ids.push_back(i);
    return set;
}

}  // namespace

TEST_CASE("average precision matches hand-derived rankings") {
    // Single relevant item ranked first.
    Vec s1(3);
    s1 << 0.9, 0.5, 0.1;
    CHECK(reid::average_precision(s1, {1, 0, 0}) == 1.0);

    // Two relevant items at ranks 1 and 3: AP = (1/1 + 2/3) / 2.
    Vec s2(4);
    s2 << 0.9, 0.8, 0.7, 0.2;
    CHECK(reid::average_precision(s2, {1, 0, 1, 0}) ==
          doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-12));

    // No relevant item is a protocol error.
    CHECK_THROWS_AS(reid::average_precision(s1, {0, 0, 0}), ProtocolError);

    // Ties break by gallery index: equal scores keep index order.
    Vec s3(3);
    s3 << 0.5, 0.5, 0.5;
    CHECK(reid::average_precision(s3, {0, 1, 0}) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("map oracle equals the evaluator's kernel exactly on 1000 random matrices") {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> dim(1, 10);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int compared = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int nq = dim(rng), ng = dim(rng);
        Mat scores(nq, ng), rel = Mat::Zero(nq, ng);
        for (int q = 0; q < nq; ++q) {
            bool any = false;
            for (int g = 0; g < ng; ++g) {
                // Coarse grid of scores makes ties common on purpose.
                scores(q, g) = std::round(u(rng) * 4.0) / 4.0;
                if (u(rng) < 0.4) {
                    rel(q, g) = 1.0;
                    any = true;
                }
            }
            if (!any) rel(q, static_cast<int>(rng() % static_cast<unsigned>(ng))) = 1.0;
        }
        double mean_ap = 0.0;
        for (int q = 0; q < nq; ++q) {
            std::vector<char> r;
            for (int g = 0; g < ng; ++g) r.push_back(rel(q, g) != 0.0 ? 1 : 0);
            mean_ap += reid::average_precision(scores.row(q).transpose(), r);
        }
        mean_ap /= static_cast<double>(nq);
        CHECK(mean_ap == reid::map_oracle(scores, rel));  // exact, not approximate
        ++compared;
    }
    CHECK(compared == 1000);

    // Forced cases: all relevant -> 1; single irrelevant gallery item -> error.
    Mat s(2, 3);
    s << 0.3, 0.2, 0.9, 0.1, 0.5, 0.4;
    CHECK(reid::map_oracle(s, Mat::Ones(2, 3)) == 1.0);
    Mat one(1, 1);
    one << 0.7;
    CHECK(reid::map_oracle(one, Mat::Ones(1, 1)) == 1.0);
    CHECK_THROWS_AS(reid::map_oracle(one, Mat::Zero(1, 1)), ProtocolError);
    CHECK_THROWS_AS(reid::map_oracle(Mat::Zero(11, 4), Mat::Ones(11, 4)), OracleError);
}

TEST_CASE("identification protocol: every image queries the rest of its category") {
    auto set = random_set(4, 3, 8, 2);
    auto m = reid::identification_eval(set);
    CHECK(m.n_queries == 12);
    CHECK(m.mAP > 0.0);
    CHECK(m.mAP <= 1.0);
    CHECK(m.rank1 <= m.rank5);

    // A perfectly clustered embedding gives mAP = 1.
    EmbeddingSet perfect;
    perfect.embeddings = Mat::Zero(6, 8);
    for (int i = 0; i < 6; ++i) perfect.embeddings(i, i / 2) = 1.0;
    perfect.instance_ids = {0, 0, 1, 1, 2, 2};
    auto pm = reid::identification_eval(perfect);
    CHECK(pm.mAP == 1.0);
    CHECK(pm.rank1 == 1.0);

    // An instance with a single image means some query has no relevant item.
    EmbeddingSet bad = random_set(2, 2, 8, 3);
    bad.instance_ids = {0, 0, 1, 2};
    CHECK_THROWS_AS(reid::identification_eval(bad), ProtocolError);
}

TEST_CASE("random embeddings land near the relevant-proportion floor") {
    // 8 instances x 6 views: each query has 5 relevant among 47.
    auto set = random_set(8, 6, 16, 4);
    auto m = reid::identification_eval(set);
    const double floor = 5.0 / 47.0;
    CHECK(m.mAP > 0.5 * floor);
    CHECK(m.mAP < 3.0 * floor);
}

TEST_CASE("metrics are invariant to a common positive rescaling before normalization") {
    std::mt19937_64 rng(5);
    Mat raw = test_util::random_mat(12, 8, rng);
    auto normalize = [](Mat m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i) /= m.row(i).norm();
        return m;
    };
    EmbeddingSet a;
    a.embeddings = normalize(raw);
    a.instance_ids = {0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3};
    EmbeddingSet b = a;
    b.embeddings = normalize(3.7 * raw);

    auto ma = reid::identification_eval(a);
    auto mb = reid::identification_eval(b);
    CHECK(ma.mAP == mb.mAP);
    CHECK(ma.rank1 == mb.rank1);
    CHECK(ma.rank5 == mb.rank5);
}

TEST_CASE("verification: separated scores give AUC 1, independent scores give about 0.5") {
    // Perfectly separated: positives along one axis, negatives along others.
    EmbeddingSet sep;
    sep.embeddings = Mat::Zero(8, 5);
    for (int i = 0; i < 4; ++i) sep.embeddings(i, 0) = 1.0;      // instance 0, mutually aligned
    for (int i = 4; i < 8; ++i) sep.embeddings(i, i - 3) = 1.0;  // orthogonal singleton instances
    sep.instance_ids = {0, 0, 0, 0, 1, 2, 3, 4};
    auto vm = reid::verification_eval(sep, 12, 3, 9);
    CHECK(vm.auc == 1.0);
    CHECK(vm.acc > 0.9);

    // Label-independent scores: big random set, 10k pairs, AUC within 0.5 +- 0.02.
    auto big = random_set(100, 12, 8, 10);
    auto rm = reid::verification_eval(big, 10000, 10, 11);
    CHECK(rm.n_pairs > 9000);
    CHECK(rm.auc == doctest::Approx(0.5).epsilon(0.04));
    CHECK(std::abs(rm.auc - 0.5) <= 0.02);

    // Fewer pairs than folds is a protocol error.
    CHECK_THROWS_AS(reid::verification_eval(sep, 4, 10, 12), ProtocolError);
}

TEST_CASE("report assembly aggregates per-category rows and survives JSON round trips") {
    std::vector<reid::CategoryReport> rows(2);
    rows[0].category_id = 5;
    rows[0].ident = {0.5, 0.6, 0.7, 10};
    rows[0].verif = {0.8, 0.75, 100};
    rows[1].category_id = 3;
    rows[1].ident = {0.7, 0.8, 0.9, 30};
    rows[1].verif = {0.9, 0.85, 200};

    auto rep = reid::assemble_report(rows, "fp123", 42, 16);
    CHECK(rep.per_category.front().category_id == 3);  // deterministic order
    CHECK(rep.mean_ident.mAP == doctest::Approx(0.6));
    // Pooled weights by query count: (10*0.5 + 30*0.7) / 40.
    CHECK(rep.pooled_ident.mAP == doctest::Approx((10 * 0.5 + 30 * 0.7) / 40.0));

    auto text = rep.to_json();
    auto back = reid::RetrievalReport::from_json(text);
    CHECK(back.to_json() == text);
    CHECK(back.mean_ident.mAP == rep.mean_ident.mAP);
}
