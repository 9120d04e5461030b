#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vicp/errors.hpp"

namespace vicp::reid {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Unit-norm embeddings for one category's test images.
struct EmbeddingSet {
    int category_id = 0;
    Mat embeddings;                    // n x d, unit rows
    std::vector<int> instance_ids;     // size n
    std::vector<std::size_t> record_refs;  // corpus record indices (informational)
    void validate() const;
};

struct IdentMetrics {
    double mAP = 0.0, rank1 = 0.0, rank5 = 0.0;
    int n_queries = 0;
};

struct VerifMetrics {
    double auc = 0.0, acc = 0.0;
    int n_pairs = 0;
};

// Average precision of one ranking: gallery scored against a query, ties
// broken by gallery index (stable), precision summed at each relevant rank.
// This is the shared kernel of identification_eval and the oracle's target.
double average_precision(const Vec& scores, const std::vector<char>& relevant);

// Each-image-as-query identification protocol over one category.
IdentMetrics identification_eval(const EmbeddingSet& set);

// Literal, unoptimized transcription of the mAP definition over an explicit
// score/relevance matrix; n_queries and n_gallery must be <= 10.
double map_oracle(const Mat& scores, const Mat& relevance);

// Balanced-pair verification with rank-based AUC and 10-fold thresholded
// accuracy (threshold chosen on the other nine folds).
VerifMetrics verification_eval(const EmbeddingSet& set, int n_pairs, int folds, std::uint64_t seed);

struct CategoryReport {
    int category_id = 0;
    IdentMetrics ident;
    VerifMetrics verif;
    double icl_accuracy = -1.0;  // optional readout; -1 when absent
};

struct RetrievalReport {
    int schema_version = 1;
    std::string config_fingerprint;
    std::uint64_t eval_seed = 0;
    int k_support = 0;
    std::vector<CategoryReport> per_category;
    // Unweighted means over categories plus query-/pair-weighted pooled values.
    IdentMetrics mean_ident;
    VerifMetrics mean_verif;
    IdentMetrics pooled_ident;

    std::string to_json() const;
    static RetrievalReport from_json(const std::string& text);
};

RetrievalReport assemble_report(std::vector<CategoryReport> rows, const std::string& fingerprint,
                                std::uint64_t eval_seed, int k_support);

}  // namespace vicp::reid
