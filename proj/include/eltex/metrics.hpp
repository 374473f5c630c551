#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "eltex/dedup.hpp"
#include "eltex/gateway.hpp"
#include "eltex/indicators.hpp"
#include "eltex/message.hpp"
#include "eltex/prompts.hpp"

namespace eltex {

// --- self-BLEU ------------------------------------------------------------

/// Runs of letters, digits, '_' and non-ASCII bytes form words; every other
/// non-space character is its own token.
std::vector<std::string> bleu_tokenize(std::string_view text);

/// Sentence BLEU of `hypothesis` against `references` with uniform weights
/// up to `order`, clipped counts, closest-reference brevity penalty (ties go
/// to the shorter reference) and add-epsilon smoothing (epsilon 0.1) on
/// zero-count orders. Returns 0 when no unigram matches.
double sentence_bleu(const std::vector<std::vector<std::string>>& references,
                     const std::vector<std::string>& hypothesis, int order = 4);

struct SelfBleuResult {
    std::vector<double> per_document_scores;
    /// Corpus index of each scored document.
    std::vector<std::size_t> documents;
    double mean = 0.0;
    /// Population standard deviation.
    double stddev = 0.0;
    int n_gram_order = 4;
    std::size_t sample_size = 0;
    std::size_t corpus_size = 0;
    std::string tokenizer = "words+punctuation";
    std::string smoothing = "add-epsilon 0.1 on zero-count orders";

    nlohmann::json to_json(bool include_scores = false) const;
};

/// Each scored document is compared with every other document in the
/// corpus. With `sample_size` set below the corpus size, that many documents
/// are drawn with the seeded RNG. Throws ValidationError for fewer than 2
/// documents.
SelfBleuResult self_bleu(const std::vector<std::string>& corpus, int n_gram_order = 4,
                         std::optional<std::size_t> sample_size = std::nullopt, std::uint64_t rng_seed = 0);

// --- clustering -----------------------------------------------------------

struct ClusterResult {
    /// -1 marks noise; clusters are numbered from 0 in discovery order.
    std::vector<int> labels;
    std::size_t n_clusters = 0;
    std::size_t noise_count = 0;
    double eps = 0.2;
    std::size_t min_points = 5;

    nlohmann::json to_json() const;
};

/// DBSCAN over cosine distance (1 - similarity). A point's neighborhood
/// includes itself and every point within distance <= eps. Throws
/// ValidationError on empty input.
ClusterResult cluster_analysis(const std::vector<EmbeddingVector>& embeddings, double eps = 0.2,
                               std::size_t min_points = 5);

// --- batch scores -----------------------------------------------------------

struct BatchScores {
    std::map<std::string, double> scores;
    std::vector<std::string> missing;
    std::vector<std::string> warnings;
};

/// Reads an id -> score object (or an array of {message_id,
/// cyberattack_score}). Scores may be strings; out-of-range values are
/// clamped with a warning. Throws SchemaParseError when unparseable and
/// Error when none of the expected ids is present.
BatchScores parse_batch_scores(const nlohmann::json& raw, const std::vector<std::string>& expected_ids);
BatchScores parse_batch_scores(std::string_view raw_text, const std::vector<std::string>& expected_ids);

// --- classifier evaluation --------------------------------------------------

struct EvalMetrics {
    std::size_t n = 0;
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    double accuracy = 0.0;
    double brier = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    /// Absent unless both classes occur in the gold labels.
    std::optional<double> roc_auc;
    /// FP / n and FN / n.
    double fp_rate = 0.0;
    double fn_rate = 0.0;
    double threshold = 0.5;

    nlohmann::json to_json() const;
    /// actual,predicted,count rows.
    std::string confusion_csv() const;
};

/// Positive class = label 1. Throws ValidationError when the id sets differ,
/// when gold is empty, or when a score lies outside [0,1].
EvalMetrics eval_classifier(const std::map<std::string, double>& predictions, const std::map<std::string, int>& gold,
                            double threshold = 0.5);

// --- cost -------------------------------------------------------------------

struct PricingModel {
    double input_price_per_million = 2.50;
    double output_price_per_million = 10.00;

    void validate() const;
};

struct CostEstimate {
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;
    double input_cost = 0.0;
    double output_cost = 0.0;
    double total = 0.0;
    std::optional<double> per_message;

    nlohmann::json to_json() const;
};

CostEstimate estimate_cost(std::int64_t input_tokens, std::int64_t output_tokens, const PricingModel& pricing = {},
                           std::optional<std::size_t> messages = std::nullopt);
CostEstimate estimate_cost(const CostLedger& ledger, const PricingModel& pricing = {},
                           std::optional<std::size_t> messages = std::nullopt);

// --- dataset statistics -----------------------------------------------------

struct DatasetStats {
    CategoryCounts counts;
    std::map<std::string, std::size_t> per_source;
    double mean_chars = 0.0;
    double mean_tokens = 0.0;
    std::size_t min_chars = 0;
    std::size_t max_chars = 0;
    std::size_t scored = 0;

    nlohmann::json to_json() const;
};

DatasetStats dataset_stats(const std::vector<Message>& messages);

// --- retention --------------------------------------------------------------

struct RetentionCell {
    double temperature = 0.0;
    double threshold = 0.0;
    std::size_t received = 0;
    std::size_t retained = 0;
    double retention_pct = 0.0;
};

struct RetentionReport {
    std::vector<RetentionCell> cells;
    std::vector<std::string> notes;

    nlohmann::json to_json() const;
};

struct RetentionOptions {
    /// Messages generated per temperature.
    std::size_t target_size = 100;
    std::filesystem::path work_dir;
    DedupConfig dedup;
    const Clock* clock = nullptr;
};

/// One generation pass per temperature, then dedup of its output at each
/// threshold with a fresh in-memory store.
RetentionReport retention_experiment(const std::vector<Message>& seeds, const PromptTemplate& tmpl,
                                     const IndicatorSet& indicators, const GenerationParams& params,
                                     const std::vector<double>& temperatures, const std::vector<double>& thresholds,
                                     Gateway& gateway, Embedder& embedder, const RetentionOptions& options);

}  // namespace eltex
