#pragma once

#include <optional>
#include <string>
#include <vector>

#include "eltex/gateway.hpp"
#include "eltex/indicators.hpp"
#include "eltex/message.hpp"
#include "eltex/prompts.hpp"

namespace eltex {

struct AnnotationRecord {
    std::string message_id;
    double score = 0.0;
    std::string model;
};

struct AnnotationWarning {
    std::string message_id;
    /// "clamped", "unknown_id", "duplicate_id", "missing_retry"
    std::string kind;
    std::string detail;
};

struct AnnotationOptions {
    /// Messages per annotation prompt.
    std::size_t chunk_size = 10;
    double temperature = 0.0;
    PromptVariables variables;
};

struct AnnotationResult {
    /// One record per input message, in input order.
    std::vector<AnnotationRecord> records;
    std::vector<AnnotationWarning> warnings;
    /// Follow-up prompts sent for ids the model left out.
    std::size_t retries = 0;
};

/// Scores every message with the annotation prompt. Chunks run
/// concurrently. Ids missing from a reply are asked for once more; if they
/// are still missing, throws Error naming them. Scores outside [0,1] are
/// clamped with a warning. Throws RefusalError when the model refuses and
/// BackendError when a request fails outright.
AnnotationResult annotate(const std::vector<Message>& messages, const IndicatorSet& indicators, Gateway& gateway,
                          const std::string& model, const AnnotationOptions& options = {});

/// 1 iff score >= threshold.
int predict_label(double score, double threshold = 0.5);

struct LabeledTruth {
    std::string message_id;
    int label = 0;
};

struct ValidationInput {
    std::vector<LabeledTruth> truths;
    std::vector<AnnotationRecord> annotations;
    double threshold = 0.5;
};

/// Percentage of truths whose predicted label matches, pairing by message
/// id. Throws ValidationError when ids do not pair up one to one, when n is
/// 0, or when the threshold lies outside (0,1).
double accuracy(const ValidationInput& v);

/// Review sheet: message_id, content, cyberattack_score, human_label.
std::string export_review_csv(const std::vector<Message>& messages, const std::vector<AnnotationRecord>& records);

struct ReviewRow {
    std::string message_id;
    std::string content;
    std::optional<double> score;
    std::optional<int> human_label;
};

/// Reads a review sheet back. Blank human_label cells stay unset. Throws
/// ValidationError on a missing column or a label other than 0/1.
std::vector<ReviewRow> import_review_csv(std::string_view text);

/// Builds ValidationInput from reviewed rows, skipping rows without both a
/// score and a human label.
ValidationInput validation_input_from_review(const std::vector<ReviewRow>& rows, double threshold = 0.5,
                                             const std::string& model = "review");

}  // namespace eltex
