#include "eltex/annotation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>

#include "eltex/dataset_io.hpp"

namespace eltex {

namespace {

std::optional<double> score_value(const nlohmann::json& v) {
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
        try {
            std::size_t used = 0;
            auto s = v.get<std::string>();
            double d = std::stod(s, &used);
            if (used == s.size()) return d;
        } catch (const std::exception&) {
        }
    }
    return std::nullopt;
}

std::string id_value(const nlohmann::json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

ChatRequest request_for(const std::vector<Message>& chunk, const IndicatorSet& indicators, const std::string& model,
                        const AnnotationOptions& options) {
    ChatRequest r;
    r.model = model;
    r.user_prompt = build_annotation_prompt(indicators, chunk, options.variables);
    r.temperature = options.temperature;
    r.response_schema = schemas::annotation_scores(chunk.size());
    return r;
}

// Folds one reply into `scores`; returns false when the reply is unusable.
bool absorb(const ChatResponse& resp, const std::vector<Message>& chunk, const std::string& model,
            std::map<std::string, AnnotationRecord>& scores, std::vector<AnnotationWarning>& warnings) {
    if (resp.finish_reason == FinishReason::refused) throw RefusalError("annotation model refused", resp.text);
    nlohmann::json arr;
    try {
        arr = parse_structured(resp.text, schemas::annotation_scores());
    } catch (const SchemaParseError&) {
        return false;
    }
    std::set<std::string> wanted;
    for (const auto& m : chunk) wanted.insert(m.id);
    for (const auto& item : arr) {
        auto id = id_value(item.at("message_id"));
        if (!wanted.count(id)) {
            warnings.push_back({id, "unknown_id", "reply mentions an id that was not asked for"});
            continue;
        }
        auto s = score_value(item.at("cyberattack_score"));
        if (!s || !std::isfinite(*s)) continue;  // treated as missing
        if (scores.count(id)) {
            warnings.push_back({id, "duplicate_id", "reply scored this id more than once; first value kept"});
            continue;
        }
        double v = *s;
        if (v < 0.0 || v > 1.0) {
            double c = std::clamp(v, 0.0, 1.0);
            warnings.push_back({id, "clamped", "score " + std::to_string(v) + " clamped to " + std::to_string(c)});
            v = c;
        }
        scores[id] = {id, v, model};
    }
    return true;
}

}  // namespace

AnnotationResult annotate(const std::vector<Message>& messages, const IndicatorSet& indicators, Gateway& gateway,
                          const std::string& model, const AnnotationOptions& options) {
    if (messages.empty()) throw ValidationError("no messages to annotate");
    if (options.chunk_size < 1) throw ValidationError("chunk_size must be at least 1");
    {
        std::set<std::string> ids;
        for (const auto& m : messages) {
            if (!ids.insert(m.id).second) throw ValidationError("duplicate message id " + m.id);
        }
    }

    std::vector<std::vector<Message>> chunks;
    for (std::size_t i = 0; i < messages.size(); i += options.chunk_size) {
        chunks.emplace_back(messages.begin() + static_cast<std::ptrdiff_t>(i),
                            messages.begin() + static_cast<std::ptrdiff_t>(std::min(messages.size(), i + options.chunk_size)));
    }
    std::vector<ChatRequest> reqs;
    for (const auto& c : chunks) reqs.push_back(request_for(c, indicators, model, options));
    auto status = gateway.wait_batch(gateway.submit_batch(std::move(reqs)));

    AnnotationResult out;
    std::map<std::string, AnnotationRecord> scores;
    for (const auto& entry : status.results) {
        if (!entry.ok()) {
            throw BackendError("annotation request " + std::to_string(entry.index) + " failed: " + entry.error().kind + ": " +
                        entry.error().message);
        }
        absorb(entry.response(), chunks[entry.index], model, scores, out.warnings);
    }

    std::vector<Message> missing;
    for (const auto& m : messages) {
        if (!scores.count(m.id)) missing.push_back(m);
    }
    if (!missing.empty()) {
        for (std::size_t i = 0; i < missing.size(); i += options.chunk_size) {
            std::vector<Message> chunk(missing.begin() + static_cast<std::ptrdiff_t>(i),
                                       missing.begin() + static_cast<std::ptrdiff_t>(std::min(missing.size(), i + options.chunk_size)));
            for (const auto& m : chunk) out.warnings.push_back({m.id, "missing_retry", "id missing from reply; asked again"});
            ++out.retries;
            auto resp = gateway.complete_chat(request_for(chunk, indicators, model, options));
            absorb(resp, chunk, model, scores, out.warnings);
        }
        std::string still;
        std::size_t n_still = 0;
        for (const auto& m : missing) {
            if (scores.count(m.id)) continue;
            if (n_still++ < 5) still += (still.empty() ? "" : ", ") + m.id;
        }
        if (n_still) {
            throw Error(std::to_string(n_still) + " message(s) still unscored after a retry: " + still +
                        (n_still > 5 ? ", ..." : ""));
        }
    }
    for (const auto& m : messages) out.records.push_back(scores.at(m.id));
    return out;
}

int predict_label(double score, double threshold) { return score >= threshold ? 1 : 0; }

double accuracy(const ValidationInput& v) {
    if (!(v.threshold > 0.0 && v.threshold < 1.0)) throw ValidationError("threshold must lie in (0, 1)");
    if (v.truths.empty()) throw ValidationError("accuracy needs at least one labeled record");
    std::unordered_map<std::string, double> scores;
    for (const auto& a : v.annotations) {
        if (!scores.emplace(a.message_id, a.score).second) {
            throw ValidationError("message " + a.message_id + " has more than one annotation");
        }
    }
    std::set<std::string> seen;
    std::size_t correct = 0;
    for (const auto& t : v.truths) {
        if (t.label != 0 && t.label != 1) throw ValidationError("labels must be 0 or 1");
        if (!seen.insert(t.message_id).second) throw ValidationError("message " + t.message_id + " is labeled twice");
        auto it = scores.find(t.message_id);
        if (it == scores.end()) throw ValidationError("message " + t.message_id + " has no annotation");
        if (predict_label(it->second, v.threshold) == t.label) ++correct;
    }
    if (scores.size() != seen.size()) {
        for (const auto& [id, s] : scores) {
            if (!seen.count(id)) throw ValidationError("annotation for " + id + " has no human label");
        }
    }
    return static_cast<double>(correct) / static_cast<double>(v.truths.size()) * 100.0;
}

std::string export_review_csv(const std::vector<Message>& messages, const std::vector<AnnotationRecord>& records) {
    std::unordered_map<std::string, double> scores;
    for (const auto& r : records) scores[r.message_id] = r.score;
    std::string out = csv_row({"message_id", "content", "cyberattack_score", "human_label"});
    for (const auto& m : messages) {
        auto it = scores.find(m.id);
        nlohmann::json score = it == scores.end() ? nlohmann::json() : nlohmann::json(it->second);
        out += csv_row({m.id, m.content, it == scores.end() ? "" : score.dump(), ""});
    }
    return out;
}

std::vector<ReviewRow> import_review_csv(std::string_view text) {
    auto rows = parse_csv(text);
    if (rows.empty()) throw ValidationError("review sheet is empty");
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < rows[0].size(); ++i) col[rows[0][i]] = i;
    for (const char* need : {"message_id", "cyberattack_score", "human_label"}) {
        if (!col.count(need)) throw ValidationError(std::string("review sheet lacks column '") + need + "'");
    }
    auto cell = [](const std::vector<std::string>& r, std::size_t i) { return i < r.size() ? r[i] : std::string(); };
    std::vector<ReviewRow> out;
    for (std::size_t n = 1; n < rows.size(); ++n) {
        const auto& r = rows[n];
        if (r.size() == 1 && r[0].empty()) continue;
        ReviewRow row;
        row.message_id = cell(r, col["message_id"]);
        if (row.message_id.empty()) throw ValidationError("row " + std::to_string(n + 1) + ": empty message_id");
        if (col.count("content")) row.content = cell(r, col["content"]);
        auto s = cell(r, col["cyberattack_score"]);
        if (!s.empty()) {
            auto v = score_value(nlohmann::json(s));
            if (!v) throw ValidationError("row " + std::to_string(n + 1) + ": score is not a number");
            row.score = v;
        }
        auto l = cell(r, col["human_label"]);
        if (!l.empty()) {
            if (l != "0" && l != "1") throw ValidationError("row " + std::to_string(n + 1) + ": human_label must be 0 or 1");
            row.human_label = l == "1";
        }
        out.push_back(std::move(row));
    }
    return out;
}

ValidationInput validation_input_from_review(const std::vector<ReviewRow>& rows, double threshold,
                                             const std::string& model) {
    ValidationInput v;
    v.threshold = threshold;
    for (const auto& r : rows) {
        if (!r.score || !r.human_label) continue;
        v.truths.push_back({r.message_id, *r.human_label});
        v.annotations.push_back({r.message_id, *r.score, model});
    }
    return v;
}

}  // namespace eltex
