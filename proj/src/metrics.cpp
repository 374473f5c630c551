#include "eltex/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>
#include <set>
#include <unordered_map>

#include "eltex/annotation.hpp"
#include "eltex/orchestrator.hpp"
#include "eltex/rng.hpp"

namespace eltex {

namespace {

bool word_byte(unsigned char c) { return std::isalnum(c) || c == '_' || c >= 0x80; }

using Counts = std::unordered_map<std::string, std::uint32_t>;

std::string ngram_key(const std::vector<std::uint32_t>& ids, std::size_t start, int n) {
    std::string k(static_cast<std::size_t>(n) * sizeof(std::uint32_t), '\0');
    std::memcpy(k.data(), ids.data() + start, k.size());
    return k;
}

Counts ngram_counts(const std::vector<std::uint32_t>& ids, int n) {
    Counts c;
    if (ids.size() < static_cast<std::size_t>(n)) return c;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= ids.size(); ++i) ++c[ngram_key(ids, i, n)];
    return c;
}

std::size_t closest_length(const std::vector<std::size_t>& ref_lengths, std::size_t hyp_len) {
    std::size_t best = ref_lengths.front();
    auto dist = [&](std::size_t r) { return r > hyp_len ? r - hyp_len : hyp_len - r; };
    for (auto r : ref_lengths) {
        if (dist(r) < dist(best) || (dist(r) == dist(best) && r < best)) best = r;
    }
    return best;
}

double combine(const std::vector<std::uint64_t>& num, const std::vector<std::uint64_t>& den, std::size_t hyp_len,
               std::size_t ref_len, int order) {
    if (num[0] == 0) return 0.0;
    constexpr double kEpsilon = 0.1;
    double w = 1.0 / order;
    double s = 0.0;
    for (int n = 0; n < order; ++n) {
        double p = num[n] == 0 ? kEpsilon / static_cast<double>(den[n])
                               : static_cast<double>(num[n]) / static_cast<double>(den[n]);
        s += w * std::log(p);
    }
    double bp = 1.0;
    if (hyp_len <= ref_len) {
        bp = hyp_len == 0 ? 0.0 : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
    }
    return bp * std::exp(s);
}

std::vector<std::uint32_t> intern(const std::vector<std::string>& tokens,
                                  std::unordered_map<std::string, std::uint32_t>& dict) {
    std::vector<std::uint32_t> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) {
        auto [it, inserted] = dict.emplace(t, static_cast<std::uint32_t>(dict.size()));
        ids.push_back(it->second);
    }
    return ids;
}

}  // namespace

std::vector<std::string> bleu_tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        auto c = static_cast<unsigned char>(text[i]);
        if (std::isspace(c)) {
            ++i;
        } else if (word_byte(c)) {
            std::size_t j = i;
            while (j < text.size() && word_byte(static_cast<unsigned char>(text[j]))) ++j;
            out.emplace_back(text.substr(i, j - i));
            i = j;
        } else {
            out.emplace_back(1, text[i]);
            ++i;
        }
    }
    return out;
}

double sentence_bleu(const std::vector<std::vector<std::string>>& references,
                     const std::vector<std::string>& hypothesis, int order) {
    if (references.empty()) throw ValidationError("BLEU needs at least one reference");
    if (order < 1) throw ValidationError("n-gram order must be at least 1");
    std::unordered_map<std::string, std::uint32_t> dict;
    auto hyp = intern(hypothesis, dict);
    std::vector<std::vector<std::uint32_t>> refs;
    std::vector<std::size_t> ref_lengths;
    for (const auto& r : references) {
        refs.push_back(intern(r, dict));
        ref_lengths.push_back(r.size());
    }
    std::vector<std::uint64_t> num(order), den(order);
    for (int n = 1; n <= order; ++n) {
        auto hc = ngram_counts(hyp, n);
        std::unordered_map<std::string, std::uint32_t> max_ref;
        for (const auto& r : refs) {
            for (const auto& [k, c] : ngram_counts(r, n)) max_ref[k] = std::max(max_ref[k], c);
        }
        std::uint64_t total = 0, clipped = 0;
        for (const auto& [k, c] : hc) {
            total += c;
            auto it = max_ref.find(k);
            if (it != max_ref.end()) clipped += std::min(c, it->second);
        }
        num[n - 1] = clipped;
        den[n - 1] = std::max<std::uint64_t>(1, total);
    }
    return combine(num, den, hypothesis.size(), closest_length(ref_lengths, hypothesis.size()), order);
}

nlohmann::json SelfBleuResult::to_json(bool include_scores) const {
    nlohmann::json j = {{"mean", mean},
                        {"std", stddev},
                        {"n_gram_order", n_gram_order},
                        {"sample_size", sample_size},
                        {"corpus_size", corpus_size},
                        {"tokenizer", tokenizer},
                        {"smoothing", smoothing}};
    if (include_scores) {
        j["per_document_scores"] = per_document_scores;
        j["documents"] = documents;
    }
    return j;
}

SelfBleuResult self_bleu(const std::vector<std::string>& corpus, int n_gram_order,
                         std::optional<std::size_t> sample_size, std::uint64_t rng_seed) {
    if (corpus.size() < 2) throw ValidationError("self-BLEU needs at least 2 documents");
    if (n_gram_order < 1) throw ValidationError("n-gram order must be at least 1");
    if (sample_size && *sample_size < 1) throw ValidationError("sample_size must be at least 1");

    std::unordered_map<std::string, std::uint32_t> dict;
    std::vector<std::vector<std::uint32_t>> docs;
    docs.reserve(corpus.size());
    for (const auto& text : corpus) docs.push_back(intern(bleu_tokenize(text), dict));

    // For every n-gram: the largest count in any document and the largest
    // count in any other document, so "max over all references except i" is
    // a lookup.
    struct Top2 {
        std::uint32_t c1 = 0;
        std::size_t d1 = SIZE_MAX;
        std::uint32_t c2 = 0;
    };
    std::vector<std::unordered_map<std::string, Top2>> top(n_gram_order);
    std::vector<std::vector<Counts>> counts(n_gram_order, std::vector<Counts>(docs.size()));
    for (int n = 1; n <= n_gram_order; ++n) {
        auto& tn = top[n - 1];
        for (std::size_t d = 0; d < docs.size(); ++d) {
            counts[n - 1][d] = ngram_counts(docs[d], n);
            for (const auto& [k, c] : counts[n - 1][d]) {
                auto& t = tn[k];
                if (c > t.c1) {
                    t.c2 = t.c1;
                    t.c1 = c;
                    t.d1 = d;
                } else if (c > t.c2) {
                    t.c2 = c;
                }
            }
        }
    }
    std::vector<std::size_t> sorted_lengths;
    for (const auto& d : docs) sorted_lengths.push_back(d.size());
    std::sort(sorted_lengths.begin(), sorted_lengths.end());

    std::vector<std::size_t> chosen(docs.size());
    std::iota(chosen.begin(), chosen.end(), std::size_t{0});
    if (sample_size && *sample_size < docs.size()) {
        Rng rng(rng_seed);
        rng.shuffle(std::span<std::size_t>(chosen));
        chosen.resize(*sample_size);
        std::sort(chosen.begin(), chosen.end());
    }

    SelfBleuResult res;
    res.n_gram_order = n_gram_order;
    res.sample_size = chosen.size();
    res.corpus_size = corpus.size();
    res.documents = chosen;
    for (auto i : chosen) {
        std::vector<std::uint64_t> num(n_gram_order), den(n_gram_order);
        for (int n = 1; n <= n_gram_order; ++n) {
            std::uint64_t total = 0, clipped = 0;
            const auto& tn = top[n - 1];
            for (const auto& [k, c] : counts[n - 1][i]) {
                total += c;
                const auto& t = tn.at(k);
                std::uint32_t ref = t.d1 == i ? t.c2 : t.c1;
                clipped += std::min(c, ref);
            }
            num[n - 1] = clipped;
            den[n - 1] = std::max<std::uint64_t>(1, total);
        }
        // Closest reference length, ignoring one copy of this document's own.
        std::size_t hyp_len = docs[i].size();
        auto lo = std::lower_bound(sorted_lengths.begin(), sorted_lengths.end(), hyp_len);
        auto hi = std::upper_bound(sorted_lengths.begin(), sorted_lengths.end(), hyp_len);
        std::vector<std::size_t> candidates;
        if (hi - lo >= 2) candidates.push_back(hyp_len);
        if (lo != sorted_lengths.begin()) candidates.push_back(*(lo - 1));
        if (hi != sorted_lengths.end()) candidates.push_back(*hi);
        double score = combine(num, den, hyp_len, closest_length(candidates, hyp_len), n_gram_order);
        res.per_document_scores.push_back(score);
    }
    double sum = 0;
    for (double s : res.per_document_scores) sum += s;
    res.mean = sum / static_cast<double>(res.per_document_scores.size());
    double var = 0;
    for (double s : res.per_document_scores) var += (s - res.mean) * (s - res.mean);
    res.stddev = std::sqrt(var / static_cast<double>(res.per_document_scores.size()));
    return res;
}

nlohmann::json ClusterResult::to_json() const {
    std::map<int, std::size_t> sizes;
    for (int l : labels) {
        if (l >= 0) ++sizes[l];
    }
    nlohmann::json s = nlohmann::json::array();
    for (const auto& [l, n] : sizes) s.push_back(n);
    return {{"n_clusters", n_clusters},
            {"noise_count", noise_count},
            {"cluster_sizes", s},
            {"eps", eps},
            {"min_points", min_points},
            {"labels", labels}};
}

ClusterResult cluster_analysis(const std::vector<EmbeddingVector>& embeddings, double eps, std::size_t min_points) {
    if (embeddings.empty()) throw ValidationError("no embeddings to cluster");
    if (!(eps >= 0.0 && eps <= 2.0)) throw ValidationError("eps must lie in [0, 2]");
    if (min_points < 1) throw ValidationError("min_points must be at least 1");
    const std::size_t n = embeddings.size();
    std::vector<std::vector<std::size_t>> neighbors(n);
    for (std::size_t i = 0; i < n; ++i) {
        neighbors[i].push_back(i);
        for (std::size_t j = i + 1; j < n; ++j) {
            if (1.0 - similarity(embeddings[i], embeddings[j]) <= eps) {
                neighbors[i].push_back(j);
                neighbors[j].push_back(i);
            }
        }
    }
    for (auto& nb : neighbors) std::sort(nb.begin(), nb.end());

    constexpr int kUnvisited = -2;
    ClusterResult r;
    r.eps = eps;
    r.min_points = min_points;
    r.labels.assign(n, kUnvisited);
    int cluster = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (r.labels[i] != kUnvisited) continue;
        if (neighbors[i].size() < min_points) {
            r.labels[i] = -1;
            continue;
        }
        r.labels[i] = cluster;
        std::vector<std::size_t> frontier(neighbors[i].begin(), neighbors[i].end());
        for (std::size_t f = 0; f < frontier.size(); ++f) {
            auto q = frontier[f];
            if (r.labels[q] == -1) r.labels[q] = cluster;  // border point
            if (r.labels[q] != kUnvisited) continue;
            r.labels[q] = cluster;
            if (neighbors[q].size() >= min_points) {
                frontier.insert(frontier.end(), neighbors[q].begin(), neighbors[q].end());
            }
        }
        ++cluster;
    }
    r.n_clusters = static_cast<std::size_t>(cluster);
    r.noise_count = static_cast<std::size_t>(std::count(r.labels.begin(), r.labels.end(), -1));
    return r;
}

BatchScores parse_batch_scores(const nlohmann::json& raw, const std::vector<std::string>& expected_ids) {
    if (expected_ids.empty()) throw ValidationError("expected ids must be non-empty");
    std::map<std::string, nlohmann::json> found;
    auto key = [](const nlohmann::json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
    if (raw.is_object()) {
        for (const auto& [k, v] : raw.items()) found[k] = v;
    } else if (raw.is_array()) {
        for (const auto& item : raw) {
            if (!item.is_object()) continue;
            const char* idk = item.contains("message_id") ? "message_id" : "id";
            const char* sk = item.contains("cyberattack_score") ? "cyberattack_score" : "score";
            if (item.contains(idk) && item.contains(sk)) found[key(item[idk])] = item[sk];
        }
    } else {
        throw SchemaParseError("batch scores must be an object or an array", raw.dump());
    }
    BatchScores out;
    for (const auto& id : expected_ids) {
        auto it = found.find(id);
        std::optional<double> v;
        if (it != found.end()) {
            if (it->second.is_number()) {
                v = it->second.get<double>();
            } else if (it->second.is_string()) {
                try {
                    std::size_t used = 0;
                    auto s = it->second.get<std::string>();
                    double d = std::stod(s, &used);
                    if (used == s.size()) v = d;
                } catch (const std::exception&) {
                }
            }
        }
        if (!v || !std::isfinite(*v)) {
            out.missing.push_back(id);
            continue;
        }
        if (*v < 0.0 || *v > 1.0) {
            out.warnings.push_back("score for " + id + " clamped from " + std::to_string(*v));
            *v = std::clamp(*v, 0.0, 1.0);
        }
        out.scores[id] = *v;
        found.erase(it);
    }
    for (const auto& [k, v] : found) out.warnings.push_back("unexpected id " + k + " ignored");
    if (out.scores.empty()) throw Error("none of the expected ids has a score");
    return out;
}

BatchScores parse_batch_scores(std::string_view raw_text, const std::vector<std::string>& expected_ids) {
    nlohmann::json value;
    try {
        value = parse_structured(raw_text, {"scores", {{"type", {"object", "array"}}}, std::nullopt});
    } catch (const SchemaParseError&) {
        throw;
    }
    return parse_batch_scores(value, expected_ids);
}

nlohmann::json EvalMetrics::to_json() const {
    return {{"n", n},
            {"accuracy", accuracy},
            {"brier", brier},
            {"precision", precision},
            {"recall", recall},
            {"f1", f1},
            {"roc_auc", roc_auc ? nlohmann::json(*roc_auc) : nlohmann::json()},
            {"fp_rate", fp_rate},
            {"fn_rate", fn_rate},
            {"threshold", threshold},
            {"confusion", {{"tp", tp}, {"fp", fp}, {"tn", tn}, {"fn", fn}}}};
}

std::string EvalMetrics::confusion_csv() const {
    return "actual,predicted,count\n1,1," + std::to_string(tp) + "\n1,0," + std::to_string(fn) + "\n0,1," +
           std::to_string(fp) + "\n0,0," + std::to_string(tn) + "\n";
}

EvalMetrics eval_classifier(const std::map<std::string, double>& predictions, const std::map<std::string, int>& gold,
                            double threshold) {
    if (gold.empty()) throw ValidationError("gold labels are empty");
    if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("threshold must lie in (0, 1)");
    for (const auto& [id, y] : gold) {
        if (!predictions.count(id)) throw ValidationError("no prediction for " + id);
        if (y != 0 && y != 1) throw ValidationError("gold label for " + id + " must be 0 or 1");
    }
    for (const auto& [id, p] : predictions) {
        if (!gold.count(id)) throw ValidationError("prediction " + id + " has no gold label");
        if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("score for " + id + " lies outside [0,1]");
    }

    EvalMetrics m;
    m.threshold = threshold;
    m.n = gold.size();
    double sq = 0.0;
    std::vector<std::pair<double, int>> ranked;
    for (const auto& [id, y] : gold) {
        double p = predictions.at(id);
        sq += (p - y) * (p - y);
        int yhat = predict_label(p, threshold);
        if (y == 1 && yhat == 1) ++m.tp;
        if (y == 0 && yhat == 1) ++m.fp;
        if (y == 0 && yhat == 0) ++m.tn;
        if (y == 1 && yhat == 0) ++m.fn;
        ranked.emplace_back(p, y);
    }
    double n = static_cast<double>(m.n);
    m.brier = sq / n;
    m.accuracy = static_cast<double>(m.tp + m.tn) / n;
    m.fp_rate = static_cast<double>(m.fp) / n;
    m.fn_rate = static_cast<double>(m.fn) / n;
    m.precision = m.tp + m.fp ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp) : 0.0;
    m.recall = m.tp + m.fn ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn) : 0.0;
    m.f1 = 2 * m.tp + m.fp + m.fn
               ? 2.0 * static_cast<double>(m.tp) / static_cast<double>(2 * m.tp + m.fp + m.fn)
               : 0.0;

    std::size_t pos = m.tp + m.fn;
    std::size_t neg = m.n - pos;
    if (pos > 0 && neg > 0) {
        // Mann-Whitney U with mid-ranks: ties earn half credit.
        std::sort(ranked.begin(), ranked.end());
        double pos_rank_sum = 0.0;
        for (std::size_t i = 0; i < ranked.size();) {
            std::size_t j = i;
            while (j < ranked.size() && ranked[j].first == ranked[i].first) ++j;
            double mid = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
            for (std::size_t k = i; k < j; ++k) {
                if (ranked[k].second == 1) pos_rank_sum += mid;
            }
            i = j;
        }
        double p = static_cast<double>(pos);
        m.roc_auc = (pos_rank_sum - p * (p + 1) / 2.0) / (p * static_cast<double>(neg));
    }
    return m;
}

void PricingModel::validate() const {
    if (!(input_price_per_million >= 0.0) || !(output_price_per_million >= 0.0)) {
        throw ValidationError("prices must be non-negative");
    }
}

nlohmann::json CostEstimate::to_json() const {
    return {{"input_tokens", input_tokens},
            {"output_tokens", output_tokens},
            {"input_cost", input_cost},
            {"output_cost", output_cost},
            {"total", total},
            {"per_message", per_message ? nlohmann::json(*per_message) : nlohmann::json()}};
}

CostEstimate estimate_cost(std::int64_t input_tokens, std::int64_t output_tokens, const PricingModel& pricing,
                           std::optional<std::size_t> messages) {
    pricing.validate();
    if (input_tokens < 0 || output_tokens < 0) throw ValidationError("token counts must be non-negative");
    CostEstimate c;
    c.input_tokens = input_tokens;
    c.output_tokens = output_tokens;
    c.input_cost = static_cast<double>(input_tokens) / 1e6 * pricing.input_price_per_million;
    c.output_cost = static_cast<double>(output_tokens) / 1e6 * pricing.output_price_per_million;
    c.total = c.input_cost + c.output_cost;
    if (messages && *messages > 0) c.per_message = c.total / static_cast<double>(*messages);
    return c;
}

CostEstimate estimate_cost(const CostLedger& ledger, const PricingModel& pricing, std::optional<std::size_t> messages) {
    auto t = ledger.totals();
    return estimate_cost(t.input_tokens, t.output_tokens, pricing, messages);
}

nlohmann::json DatasetStats::to_json() const {
    return {{"counts", eltex::to_json(counts)},
            {"per_source", per_source},
            {"mean_chars", mean_chars},
            {"mean_tokens", mean_tokens},
            {"min_chars", min_chars},
            {"max_chars", max_chars},
            {"scored", scored}};
}

DatasetStats dataset_stats(const std::vector<Message>& messages) {
    DatasetStats s;
    s.counts = category_counts(messages);
    if (messages.empty()) return s;
    double chars = 0, tokens = 0;
    s.min_chars = SIZE_MAX;
    for (const auto& m : messages) {
        ++s.per_source[std::string(to_string(m.source))];
        chars += static_cast<double>(m.content.size());
        tokens += static_cast<double>(bleu_tokenize(m.content).size());
        s.min_chars = std::min(s.min_chars, m.content.size());
        s.max_chars = std::max(s.max_chars, m.content.size());
        if (m.score) ++s.scored;
    }
    s.mean_chars = chars / static_cast<double>(messages.size());
    s.mean_tokens = tokens / static_cast<double>(messages.size());
    return s;
}

nlohmann::json RetentionReport::to_json() const {
    nlohmann::json cs = nlohmann::json::array();
    for (const auto& c : cells) {
        cs.push_back({{"temperature", c.temperature},
                      {"threshold", c.threshold},
                      {"received", c.received},
                      {"retained", c.retained},
                      {"retention_pct", c.retention_pct}});
    }
    return {{"cells", cs}, {"notes", notes}};
}

RetentionReport retention_experiment(const std::vector<Message>& seeds, const PromptTemplate& tmpl,
                                     const IndicatorSet& indicators, const GenerationParams& params,
                                     const std::vector<double>& temperatures, const std::vector<double>& thresholds,
                                     Gateway& gateway, Embedder& embedder, const RetentionOptions& options) {
    if (temperatures.empty() || thresholds.empty()) throw ValidationError("temperatures and thresholds are required");
    for (double t : temperatures) {
        if (!(t >= 0.0 && t <= 1.0)) throw ValidationError("temperatures must lie in [0, 1]");
    }
    for (double e : thresholds) {
        if (!(e > 0.0 && e <= 1.0)) throw ValidationError("thresholds must lie in (0, 1]");
    }
    auto work = options.work_dir;
    if (work.empty()) {
        work = std::filesystem::temp_directory_path() / ("eltex-retention-" + std::to_string(std::random_device{}()));
    }
    SystemClock system_clock;
    const Clock& clock = options.clock ? *options.clock : system_clock;

    RetentionReport report;
    for (std::size_t ti = 0; ti < temperatures.size(); ++ti) {
        auto p = params;
        p.temperature = temperatures[ti];
        p.target_size = options.target_size;
        auto plan = plan_job(p, seeds, tmpl, indicators, {});
        auto dir = work / ("temperature-" + std::to_string(ti));
        std::filesystem::remove_all(dir);
        auto job = run_job(plan, gateway, dir);
        for (double eps : thresholds) {
            MemoryEmbeddingStore store;
            auto cfg = options.dedup;
            cfg.threshold = eps;
            auto out = dedup_pipeline(job.produced, "retention", cfg, embedder, store, clock);
            RetentionCell c;
            c.temperature = temperatures[ti];
            c.threshold = eps;
            c.received = out.report.received;
            c.retained = out.report.retained;
            c.retention_pct = out.report.insertion_rate * 100.0;
            report.cells.push_back(c);
        }
    }
    report.notes.push_back("each temperature is a single generation pass; sampling noise moves retention between runs");
    return report;
}

}  // namespace eltex
