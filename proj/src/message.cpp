#include "eltex/message.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <memory>

#include "eltex/errors.hpp"

namespace eltex {

std::string_view to_string(Source s) {
    switch (s) {
        case Source::seed: return "seed";
        case Source::synthetic: return "synthetic";
        case Source::test: return "test";
    }
    return "seed";
}

Source parse_source(std::string_view tag) {
    if (tag == "seed") return Source::seed;
    if (tag == "synthetic") return Source::synthetic;
    if (tag == "test") return Source::test;
    throw ValidationError("unknown message source '" + std::string(tag) + "'");
}

std::string_view to_string(Provenance p) {
    switch (p) {
        case Provenance::initial: return "initial";
        case Provenance::deduplicated: return "deduplicated";
        case Provenance::final: return "final";
    }
    return "initial";
}

Provenance parse_provenance(std::string_view tag) {
    if (tag == "initial") return Provenance::initial;
    if (tag == "deduplicated") return Provenance::deduplicated;
    if (tag == "final") return Provenance::final;
    throw ValidationError("unknown provenance '" + std::string(tag) + "'");
}

std::string message_id(std::string_view content, Source source) {
    if (content.empty()) throw ValidationError("message content must be non-empty");

    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    const unsigned char zero = 0;
    auto tag = to_string(source);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), content.data(), content.size()) != 1 ||
        EVP_DigestUpdate(ctx.get(), &zero, 1) != 1 || EVP_DigestUpdate(ctx.get(), tag.data(), tag.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
        throw Error("SHA-256 digest failed");
    }

    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0xf]);
    }
    return out;
}

Message Message::make(std::string content, Source source, std::string category) {
    Message m;
    m.id = message_id(content, source);
    m.content = std::move(content);
    m.source = source;
    m.category = std::move(category);
    return m;
}

void Message::validate() const {
    if (content.empty()) throw ValidationError("message content must be non-empty");
    if (score && !(*score >= 0.0 && *score <= 1.0)) {
        throw ValidationError("message score must lie in [0,1]");
    }
    if (id != message_id(content, source)) throw ValidationError("message id does not match its content hash");
}

Dataset Dataset::from_messages(std::string name, Provenance provenance, std::vector<Message> messages) {
    Dataset d(std::move(name), provenance);
    for (auto& m : messages) d.add(std::move(m));
    return d;
}

bool Dataset::add(Message m) {
    if (!ids_.insert(m.id).second) return false;
    messages_.push_back(std::move(m));
    return true;
}

std::size_t CategoryCounts::count(std::string_view category) const {
    auto it = per_category.find(std::string(category));
    return it == per_category.end() ? 0 : it->second;
}

CategoryCounts category_counts(const std::vector<Message>& messages) {
    CategoryCounts c;
    c.per_category[std::string(kTargetCategory)] = 0;
    c.per_category[std::string(kGeneralCategory)] = 0;
    for (const auto& m : messages) ++c.per_category[m.category];
    c.total = messages.size();
    return c;
}

CategoryCounts dataset_counts(const Dataset& d) { return category_counts(d.messages()); }

void GenerationParams::validate() const {
    if (target_size < 1) throw ValidationError("target_size must be >= 1");
    if (!(temperature >= 0.0 && temperature <= 1.0)) throw ValidationError("temperature must lie in [0,1]");
}

nlohmann::json to_json(const Message& m) {
    nlohmann::json j;
    j["id"] = m.id;
    j["content"] = m.content;
    j["category"] = m.category;
    j["score"] = m.score ? nlohmann::json(*m.score) : nlohmann::json(nullptr);
    j["timestamp"] = m.timestamp ? nlohmann::json(format_rfc3339(*m.timestamp)) : nlohmann::json(nullptr);
    j["source"] = to_string(m.source);
    j["session_id"] = m.session_id ? nlohmann::json(*m.session_id) : nlohmann::json(nullptr);
    return j;
}

namespace {

std::optional<double> read_score(const nlohmann::json& v) {
    if (v.is_null()) return std::nullopt;
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
        const auto& s = v.get_ref<const std::string&>();
        if (s.empty()) return std::nullopt;
        try {
            std::size_t used = 0;
            double d = std::stod(s, &used);
            if (used == s.size()) return d;
        } catch (const std::exception&) {
        }
    }
    throw ValidationError("score must be a number");
}

}  // namespace

Message message_from_json(const nlohmann::json& j, Source default_source) {
    if (!j.is_object()) throw ValidationError("message must be a JSON object");
    Message m;
    for (const char* key : {"content", "message", "text"}) {
        if (j.contains(key) && j[key].is_string()) {
            m.content = j[key].get<std::string>();
            break;
        }
    }
    if (m.content.empty()) throw ValidationError("message content must be non-empty");

    m.source = default_source;
    if (j.contains("source") && j["source"].is_string()) m.source = parse_source(j["source"].get<std::string>());

    if (j.contains("category") && j["category"].is_string() && !j["category"].get<std::string>().empty()) {
        m.category = j["category"].get<std::string>();
    } else if (j.contains("label") && (j["label"].is_number() || j["label"].is_boolean())) {
        bool positive = j["label"].is_boolean() ? j["label"].get<bool>() : j["label"].get<double>() >= 0.5;
        m.category = std::string(positive ? kTargetCategory : kGeneralCategory);
    }

    if (j.contains("score")) m.score = read_score(j["score"]);
    if (j.contains("timestamp") && j["timestamp"].is_string() && !j["timestamp"].get<std::string>().empty()) {
        m.timestamp = parse_rfc3339(j["timestamp"].get<std::string>());
        if (!m.timestamp) throw ValidationError("timestamp is not RFC 3339: " + j["timestamp"].get<std::string>());
    }
    if (j.contains("session_id") && j["session_id"].is_string()) m.session_id = j["session_id"].get<std::string>();

    m.id = message_id(m.content, m.source);
    if (j.contains("id") && j["id"].is_string() && !j["id"].get<std::string>().empty() &&
        j["id"].get<std::string>() != m.id) {
        throw ValidationError("message id does not match its content hash");
    }
    m.validate();
    return m;
}

nlohmann::json to_json(const GenerationParams& p) {
    nlohmann::json j{{"topic", p.topic},
                     {"industry", p.industry},
                     {"stakeholders", p.stakeholders},
                     {"target_size", p.target_size},
                     {"temperature", p.temperature},
                     {"provider_models", p.provider_models},
                     {"category", p.category},
                     {"description", p.description}};
    j["rng_seed"] = p.rng_seed ? nlohmann::json(*p.rng_seed) : nlohmann::json(nullptr);
    return j;
}

GenerationParams generation_params_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("generation params must be a JSON object");
    GenerationParams p;
    try {
        p.topic = j.value("topic", "");
        p.industry = j.value("industry", "");
        p.stakeholders = j.value("stakeholders", "");
        if (j.contains("target_size")) {
            auto n = j["target_size"].get<std::int64_t>();
            if (n < 1) throw ValidationError("target_size must be >= 1");
            p.target_size = static_cast<std::size_t>(n);
        }
        p.temperature = j.value("temperature", 0.8);
        if (j.contains("provider_models")) p.provider_models = j["provider_models"].get<std::map<std::string, std::string>>();
        if (j.contains("rng_seed") && !j["rng_seed"].is_null()) p.rng_seed = j["rng_seed"].get<std::uint64_t>();
        p.category = j.value("category", std::string(kTargetCategory));
        p.description = j.value("description", "");
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("invalid generation params: ") + e.what());
    }
    p.validate();
    return p;
}

nlohmann::json to_json(const CategoryCounts& c) {
    nlohmann::json j{{"total", c.total}};
    j["per_category"] = c.per_category;
    return j;
}

}  // namespace eltex
