#include <algorithm>

#include "eltex/gateway.hpp"

namespace eltex {

namespace schemas {

ResponseSchema generated_messages(std::size_t expected) {
    nlohmann::json item = {{"type", {"string", "object"}},
                           {"properties", {{"message", {{"type", "string"}}}}},
                           {"required", {"message"}}};
    return {std::string(kGeneratedMessages), {{"type", "array"}, {"items", item}}, expected};
}

ResponseSchema score_map(std::optional<std::size_t> expected) {
    return {std::string(kScoreMap),
            {{"type", "object"}, {"additionalProperties", {{"type", {"number", "string"}}}}},
            expected};
}

ResponseSchema annotation_scores(std::optional<std::size_t> expected) {
    nlohmann::json item = {{"type", "object"},
                           {"properties",
                            {{"message_id", {{"type", {"string", "integer"}}}},
                             {"cyberattack_score", {{"type", {"number", "string"}}}}}},
                           {"required", {"message_id", "cyberattack_score"}}};
    return {std::string(kAnnotationScores), {{"type", "array"}, {"items", item}}, expected};
}

}  // namespace schemas

namespace {

bool type_matches(const nlohmann::json& v, const std::string& type) {
    if (type == "string") return v.is_string();
    if (type == "number") return v.is_number();
    if (type == "integer") return v.is_number_integer() || v.is_number_unsigned();
    if (type == "boolean") return v.is_boolean();
    if (type == "object") return v.is_object();
    if (type == "array") return v.is_array();
    if (type == "null") return v.is_null();
    return false;
}

void validate_at(const nlohmann::json& v, const nlohmann::json& schema, const std::string& path) {
    if (!schema.is_object()) return;
    if (auto it = schema.find("type"); it != schema.end()) {
        bool ok = false;
        if (it->is_string()) {
            ok = type_matches(v, it->get<std::string>());
        } else if (it->is_array()) {
            ok = std::any_of(it->begin(), it->end(),
                             [&](const nlohmann::json& t) { return t.is_string() && type_matches(v, t.get<std::string>()); });
        }
        if (!ok) throw ValidationError(path + ": expected type " + it->dump() + ", got " + v.type_name());
    }
    if (v.is_array()) {
        if (auto it = schema.find("minItems"); it != schema.end() && v.size() < it->get<std::size_t>()) {
            throw ValidationError(path + ": fewer than " + it->dump() + " items");
        }
        if (auto it = schema.find("maxItems"); it != schema.end() && v.size() > it->get<std::size_t>()) {
            throw ValidationError(path + ": more than " + it->dump() + " items");
        }
        if (auto it = schema.find("items"); it != schema.end()) {
            for (std::size_t i = 0; i < v.size(); ++i) validate_at(v[i], *it, path + "[" + std::to_string(i) + "]");
        }
    }
    if (v.is_object()) {
        if (auto it = schema.find("required"); it != schema.end()) {
            for (const auto& key : *it) {
                if (!v.contains(key.get<std::string>())) {
                    throw ValidationError(path + ": missing required property '" + key.get<std::string>() + "'");
                }
            }
        }
        const auto props = schema.find("properties");
        const auto extra = schema.find("additionalProperties");
        for (auto member = v.begin(); member != v.end(); ++member) {
            const std::string child = path + "." + member.key();
            if (props != schema.end() && props->contains(member.key())) {
                validate_at(member.value(), (*props)[member.key()], child);
            } else if (extra != schema.end()) {
                if (extra->is_boolean() && !extra->get<bool>()) {
                    throw ValidationError(child + ": additional property not allowed");
                }
                if (extra->is_object()) validate_at(member.value(), *extra, child);
            }
        }
    }
}

std::string_view strip_fence(std::string_view s) {
    auto trim = [](std::string_view t) {
        auto b = t.find_first_not_of(" \t\r\n");
        if (b == std::string_view::npos) return std::string_view{};
        auto e = t.find_last_not_of(" \t\r\n");
        return t.substr(b, e - b + 1);
    };
    s = trim(s);
    if (s.rfind("```", 0) == 0) {
        auto nl = s.find('\n');
        auto close = s.rfind("```");
        if (nl != std::string_view::npos && close != std::string_view::npos && close > nl) {
            s = trim(s.substr(nl + 1, close - nl - 1));
        }
    }
    return s;
}

}  // namespace

void validate_against_schema(const nlohmann::json& value, const nlohmann::json& schema) {
    validate_at(value, schema, "$");
}

nlohmann::json parse_structured(std::string_view raw_text, const ResponseSchema& schema) {
    nlohmann::json value;
    try {
        value = nlohmann::json::parse(strip_fence(raw_text));
    } catch (const nlohmann::json::exception& e) {
        throw SchemaParseError(std::string("response is not valid JSON: ") + e.what(), std::string(raw_text));
    }
    try {
        validate_against_schema(value, schema.schema);
    } catch (const ValidationError& e) {
        throw SchemaParseError("response does not match schema '" + schema.name + "': " + e.what(),
                               std::string(raw_text));
    }
    return value;
}

}  // namespace eltex
