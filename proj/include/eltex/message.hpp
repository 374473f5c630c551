#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "eltex/clock.hpp"
#include "json.hpp"

namespace eltex {

enum class Source { seed, synthetic, test };

std::string_view to_string(Source s);
/// Throws ValidationError for unknown tags.
Source parse_source(std::string_view tag);

/// Well-known categories. Any other string is accepted as a free-form label.
inline constexpr std::string_view kTargetCategory = "target";
inline constexpr std::string_view kGeneralCategory = "general";

/// Hex SHA-256 of the content bytes, a zero byte, then the source tag.
/// Throws ValidationError on empty content.
std::string message_id(std::string_view content, Source source);

struct Message {
    std::string id;
    std::string content;
    std::string category{kGeneralCategory};
    std::optional<double> score;
    std::optional<Timestamp> timestamp;
    Source source = Source::seed;
    std::optional<std::string> session_id;

    /// Builds a message with its id computed from (content, source).
    static Message make(std::string content, Source source, std::string category = std::string{kGeneralCategory});

    /// Throws ValidationError if content is empty, the score lies outside
    /// [0,1] or the id does not match the content hash.
    void validate() const;

    friend bool operator==(const Message&, const Message&) = default;
};

enum class Provenance { initial, deduplicated, final };

std::string_view to_string(Provenance p);
Provenance parse_provenance(std::string_view tag);

/// Ordered collection of messages with unique ids.
class Dataset {
public:
    Dataset() = default;
    Dataset(std::string name, Provenance provenance) : name_(std::move(name)), provenance_(provenance) {}

    /// Builds a dataset, silently keeping only the first message per id.
    static Dataset from_messages(std::string name, Provenance provenance, std::vector<Message> messages);

    /// Appends unless a message with the same id is already present.
    bool add(Message m);
    bool contains(std::string_view id) const { return ids_.count(std::string(id)) > 0; }

    const std::vector<Message>& messages() const noexcept { return messages_; }
    std::size_t size() const noexcept { return messages_.size(); }
    bool empty() const noexcept { return messages_.empty(); }
    const std::string& name() const noexcept { return name_; }
    Provenance provenance() const noexcept { return provenance_; }
    void set_name(std::string name) { name_ = std::move(name); }

private:
    std::string name_;
    Provenance provenance_ = Provenance::initial;
    std::vector<Message> messages_;
    std::unordered_set<std::string> ids_;
};

struct CategoryCounts {
    std::map<std::string, std::size_t> per_category;
    std::size_t total = 0;

    std::size_t count(std::string_view category) const;
};

CategoryCounts dataset_counts(const Dataset& d);
CategoryCounts category_counts(const std::vector<Message>& messages);

struct GenerationParams {
    std::string topic;
    std::string industry;
    std::string stakeholders;
    std::size_t target_size = 100;
    double temperature = 0.8;
    /// role -> model reference ("provider/model"). Roles: indicator-generation,
    /// summarization, generation, annotation.
    std::map<std::string, std::string> provider_models;
    std::optional<std::uint64_t> rng_seed;
    std::string category{kTargetCategory};
    /// Free-text description used when no seed data is available.
    std::string description;

    void validate() const;
};

// Canonical JSON form: {id, content, category, score, timestamp, source, session_id}.
nlohmann::json to_json(const Message& m);
/// Lenient reader: id is recomputed when absent, source defaults to `default_source`.
Message message_from_json(const nlohmann::json& j, Source default_source = Source::seed);

nlohmann::json to_json(const GenerationParams& p);
GenerationParams generation_params_from_json(const nlohmann::json& j);

nlohmann::json to_json(const CategoryCounts& c);

}  // namespace eltex
