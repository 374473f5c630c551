#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "eltex/message.hpp"

namespace eltex {

enum class DataFormat { jsonl, csv, json };

DataFormat parse_data_format(std::string_view name);
/// Guesses the format from a file extension (.jsonl/.ndjson, .csv, .json).
DataFormat format_from_path(const std::filesystem::path& p);

// RFC 4180 CSV. Fields containing a comma, quote, CR or LF are quoted.
std::string csv_escape(std::string_view field);
std::string csv_row(const std::vector<std::string>& fields);
/// Parses a whole CSV document (quoted fields may span lines).
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

std::string serialize_messages(const std::vector<Message>& messages, DataFormat format);

struct ImportReport {
    std::size_t lines = 0;
    std::size_t imported = 0;
    std::size_t duplicates_skipped = 0;
    struct Problem {
        std::size_t line;
        std::string reason;
    };
    std::vector<Problem> errors;

    nlohmann::json to_json() const;
};

/// Lenient parse: rows that fail validation are reported and skipped.
/// CSV needs a header row with at least a `content` (or `message`/`text`)
/// column; other canonical columns are optional. Repeated ids are dropped
/// unless `keep_duplicates` is set (raw generation output keeps them).
std::vector<Message> parse_messages(std::string_view text, DataFormat format, Source default_source,
                                    ImportReport* report = nullptr, bool keep_duplicates = false);

std::string read_file(const std::filesystem::path& p);
/// Writes via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& p, std::string_view contents);
void append_file(const std::filesystem::path& p, std::string_view contents);

std::vector<Message> load_messages(const std::filesystem::path& p, Source default_source = Source::seed,
                                   ImportReport* report = nullptr, bool keep_duplicates = false);
void save_messages(const std::filesystem::path& p, const std::vector<Message>& messages);

}  // namespace eltex
