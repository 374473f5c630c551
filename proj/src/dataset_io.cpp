#include "eltex/dataset_io.hpp"

#include <algorithm>

#include <fstream>
#include <sstream>
#include <unordered_set>

#include "eltex/errors.hpp"

namespace eltex {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kColumns = {"id", "content", "category", "score", "timestamp", "source", "session_id"};

std::string score_text(double v) {
    nlohmann::json j = v;
    return j.dump();
}

}  // namespace

DataFormat parse_data_format(std::string_view name) {
    if (name == "jsonl" || name == "ndjson") return DataFormat::jsonl;
    if (name == "csv") return DataFormat::csv;
    if (name == "json") return DataFormat::json;
    throw ValidationError("unknown data format '" + std::string(name) + "'");
}

DataFormat format_from_path(const fs::path& p) {
    auto ext = p.extension().string();
    if (ext == ".csv") return DataFormat::csv;
    if (ext == ".json") return DataFormat::json;
    return DataFormat::jsonl;
}

std::string csv_escape(std::string_view field) {
    if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::string csv_row(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out += ',';
        out += csv_escape(fields[i]);
    }
    out += '\n';
    return out;
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;

    auto end_field = [&] {
        row.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_row = [&] {
        end_field();
        if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
        row.clear();
    };

    for (std::size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        if (c == '"' && !field_started) {
            in_quotes = true;
            field_started = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\n') {
            end_row();
        } else if (c == '\r') {
            if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
            end_row();
        } else {
            field += c;
            field_started = true;
        }
    }
    if (in_quotes) throw ValidationError("CSV ends inside a quoted field");
    if (field_started || !row.empty()) end_row();
    return rows;
}

std::string serialize_messages(const std::vector<Message>& messages, DataFormat format) {
    std::string out;
    switch (format) {
        case DataFormat::jsonl:
            for (const auto& m : messages) {
                out += to_json(m).dump();
                out += '\n';
            }
            break;
        case DataFormat::json: {
            nlohmann::json arr = nlohmann::json::array();
            for (const auto& m : messages) arr.push_back(to_json(m));
            out = arr.dump(2);
            out += '\n';
            break;
        }
        case DataFormat::csv:
            out = csv_row(kColumns);
            for (const auto& m : messages) {
                out += csv_row({m.id, m.content, m.category, m.score ? score_text(*m.score) : "",
                                m.timestamp ? format_rfc3339(*m.timestamp) : "", std::string(to_string(m.source)),
                                m.session_id.value_or("")});
            }
            break;
    }
    return out;
}

nlohmann::json ImportReport::to_json() const {
    nlohmann::json errs = nlohmann::json::array();
    for (const auto& e : errors) errs.push_back({{"line", e.line}, {"reason", e.reason}});
    return {{"lines", lines}, {"imported", imported}, {"duplicates_skipped", duplicates_skipped}, {"errors", errs}};
}

std::vector<Message> parse_messages(std::string_view text, DataFormat format, Source default_source,
                                    ImportReport* report, bool keep_duplicates) {
    ImportReport local;
    ImportReport& rep = report ? *report : local;
    std::vector<Message> out;
    std::unordered_set<std::string> seen;

    auto accept = [&](std::size_t line, const nlohmann::json& obj) {
        ++rep.lines;
        try {
            Message m = message_from_json(obj, default_source);
            if (!seen.insert(m.id).second && !keep_duplicates) {
                ++rep.duplicates_skipped;
                return;
            }
            out.push_back(std::move(m));
            ++rep.imported;
        } catch (const std::exception& e) {
            rep.errors.push_back({line, e.what()});
        }
    };

    switch (format) {
        case DataFormat::jsonl: {
            std::size_t line_no = 0;
            std::size_t pos = 0;
            while (pos <= text.size()) {
                auto nl = text.find('\n', pos);
                auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
                ++line_no;
                pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
                if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
                nlohmann::json obj;
                try {
                    obj = nlohmann::json::parse(line);
                } catch (const nlohmann::json::exception& e) {
                    ++rep.lines;
                    rep.errors.push_back({line_no, std::string("invalid JSON: ") + e.what()});
                    continue;
                }
                accept(line_no, obj);
            }
            break;
        }
        case DataFormat::json: {
            nlohmann::json arr;
            try {
                arr = nlohmann::json::parse(text);
            } catch (const nlohmann::json::exception& e) {
                throw ValidationError(std::string("invalid JSON document: ") + e.what());
            }
            if (!arr.is_array()) throw ValidationError("JSON document must be an array of messages");
            for (std::size_t i = 0; i < arr.size(); ++i) accept(i + 1, arr[i]);
            break;
        }
        case DataFormat::csv: {
            auto rows = parse_csv(text);
            if (rows.empty()) break;
            const auto& header = rows.front();
            if (std::none_of(header.begin(), header.end(),
                             [](const std::string& h) { return h == "content" || h == "message" || h == "text"; })) {
                throw ValidationError("CSV header needs a content, message or text column");
            }
            for (std::size_t r = 1; r < rows.size(); ++r) {
                nlohmann::json obj = nlohmann::json::object();
                for (std::size_t c = 0; c < header.size() && c < rows[r].size(); ++c) {
                    if (rows[r][c].empty()) continue;
                    obj[header[c]] = rows[r][c];
                }
                if (obj.contains("label")) {
                    const auto s = obj["label"].get<std::string>();
                    if (s == "1" || s == "0") obj["label"] = s == "1" ? 1 : 0;
                }
                accept(r + 1, obj);
            }
            break;
        }
    }
    return out;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw NotFoundError("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const fs::path& p, std::string_view contents) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    auto tmp = p;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out) throw Error("write failed for " + tmp.string());
    }
    fs::rename(tmp, p);
}

void append_file(const fs::path& p, std::string_view contents) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::app);
    if (!out) throw Error("cannot append to " + p.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
}

std::vector<Message> load_messages(const fs::path& p, Source default_source, ImportReport* report,
                                   bool keep_duplicates) {
    return parse_messages(read_file(p), format_from_path(p), default_source, report, keep_duplicates);
}

void save_messages(const fs::path& p, const std::vector<Message>& messages) {
    write_file_atomic(p, serialize_messages(messages, format_from_path(p)));
}

}  // namespace eltex
