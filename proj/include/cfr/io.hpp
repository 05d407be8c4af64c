#pragma once

// JSON file helpers shared by checkpoints, configs and JSONL artifacts.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfr/error.hpp"

namespace cfr {

inline nlohmann::json read_json_file(const std::filesystem::path& path, std::string_view what) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open " + std::string(what) + " " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorKind::parse, path.string() + ": " + e.what());
    }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write " + path.string());
    out << text;
    if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& obj, int indent = 1) {
    write_text_file(path, obj.dump(indent) + "\n");
}

/// Throws unless `obj` carries the expected format tag and version.
inline void check_format(const nlohmann::json& obj, std::string_view format, int version,
                         const std::filesystem::path& path) {
    if (!obj.is_object() || !obj.contains("format") || obj["format"] != format)
        fail(ErrorKind::parse, path.string() + ": not a " + std::string(format) + " file");
    if (obj.value("version", 0) != version)
        fail(ErrorKind::parse, path.string() + ": unsupported " + std::string(format) + " version " +
                                   obj.value("version", nlohmann::json(0)).dump());
}

/// Reads a JSON-lines file; blank lines are skipped, errors carry line numbers.
inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open " + path.string());
    std::vector<nlohmann::json> rows;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            rows.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::parse_error& e) {
            fail(ErrorKind::parse, path.string() + ":" + std::to_string(number) + ": " + e.what());
        }
    }
    return rows;
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows) {
    std::ostringstream out;
    for (const auto& row : rows) out << row.dump() << '\n';
    write_text_file(path, out.str());
}

}  // namespace cfr
