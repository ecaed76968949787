#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "ifprobe/error.hpp"

namespace ifprobe::detail {

using nlohmann::json;

/// Parses JSON text; on failure the message carries line and reason.
json parse_json(std::string_view text, std::string_view what, std::size_t line_offset = 0);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

/// Typed member access with schema errors naming the context.
const json& require(const json& obj, std::string_view key, std::string_view ctx);
std::string require_string(const json& obj, std::string_view key, std::string_view ctx);
long long require_int(const json& obj, std::string_view key, std::string_view ctx);
double require_number(const json& obj, std::string_view key, std::string_view ctx);
bool require_bool(const json& obj, std::string_view key, std::string_view ctx);

/// Splits JSONL text into parsed objects; blank lines are skipped.
std::vector<json> parse_jsonl(std::string_view text, std::string_view what);

}  // namespace ifprobe::detail
