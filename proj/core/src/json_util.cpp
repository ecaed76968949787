#include "json_util.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace ifprobe::detail {

json parse_json(std::string_view text, std::string_view what, std::size_t line_offset) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    const auto upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = line_offset + 1 +
        static_cast<std::size_t>(std::count(text.begin(), text.begin() + upto, '\n'));
    throw Error(ErrorKind::kParse, std::string(what) + ": line " + std::to_string(line) +
                                       ": " + e.what());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw Error(ErrorKind::kIo, "write failed: " + path.string());
}

const json& require(const json& obj, std::string_view key, std::string_view ctx) {
  if (!obj.is_object()) {
    throw Error(ErrorKind::kSchema, std::string(ctx) + ": expected an object");
  }
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw Error(ErrorKind::kSchema, std::string(ctx) + ": missing field '" +
                                        std::string(key) + "'");
  }
  return *it;
}

std::string require_string(const json& obj, std::string_view key, std::string_view ctx) {
  const auto& v = require(obj, key, ctx);
  if (!v.is_string()) {
    throw Error(ErrorKind::kSchema,
                std::string(ctx) + ": field '" + std::string(key) + "' must be a string");
  }
  return v.get<std::string>();
}

long long require_int(const json& obj, std::string_view key, std::string_view ctx) {
  const auto& v = require(obj, key, ctx);
  if (!v.is_number_integer()) {
    throw Error(ErrorKind::kSchema,
                std::string(ctx) + ": field '" + std::string(key) + "' must be an integer");
  }
  return v.get<long long>();
}

double require_number(const json& obj, std::string_view key, std::string_view ctx) {
  const auto& v = require(obj, key, ctx);
  if (!v.is_number()) {
    throw Error(ErrorKind::kSchema,
                std::string(ctx) + ": field '" + std::string(key) + "' must be a number");
  }
  return v.get<double>();
}

bool require_bool(const json& obj, std::string_view key, std::string_view ctx) {
  const auto& v = require(obj, key, ctx);
  if (!v.is_boolean()) {
    throw Error(ErrorKind::kSchema,
                std::string(ctx) + ": field '" + std::string(key) + "' must be a boolean");
  }
  return v.get<bool>();
}

std::vector<json> parse_jsonl(std::string_view text, std::string_view what) {
  std::vector<json> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    if (line.find_first_not_of(" \t\r") != std::string_view::npos) {
      out.push_back(parse_json(line, what, line_no));
    }
    ++line_no;
    pos = nl + 1;
  }
  return out;
}

}  // namespace ifprobe::detail
