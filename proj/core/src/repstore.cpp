#include "ifprobe/repstore.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <set>
#include <tuple>

#include "ifprobe/error.hpp"
#include "json_util.hpp"

namespace ifprobe::repstore {

using detail::json;

std::string_view to_string(TokenPosition position) {
  switch (position) {
    case TokenPosition::kFirst: return "first";
    case TokenPosition::kMiddle: return "middle";
    case TokenPosition::kLast: return "last";
  }
  return "first";
}

TokenPosition parse_position(std::string_view text) {
  if (text == "first") return TokenPosition::kFirst;
  if (text == "middle") return TokenPosition::kMiddle;
  if (text == "last") return TokenPosition::kLast;
  throw Error(ErrorKind::kSchema, "unknown token position '" + std::string(text) + "'");
}

namespace {

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(std::string_view in) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(in[static_cast<std::size_t>(i)]);
  return v;
}

void put_f32(std::string& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

float get_f32(std::string_view in, std::size_t at) {
  std::uint32_t bits = 0;
  for (int i = 3; i >= 0; --i) {
    bits = (bits << 8) | static_cast<unsigned char>(in[at + static_cast<std::size_t>(i)]);
  }
  return std::bit_cast<float>(bits);
}

}  // namespace

std::string encode_container(const std::vector<RawEntry>& entries) {
  std::string header;
  std::string payload;
  std::uint64_t offset = 0;
  for (const auto& e : entries) {
    json meta = e.meta;
    meta["dim"] = e.vector.size();
    meta["offset"] = offset;
    header += meta.dump();
    header.push_back('\n');
    for (float f : e.vector) put_f32(payload, f);
    offset += 4 * e.vector.size();
  }
  std::string out(kMagic);
  put_u64(out, entries.size());
  out += header;
  out += payload;
  return out;
}

std::vector<RawEntry> decode_container(std::string_view bytes) {
  if (bytes.size() < kMagic.size() + 8 || bytes.substr(0, kMagic.size()) != kMagic) {
    throw Error(ErrorKind::kParse, "ifrep: bad magic or truncated header");
  }
  const auto count = get_u64(bytes.substr(kMagic.size(), 8));
  std::size_t pos = kMagic.size() + 8;

  std::vector<RawEntry> entries;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string_view::npos) {
      throw Error(ErrorKind::kParse, "ifrep: metadata line " + std::to_string(i + 1) + " unterminated");
    }
    auto meta = detail::parse_json(bytes.substr(pos, nl - pos), "ifrep metadata",
                                   static_cast<std::size_t>(i));
    pos = nl + 1;
    const auto ctx = "ifrep metadata line " + std::to_string(i + 1);
    const auto dim = detail::require_int(meta, "dim", ctx);
    const auto offset = detail::require_int(meta, "offset", ctx);
    if (dim < 0 || offset < 0) throw Error(ErrorKind::kParse, ctx + ": negative dim/offset");
    meta.erase("dim");
    meta.erase("offset");
    spans.emplace_back(static_cast<std::uint64_t>(offset), static_cast<std::uint64_t>(dim));
    entries.push_back({std::move(meta), {}});
  }

  const auto payload = bytes.substr(pos);
  std::uint64_t expected = 0;
  for (const auto& [offset, dim] : spans) {
    expected += 4 * dim;
    if (offset + 4 * dim > payload.size()) {
      throw Error(ErrorKind::kParse, "ifrep: payload length mismatch (entry past end of payload)");
    }
  }
  if (expected != payload.size()) {
    throw Error(ErrorKind::kParse, "ifrep: payload length mismatch (expected " +
                                       std::to_string(expected) + " bytes, found " +
                                       std::to_string(payload.size()) + ")");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto [offset, dim] = spans[i];
    auto& v = entries[i].vector;
    v.resize(dim);
    for (std::uint64_t k = 0; k < dim; ++k) v[k] = get_f32(payload, offset + 4 * k);
  }
  return entries;
}

void write_container(const std::vector<RawEntry>& entries, const std::filesystem::path& path) {
  detail::write_file(path, encode_container(entries));
}

std::vector<RawEntry> read_container(const std::filesystem::path& path) {
  return decode_container(detail::read_file(path));
}

void validate_records(const std::vector<RepRecord>& records) {
  if (records.empty()) return;
  const auto d = records.front().vector.size();
  std::set<std::tuple<std::string, TokenPosition, int>> seen;
  for (const auto& r : records) {
    if (r.vector.empty()) throw Error(ErrorKind::kValidation, "record '" + r.prompt_id + "': empty vector");
    if (r.vector.size() != d) {
      throw Error(ErrorKind::kDimensionMismatch,
                  "record '" + r.prompt_id + "': dimension " + std::to_string(r.vector.size()) +
                      " != " + std::to_string(d));
    }
    if (r.layer < 0) throw Error(ErrorKind::kValidation, "record '" + r.prompt_id + "': negative layer");
    for (float f : r.vector) {
      if (!std::isfinite(f)) {
        throw Error(ErrorKind::kValidation, "record '" + r.prompt_id + "': non-finite component");
      }
    }
    if (!seen.emplace(r.prompt_id, r.token_position, r.layer).second) {
      throw Error(ErrorKind::kDuplicate, "duplicate record (" + r.prompt_id + ", " +
                                             std::string(to_string(r.token_position)) + ", " +
                                             std::to_string(r.layer) + ")");
    }
  }
}

std::string encode_reps(const std::vector<RepRecord>& records) {
  validate_records(records);
  std::vector<RawEntry> entries;
  entries.reserve(records.size());
  for (const auto& r : records) {
    json meta = {{"prompt_id", r.prompt_id},
                 {"token_position", to_string(r.token_position)},
                 {"layer", r.layer}};
    if (r.label) meta["label"] = *r.label;
    entries.push_back({std::move(meta), r.vector});
  }
  return encode_container(entries);
}

std::vector<RepRecord> decode_reps(std::string_view bytes) {
  auto entries = decode_container(bytes);
  std::vector<RepRecord> records;
  records.reserve(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& e = entries[i];
    const auto ctx = "ifrep record " + std::to_string(i + 1);
    RepRecord r;
    r.prompt_id = detail::require_string(e.meta, "prompt_id", ctx);
    r.token_position = parse_position(detail::require_string(e.meta, "token_position", ctx));
    r.layer = static_cast<int>(detail::require_int(e.meta, "layer", ctx));
    if (e.meta.contains("label") && !e.meta["label"].is_null()) {
      r.label = detail::require_bool(e.meta, "label", ctx);
    }
    r.vector = std::move(e.vector);
    records.push_back(std::move(r));
  }
  validate_records(records);
  return records;
}

void write_reps(const std::vector<RepRecord>& records, const std::filesystem::path& path) {
  detail::write_file(path, encode_reps(records));
}

std::vector<RepRecord> read_reps(const std::filesystem::path& path) {
  return decode_reps(detail::read_file(path));
}

std::vector<RepRecord> select(const std::vector<RepRecord>& records, TokenPosition position,
                              int layer) {
  std::vector<RepRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out), [&](const RepRecord& r) {
    return r.token_position == position && r.layer == layer;
  });
  return out;
}

JoinResult join_labels(const std::vector<RepRecord>& records, const LabelMap& labels,
                       DropPolicy policy) {
  validate_records(records);
  std::vector<const RepRecord*> kept;
  std::set<std::string_view> ids;
  JoinResult result;
  for (const auto& r : records) {
    if (!ids.insert(r.prompt_id).second) {
      throw Error(ErrorKind::kDuplicate,
                  "join_labels: prompt '" + r.prompt_id + "' appears in more than one (position, layer) slice");
    }
    if (!labels.contains(r.prompt_id)) {
      if (policy == DropPolicy::kError) {
        throw Error(ErrorKind::kValidation, "join_labels: no label for '" + r.prompt_id + "'");
      }
      ++result.dropped;
      continue;
    }
    kept.push_back(&r);
  }
  std::sort(kept.begin(), kept.end(),
            [](const RepRecord* a, const RepRecord* b) { return a->prompt_id < b->prompt_id; });

  auto& m = result.matrix;
  const auto d = kept.empty() ? 0 : kept.front()->vector.size();
  m.X.resize(static_cast<Eigen::Index>(kept.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < kept.size(); ++i) {
    m.rows.push_back(kept[i]->prompt_id);
    m.y.push_back(labels.find(kept[i]->prompt_id)->second);
    for (std::size_t k = 0; k < d; ++k) {
      m.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = kept[i]->vector[k];
    }
  }
  return result;
}

LabelMap embedded_labels(const std::vector<RepRecord>& records) {
  LabelMap out;
  for (const auto& r : records) {
    if (r.label) out[r.prompt_id] = *r.label;
  }
  return out;
}

LabelMap read_labels(const std::filesystem::path& path) {
  LabelMap out;
  std::size_t line = 0;
  for (const auto& j : detail::parse_jsonl(detail::read_file(path), path.string())) {
    const auto ctx = path.string() + " entry " + std::to_string(++line);
    const auto id = detail::require_string(j, "prompt_id", ctx);
    if (!out.emplace(id, detail::require_bool(j, "passed", ctx)).second) {
      throw Error(ErrorKind::kDuplicate, ctx + ": duplicate prompt_id '" + id + "'");
    }
  }
  return out;
}

LabeledMatrix subset(const LabeledMatrix& m, const std::vector<std::string>& ids) {
  const std::set<std::string_view> wanted(ids.begin(), ids.end());
  std::vector<Eigen::Index> rows;
  LabeledMatrix out;
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    if (wanted.contains(m.rows[i])) {
      rows.push_back(static_cast<Eigen::Index>(i));
      out.rows.push_back(m.rows[i]);
      out.y.push_back(m.y[i]);
    }
  }
  out.X.resize(static_cast<Eigen::Index>(rows.size()), m.X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.X.row(static_cast<Eigen::Index>(i)) = m.X.row(rows[i]);
  return out;
}

StoreSummary summarize(const std::vector<RepRecord>& records) {
  StoreSummary s;
  s.count = records.size();
  s.dim = records.empty() ? 0 : records.front().vector.size();
  std::set<TokenPosition> positions;
  std::set<int> layers;
  for (const auto& r : records) {
    positions.insert(r.token_position);
    layers.insert(r.layer);
    if (r.label) ++s.labeled;
  }
  for (auto p : positions) s.positions.emplace_back(to_string(p));
  s.layers.assign(layers.begin(), layers.end());
  return s;
}

json to_json(const StoreSummary& s) {
  return {{"count", s.count}, {"dim", s.dim}, {"positions", s.positions},
          {"layers", s.layers}, {"labeled", s.labeled}};
}

}  // namespace ifprobe::repstore
