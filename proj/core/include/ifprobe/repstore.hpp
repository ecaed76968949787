#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

namespace ifprobe::repstore {

/// first: end of the prompt, before any generated token; middle: after the
/// first half of the response; last: after the full response.
enum class TokenPosition { kFirst, kMiddle, kLast };

std::string_view to_string(TokenPosition position);
/// Accepts "first", "middle", "last". Throws Error(kSchema) otherwise.
TokenPosition parse_position(std::string_view text);

struct RepRecord {
  std::string prompt_id;
  TokenPosition token_position = TokenPosition::kFirst;
  int layer = 0;
  std::vector<float> vector;
  std::optional<bool> label;

  friend bool operator==(const RepRecord&, const RepRecord&) = default;
};

/// One container entry: a metadata object plus its vector. `dim` and `offset`
/// are managed by the writer and stripped from `meta` by the reader.
struct RawEntry {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<float> vector;
};

/// `.ifrep` container: "IFRP1\n", u64 LE metadata line count, that many JSONL
/// metadata lines ({..., dim, offset}), then the contiguous little-endian f32
/// payload. Offsets are relative to the payload start.
inline constexpr std::string_view kMagic = "IFRP1\n";

std::string encode_container(const std::vector<RawEntry>& entries);
std::vector<RawEntry> decode_container(std::string_view bytes);
void write_container(const std::vector<RawEntry>& entries, const std::filesystem::path& path);
std::vector<RawEntry> read_container(const std::filesystem::path& path);

/// Validates RepRecord invariants: shared d >= 1, finite components, unique
/// (prompt_id, position, layer). Throws Error.
void validate_records(const std::vector<RepRecord>& records);

void write_reps(const std::vector<RepRecord>& records, const std::filesystem::path& path);
std::vector<RepRecord> read_reps(const std::filesystem::path& path);
std::string encode_reps(const std::vector<RepRecord>& records);
std::vector<RepRecord> decode_reps(std::string_view bytes);

std::vector<RepRecord> select(const std::vector<RepRecord>& records, TokenPosition position,
                              int layer);

struct LabeledMatrix {
  std::vector<std::string> rows;
  Eigen::MatrixXd X;
  std::vector<bool> y;
};

enum class DropPolicy { kError, kDrop };

struct JoinResult {
  LabeledMatrix matrix;
  std::size_t dropped = 0;
};

using LabelMap = std::map<std::string, bool, std::less<>>;

/// Rows sorted ascending by prompt_id; vectors promoted to f64. Records must
/// come from one (position, layer) slice.
JoinResult join_labels(const std::vector<RepRecord>& records, const LabelMap& labels,
                       DropPolicy policy = DropPolicy::kError);

/// Labels carried inside the records themselves.
LabelMap embedded_labels(const std::vector<RepRecord>& records);

/// Reads a labels JSONL file of {prompt_id, passed, ...}.
LabelMap read_labels(const std::filesystem::path& path);

/// Restricts a matrix to the rows whose prompt id is in `ids`.
LabeledMatrix subset(const LabeledMatrix& m, const std::vector<std::string>& ids);

struct StoreSummary {
  std::size_t count = 0;
  std::size_t dim = 0;
  std::vector<std::string> positions;
  std::vector<int> layers;
  std::size_t labeled = 0;
};

StoreSummary summarize(const std::vector<RepRecord>& records);
nlohmann::json to_json(const StoreSummary& summary);

}  // namespace ifprobe::repstore
