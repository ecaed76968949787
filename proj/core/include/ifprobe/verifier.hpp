#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "ifprobe/dataset.hpp"

namespace ifprobe::verifier {

// Matching rules (constants, not configuration):
//  - keyword existence/forbidden: ASCII case-insensitive, and a match must not
//    be flanked by ASCII alphanumerics on either side;
//  - keyword frequency: ASCII case-insensitive substring occurrences,
//    non-overlapping, left to right;
//  - end phrase: trailing whitespace of the response is ignored, the suffix
//    comparison is exact and case-sensitive;
//  - placeholders: a '[' ... ']' span with no bracket inside; "[]" counts.

enum class Boundary { kNone, kWord };

/// Non-overlapping left-to-right count of `needle` in `haystack`, ASCII
/// case-insensitive. With Boundary::kWord a candidate only counts when the
/// characters on both sides are not ASCII alphanumeric.
std::size_t count_occurrences(std::string_view needle, std::string_view haystack,
                              Boundary boundary);

/// Number of bracket spans with no '[' or ']' inside.
std::size_t count_placeholders(std::string_view text);

struct KeywordHit {
  std::string keyword;
  std::size_t count = 0;
  friend bool operator==(const KeywordHit&, const KeywordHit&) = default;
};

struct KeywordEvidence {
  std::vector<KeywordHit> matched;
  std::vector<std::string> missing;
  friend bool operator==(const KeywordEvidence&, const KeywordEvidence&) = default;
};

struct FrequencyEvidence {
  std::string keyword;
  std::size_t observed = 0;
  std::size_t required = 0;
  friend bool operator==(const FrequencyEvidence&, const FrequencyEvidence&) = default;
};

struct EndPhraseEvidence {
  std::string end_phrase;
  bool suffix_match = false;
  friend bool operator==(const EndPhraseEvidence&, const EndPhraseEvidence&) = default;
};

struct PlaceholderEvidence {
  std::size_t count = 0;
  std::size_t required = 0;
  friend bool operator==(const PlaceholderEvidence&, const PlaceholderEvidence&) = default;
};

using Evidence =
    std::variant<KeywordEvidence, FrequencyEvidence, EndPhraseEvidence, PlaceholderEvidence>;

struct VerificationResult {
  bool passed = false;
  std::string type_id;
  Evidence evidence;
  friend bool operator==(const VerificationResult&, const VerificationResult&) = default;
};

nlohmann::json evidence_to_json(const Evidence& evidence);

/// Passes iff every keyword occurs (word-boundary rule).
VerificationResult check_keywords_existence(const std::vector<std::string>& keywords,
                                            std::string_view response);
/// Passes iff no keyword occurs; `matched` lists the offending ones.
VerificationResult check_keywords_forbidden(const std::vector<std::string>& keywords,
                                            std::string_view response);
VerificationResult check_keywords_frequency(std::string_view keyword, int min_frequency,
                                            std::string_view response);
VerificationResult check_end_phrase(std::string_view end_phrase, std::string_view response);
VerificationResult check_placeholders(int min_placeholders, std::string_view response);

/// Dispatches on instruction.type_id. Throws Error(kUnregisteredType) for ids
/// without a built-in checker.
VerificationResult verify(const dataset::InstructionInstance& instruction,
                          std::string_view response);

}  // namespace ifprobe::verifier
