#include "ifprobe/verifier.hpp"

#include <algorithm>
#include <functional>

#include "ifprobe/error.hpp"

namespace ifprobe::verifier {
namespace {

char lower(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

bool is_alnum(char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

std::string lowered(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), lower);
  return out;
}

void require_keywords(const std::vector<std::string>& keywords, std::string_view what) {
  if (keywords.empty()) {
    throw Error(ErrorKind::kPrecondition, std::string(what) + ": keyword list is empty");
  }
  for (const auto& k : keywords) {
    if (k.empty()) throw Error(ErrorKind::kPrecondition, std::string(what) + ": empty keyword");
  }
}

}  // namespace

std::size_t count_occurrences(std::string_view needle, std::string_view haystack,
                              Boundary boundary) {
  if (needle.empty() || needle.size() > haystack.size()) return 0;
  const std::string hay = lowered(haystack);
  const std::string pat = lowered(needle);
  const std::boyer_moore_horspool_searcher searcher(pat.begin(), pat.end());

  std::size_t count = 0;
  auto from = hay.begin();
  while (true) {
    const auto hit = std::search(from, hay.end(), searcher);
    if (hit == hay.end()) break;
    const auto end = hit + static_cast<std::ptrdiff_t>(pat.size());
    const bool ok = boundary == Boundary::kNone ||
                    ((hit == hay.begin() || !is_alnum(*(hit - 1))) &&
                     (end == hay.end() || !is_alnum(*end)));
    if (ok) {
      ++count;
      from = end;
    } else {
      from = hit + 1;
    }
  }
  return count;
}

std::size_t count_placeholders(std::string_view text) {
  std::size_t count = 0;
  bool open = false;
  for (char c : text) {
    if (c == '[') {
      open = true;
    } else if (c == ']') {
      if (open) ++count;
      open = false;
    }
  }
  return count;
}

nlohmann::json evidence_to_json(const Evidence& evidence) {
  return std::visit(
      [](const auto& e) -> nlohmann::json {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, KeywordEvidence>) {
          nlohmann::json matched = nlohmann::json::array();
          for (const auto& h : e.matched) matched.push_back({{"keyword", h.keyword}, {"count", h.count}});
          return {{"matched", std::move(matched)}, {"missing", e.missing}};
        } else if constexpr (std::is_same_v<T, FrequencyEvidence>) {
          return {{"keyword", e.keyword}, {"observed", e.observed}, {"required", e.required}};
        } else if constexpr (std::is_same_v<T, EndPhraseEvidence>) {
          return {{"end_phrase", e.end_phrase}, {"suffix_match", e.suffix_match}};
        } else {
          return {{"count", e.count}, {"required", e.required}};
        }
      },
      evidence);
}

namespace {

KeywordEvidence scan_keywords(const std::vector<std::string>& keywords, std::string_view response) {
  KeywordEvidence ev;
  for (const auto& k : keywords) {
    const auto n = count_occurrences(k, response, Boundary::kWord);
    if (n > 0) {
      ev.matched.push_back({k, n});
    } else {
      ev.missing.push_back(k);
    }
  }
  return ev;
}

}  // namespace

VerificationResult check_keywords_existence(const std::vector<std::string>& keywords,
                                            std::string_view response) {
  require_keywords(keywords, "keywords:existence");
  auto ev = scan_keywords(keywords, response);
  const bool passed = ev.missing.empty();
  return {passed, std::string(dataset::types::kKeywordsExistence), std::move(ev)};
}

VerificationResult check_keywords_forbidden(const std::vector<std::string>& keywords,
                                            std::string_view response) {
  require_keywords(keywords, "keywords:forbidden_words");
  auto ev = scan_keywords(keywords, response);
  const bool passed = ev.matched.empty();
  return {passed, std::string(dataset::types::kKeywordsForbidden), std::move(ev)};
}

VerificationResult check_keywords_frequency(std::string_view keyword, int min_frequency,
                                            std::string_view response) {
  if (keyword.empty()) throw Error(ErrorKind::kPrecondition, "keywords:frequency: empty keyword");
  if (min_frequency < 1) {
    throw Error(ErrorKind::kPrecondition, "keywords:frequency: min_frequency must be >= 1");
  }
  FrequencyEvidence ev{std::string(keyword), count_occurrences(keyword, response, Boundary::kNone),
                       static_cast<std::size_t>(min_frequency)};
  const bool passed = ev.observed >= ev.required;
  return {passed, std::string(dataset::types::kKeywordsFrequency), std::move(ev)};
}

VerificationResult check_end_phrase(std::string_view end_phrase, std::string_view response) {
  if (end_phrase.empty()) throw Error(ErrorKind::kPrecondition, "startend:end_checker: empty phrase");
  if (is_space(end_phrase.back())) {
    throw Error(ErrorKind::kPrecondition, "startend:end_checker: phrase ends in whitespace");
  }
  auto trimmed = response;
  while (!trimmed.empty() && is_space(trimmed.back())) trimmed.remove_suffix(1);
  EndPhraseEvidence ev{std::string(end_phrase), trimmed.ends_with(end_phrase)};
  const bool passed = ev.suffix_match;
  return {passed, std::string(dataset::types::kEndChecker), std::move(ev)};
}

VerificationResult check_placeholders(int min_placeholders, std::string_view response) {
  if (min_placeholders < 1) {
    throw Error(ErrorKind::kPrecondition, "number_placeholders: min_placeholders must be >= 1");
  }
  PlaceholderEvidence ev{count_placeholders(response), static_cast<std::size_t>(min_placeholders)};
  const bool passed = ev.count >= ev.required;
  return {passed, std::string(dataset::types::kPlaceholders), ev};
}

VerificationResult verify(const dataset::InstructionInstance& instruction,
                          std::string_view response) {
  namespace t = dataset::types;
  const auto& id = instruction.type_id;
  const auto& p = instruction.params;
  if (id == t::kKeywordsExistence) return check_keywords_existence(p.keywords, response);
  if (id == t::kKeywordsForbidden) return check_keywords_forbidden(p.keywords, response);
  if (id == t::kKeywordsFrequency) {
    if (p.keywords.size() != 1 || !p.min_frequency) {
      throw Error(ErrorKind::kSchema, "keywords:frequency: needs one keyword and min_frequency");
    }
    return check_keywords_frequency(p.keywords.front(), *p.min_frequency, response);
  }
  if (id == t::kEndChecker) {
    if (!p.end_phrase) throw Error(ErrorKind::kSchema, "startend:end_checker: missing end_phrase");
    return check_end_phrase(*p.end_phrase, response);
  }
  if (id == t::kPlaceholders) {
    if (!p.min_placeholders) {
      throw Error(ErrorKind::kSchema, "number_placeholders: missing min_placeholders");
    }
    return check_placeholders(*p.min_placeholders, response);
  }
  throw Error(ErrorKind::kUnregisteredType, "no verifier registered for '" + id + "'");
}

}  // namespace ifprobe::verifier
