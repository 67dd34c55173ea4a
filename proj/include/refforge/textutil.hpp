#pragma once

#include <cstddef>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace refforge {

inline bool is_blank(char c) { return c == ' ' || c == '\t'; }

inline bool is_word_char(char c) {
  return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') ||
         (c >= '0' && c <= '9') || c == '_';
}

// Lines without their terminators; "a\nb\n" and "a\nb" both give {"a","b"}.
std::vector<std::string> split_lines(std::string_view text);

// Byte offset of the start of each line in `text`.
std::vector<size_t> line_starts(std::string_view text);

// Strip edges, collapse internal runs of spaces/tabs to a single space.
std::string normalize_ws(std::string_view line);

// normalize_ws applied per line, lines re-joined with '\n'.
std::string normalize_code(std::string_view text);

// Normalized view of `text` plus a map from each normalized byte back to the
// raw byte that produced it (collapsed runs map to their first raw byte).
struct NormalizedMap {
  std::string text;
  std::vector<size_t> raw_index;
};
NormalizedMap normalize_code_mapped(std::string_view text);

// Lowercased alphanumeric words minus a small stopword list.
std::set<std::string> content_words(std::string_view text);

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b);

// Leading run of spaces/tabs.
std::string_view leading_indent(std::string_view line);

size_t count_occurrences(std::string_view haystack, std::string_view needle);

}  // namespace refforge
