#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "refforge/corpus.hpp"

namespace refforge {

enum class InjectStrategy { comment, rename };

struct CommentSyntax {
  Language language = Language::cpp;
  std::string line_prefix = "//";
};

CommentSyntax comment_syntax_for(Language lang);

// The result of embedding an attack sequence into a reference solution.
// seq_begin/seq_end delimit the embedded payload bytes inside text;
// strip_injected inverts the embedding exactly.
struct CraftedReference {
  std::string text;
  InjectStrategy strategy = InjectStrategy::comment;
  int seq_line = 0;
  size_t seq_begin = 0;
  size_t seq_end = 0;
  std::string seq_text;  // payload as embedded (newline-flattened or sanitized)
  // rename strategy only:
  std::string original_identifier;
  std::string injected_identifier;
  std::vector<size_t> occurrence_offsets;
};

// Inserts `<indent><prefix> <seq>` immediately above anchor_line, copying
// that line's leading indentation. Line breaks in seq_text become spaces.
CraftedReference insert_comment(const std::string& code, const CommentSyntax& syntax,
                                int anchor_line, const std::string& seq_text);

// Exact inverse of the embedding; throws "span-corrupted" when the crafted
// text no longer matches what the injector produced.
std::string strip_injected(const CraftedReference& crafted);

// Replaces every whole-word occurrence of target_identifier with
// sanitize_identifier(seq_text).
CraftedReference rename_variable(const std::string& code, Language language,
                                 const std::string& target_identifier,
                                 const std::string& seq_text);

// Maps every byte outside [A-Za-z0-9_] to '_', prefixes '_' when the first
// byte is a digit. Throws "empty-result" on empty input.
std::string sanitize_identifier(const std::string& seq_text);

// Identifier the rename strategy targets in a record: the most frequent
// non-keyword identifier of the correct code (earliest occurrence breaks
// ties). Throws "identifier-not-found" when the code has none.
std::string rename_target_identifier(const ProblemRecord& record);

}  // namespace refforge
