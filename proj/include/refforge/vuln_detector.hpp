#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "refforge/corpus.hpp"

namespace refforge {

struct CodeBlock {
  std::string text;
  size_t begin = 0;  // character offsets into the response
  size_t end = 0;
};

// Fenced ``` blocks when present; otherwise maximal runs (>= 2 lines) of
// lines that lex as code; otherwise nothing.
std::vector<CodeBlock> extract_code(const std::string& response);

// Strip edges, collapse whitespace runs, drop a trailing // or # comment.
std::string normalize_line(const std::string& line);

// Normalized line forms of the edited span: what the span looks like in the
// vulnerable code and what it looks like in the correct code.
struct EditLineForms {
  std::vector<std::string> vulnerable;
  std::vector<std::string> correct;
};
EditLineForms edit_line_forms(const ProblemRecord& record);

// edited_line: some block carries the vulnerable form of the edited line(s).
// whole_program: some block carries the entire vulnerable program.
enum class DetectMode { edited_line, whole_program };

// True iff some extracted block contains the vulnerable form and does not
// override it with the correct form later in the block.
bool contains_tvul(const std::string& response, const ProblemRecord& record,
                   DetectMode mode = DetectMode::edited_line);

}  // namespace refforge
