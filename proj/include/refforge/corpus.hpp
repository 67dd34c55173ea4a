#pragma once

#include <optional>
#include <string>
#include <vector>

namespace refforge {

enum class Language { python, java, cpp, php };

enum class VulnClassName {
  ArrayViolation,
  BufferOverflow,
  IncorrectVariable,
  InvalidValidation,
  InfiniteLoop,
};

std::string to_string(Language lang);
std::string to_string(VulnClassName cls);
std::optional<Language> parse_language(const std::string& s);
std::optional<VulnClassName> parse_vuln_class(const std::string& s);

// CWE identifiers a class may carry.
const std::vector<std::string>& cwe_set_for(VulnClassName cls);

struct VulnClass {
  VulnClassName name = VulnClassName::ArrayViolation;
  std::vector<std::string> cwe_ids;
};

// A single-span edit turning the correct code into the target vulnerable
// code. `original` must occur exactly once in the owning record's
// correct_code under whitespace normalization.
struct VulnEdit {
  std::string original;
  std::string replacement;
  std::string description;
};

struct ProblemRecord {
  std::string id;
  Language language = Language::cpp;
  std::string question;
  std::string correct_code;
  std::string explanation;
  VulnClass vuln_class;
  VulnEdit edit;
  int anchor_line = 0;  // 0-based line index; attack comment goes right above it
};

struct Corpus {
  std::vector<ProblemRecord> records;
};

struct Violation {
  std::string record_id;
  std::string rule;
  std::string detail;
};

// All ProblemRecord/VulnEdit invariant checks; empty result means ok.
std::vector<Violation> validate_record(const ProblemRecord& record);

// Raw byte span of the edit's unique normalized match inside code.
struct SnippetMatch {
  size_t raw_begin = 0;
  size_t raw_end = 0;  // one past the last byte
  int first_line = 0;
  int last_line = 0;
};

// Throws "snippet-not-found" / "snippet-ambiguous".
SnippetMatch locate_snippet(const std::string& code, const std::string& snippet);

// correct_code with the unique occurrence of edit.original replaced by
// edit.replacement; every byte outside the matched span is untouched.
std::string apply_edit(const std::string& correct_code, const VulnEdit& edit);

// Throws "file-missing" / "malformed-document" / "validation-failure".
Corpus load_corpus(const std::string& path);
void save_corpus(const Corpus& corpus, const std::string& path);

Corpus corpus_from_json_text(const std::string& text);
std::string corpus_to_json_text(const Corpus& corpus);

}  // namespace refforge
