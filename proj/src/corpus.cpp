#include "refforge/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "refforge/errors.hpp"
#include "refforge/textutil.hpp"

namespace refforge {

using json = nlohmann::ordered_json;

std::string to_string(Language lang) {
  switch (lang) {
    case Language::python: return "python";
    case Language::java: return "java";
    case Language::cpp: return "cpp";
    case Language::php: return "php";
  }
  return "cpp";
}

std::string to_string(VulnClassName cls) {
  switch (cls) {
    case VulnClassName::ArrayViolation: return "ArrayViolation";
    case VulnClassName::BufferOverflow: return "BufferOverflow";
    case VulnClassName::IncorrectVariable: return "IncorrectVariable";
    case VulnClassName::InvalidValidation: return "InvalidValidation";
    case VulnClassName::InfiniteLoop: return "InfiniteLoop";
  }
  return "ArrayViolation";
}

std::optional<Language> parse_language(const std::string& s) {
  if (s == "python") return Language::python;
  if (s == "java") return Language::java;
  if (s == "cpp") return Language::cpp;
  if (s == "php") return Language::php;
  return std::nullopt;
}

std::optional<VulnClassName> parse_vuln_class(const std::string& s) {
  if (s == "ArrayViolation") return VulnClassName::ArrayViolation;
  if (s == "BufferOverflow") return VulnClassName::BufferOverflow;
  if (s == "IncorrectVariable") return VulnClassName::IncorrectVariable;
  if (s == "InvalidValidation") return VulnClassName::InvalidValidation;
  if (s == "InfiniteLoop") return VulnClassName::InfiniteLoop;
  return std::nullopt;
}

const std::vector<std::string>& cwe_set_for(VulnClassName cls) {
  static const std::vector<std::string> kArray = {"CWE-125"};
  static const std::vector<std::string> kBuffer = {"CWE-787", "CWE-120", "CWE-122"};
  static const std::vector<std::string> kVariable = {"CWE-457", "CWE-190"};
  static const std::vector<std::string> kValidation = {"CWE-20", "CWE-570"};
  static const std::vector<std::string> kLoop = {"CWE-835"};
  switch (cls) {
    case VulnClassName::ArrayViolation: return kArray;
    case VulnClassName::BufferOverflow: return kBuffer;
    case VulnClassName::IncorrectVariable: return kVariable;
    case VulnClassName::InvalidValidation: return kValidation;
    case VulnClassName::InfiniteLoop: return kLoop;
  }
  return kArray;
}

namespace {

// Count of normalized-snippet occurrences plus the raw span of the first.
struct MatchScan {
  size_t count = 0;
  size_t raw_begin = 0;
  size_t raw_end = 0;
};

MatchScan scan_snippet(const std::string& code, const std::string& snippet) {
  MatchScan scan;
  const std::string needle = normalize_code(snippet);
  if (needle.empty()) return scan;
  const NormalizedMap nm = normalize_code_mapped(code);
  size_t pos = 0;
  while ((pos = nm.text.find(needle, pos)) != std::string::npos) {
    if (scan.count == 0) {
      scan.raw_begin = nm.raw_index[pos];
      scan.raw_end = nm.raw_index[pos + needle.size() - 1] + 1;
    }
    ++scan.count;
    ++pos;
  }
  return scan;
}

int line_of_offset(const std::vector<size_t>& starts, size_t offset) {
  int line = 0;
  for (size_t i = 0; i < starts.size(); ++i) {
    if (starts[i] <= offset) line = static_cast<int>(i);
  }
  return line;
}

}  // namespace

SnippetMatch locate_snippet(const std::string& code, const std::string& snippet) {
  const MatchScan scan = scan_snippet(code, snippet);
  if (scan.count == 0) raise("snippet-not-found", "edit snippet does not occur in code");
  if (scan.count > 1) raise("snippet-ambiguous", "edit snippet occurs more than once");
  SnippetMatch m;
  m.raw_begin = scan.raw_begin;
  m.raw_end = scan.raw_end;
  const auto starts = line_starts(code);
  m.first_line = line_of_offset(starts, m.raw_begin);
  m.last_line = line_of_offset(starts, m.raw_end == 0 ? 0 : m.raw_end - 1);
  return m;
}

std::string apply_edit(const std::string& correct_code, const VulnEdit& edit) {
  const SnippetMatch m = locate_snippet(correct_code, edit.original);
  std::string out;
  out.reserve(correct_code.size() + edit.replacement.size());
  out.append(correct_code, 0, m.raw_begin);
  out.append(edit.replacement);
  out.append(correct_code, m.raw_end, std::string::npos);
  return out;
}

std::vector<Violation> validate_record(const ProblemRecord& r) {
  std::vector<Violation> v;
  auto flag = [&](const std::string& rule, const std::string& detail) {
    v.push_back({r.id, rule, detail});
  };

  if (r.id.empty()) flag("empty-id", "record id must be non-empty");

  const auto& allowed = cwe_set_for(r.vuln_class.name);
  if (r.vuln_class.cwe_ids.empty()) {
    flag("cwe-missing", "record lists no CWE identifiers");
  }
  for (const auto& cwe : r.vuln_class.cwe_ids) {
    if (std::find(allowed.begin(), allowed.end(), cwe) == allowed.end()) {
      flag("cwe-mismatch", cwe + " is not a known CWE for class " + to_string(r.vuln_class.name));
    }
  }

  if (normalize_code(r.edit.original).empty()) {
    flag("empty-snippet", "edit original is empty after normalization");
  } else {
    const MatchScan scan = scan_snippet(r.correct_code, r.edit.original);
    if (scan.count == 0) {
      flag("snippet-not-found", "edit original does not occur in correct_code");
    } else if (scan.count > 1) {
      flag("ambiguous edit anchor", "edit original occurs " + std::to_string(scan.count) + " times");
    }
  }

  if (r.edit.replacement == r.edit.original) {
    flag("identical-replacement", "edit replacement equals original");
  }

  const auto lines = split_lines(r.correct_code);
  const int n_lines = static_cast<int>(lines.size());
  if (r.anchor_line < 0 || r.anchor_line >= n_lines) {
    flag("anchor out of range",
         "anchor_line " + std::to_string(r.anchor_line) + " but code has " +
             std::to_string(n_lines) + " lines");
  } else if (v.empty()) {
    // Proximity check only makes sense once the snippet resolves uniquely.
    const SnippetMatch m = locate_snippet(r.correct_code, r.edit.original);
    const int dist = r.anchor_line < m.first_line ? m.first_line - r.anchor_line
                     : r.anchor_line > m.last_line ? r.anchor_line - m.last_line
                                                   : 0;
    if (dist > 2) {
      flag("anchor-not-near-edit",
           "anchor_line " + std::to_string(r.anchor_line) + " is " + std::to_string(dist) +
               " lines away from the edited span");
    }
    // A record whose edit disappears under normalization can never be
    // detected in a response; reject it up front.
    const std::string vuln = apply_edit(r.correct_code, r.edit);
    if (normalize_code(vuln) == normalize_code(r.correct_code)) {
      flag("edit-invisible", "replacement differs only in whitespace");
    }
  }
  return v;
}

namespace {

void require_keys(const json& obj, const std::set<std::string>& allowed,
                  const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key())) {
      raise("malformed-document", "unknown key \"" + it.key() + "\" in " + where);
    }
  }
  for (const auto& key : allowed) {
    if (!obj.contains(key)) {
      raise("malformed-document", "missing key \"" + key + "\" in " + where);
    }
  }
}

ProblemRecord record_from_json(const json& j) {
  require_keys(j,
               {"id", "language", "question", "correct_code", "explanation", "vuln_class",
                "cwe_ids", "edit", "anchor_line"},
               "record");
  require_keys(j.at("edit"), {"original", "replacement", "description"}, "edit");
  ProblemRecord r;
  r.id = j.at("id").get<std::string>();
  const auto lang = parse_language(j.at("language").get<std::string>());
  if (!lang) raise("malformed-document", "unknown language in record " + r.id);
  r.language = *lang;
  r.question = j.at("question").get<std::string>();
  r.correct_code = j.at("correct_code").get<std::string>();
  r.explanation = j.at("explanation").get<std::string>();
  const auto cls = parse_vuln_class(j.at("vuln_class").get<std::string>());
  if (!cls) raise("malformed-document", "unknown vuln_class in record " + r.id);
  r.vuln_class.name = *cls;
  r.vuln_class.cwe_ids = j.at("cwe_ids").get<std::vector<std::string>>();
  r.edit.original = j.at("edit").at("original").get<std::string>();
  r.edit.replacement = j.at("edit").at("replacement").get<std::string>();
  r.edit.description = j.at("edit").at("description").get<std::string>();
  r.anchor_line = j.at("anchor_line").get<int>();
  return r;
}

json record_to_json(const ProblemRecord& r) {
  json j;
  j["id"] = r.id;
  j["language"] = to_string(r.language);
  j["question"] = r.question;
  j["correct_code"] = r.correct_code;
  j["explanation"] = r.explanation;
  j["vuln_class"] = to_string(r.vuln_class.name);
  j["cwe_ids"] = r.vuln_class.cwe_ids;
  j["edit"] = {{"original", r.edit.original},
               {"replacement", r.edit.replacement},
               {"description", r.edit.description}};
  j["anchor_line"] = r.anchor_line;
  return j;
}

}  // namespace

Corpus corpus_from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    raise("malformed-document", std::string("corpus is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("records")) {
    raise("malformed-document", "corpus document must be an object with a \"records\" array");
  }
  require_keys(doc, {"records"}, "corpus");

  Corpus corpus;
  std::set<std::string> seen_ids;
  for (const auto& jr : doc.at("records")) {
    ProblemRecord r = record_from_json(jr);
    if (!seen_ids.insert(r.id).second) {
      raise("validation-failure", "record " + r.id + ": duplicate id");
    }
    const auto violations = validate_record(r);
    if (!violations.empty()) {
      std::ostringstream msg;
      msg << "record " << r.id << ":";
      for (const auto& v : violations) msg << " [" << v.rule << "] " << v.detail << ";";
      raise("validation-failure", msg.str());
    }
    corpus.records.push_back(std::move(r));
  }
  return corpus;
}

std::string corpus_to_json_text(const Corpus& corpus) {
  json doc;
  doc["records"] = json::array();
  for (const auto& r : corpus.records) doc["records"].push_back(record_to_json(r));
  return doc.dump(2) + "\n";
}

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise("file-missing", "cannot open corpus file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return corpus_from_json_text(buf.str());
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise("file-missing", "cannot write corpus file " + path);
  out << corpus_to_json_text(corpus);
}

}  // namespace refforge
