#include "refforge/injector.hpp"

#include <map>
#include <set>

#include "refforge/errors.hpp"
#include "refforge/textutil.hpp"

namespace refforge {

CommentSyntax comment_syntax_for(Language lang) {
  if (lang == Language::python) return {lang, "#"};
  return {lang, "//"};
}

namespace {

std::string flatten_newlines(const std::string& s) {
  std::string out = s;
  for (char& c : out) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return out;
}

// Whole-word occurrences (neither neighbour is a word character).
std::vector<size_t> word_occurrences(const std::string& text, const std::string& word) {
  std::vector<size_t> hits;
  if (word.empty()) return hits;
  size_t pos = 0;
  while ((pos = text.find(word, pos)) != std::string::npos) {
    const bool left_ok = pos == 0 || !is_word_char(text[pos - 1]);
    const size_t after = pos + word.size();
    const bool right_ok = after >= text.size() || !is_word_char(text[after]);
    if (left_ok && right_ok) hits.push_back(pos);
    pos += 1;
  }
  return hits;
}

}  // namespace

CraftedReference insert_comment(const std::string& code, const CommentSyntax& syntax,
                                int anchor_line, const std::string& seq_text) {
  const auto starts = line_starts(code);
  if (anchor_line < 0 || anchor_line >= static_cast<int>(starts.size())) {
    raise("anchor-out-of-range", "anchor_line " + std::to_string(anchor_line) + " but code has " +
                                     std::to_string(starts.size()) + " lines");
  }
  const size_t insert_at = starts[anchor_line];
  size_t line_end = code.find('\n', insert_at);
  if (line_end == std::string::npos) line_end = code.size();
  const std::string_view anchor(code.data() + insert_at, line_end - insert_at);
  const std::string indent(leading_indent(anchor));
  const std::string payload = flatten_newlines(seq_text);

  CraftedReference out;
  out.strategy = InjectStrategy::comment;
  out.seq_line = anchor_line;
  out.seq_text = payload;
  out.text.reserve(code.size() + indent.size() + syntax.line_prefix.size() + payload.size() + 2);
  out.text.append(code, 0, insert_at);
  out.text += indent;
  out.text += syntax.line_prefix;
  out.text += ' ';
  out.seq_begin = out.text.size();
  out.text += payload;
  out.seq_end = out.text.size();
  out.text += '\n';
  out.text.append(code, insert_at, std::string::npos);
  return out;
}

std::string strip_injected(const CraftedReference& crafted) {
  const std::string& text = crafted.text;
  if (crafted.strategy == InjectStrategy::comment) {
    if (crafted.seq_end > text.size() || crafted.seq_begin > crafted.seq_end ||
        crafted.seq_end >= text.size() /* need the trailing '\n' */ ||
        text[crafted.seq_end] != '\n') {
      raise("span-corrupted", "comment span no longer ends at a line break");
    }
    if (text.compare(crafted.seq_begin, crafted.seq_end - crafted.seq_begin, crafted.seq_text) != 0) {
      raise("span-corrupted", "embedded sequence bytes were modified");
    }
    const size_t nl = text.rfind('\n', crafted.seq_begin == 0 ? 0 : crafted.seq_begin - 1);
    const size_t line_begin =
        (crafted.seq_begin == 0 || nl == std::string::npos) ? 0 : nl + 1;
    // Expect <indent><prefix><space> between line start and the payload.
    const std::string_view head(text.data() + line_begin, crafted.seq_begin - line_begin);
    const std::string_view indent = leading_indent(head);
    const std::string_view rest = head.substr(indent.size());
    if (rest.size() < 2 || rest.back() != ' ') {
      raise("span-corrupted", "comment marker before the sequence was modified");
    }
    std::string out;
    out.reserve(text.size());
    out.append(text, 0, line_begin);
    out.append(text, crafted.seq_end + 1, std::string::npos);
    return out;
  }

  // rename strategy
  const auto hits = word_occurrences(text, crafted.injected_identifier);
  if (hits.size() != crafted.occurrence_offsets.size()) {
    raise("span-corrupted", "injected identifier occurrence count changed");
  }
  std::string out;
  out.reserve(text.size());
  size_t pos = 0;
  for (size_t h : hits) {
    out.append(text, pos, h - pos);
    out += crafted.original_identifier;
    pos = h + crafted.injected_identifier.size();
  }
  out.append(text, pos, std::string::npos);
  return out;
}

std::string sanitize_identifier(const std::string& seq_text) {
  if (seq_text.empty()) raise("empty-result", "cannot sanitize an empty sequence");
  std::string out;
  out.reserve(seq_text.size() + 1);
  for (char c : seq_text) out.push_back(is_word_char(c) ? c : '_');
  if (out[0] >= '0' && out[0] <= '9') out.insert(out.begin(), '_');
  return out;
}

CraftedReference rename_variable(const std::string& code, Language language,
                                 const std::string& target_identifier,
                                 const std::string& seq_text) {
  (void)language;  // the identifier charset is shared by all four languages
  const auto hits = word_occurrences(code, target_identifier);
  if (hits.empty()) {
    raise("identifier-not-found",
          "identifier \"" + target_identifier + "\" does not occur as a whole word");
  }
  const std::string injected = sanitize_identifier(seq_text);
  if (injected == target_identifier) {
    raise("identifier-collision", "sanitized sequence equals the target identifier");
  }
  if (!word_occurrences(code, injected).empty()) {
    raise("identifier-collision",
          "sanitized sequence \"" + injected + "\" already occurs in the code");
  }

  CraftedReference out;
  out.strategy = InjectStrategy::rename;
  out.seq_text = injected;
  out.original_identifier = target_identifier;
  out.injected_identifier = injected;
  out.text.reserve(code.size() + hits.size() * injected.size());
  size_t pos = 0;
  for (size_t h : hits) {
    out.text.append(code, pos, h - pos);
    out.occurrence_offsets.push_back(out.text.size());
    out.text += injected;
    pos = h + target_identifier.size();
  }
  out.text.append(code, pos, std::string::npos);

  out.seq_begin = out.occurrence_offsets.front();
  out.seq_end = out.seq_begin + injected.size();
  const auto starts = line_starts(out.text);
  int line = 0;
  for (size_t i = 0; i < starts.size(); ++i) {
    if (starts[i] <= out.seq_begin) line = static_cast<int>(i);
  }
  out.seq_line = line;
  return out;
}

namespace {

const std::set<std::string>& language_keywords() {
  // Union across the four supported languages plus common builtin types;
  // renaming any of these would break the program.
  static const std::set<std::string> kWords = {
      "if",     "else",    "for",     "while",  "do",     "return", "break",  "continue",
      "switch", "case",    "default", "class",  "struct", "public", "private", "protected",
      "static", "const",   "void",    "int",    "long",   "short",  "char",   "float",
      "double", "bool",    "true",    "false",  "new",    "delete", "this",   "null",
      "nullptr", "None",   "True",    "False",  "def",    "import", "from",   "as",
      "in",     "not",     "and",     "or",     "pass",   "elif",   "lambda", "try",
      "except", "finally", "raise",   "with",   "yield",  "print",  "range",  "len",
      "size_t", "string",  "std",     "vector", "function", "echo", "array",  "foreach",
      "throw",  "catch",   "final",   "extends", "implements", "interface", "var",  "let",
      "sizeof", "unsigned", "signed", "include", "using",  "namespace", "auto"};
  return kWords;
}

}  // namespace

std::string rename_target_identifier(const ProblemRecord& record) {
  const std::string& code = record.correct_code;
  std::map<std::string, std::pair<int, size_t>> counts;  // name -> (count, first offset)
  size_t i = 0;
  while (i < code.size()) {
    if ((code[i] >= 'A' && code[i] <= 'Z') || (code[i] >= 'a' && code[i] <= 'z') ||
        code[i] == '_') {
      size_t j = i + 1;
      while (j < code.size() && is_word_char(code[j])) ++j;
      const std::string word = code.substr(i, j - i);
      if (!language_keywords().count(word) && word.size() >= 1) {
        auto it = counts.find(word);
        if (it == counts.end()) {
          counts[word] = {1, i};
        } else {
          ++it->second.first;
        }
      }
      i = j;
    } else {
      ++i;
    }
  }
  std::string best;
  int best_count = 0;
  size_t best_first = 0;
  for (const auto& [word, info] : counts) {
    if (info.first > best_count || (info.first == best_count && info.second < best_first)) {
      best = word;
      best_count = info.first;
      best_first = info.second;
    }
  }
  if (best.empty()) {
    raise("identifier-not-found", "record " + record.id + " has no renameable identifier");
  }
  return best;
}

}  // namespace refforge
