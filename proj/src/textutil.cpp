#include "refforge/textutil.hpp"

#include <algorithm>
#include <cctype>

namespace refforge {

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> out;
  size_t start = 0;
  for (size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '\n') {
      out.emplace_back(text.substr(start, i - start));
      start = i + 1;
    }
  }
  if (start < text.size()) out.emplace_back(text.substr(start));
  if (text.empty()) out.emplace_back();
  return out;
}

std::vector<size_t> line_starts(std::string_view text) {
  std::vector<size_t> starts{0};
  for (size_t i = 0; i + 1 < text.size(); ++i) {
    if (text[i] == '\n') starts.push_back(i + 1);
  }
  return starts;
}

std::string normalize_ws(std::string_view line) {
  size_t b = 0, e = line.size();
  while (b < e && is_blank(line[b])) ++b;
  while (e > b && is_blank(line[e - 1])) --e;
  std::string out;
  out.reserve(e - b);
  bool in_run = false;
  for (size_t i = b; i < e; ++i) {
    if (is_blank(line[i])) {
      if (!in_run) out.push_back(' ');
      in_run = true;
    } else {
      out.push_back(line[i]);
      in_run = false;
    }
  }
  return out;
}

std::string normalize_code(std::string_view text) {
  auto lines = split_lines(text);
  std::string out;
  for (size_t i = 0; i < lines.size(); ++i) {
    if (i) out.push_back('\n');
    out += normalize_ws(lines[i]);
  }
  return out;
}

NormalizedMap normalize_code_mapped(std::string_view text) {
  NormalizedMap nm;
  nm.text.reserve(text.size());
  nm.raw_index.reserve(text.size());
  size_t pos = 0;
  const size_t n = text.size();
  bool first_line = true;
  while (pos <= n) {
    size_t eol = text.find('\n', pos);
    const size_t line_end = (eol == std::string_view::npos) ? n : eol;
    size_t b = pos, e = line_end;
    while (b < e && is_blank(text[b])) ++b;
    while (e > b && is_blank(text[e - 1])) --e;
    if (!first_line) {
      nm.text.push_back('\n');
      nm.raw_index.push_back(pos - 1);  // the raw '\n' that ended the previous line
    }
    bool in_run = false;
    for (size_t i = b; i < e; ++i) {
      if (is_blank(text[i])) {
        if (!in_run) {
          nm.text.push_back(' ');
          nm.raw_index.push_back(i);
        }
        in_run = true;
      } else {
        nm.text.push_back(text[i]);
        nm.raw_index.push_back(i);
        in_run = false;
      }
    }
    first_line = false;
    if (eol == std::string_view::npos) break;
    pos = eol + 1;
  }
  return nm;
}

namespace {
const std::set<std::string>& stopwords() {
  static const std::set<std::string> kStop = {
      "a",  "an", "and", "are", "be",  "can", "do",  "for", "how", "i",
      "in", "is", "it",  "me",  "my",  "of",  "on",  "or",  "the", "this",
      "to", "we", "what", "when", "with", "you"};
  return kStop;
}
}  // namespace

std::set<std::string> content_words(std::string_view text) {
  std::set<std::string> words;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty() && !stopwords().count(cur)) words.insert(cur);
    cur.clear();
  };
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else {
      flush();
    }
  }
  flush();
  return words;
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 0.0;
  size_t inter = 0;
  for (const auto& w : a) inter += b.count(w);
  const size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::string_view leading_indent(std::string_view line) {
  size_t i = 0;
  while (i < line.size() && is_blank(line[i])) ++i;
  return line.substr(0, i);
}

size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return 0;
  size_t count = 0, pos = 0;
  while ((pos = haystack.find(needle, pos)) != std::string_view::npos) {
    ++count;
    ++pos;
  }
  return count;
}

}  // namespace refforge
