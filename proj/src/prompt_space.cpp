#include "refforge/prompt_space.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "refforge/errors.hpp"
#include "refforge/textutil.hpp"

namespace refforge {

using json = nlohmann::ordered_json;

namespace {

constexpr const char* kPlaceholders[] = {"INSTRUCTION", "QUERY", "REFERENCE"};

struct Slot {
  size_t begin;  // offset of "{{"
  size_t end;    // one past "}}"
  std::string name;
};

std::vector<Slot> find_slots(const std::string& body) {
  std::vector<Slot> slots;
  size_t pos = 0;
  while ((pos = body.find("{{", pos)) != std::string::npos) {
    const size_t close = body.find("}}", pos + 2);
    if (close == std::string::npos) break;
    slots.push_back({pos, close + 2, body.substr(pos + 2, close - pos - 2)});
    pos = close + 2;
  }
  return slots;
}

}  // namespace

std::vector<std::string> template_violations(const PromptTemplate& tmpl) {
  std::vector<std::string> v;
  int counts[3] = {0, 0, 0};
  for (const auto& slot : find_slots(tmpl.body)) {
    bool known = false;
    for (int i = 0; i < 3; ++i) {
      if (slot.name == kPlaceholders[i]) {
        ++counts[i];
        known = true;
      }
    }
    if (!known) v.push_back("template " + tmpl.id + ": unknown placeholder {{" + slot.name + "}}");
  }
  for (int i = 0; i < 3; ++i) {
    if (counts[i] != 1) {
      v.push_back("template " + tmpl.id + ": placeholder {{" + kPlaceholders[i] + "}} appears " +
                  std::to_string(counts[i]) + " times (want 1)");
    }
  }
  return v;
}

std::vector<std::string> space_violations(const PromptSpace& space) {
  std::vector<std::string> v;
  if (space.templates.empty()) v.push_back("templates list is empty");
  if (space.instructions.empty()) v.push_back("instructions list is empty");
  if (space.queries.empty()) v.push_back("queries list is empty");
  std::set<std::string> ids, bodies, ins, qs;
  for (const auto& t : space.templates) {
    for (auto& tv : template_violations(t)) v.push_back(tv);
    if (!ids.insert(t.id).second) v.push_back("duplicate template id " + t.id);
    if (!bodies.insert(t.body).second) v.push_back("duplicate template body for " + t.id);
  }
  for (const auto& s : space.instructions)
    if (!ins.insert(s).second) v.push_back("duplicate instruction \"" + s + "\"");
  for (const auto& s : space.queries)
    if (!qs.insert(s).second) v.push_back("duplicate query \"" + s + "\"");
  return v;
}

AssembledInput assemble(const PromptTemplate& tmpl, const std::string& instruction,
                        const std::string& query, const std::string& reference) {
  const auto violations = template_violations(tmpl);
  if (!violations.empty()) raise("validation-failure", violations.front());

  AssembledInput out;
  out.choice.template_id = tmpl.id;
  out.reference_used = reference;

  const auto slots = find_slots(tmpl.body);
  size_t pos = 0;
  for (const auto& slot : slots) {
    out.text.append(tmpl.body, pos, slot.begin - pos);
    if (slot.name == "INSTRUCTION") {
      out.text += instruction;
    } else if (slot.name == "QUERY") {
      out.text += query;
    } else {
      out.reference_offset = out.text.size();
      out.text += reference;
    }
    pos = slot.end;
  }
  out.text.append(tmpl.body, pos, std::string::npos);
  return out;
}

AssembledInput assemble_at(const PromptSpace& space, int template_index, int instruction_index,
                           int query_index, const std::string& reference) {
  AssembledInput out = assemble(space.templates.at(template_index),
                                space.instructions.at(instruction_index),
                                space.queries.at(query_index), reference);
  out.choice.template_index = template_index;
  out.choice.instruction_index = instruction_index;
  out.choice.query_index = query_index;
  return out;
}

size_t space_size(const PromptSpace& space) {
  return space.templates.size() * space.instructions.size() * space.queries.size();
}

std::vector<AssembledInput> sample_inputs(const PromptSpace& space, const std::string& reference,
                                          int k, Rng& rng) {
  std::vector<AssembledInput> out;
  out.reserve(k);
  for (int i = 0; i < k; ++i) {
    const int ti = rng.next_index(static_cast<int>(space.templates.size()));
    const int ii = rng.next_index(static_cast<int>(space.instructions.size()));
    const int qi = rng.next_index(static_cast<int>(space.queries.size()));
    out.push_back(assemble_at(space, ti, ii, qi, reference));
  }
  return out;
}

std::vector<std::string> rule_based_rewriter(const std::string& base, int want) {
  // Stopword-only decorations keep the content-word set intact.
  static const char* kPrefixes[] = {"how do i ", "what is the way to ", "need help: ",
                                    "can you explain "};
  static const char* kSuffixes[] = {"", " please", " in my project", " with an example"};
  std::vector<std::string> out;
  for (const char* p : kPrefixes) {
    for (const char* s : kSuffixes) {
      if (static_cast<int>(out.size()) >= want) return out;
      std::string cand = std::string(p) + base + s;
      if (cand != base) out.push_back(cand);
    }
  }
  return out;
}

std::vector<std::string> derive_queries(const std::string& base_query, int n,
                                        const QueryRewriter& generator) {
  if (n < 1) raise("validation-failure", "derive_queries needs n >= 1");
  std::vector<std::string> out{base_query};
  if (n == 1) return out;

  std::vector<std::string> candidates;
  try {
    candidates = generator(base_query, 4 * n);
  } catch (const std::exception& e) {
    raise("generator-failure", std::string("query rewriter failed: ") + e.what());
  }

  const auto base_words = content_words(base_query);
  for (const auto& cand : candidates) {
    if (static_cast<int>(out.size()) >= n) break;
    if (std::find(out.begin(), out.end(), cand) != out.end()) continue;
    if (jaccard(base_words, content_words(cand)) < 0.5) continue;
    out.push_back(cand);
  }
  return out;
}

bool spaces_disjoint(const PromptSpace& a, const PromptSpace& b) {
  for (const auto& ta : a.templates)
    for (const auto& tb : b.templates)
      if (ta.id == tb.id || ta.body == tb.body) return false;
  for (const auto& ia : a.instructions)
    for (const auto& ib : b.instructions)
      if (ia == ib) return false;
  for (const auto& qa : a.queries)
    for (const auto& qb : b.queries)
      if (qa == qb) return false;
  return true;
}

PromptSpace space_from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    raise("malformed-document", std::string("prompt space is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) raise("malformed-document", "prompt space must be a JSON object");
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (it.key() != "templates" && it.key() != "instructions" && it.key() != "queries") {
      raise("malformed-document", "unknown key \"" + it.key() + "\" in prompt space");
    }
  }
  PromptSpace space;
  for (const auto& jt : doc.at("templates")) {
    space.templates.push_back({jt.at("id").get<std::string>(), jt.at("body").get<std::string>()});
  }
  space.instructions = doc.at("instructions").get<std::vector<std::string>>();
  space.queries = doc.at("queries").get<std::vector<std::string>>();

  const auto violations = space_violations(space);
  if (!violations.empty()) raise("validation-failure", violations.front());
  return space;
}

std::string space_to_json_text(const PromptSpace& space) {
  json doc;
  doc["templates"] = json::array();
  for (const auto& t : space.templates) {
    doc["templates"].push_back({{"id", t.id}, {"body", t.body}});
  }
  doc["instructions"] = space.instructions;
  doc["queries"] = space.queries;
  return doc.dump(2) + "\n";
}

PromptSpace load_space(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise("file-missing", "cannot open prompt space file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return space_from_json_text(buf.str());
}

void save_space(const PromptSpace& space, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise("file-missing", "cannot write prompt space file " + path);
  out << space_to_json_text(space);
}

}  // namespace refforge
