#pragma once

#include <functional>
#include <string>
#include <vector>

#include "refforge/rng.hpp"

namespace refforge {

// A template body holds exactly one {{INSTRUCTION}}, one {{QUERY}} and one
// {{REFERENCE}} and no other {{...}} tokens.
struct PromptTemplate {
  std::string id;
  std::string body;
};

struct PromptSpace {
  std::vector<PromptTemplate> templates;
  std::vector<std::string> instructions;
  std::vector<std::string> queries;
};

struct ChoiceTuple {
  std::string template_id;
  int template_index = -1;
  int instruction_index = -1;
  int query_index = -1;
};

struct AssembledInput {
  std::string text;
  ChoiceTuple choice;
  std::string reference_used;
  size_t reference_offset = 0;  // byte offset of reference_used inside text
};

// Empty result means the template is well-formed.
std::vector<std::string> template_violations(const PromptTemplate& tmpl);
std::vector<std::string> space_violations(const PromptSpace& space);

// Single-pass substitution: placeholders in the substituted texts are never
// re-expanded, so attacker-controlled references cannot inject new slots.
AssembledInput assemble(const PromptTemplate& tmpl, const std::string& instruction,
                        const std::string& query, const std::string& reference);

AssembledInput assemble_at(const PromptSpace& space, int template_index,
                           int instruction_index, int query_index,
                           const std::string& reference);

size_t space_size(const PromptSpace& space);

// k inputs, each coordinate drawn independently and uniformly; duplicates
// permitted; bit-reproducible for a fixed rng state.
std::vector<AssembledInput> sample_inputs(const PromptSpace& space, const std::string& reference,
                                          int k, Rng& rng);

// Produces rewrite candidates for a base query; may return fewer than asked.
using QueryRewriter = std::function<std::vector<std::string>(const std::string& base, int want)>;

// Offline paraphraser: prefix/suffix rewrites that keep the keyword set.
std::vector<std::string> rule_based_rewriter(const std::string& base, int want);

// Up to n distinct rephrasings; base first; candidates failing the
// content-word Jaccard >= 0.5 retention check are dropped.
std::vector<std::string> derive_queries(const std::string& base_query, int n,
                                        const QueryRewriter& generator);

// True when the two spaces share no template id, instruction or query text.
bool spaces_disjoint(const PromptSpace& a, const PromptSpace& b);

// Throws "file-missing" / "malformed-document" / "validation-failure".
PromptSpace load_space(const std::string& path);
void save_space(const PromptSpace& space, const std::string& path);
PromptSpace space_from_json_text(const std::string& text);
std::string space_to_json_text(const PromptSpace& space);

}  // namespace refforge
