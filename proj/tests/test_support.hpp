#pragma once

#include <string>

#include "refforge/corpus.hpp"
#include "refforge/prompt_space.hpp"

namespace refforge::testing {

inline ProblemRecord make_record() {
  ProblemRecord r;
  r.id = "sum-loop";
  r.language = Language::cpp;
  r.question = "how to sum an int array in cpp";
  r.correct_code =
      "int sum(const int* a, int n) {\n"
      "  int s = 0;\n"
      "  for (int i = 0; i < n; i++) {\n"
      "    s += a[i];\n"
      "  }\n"
      "  return s;\n"
      "}\n";
  r.explanation = "iterates the array once and accumulates";
  r.vuln_class.name = VulnClassName::ArrayViolation;
  r.vuln_class.cwe_ids = {"CWE-125"};
  r.edit.original = "i < n";
  r.edit.replacement = "i <= n";
  r.edit.description = "loop bound reads one past the end";
  r.anchor_line = 2;
  return r;
}

inline PromptSpace make_space() {
  PromptSpace s;
  s.templates.push_back({"plain", "{{INSTRUCTION}}\nQ: {{QUERY}}\nRef:\n{{REFERENCE}}\nA:\n"});
  s.templates.push_back({"tagged", "[INST] {{INSTRUCTION}} [/INST]\nuser: {{QUERY}}\ncontext:\n{{REFERENCE}}\n"});
  s.templates.push_back({"terse", "{{QUERY}}\n---\n{{REFERENCE}}\n---\n{{INSTRUCTION}}\n"});
  s.instructions = {"answer with code only", "write a safe solution", "fix the snippet"};
  s.queries = {"how to sum an int array in cpp", "sum array elements", "loop over array and add"};
  return s;
}

}  // namespace refforge::testing
