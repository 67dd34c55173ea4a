#include <doctest.h>

#include <set>
#include <stdexcept>

#include "refforge/errors.hpp"
#include "refforge/prompt_space.hpp"
#include "refforge/textutil.hpp"
#include "test_support.hpp"

using namespace refforge;

TEST_CASE("assemble substitutes each placeholder once") {
  PromptTemplate t{"t", "I:{{INSTRUCTION}} Q:{{QUERY}} R:{{REFERENCE}}"};
  const auto out = assemble(t, "be careful", "fix loop", "code");
  CHECK(out.text == "I:be careful Q:fix loop R:code");
  CHECK(out.choice.template_id == "t");
  CHECK(out.text.substr(out.reference_offset, 4) == "code");
}

TEST_CASE("assemble allows empty instruction") {
  PromptTemplate t{"t", "I:{{INSTRUCTION}} Q:{{QUERY}} R:{{REFERENCE}}"};
  CHECK(assemble(t, "", "q", "r").text == "I: Q:q R:r");
}

TEST_CASE("substitution is single pass") {
  PromptTemplate t{"t", "{{INSTRUCTION}}|{{QUERY}}|{{REFERENCE}}"};
  const auto out = assemble(t, "i", "q", "see {{QUERY}} here");
  CHECK(out.text == "i|q|see {{QUERY}} here");
}

TEST_CASE("assemble is pure") {
  PromptTemplate t{"t", "{{INSTRUCTION}} {{QUERY}} {{REFERENCE}}"};
  CHECK(assemble(t, "a", "b", "c").text == assemble(t, "a", "b", "c").text);
}

TEST_CASE("template violations") {
  CHECK(template_violations({"ok", "{{INSTRUCTION}}{{QUERY}}{{REFERENCE}}"}).empty());
  CHECK(!template_violations({"dup", "{{QUERY}}{{QUERY}}{{INSTRUCTION}}{{REFERENCE}}"}).empty());
  CHECK(!template_violations({"missing", "{{QUERY}}{{INSTRUCTION}}"}).empty());
  CHECK(!template_violations({"alien", "{{QUERY}}{{INSTRUCTION}}{{REFERENCE}}{{WHAT}}"}).empty());
}

TEST_CASE("space_size is the cross product") {
  const auto s = testing::make_space();
  CHECK(space_size(s) == 27);
  PromptSpace one;
  one.templates = {s.templates[0]};
  one.instructions = {"i"};
  one.queries = {"q"};
  CHECK(space_size(one) == 1);
}

TEST_CASE("space validation rejects empty or duplicate entries") {
  auto s = testing::make_space();
  CHECK(space_violations(s).empty());
  s.instructions.push_back(s.instructions.front());
  CHECK(!space_violations(s).empty());
  auto empty = testing::make_space();
  empty.queries.clear();
  CHECK(!space_violations(empty).empty());
}

TEST_CASE("sample_inputs is deterministic and in range") {
  const auto s = testing::make_space();
  Rng a(42), b(42);
  const auto xs = sample_inputs(s, "REF", 8, a);
  const auto ys = sample_inputs(s, "REF", 8, b);
  REQUIRE(xs.size() == 8);
  for (size_t i = 0; i < xs.size(); ++i) {
    CHECK(xs[i].text == ys[i].text);
    CHECK(xs[i].choice.template_index >= 0);
    CHECK(xs[i].choice.template_index < 3);
    CHECK(xs[i].choice.instruction_index < 3);
    CHECK(xs[i].choice.query_index < 3);
    CHECK(xs[i].reference_used == "REF");
  }
  Rng c(43);
  const auto zs = sample_inputs(s, "REF", 8, c);
  bool any_diff = false;
  for (size_t i = 0; i < xs.size(); ++i) any_diff = any_diff || zs[i].text != xs[i].text;
  CHECK(any_diff);
}

TEST_CASE("sample over a 1x1x1 space returns the unique input") {
  PromptSpace one;
  one.templates = {{"t", "{{INSTRUCTION}}{{QUERY}}{{REFERENCE}}"}};
  one.instructions = {"i"};
  one.queries = {"q"};
  Rng rng(7);
  const auto xs = sample_inputs(one, "r", 1, rng);
  REQUIRE(xs.size() == 1);
  CHECK(xs[0].text == "iqr");
}

TEST_CASE("derive_queries keeps the keyword set") {
  const std::string base = "how to fix DirectX histogram error";
  const auto qs = derive_queries(base, 3, rule_based_rewriter);
  REQUIRE(qs.size() == 3);
  CHECK(qs[0] == base);
  const auto bw = content_words(base);
  for (const auto& q : qs) CHECK(jaccard(bw, content_words(q)) >= 0.5);
}

TEST_CASE("derive_queries n=1 returns just the base") {
  const auto qs = derive_queries("anything at all", 1, rule_based_rewriter);
  REQUIRE(qs.size() == 1);
}

TEST_CASE("derive_queries filters unrelated rewrites") {
  const auto drift = [](const std::string&, int) {
    return std::vector<std::string>{"a totally different topic entirely"};
  };
  const auto qs = derive_queries("sum an int array", 3, drift);
  CHECK(qs.size() == 1);  // only the base survives
}

TEST_CASE("a throwing rewriter maps to generator-failure") {
  const auto broken = [](const std::string&, int) -> std::vector<std::string> {
    throw std::runtime_error("backend unavailable");
  };
  try {
    derive_queries("anything", 3, broken);
    FAIL("expected generator-failure");
  } catch (const Error& e) {
    CHECK(e.code() == "generator-failure");
  }
}

TEST_CASE("spaces_disjoint compares ids and texts") {
  const auto a = testing::make_space();
  auto b = testing::make_space();
  CHECK(!spaces_disjoint(a, b));
  PromptSpace c;
  c.templates = {{"fresh", "{{INSTRUCTION}}::{{QUERY}}::{{REFERENCE}}"}};
  c.instructions = {"novel instruction"};
  c.queries = {"novel query"};
  CHECK(spaces_disjoint(a, c));
}

TEST_CASE("space json round trip") {
  const auto s = testing::make_space();
  const auto back = space_from_json_text(space_to_json_text(s));
  CHECK(space_to_json_text(back) == space_to_json_text(s));
}
