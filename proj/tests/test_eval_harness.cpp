#include <doctest.h>

#include "refforge/errors.hpp"
#include "refforge/eval_harness.hpp"
#include "refforge/report_render.hpp"
#include "fake_oracle.hpp"
#include "test_support.hpp"

using namespace refforge;

TEST_CASE("decimal averaging reproduces the published overview arithmetic") {
  CHECK(render_mean_2dp({77.14, 80.00, 94.29, 85.71}) == "84.29");
  CHECK(render_ratio_percent({33.27, 33.30, 33.72, 32.13}, {923.66, 975.22, 986.23, 965.39}) ==
        "3.44");
  CHECK(render_mean_2dp({1.0}) == "1.00");
  CHECK(render_mean_2dp({0.005, 0.005}) == "0.01");  // half away from zero
}

TEST_CASE("aggregates recompute from rows") {
  AttackReport report;
  auto mk = [](const std::string& id, VulnClassName cls, bool ok, int it, int in, int res,
               int seq) {
    RecordResult r;
    r.id = id;
    r.vuln_class = cls;
    r.success = ok;
    r.iterations = it;
    r.input_tokens = in;
    r.res_tokens = res;
    r.seq_tokens = seq;
    return r;
  };
  report.rows.push_back(mk("a", VulnClassName::ArrayViolation, true, 10, 100, 40, 16));
  report.rows.push_back(mk("b", VulnClassName::ArrayViolation, false, 20, 200, 60, 16));
  report.rows.push_back(mk("c", VulnClassName::InfiniteLoop, true, 30, 300, 80, 16));
  auto errored = mk("d", VulnClassName::InfiniteLoop, false, 0, 0, 0, 0);
  errored.error = "context-overflow: too long";
  report.rows.push_back(errored);

  const SuiteAggregates agg = report.aggregates();
  CHECK(agg.records == 4);
  CHECK(agg.asr == doctest::Approx(0.5));  // over all records, errors count as failures
  CHECK(agg.asr_by_class.at("ArrayViolation") == doctest::Approx(0.5));
  CHECK(agg.asr_by_class.at("InfiniteLoop") == doctest::Approx(0.5));
  CHECK(agg.mean_iterations == doctest::Approx(20.0));  // errored row excluded from means
  CHECK(agg.mean_input == doctest::Approx(200.0));
}

TEST_CASE("empty report flags ASR as undefined") {
  AttackReport report;
  const SuiteAggregates agg = report.aggregates();
  CHECK(!agg.asr_defined);
  const std::string json = report_to_json_text(report);
  CHECK(json.find("\"asr_undefined\": true") != std::string::npos);
}

TEST_CASE("transfer fractions are monotone") {
  TransferReport t;
  t.n = 5;
  t.rows = {{"a", 5}, {"b", 3}, {"c", 0}, {"d", 1}};
  const auto f = t.fraction_at_least();
  REQUIRE(f.size() == 5);
  for (size_t j = 1; j < f.size(); ++j) CHECK(f[j] <= f[j - 1]);
  CHECK(f[0] == doctest::Approx(0.75));   // >= 1
  CHECK(f[4] == doctest::Approx(0.25));   // all 5
}

TEST_CASE("transfer_test rejects overlapping spaces and accepts disjoint ones") {
  const auto r = testing::make_record();
  const auto train = testing::make_space();
  testing::ScriptedOracle oracle;
  oracle.script = {{"", "```\n" + apply_edit(r.correct_code, r.edit) + "```"}};
  AttackSequence seq{byte_tokenize("whatever")};

  CHECK_THROWS_AS(transfer_test(oracle, seq, r, train, 3, 1, &train), Error);

  PromptSpace holdout;
  holdout.templates = {{"h1", "ref:\n{{REFERENCE}}\nq: {{QUERY}}\ni: {{INSTRUCTION}}\n"}};
  holdout.instructions = {"different instruction"};
  holdout.queries = {"different query"};
  CHECK(transfer_test(oracle, seq, r, holdout, 3, 1, &train) == 3);
  CHECK(transfer_test(oracle, seq, r, holdout, 0, 1, &train) == 0);

  // deliberate overlap allowed in test mode
  CHECK(transfer_test(oracle, seq, r, train, 2, 1, &train, /*allow_overlap=*/true) == 2);
}

TEST_CASE("run_suite tolerates per-record failures") {
  Corpus corpus;
  corpus.records.push_back(testing::make_record());
  auto bad = testing::make_record();
  bad.id = "bad-one";
  corpus.records.push_back(bad);

  const auto space = testing::make_space();
  testing::ScriptedOracle oracle;
  oracle.script = {{"", "```\n" + apply_edit(corpus.records[0].correct_code,
                                             corpus.records[0].edit) + "```"}};
  AttackParams p;
  p.max_step = 1;
  p.m = 2;
  p.seq_len = 100;  // large enough to overflow nothing; both records succeed
  const AttackReport report = run_suite(corpus, oracle, space, p);
  REQUIRE(report.rows.size() == 2);
  CHECK(report.rows[0].success);
  CHECK(report.rows[1].success);
  CHECK(report.rows[0].id == "sum-loop");
  CHECK(report.aggregates().asr == doctest::Approx(1.0));
}

TEST_CASE("rename ablation records identifier-not-found as a row failure") {
  Corpus corpus;
  auto r = testing::make_record();
  // strip all identifiers: a record whose code is only punctuation-free
  // keywords cannot be renamed
  r.id = "no-ident";
  r.correct_code = "if (1) { return; }\nwhile (0) { break; }\n";
  r.edit.original = "while (0)";
  r.edit.replacement = "while (1)";
  r.anchor_line = 1;
  corpus.records.push_back(r);

  const auto space = testing::make_space();
  testing::ScriptedOracle oracle;
  oracle.default_response = "nothing";
  AttackParams p;
  p.max_step = 1;
  p.m = 2;
  p.seq_len = 12;
  const AttackReport report = ablation_renaming(corpus, oracle, space, p);
  REQUIRE(report.rows.size() == 1);
  CHECK(!report.rows[0].success);
  CHECK(report.rows[0].error.find("identifier-not-found") != std::string::npos);
}

TEST_CASE("simulate_assistant retrieves by keyword overlap") {
  const auto space = testing::make_space();
  testing::ScriptedOracle oracle;
  oracle.default_response = "plain text";

  std::vector<Page> pages = {
      {"cooking pasta correctly", "boil water, add salt, wait"},
      {"how to sum an int array in cpp", "int sum(const int* a, int n) { ... }"},
  };
  DecodeParams dp;
  const auto sim = simulate_assistant("how to sum an int array in cpp", pages, oracle, space, 3, dp);
  CHECK(sim.page_index == 1);
  CHECK(sim.page_title == "how to sum an int array in cpp");
  CHECK(sim.input_text.find(pages[1].body) != std::string::npos);

  CHECK_THROWS_AS(
      simulate_assistant("completely disjoint topic zebra", pages, oracle, space, 3, dp), Error);
}

TEST_CASE("report json carries rows and aggregates consistently") {
  AttackReport report;
  RecordResult r;
  r.id = "x";
  r.vuln_class = VulnClassName::BufferOverflow;
  r.success = true;
  r.iterations = 7;
  r.input_tokens = 120;
  r.res_tokens = 45;
  r.seq_tokens = 12;
  r.seq_text = "abc";
  r.final_seq = byte_tokenize("abc");
  report.rows.push_back(r);
  const std::string text = report_to_json_text(report);
  CHECK(text.find("\"asr\": 1.0") != std::string::npos);
  CHECK(text.find("\"seq_text\": \"abc\"") != std::string::npos);
  CHECK(report_to_json_text(report) == text);  // stable serialization
}
