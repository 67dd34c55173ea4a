#include "refforge/eval_harness.hpp"

#include <atomic>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "refforge/errors.hpp"
#include "refforge/textutil.hpp"
#include "refforge/vuln_detector.hpp"

namespace refforge {

using json = nlohmann::ordered_json;

SuiteAggregates AttackReport::aggregates() const {
  SuiteAggregates agg;
  agg.records = static_cast<int>(rows.size());
  if (rows.empty()) return agg;

  int successes = 0;
  std::map<std::string, int> class_success;
  int ran = 0;
  double sum_iter = 0, sum_input = 0, sum_res = 0, sum_seq = 0;
  for (const auto& r : rows) {
    const std::string cls = to_string(r.vuln_class);
    ++agg.count_by_class[cls];
    if (r.success) {
      ++successes;
      ++class_success[cls];
    }
    if (r.error.empty()) {
      ++ran;
      sum_iter += r.iterations;
      sum_input += r.input_tokens;
      sum_res += r.res_tokens;
      sum_seq += r.seq_tokens;
    }
  }
  agg.asr_defined = true;
  agg.asr = static_cast<double>(successes) / static_cast<double>(rows.size());
  for (const auto& [cls, n] : agg.count_by_class) {
    agg.asr_by_class[cls] = static_cast<double>(class_success[cls]) / static_cast<double>(n);
  }
  if (ran > 0) {
    agg.mean_iterations = sum_iter / ran;
    agg.mean_input = sum_input / ran;
    agg.mean_res = sum_res / ran;
    agg.mean_seq = sum_seq / ran;
  }
  return agg;
}

namespace {

RecordResult run_one(const ProblemRecord& record, const ModelOracle& model,
                     const PromptSpace& space, const AttackParams& base, bool phase1_only) {
  RecordResult row;
  row.id = record.id;
  row.vuln_class = record.vuln_class.name;
  AttackParams params = base;
  params.seed = Rng::mix_seed(base.seed, fnv1a64(record.id));
  try {
    AttackSequence seq;
    if (phase1_only) {
      PhaseOutcome p1 = phase1(model, space, record, params);
      seq = p1.seq;
      row.success = p1.trace.success;
      row.iterations = p1.trace.iterations_used;
      row.wall_seconds = p1.trace.wall_seconds;
    } else {
      AttackOutcome outcome = run_attack(model, space, record, params);
      seq = outcome.seq;
      row.success = outcome.success;
      row.iterations = outcome.iterations_total;
      row.wall_seconds = outcome.trace.wall_seconds;
    }
    row.final_seq = seq.tokens;
    row.seq_text = model.detokenize(seq.tokens);
    row.seq_tokens = static_cast<int>(seq.tokens.size());

    // Token-length metrics, measured on the fixed assembled input with the
    // final sequence embedded and a fresh greedy response.
    const AssembledInput fixed = assemble_at(space, 0, 0, 0, record.correct_code);
    const EmbeddedInput embedded = embed_sequence(fixed, record, seq, params.strategy);
    row.input_tokens = static_cast<int>(embedded.ids.size());
    DecodeParams dp = params.decode;
    dp.mode = DecodeMode::greedy;
    const TokenSeq res = model.generate(embedded.ids, dp);
    row.res_tokens = static_cast<int>(res.size());
  } catch (const Error& e) {
    row.error = e.code() + ": " + e.what();
    row.success = false;
  } catch (const std::exception& e) {
    row.error = std::string("fault: ") + e.what();
    row.success = false;
  }
  return row;
}

AttackReport run_records(const Corpus& corpus, const ModelOracle& model, const PromptSpace& space,
                         const AttackParams& params, int workers, bool phase1_only) {
  AttackReport report;
  report.rows.resize(corpus.records.size());
  const int n_workers =
      std::max(1, std::min<int>(workers, static_cast<int>(corpus.records.size())));
  if (n_workers == 1) {
    for (size_t i = 0; i < corpus.records.size(); ++i) {
      report.rows[i] = run_one(corpus.records[i], model, space, params, phase1_only);
    }
    return report;
  }
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= corpus.records.size()) return;
      report.rows[i] = run_one(corpus.records[i], model, space, params, phase1_only);
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return report;
}

}  // namespace

AttackReport run_suite(const Corpus& corpus, const ModelOracle& model, const PromptSpace& space,
                       const AttackParams& params, int workers) {
  return run_records(corpus, model, space, params, workers, /*phase1_only=*/false);
}

std::vector<double> TransferReport::fraction_at_least() const {
  std::vector<double> fractions(n, 0.0);
  if (rows.empty() || n == 0) return fractions;
  for (int j = 1; j <= n; ++j) {
    int count = 0;
    for (const auto& r : rows) count += r.passes >= j ? 1 : 0;
    fractions[j - 1] = static_cast<double>(count) / static_cast<double>(rows.size());
  }
  return fractions;
}

int transfer_test(const ModelOracle& model, const AttackSequence& seq, const ProblemRecord& record,
                  const PromptSpace& holdout, int n, uint64_t seed,
                  const PromptSpace* generation_space, bool allow_overlap,
                  InjectStrategy strategy) {
  if (generation_space && !allow_overlap && !spaces_disjoint(*generation_space, holdout)) {
    raise("overlap-detected", "holdout space shares entries with the generation space");
  }
  if (n <= 0) return 0;
  Rng rng(Rng::mix_seed(seed, fnv1a64(record.id)));
  const auto inputs = sample_inputs(holdout, record.correct_code, n, rng);
  DecodeParams dp;  // greedy
  int passes = 0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    const EmbeddedInput embedded = embed_sequence(inputs[i], record, seq, strategy);
    dp.seed = Rng::mix_seed(seed, i);
    const TokenSeq res = model.generate(embedded.ids, dp);
    if (contains_tvul(model.detokenize(res), record)) ++passes;
  }
  return passes;
}

TransferReport run_transfer(const ModelOracle& model, const AttackReport& report,
                            const Corpus& corpus, const PromptSpace& holdout, int n, uint64_t seed,
                            const PromptSpace* generation_space, InjectStrategy strategy) {
  TransferReport out;
  out.n = n;
  for (const auto& row : report.rows) {
    if (!row.success || row.final_seq.empty()) continue;
    const ProblemRecord* record = nullptr;
    for (const auto& r : corpus.records) {
      if (r.id == row.id) record = &r;
    }
    if (!record) continue;
    AttackSequence seq{row.final_seq};
    TransferRow tr;
    tr.id = row.id;
    tr.passes = transfer_test(model, seq, *record, holdout, n, seed, generation_space,
                              /*allow_overlap=*/false, strategy);
    out.rows.push_back(tr);
  }
  return out;
}

std::pair<AttackReport, TransferReport> ablation_phase1_only(
    const Corpus& corpus, const ModelOracle& model, const PromptSpace& space,
    const AttackParams& params, const PromptSpace& holdout, int n_holdout, uint64_t transfer_seed,
    int workers) {
  AttackReport report = run_records(corpus, model, space, params, workers, /*phase1_only=*/true);
  TransferReport transfer =
      run_transfer(model, report, corpus, holdout, n_holdout, transfer_seed, &space,
                   params.strategy);
  return {std::move(report), std::move(transfer)};
}

AttackReport ablation_renaming(const Corpus& corpus, const ModelOracle& model,
                               const PromptSpace& space, const AttackParams& params, int workers) {
  AttackParams renamed = params;
  renamed.strategy = InjectStrategy::rename;
  return run_records(corpus, model, space, renamed, workers, /*phase1_only=*/false);
}

std::vector<Page> load_pages(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise("file-missing", "cannot open page store " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  json doc;
  try {
    doc = json::parse(buf.str());
  } catch (const json::exception& e) {
    raise("malformed-document", std::string("page store is not valid JSON: ") + e.what());
  }
  std::vector<Page> pages;
  for (const auto& jp : doc) {
    pages.push_back({jp.at("title").get<std::string>(), jp.at("body").get<std::string>()});
  }
  return pages;
}

SimulationOutcome simulate_assistant(const std::string& query, const std::vector<Page>& pages,
                                     const ModelOracle& model, const PromptSpace& space,
                                     uint64_t seed, const DecodeParams& decode) {
  if (pages.empty()) raise("validation-failure", "page store is empty");
  const auto qwords = content_words(query);
  int best = -1;
  double best_score = 0.0;
  for (size_t i = 0; i < pages.size(); ++i) {
    const double score = jaccard(qwords, content_words(pages[i].title + " " + pages[i].body));
    if (score > best_score) {
      best_score = score;
      best = static_cast<int>(i);
    }
  }
  if (best < 0 || best_score <= 0.0) {
    raise("no-relevant-page", "no page shares a content word with the query");
  }

  Rng rng(seed);
  const int ti = rng.next_index(static_cast<int>(space.templates.size()));
  const int ii = rng.next_index(static_cast<int>(space.instructions.size()));
  AssembledInput input =
      assemble(space.templates[ti], space.instructions[ii], query, pages[best].body);
  input.choice.template_index = ti;
  input.choice.instruction_index = ii;

  SimulationOutcome out;
  out.page_index = best;
  out.page_title = pages[best].title;
  out.choice = input.choice;
  out.input_text = input.text;
  const TokenSeq res = model.generate(encode_prompt(input.text), decode);
  out.response = model.detokenize(res);
  return out;
}

namespace {

json aggregates_to_json(const SuiteAggregates& agg) {
  json j;
  j["records"] = agg.records;
  if (agg.asr_defined) {
    j["asr"] = agg.asr;
  } else {
    j["asr"] = nullptr;
    j["asr_undefined"] = true;
  }
  j["asr_by_class"] = agg.asr_by_class;
  j["count_by_class"] = agg.count_by_class;
  j["mean_iterations"] = agg.mean_iterations;
  j["mean_input_tokens"] = agg.mean_input;
  j["mean_response_tokens"] = agg.mean_res;
  j["mean_seq_tokens"] = agg.mean_seq;
  return j;
}

}  // namespace

std::string report_to_json_text(const AttackReport& report) {
  json doc;
  doc["schema_version"] = 1;
  doc["kind"] = "attack_report";
  doc["rows"] = json::array();
  for (const auto& r : report.rows) {
    json jr;
    jr["id"] = r.id;
    jr["vuln_class"] = to_string(r.vuln_class);
    jr["success"] = r.success;
    jr["iterations"] = r.iterations;
    jr["input_tokens"] = r.input_tokens;
    jr["response_tokens"] = r.res_tokens;
    jr["seq_tokens"] = r.seq_tokens;
    jr["seq_token_ids"] = r.final_seq;
    jr["seq_text"] = r.seq_text;
    if (!r.error.empty()) jr["error"] = r.error;
    doc["rows"].push_back(jr);
  }
  doc["aggregates"] = aggregates_to_json(report.aggregates());
  // seq_text may hold a mutated fragment of a multi-byte character; the ids
  // stay exact, the text field degrades to U+FFFD.
  return doc.dump(2, ' ', false, json::error_handler_t::replace) + "\n";
}

std::string transfer_to_json_text(const TransferReport& report) {
  json doc;
  doc["schema_version"] = 1;
  doc["kind"] = "transfer_report";
  doc["holdout_inputs"] = report.n;
  doc["rows"] = json::array();
  for (const auto& r : report.rows) {
    doc["rows"].push_back({{"id", r.id}, {"passes", r.passes}});
  }
  doc["fraction_at_least"] = report.fraction_at_least();
  return doc.dump(2) + "\n";
}

void save_report(const AttackReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise("file-missing", "cannot write report " + path);
  out << report_to_json_text(report);
}

void save_transfer(const TransferReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise("file-missing", "cannot write report " + path);
  out << transfer_to_json_text(report);
}

}  // namespace refforge
