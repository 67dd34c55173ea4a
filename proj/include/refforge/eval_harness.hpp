#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "refforge/attack_engine.hpp"
#include "refforge/corpus.hpp"
#include "refforge/model_oracle.hpp"
#include "refforge/prompt_space.hpp"

namespace refforge {

struct RecordResult {
  std::string id;
  VulnClassName vuln_class = VulnClassName::ArrayViolation;
  bool success = false;
  int iterations = 0;
  int input_tokens = 0;
  int res_tokens = 0;
  int seq_tokens = 0;
  std::string seq_text;
  TokenSeq final_seq;
  std::string error;        // non-empty when the record failed to run
  double wall_seconds = 0;  // in-memory only; reports stay byte-deterministic
};

struct SuiteAggregates {
  int records = 0;
  bool asr_defined = false;
  double asr = 0.0;  // over all records, not averaged per class
  std::map<std::string, double> asr_by_class;
  std::map<std::string, int> count_by_class;
  double mean_iterations = 0.0;
  double mean_input = 0.0;
  double mean_res = 0.0;
  double mean_seq = 0.0;
};

struct AttackReport {
  std::vector<RecordResult> rows;
  SuiteAggregates aggregates() const;
};

// phase1 + phase2 per record; per-record failures land in the row, never
// abort the suite. Per-record seeds derive from params.seed and the id, so
// worker scheduling cannot change results.
AttackReport run_suite(const Corpus& corpus, const ModelOracle& model, const PromptSpace& space,
                       const AttackParams& params, int workers = 1);

struct TransferRow {
  std::string id;
  int passes = 0;
};

struct TransferReport {
  int n = 0;  // holdout inputs per record
  std::vector<TransferRow> rows;
  // index j-1 holds the fraction of rows passing at least j of n.
  std::vector<double> fraction_at_least() const;
};

// Embeds seq into n fresh holdout inputs and counts responses containing the
// target vulnerability. When generation_space is given the holdout must be
// disjoint from it ("overlap-detected" otherwise) unless allow_overlap.
int transfer_test(const ModelOracle& model, const AttackSequence& seq, const ProblemRecord& record,
                  const PromptSpace& holdout, int n, uint64_t seed,
                  const PromptSpace* generation_space = nullptr, bool allow_overlap = false,
                  InjectStrategy strategy = InjectStrategy::comment);

// Transfer over the records whose generation succeeded.
TransferReport run_transfer(const ModelOracle& model, const AttackReport& report,
                            const Corpus& corpus, const PromptSpace& holdout, int n, uint64_t seed,
                            const PromptSpace* generation_space = nullptr,
                            InjectStrategy strategy = InjectStrategy::comment);

// The pipeline with phase 2 skipped, plus its transfer numbers.
std::pair<AttackReport, TransferReport> ablation_phase1_only(
    const Corpus& corpus, const ModelOracle& model, const PromptSpace& space,
    const AttackParams& params, const PromptSpace& holdout, int n_holdout, uint64_t transfer_seed,
    int workers = 1);

// The pipeline with the rename embedding strategy.
AttackReport ablation_renaming(const Corpus& corpus, const ModelOracle& model,
                               const PromptSpace& space, const AttackParams& params,
                               int workers = 1);

struct Page {
  std::string title;
  std::string body;
};

std::vector<Page> load_pages(const std::string& path);

struct SimulationOutcome {
  std::string response;
  int page_index = -1;
  std::string page_title;
  ChoiceTuple choice;
  std::string input_text;
};

// Local stand-in for a retrieval-augmented assistant: fetch the best page by
// content-word overlap, assemble one input with its body as the reference,
// generate. Throws "no-relevant-page" when nothing overlaps the query.
SimulationOutcome simulate_assistant(const std::string& query, const std::vector<Page>& pages,
                                     const ModelOracle& model, const PromptSpace& space,
                                     uint64_t seed, const DecodeParams& decode);

std::string report_to_json_text(const AttackReport& report);
std::string transfer_to_json_text(const TransferReport& report);
void save_report(const AttackReport& report, const std::string& path);
void save_transfer(const TransferReport& report, const std::string& path);

}  // namespace refforge
