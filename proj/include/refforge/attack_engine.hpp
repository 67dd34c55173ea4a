#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "refforge/corpus.hpp"
#include "refforge/injector.hpp"
#include "refforge/model_oracle.hpp"
#include "refforge/prompt_space.hpp"
#include "refforge/rng.hpp"

namespace refforge {

struct AttackParams {
  int max_step = 500;
  int k = 3;             // random assembled inputs per enhancement iteration
  int m = 64;            // mutation candidates per iteration
  int top_k = 32;        // score-ranked replacement pool per position
  int seq_len = 33;
  int success_trials = 3;  // collapses to 1 under greedy decoding
  uint64_t seed = 0;
  DecodeParams decode;
  InjectStrategy strategy = InjectStrategy::comment;
  bool shared_budget = false;  // phase 2 runs on phase 1's leftover budget
};

void check_params(const AttackParams& params, int vocab);

// Fixed-length token sequence under optimization; mutation only substitutes.
struct AttackSequence {
  TokenSeq tokens;
};

struct IterationRecord {
  int phase = 0;
  int iteration = 0;  // 1-based within the whole attack
  double loss = 0.0;
  bool success = false;
};

struct AttackTrace {
  std::vector<IterationRecord> iterations;
  int iterations_used = 0;
  double wall_seconds = 0.0;
  bool success = false;
};

// An assembled input with the sequence embedded, tokenized, plus the token
// positions each sequence byte occupies (several per byte under renaming).
struct EmbeddedInput {
  TokenSeq ids;  // BOS + bytes of the assembled text
  std::vector<std::vector<int>> seq_positions;
  std::string text;
};

// Mutations draw replacements from printable ASCII so the embedded comment
// stays on one line and artifacts stay renderable.
bool seq_token_allowed(TokenId id);

// bytes(vulnerable code) + end marker when the vocabulary has one.
TokenSeq attack_target(const ProblemRecord& record, int vocab);

// Replacement-snippet tokens at a random offset, the rest random printable
// bytes.
AttackSequence init_sequence(const VulnEdit& edit, const AttackParams& params, Rng& rng);

EmbeddedInput embed_sequence(const AssembledInput& input, const ProblemRecord& record,
                             const AttackSequence& seq, InjectStrategy strategy);

// m sequences, each one substitution away from seq; replacement tokens come
// from the top_k score ranking (score = one-hot minus gradient, the current
// token excluded so every candidate really mutates).
std::vector<AttackSequence> mutate_candidates(const AttackSequence& seq, const GradientMatrix& grad,
                                              const AttackParams& params, Rng& rng);

// Per-sequence-token gradient rows, occurrence-summed, for one input.
GradientMatrix sequence_gradient(const ModelOracle& model, const EmbeddedInput& input,
                                 const TokenSeq& target);

struct Selection {
  int index = 0;
  double loss = 0.0;
};

// Candidate with the lowest summed continuation loss over all inputs, each
// input re-embedded per candidate; ties break to the lowest index.
Selection select_best(const ModelOracle& model, const std::vector<AssembledInput>& inputs,
                      const ProblemRecord& record, const std::vector<AttackSequence>& candidates,
                      const TokenSeq& target, InjectStrategy strategy);

// True iff every input's response contains the target vulnerability on every
// trial. Greedy decoding collapses trials to one.
bool success_check(const ModelOracle& model, const std::vector<EmbeddedInput>& inputs,
                   const ProblemRecord& record, int trials, const DecodeParams& decode,
                   uint64_t salt = 0);

struct PhaseOutcome {
  AttackSequence seq;
  AttackTrace trace;
};

// Gradient-guided search against the one fixed assembled input
// (first template, first instruction, first query).
PhaseOutcome phase1(const ModelOracle& model, const PromptSpace& space,
                    const ProblemRecord& record, const AttackParams& params);

// Enhancement over k fresh random inputs per iteration; the gradient and
// selection reuse the inputs sampled in the previous iteration.
PhaseOutcome phase2(const ModelOracle& model, const PromptSpace& space,
                    const ProblemRecord& record, const AttackSequence& preliminary,
                    const AttackParams& params, int budget, int iteration_base);

struct AttackOutcome {
  AttackSequence seq;
  AttackTrace trace;
  bool success = false;
  int iterations_total = 0;
};

AttackOutcome run_attack(const ModelOracle& model, const PromptSpace& space,
                         const ProblemRecord& record, const AttackParams& params);

}  // namespace refforge
