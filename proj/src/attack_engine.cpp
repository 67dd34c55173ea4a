#include "refforge/attack_engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "refforge/errors.hpp"
#include "refforge/vuln_detector.hpp"

namespace refforge {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

bool seq_token_allowed(TokenId id) { return id >= 32 && id <= 126; }

void check_params(const AttackParams& p, int vocab) {
  if (p.max_step < 1) raise("validation-failure", "max_step must be >= 1");
  if (p.k < 1) raise("validation-failure", "k must be >= 1");
  if (p.m < 1) raise("validation-failure", "m must be >= 1");
  if (p.top_k < 1 || p.top_k > vocab) raise("validation-failure", "top_k must be in [1, vocab]");
  if (p.seq_len < 1) raise("validation-failure", "seq_len must be >= 1");
  if (p.success_trials < 1) raise("validation-failure", "success_trials must be >= 1");
  if (p.decode.mode == DecodeMode::sample && !(p.decode.temperature > 0.0)) {
    raise("validation-failure", "sample decoding needs temperature > 0");
  }
}

TokenSeq attack_target(const ProblemRecord& record, int vocab) {
  TokenSeq ids = byte_tokenize(apply_edit(record.correct_code, record.edit));
  if (kEos < vocab) ids.push_back(kEos);
  return ids;
}

AttackSequence init_sequence(const VulnEdit& edit, const AttackParams& params, Rng& rng) {
  const TokenSeq diff = byte_tokenize(edit.replacement);
  if (static_cast<size_t>(params.seq_len) < diff.size()) {
    raise("seq-too-short", "seq_len " + std::to_string(params.seq_len) +
                               " cannot hold the " + std::to_string(diff.size()) +
                               "-token edit replacement");
  }
  AttackSequence seq;
  seq.tokens.assign(params.seq_len, 0);
  const int slots = params.seq_len - static_cast<int>(diff.size()) + 1;
  const int offset = rng.next_index(slots);
  for (int i = 0; i < params.seq_len; ++i) {
    if (i >= offset && i < offset + static_cast<int>(diff.size())) {
      seq.tokens[i] = diff[i - offset];
    } else {
      seq.tokens[i] = 32 + rng.next_index(95);
    }
  }
  return seq;
}

EmbeddedInput embed_sequence(const AssembledInput& input, const ProblemRecord& record,
                             const AttackSequence& seq, InjectStrategy strategy) {
  const std::string seq_text = byte_detokenize(seq.tokens);
  CraftedReference crafted;
  if (strategy == InjectStrategy::comment) {
    crafted = insert_comment(record.correct_code, comment_syntax_for(record.language),
                             record.anchor_line, seq_text);
  } else {
    // The embedded identifier sanitizes per byte; a leading digit grows it
    // by one '_' at the front.
    crafted = rename_variable(record.correct_code, record.language,
                              rename_target_identifier(record), seq_text);
  }

  EmbeddedInput out;
  out.text.reserve(input.text.size() + crafted.text.size());
  out.text.append(input.text, 0, input.reference_offset);
  const size_t ref_at = out.text.size();
  out.text += crafted.text;
  out.text.append(input.text, input.reference_offset + input.reference_used.size(),
                  std::string::npos);
  out.ids = encode_prompt(out.text);

  const int n = static_cast<int>(seq.tokens.size());
  out.seq_positions.assign(n, {});
  const int bos_shift = 1;
  if (strategy == InjectStrategy::comment) {
    for (int i = 0; i < n; ++i) {
      out.seq_positions[i].push_back(
          static_cast<int>(bos_shift + ref_at + crafted.seq_begin + i));
    }
  } else {
    const int pad = static_cast<int>(crafted.injected_identifier.size()) - n;
    for (size_t occ : crafted.occurrence_offsets) {
      for (int i = 0; i < n; ++i) {
        out.seq_positions[i].push_back(static_cast<int>(bos_shift + ref_at + occ + pad + i));
      }
    }
  }
  return out;
}

std::vector<AttackSequence> mutate_candidates(const AttackSequence& seq, const GradientMatrix& grad,
                                              const AttackParams& params, Rng& rng) {
  const int n = static_cast<int>(seq.tokens.size());
  if (grad.rows != n) raise("validation-failure", "gradient rows do not match sequence length");

  std::vector<AttackSequence> out;
  out.reserve(params.m);
  std::vector<std::pair<double, TokenId>> ranked;
  for (int c = 0; c < params.m; ++c) {
    const int pos = rng.next_index(n);
    const TokenId cur = seq.tokens[pos];
    ranked.clear();
    for (TokenId v = 0; v < grad.cols; ++v) {
      if (!seq_token_allowed(v) || v == cur) continue;
      // score = one-hot - gradient; off the current token the one-hot term
      // is zero, so ranking by -gradient keeps loss moving downhill.
      ranked.emplace_back(-grad.at(pos, v), v);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    const int pool = std::min<int>(params.top_k, static_cast<int>(ranked.size()));
    const TokenId pick = ranked[rng.next_index(pool)].second;
    AttackSequence cand = seq;
    cand.tokens[pos] = pick;
    out.push_back(std::move(cand));
  }
  return out;
}

GradientMatrix sequence_gradient(const ModelOracle& model, const EmbeddedInput& input,
                                 const TokenSeq& target) {
  std::vector<int> flat;
  std::vector<int> row_of;
  for (size_t i = 0; i < input.seq_positions.size(); ++i) {
    for (int p : input.seq_positions[i]) {
      flat.push_back(p);
      row_of.push_back(static_cast<int>(i));
    }
  }
  const GradientMatrix raw = model.onehot_gradient(input.ids, target, flat);
  GradientMatrix reduced(static_cast<int>(input.seq_positions.size()), raw.cols);
  for (size_t r = 0; r < row_of.size(); ++r) {
    const double* src = raw.row(static_cast<int>(r));
    double* dst = &reduced.at(row_of[r], 0);
    for (int c = 0; c < raw.cols; ++c) dst[c] += src[c];
  }
  return reduced;
}

Selection select_best(const ModelOracle& model, const std::vector<AssembledInput>& inputs,
                      const ProblemRecord& record, const std::vector<AttackSequence>& candidates,
                      const TokenSeq& target, InjectStrategy strategy) {
  if (candidates.empty()) raise("validation-failure", "select_best needs candidates");
  std::vector<double> total(candidates.size(), 0.0);

  for (const auto& input : inputs) {
    std::vector<EmbeddedInput> embeds;
    embeds.reserve(candidates.size());
    for (const auto& cand : candidates) {
      embeds.push_back(embed_sequence(input, record, cand, strategy));
    }
    const EmbeddedInput& base = embeds.front();
    TokenSeq stream = base.ids;
    stream.insert(stream.end(), target.begin(), target.end());
    const int target_begin = static_cast<int>(base.ids.size());

    std::vector<TokenSubst> variants(candidates.size());
    std::vector<int> standalone;
    for (size_t i = 0; i < embeds.size(); ++i) {
      if (embeds[i].ids.size() != base.ids.size()) {
        standalone.push_back(static_cast<int>(i));
        continue;
      }
      TokenSubst& sub = variants[i];
      for (size_t p = 0; p < base.ids.size(); ++p) {
        if (embeds[i].ids[p] != base.ids[p]) {
          sub.positions.push_back(static_cast<int>(p));
          sub.tokens.push_back(embeds[i].ids[p]);
        }
      }
    }
    const std::vector<double> losses = model.variant_losses(stream, target_begin, variants);
    for (size_t i = 0; i < losses.size(); ++i) total[i] += losses[i];
    for (int i : standalone) {
      total[i] += model.continuation_loss(embeds[i].ids, target) - losses[i];
    }
  }

  Selection sel{0, total[0]};
  for (size_t i = 1; i < total.size(); ++i) {
    if (total[i] < sel.loss) {
      sel.loss = total[i];
      sel.index = static_cast<int>(i);
    }
  }
  return sel;
}

bool success_check(const ModelOracle& model, const std::vector<EmbeddedInput>& inputs,
                   const ProblemRecord& record, int trials, const DecodeParams& decode,
                   uint64_t salt) {
  const int n_trials = decode.mode == DecodeMode::greedy ? 1 : trials;
  for (size_t i = 0; i < inputs.size(); ++i) {
    for (int t = 0; t < n_trials; ++t) {
      DecodeParams dp = decode;
      dp.seed = Rng::mix_seed(decode.seed ^ salt, i * static_cast<size_t>(n_trials) + t);
      const TokenSeq res = model.generate(inputs[i].ids, dp);
      if (!contains_tvul(model.detokenize(res), record)) return false;
    }
  }
  return true;
}

namespace {

double current_loss(const ModelOracle& model, const std::vector<AssembledInput>& inputs,
                    const ProblemRecord& record, const AttackSequence& seq, const TokenSeq& target,
                    InjectStrategy strategy) {
  return select_best(model, inputs, record, {seq}, target, strategy).loss;
}

}  // namespace

PhaseOutcome phase1(const ModelOracle& model, const PromptSpace& space,
                    const ProblemRecord& record, const AttackParams& params) {
  check_params(params, model.vocab_size());
  const auto t0 = Clock::now();
  Rng rng(Rng::mix_seed(params.seed, fnv1a64("phase1")));

  const AssembledInput fixed = assemble_at(space, 0, 0, 0, record.correct_code);
  const TokenSeq target = attack_target(record, model.vocab_size());

  PhaseOutcome out;
  out.seq = init_sequence(record.edit, params, rng);
  double loss = current_loss(model, {fixed}, record, out.seq, target, params.strategy);

  for (int iter = 1; iter <= params.max_step; ++iter) {
    const EmbeddedInput embedded = embed_sequence(fixed, record, out.seq, params.strategy);
    const bool ok = success_check(model, {embedded}, record, params.success_trials, params.decode,
                                  static_cast<uint64_t>(iter));
    out.trace.iterations.push_back({1, iter, loss, ok});
    out.trace.iterations_used = iter;
    if (ok) {
      out.trace.success = true;
      break;
    }
    const GradientMatrix grad = sequence_gradient(model, embedded, target);
    std::vector<AttackSequence> cands = mutate_candidates(out.seq, grad, params, rng);
    cands.push_back(out.seq);  // incumbent inclusion keeps the best loss monotone
    const Selection sel = select_best(model, {fixed}, record, cands, target, params.strategy);
    out.seq = cands[sel.index];
    loss = sel.loss;
  }
  out.trace.wall_seconds = seconds_since(t0);
  return out;
}

PhaseOutcome phase2(const ModelOracle& model, const PromptSpace& space,
                    const ProblemRecord& record, const AttackSequence& preliminary,
                    const AttackParams& params, int budget, int iteration_base) {
  check_params(params, model.vocab_size());
  const auto t0 = Clock::now();
  Rng rng(Rng::mix_seed(params.seed, fnv1a64("phase2")));
  const TokenSeq target = attack_target(record, model.vocab_size());

  PhaseOutcome out;
  out.seq = preliminary;

  std::vector<AssembledInput> prev_inputs;
  for (int iter = 1; iter <= budget; ++iter) {
    std::vector<AssembledInput> cur_inputs =
        sample_inputs(space, record.correct_code, params.k, rng);
    std::vector<EmbeddedInput> embedded;
    embedded.reserve(cur_inputs.size());
    for (const auto& in : cur_inputs) {
      embedded.push_back(embed_sequence(in, record, out.seq, params.strategy));
    }
    const bool ok = success_check(model, embedded, record, params.success_trials, params.decode,
                                  (static_cast<uint64_t>(iter) << 8) | 2u);
    if (ok) {
      const double loss = current_loss(model, cur_inputs, record, out.seq, target, params.strategy);
      out.trace.iterations.push_back({2, iteration_base + iter, loss, true});
      out.trace.iterations_used = iter;
      out.trace.success = true;
      break;
    }

    // Gradient and selection run on the inputs sampled in the previous
    // iteration; the first iteration has none and uses the current sample.
    const std::vector<AssembledInput>& score_inputs = prev_inputs.empty() ? cur_inputs : prev_inputs;
    GradientMatrix grad(static_cast<int>(out.seq.tokens.size()), model.vocab_size());
    for (const auto& in : score_inputs) {
      const GradientMatrix g =
          sequence_gradient(model, embed_sequence(in, record, out.seq, params.strategy), target);
      for (size_t i = 0; i < grad.data.size(); ++i) grad.data[i] += g.data[i];
    }
    std::vector<AttackSequence> cands = mutate_candidates(out.seq, grad, params, rng);
    cands.push_back(out.seq);
    const Selection sel = select_best(model, score_inputs, record, cands, target, params.strategy);
    out.seq = cands[sel.index];
    out.trace.iterations.push_back({2, iteration_base + iter, sel.loss, false});
    out.trace.iterations_used = iter;
    prev_inputs = std::move(cur_inputs);
  }
  out.trace.wall_seconds = seconds_since(t0);
  return out;
}

AttackOutcome run_attack(const ModelOracle& model, const PromptSpace& space,
                         const ProblemRecord& record, const AttackParams& params) {
  AttackOutcome out;
  PhaseOutcome p1 = phase1(model, space, record, params);

  const int budget2 = params.shared_budget
                          ? std::max(0, params.max_step - p1.trace.iterations_used)
                          : params.max_step;
  PhaseOutcome p2 = phase2(model, space, record, p1.seq, params, budget2,
                           p1.trace.iterations_used);

  out.seq = p2.seq;
  out.trace.iterations = p1.trace.iterations;
  out.trace.iterations.insert(out.trace.iterations.end(), p2.trace.iterations.begin(),
                              p2.trace.iterations.end());
  out.trace.iterations_used = p1.trace.iterations_used + p2.trace.iterations_used;
  out.trace.wall_seconds = p1.trace.wall_seconds + p2.trace.wall_seconds;
  out.trace.success = p2.trace.success;
  out.success = p2.trace.success;
  out.iterations_total = out.trace.iterations_used;
  return out;
}

}  // namespace refforge
