#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "refforge/model_oracle.hpp"

namespace refforge {

struct TrainParams {
  double learning_rate = 3e-3;
  int epochs = 200;
  int batch_size = 8;
};

struct TinyLMConfig {
  int vocab = kVocabSize;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int context = 512;
  uint64_t param_seed = 1;
  TrainParams training;
};

struct TrainReport {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> epoch_losses;
};

// Pre-LN causal transformer over the byte vocabulary, double precision,
// with hand-written reverse mode: the backward pass reaches both the
// parameters (training) and the one-hot encoded inputs (the attack).
class TinyLM final : public ModelOracle {
 public:
  explicit TinyLM(const TinyLMConfig& config);
  TinyLM(const TinyLM&);
  TinyLM& operator=(const TinyLM&) = delete;
  ~TinyLM() override;

  int vocab_size() const override;
  int context_limit() const override;
  TokenSeq tokenize(std::string_view text) const override;
  std::string detokenize(const TokenSeq& ids) const override;
  std::vector<double> next_logits(const TokenSeq& prefix) const override;
  double continuation_loss(const TokenSeq& prefix, const TokenSeq& target) const override;
  GradientMatrix onehot_gradient(const TokenSeq& prefix, const TokenSeq& target,
                                 const std::vector<int>& positions) const override;
  TokenSeq generate(const TokenSeq& prefix, const DecodeParams& params) const override;

  // Shares the forward state of the common prefix across all variants; big
  // win when variants differ late in the stream.
  std::vector<double> variant_losses(const TokenSeq& base_ids, int target_begin,
                                     const std::vector<TokenSubst>& variants) const override;

  // Probe hook for finite differencing: continuation loss with
  // eps * embedding(vocab_id) added to the input embedding at `position`.
  double continuation_loss_nudged(const TokenSeq& prefix, const TokenSeq& target, int position,
                                  TokenId vocab_id, double eps) const;

  // Teacher-forced training on (prompt, completion) pairs; minimizes the
  // average continuation loss. Throws "divergence" when the final average
  // loss exceeds the initial one.
  TrainReport train(const std::vector<std::pair<std::string, std::string>>& pairs);

  void save(const std::string& path) const;
  static TinyLM load(const std::string& path);

  const TinyLMConfig& config() const { return config_; }
  std::vector<double>& parameters();
  const std::vector<double>& parameters() const;

 private:
  struct Impl;
  TinyLMConfig config_;
  std::unique_ptr<Impl> impl_;
};

TinyLM train_tiny(const TinyLMConfig& config,
                  const std::vector<std::pair<std::string, std::string>>& pairs,
                  TrainReport* report = nullptr);

}  // namespace refforge
