#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace refforge {

using TokenId = int;
using TokenSeq = std::vector<TokenId>;

// Byte-level vocabulary: 256 byte tokens plus four markers.
inline constexpr int kByteTokens = 256;
inline constexpr TokenId kBos = 256;
inline constexpr TokenId kEos = 257;
inline constexpr TokenId kPad = 258;
inline constexpr TokenId kSep = 259;
inline constexpr int kVocabSize = 260;

TokenSeq byte_tokenize(std::string_view text);
// Marker tokens render to nothing, so detokenize(tokenize(t)) == t.
std::string byte_detokenize(const TokenSeq& ids);

enum class DecodeMode { greedy, sample };

struct DecodeParams {
  DecodeMode mode = DecodeMode::greedy;
  double temperature = 1.0;  // sample mode only; must be > 0
  uint64_t seed = 0;
  int max_new_tokens = 256;
};

// Row r = d(loss)/d(one-hot input at queried position r), one column per
// vocabulary entry.
struct GradientMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  GradientMatrix() = default;
  GradientMatrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}
  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
  const double* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }
};

// A variant of a base token stream: tokens[i] replaces the token at
// positions[i]. Lets implementations score many near-identical streams
// while sharing the untouched prefix.
struct TokenSubst {
  std::vector<int> positions;
  TokenSeq tokens;
};

// The capability contract the attack needs from a language model. Anything
// that can tokenize, score a teacher-forced continuation, expose one-hot
// input gradients and decode can be attacked.
class ModelOracle {
 public:
  virtual ~ModelOracle() = default;

  virtual int vocab_size() const = 0;
  virtual int context_limit() const = 0;

  virtual TokenSeq tokenize(std::string_view text) const = 0;
  virtual std::string detokenize(const TokenSeq& ids) const = 0;

  // Logits over the vocabulary for the token following `prefix`.
  virtual std::vector<double> next_logits(const TokenSeq& prefix) const = 0;

  // Sum over target positions of cross-entropy between the teacher-forced
  // next-token distribution and the target token.
  virtual double continuation_loss(const TokenSeq& prefix, const TokenSeq& target) const = 0;

  // Exact reverse-mode gradient of continuation_loss with respect to the
  // one-hot encoding of each listed prefix position.
  virtual GradientMatrix onehot_gradient(const TokenSeq& prefix, const TokenSeq& target,
                                         const std::vector<int>& positions) const = 0;

  virtual TokenSeq generate(const TokenSeq& prefix, const DecodeParams& params) const = 0;

  // Loss of each variant of base_ids, scored over [target_begin, end).
  // The base implementation walks the variants one by one.
  virtual std::vector<double> variant_losses(const TokenSeq& base_ids, int target_begin,
                                             const std::vector<TokenSubst>& variants) const;
};

// [BOS] + bytes(text): the prompt encoding shared by training and attacks.
TokenSeq encode_prompt(std::string_view text);
// bytes(text) + [EOS]: the completion encoding.
TokenSeq encode_completion(std::string_view text);

}  // namespace refforge
