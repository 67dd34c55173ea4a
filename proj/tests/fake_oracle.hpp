#pragma once

#include <string>
#include <utility>
#include <vector>

#include "refforge/model_oracle.hpp"

namespace refforge::testing {

// Deterministic stand-in oracle: generation is scripted by substring match
// on the detokenized prefix, losses are a cheap hash of the stream.
class ScriptedOracle : public ModelOracle {
 public:
  std::vector<std::pair<std::string, std::string>> script;  // needle -> response
  std::string default_response;
  mutable int generate_calls = 0;

  int vocab_size() const override { return kVocabSize; }
  int context_limit() const override { return 1 << 20; }
  TokenSeq tokenize(std::string_view text) const override { return byte_tokenize(text); }
  std::string detokenize(const TokenSeq& ids) const override { return byte_detokenize(ids); }

  std::vector<double> next_logits(const TokenSeq&) const override {
    return std::vector<double>(kVocabSize, 0.0);
  }

  double continuation_loss(const TokenSeq& prefix, const TokenSeq& target) const override {
    uint64_t h = 1469598103934665603ULL;
    for (TokenId id : prefix) {
      h ^= static_cast<uint64_t>(id);
      h *= 1099511628211ULL;
    }
    for (TokenId id : target) {
      h ^= static_cast<uint64_t>(id);
      h *= 1099511628211ULL;
    }
    return static_cast<double>(h % 100000) / 1000.0;
  }

  GradientMatrix onehot_gradient(const TokenSeq&, const TokenSeq&,
                                 const std::vector<int>& positions) const override {
    return GradientMatrix(static_cast<int>(positions.size()), kVocabSize);
  }

  TokenSeq generate(const TokenSeq& prefix, const DecodeParams&) const override {
    ++generate_calls;
    const std::string text = byte_detokenize(prefix);
    for (const auto& [needle, response] : script) {
      if (needle.empty() || text.find(needle) != std::string::npos) {
        return byte_tokenize(response);
      }
    }
    return byte_tokenize(default_response);
  }
};

}  // namespace refforge::testing
