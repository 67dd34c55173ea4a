#include "refforge/model_oracle.hpp"

#include "refforge/errors.hpp"

namespace refforge {

TokenSeq byte_tokenize(std::string_view text) {
  TokenSeq ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(static_cast<TokenId>(c));
  return ids;
}

std::string byte_detokenize(const TokenSeq& ids) {
  std::string out;
  out.reserve(ids.size());
  for (TokenId id : ids) {
    if (id >= 0 && id < kByteTokens) out.push_back(static_cast<char>(id));
  }
  return out;
}

TokenSeq encode_prompt(std::string_view text) {
  TokenSeq ids;
  ids.reserve(text.size() + 1);
  ids.push_back(kBos);
  for (unsigned char c : text) ids.push_back(static_cast<TokenId>(c));
  return ids;
}

TokenSeq encode_completion(std::string_view text) {
  TokenSeq ids = byte_tokenize(text);
  ids.push_back(kEos);
  return ids;
}

std::vector<double> ModelOracle::variant_losses(const TokenSeq& base_ids, int target_begin,
                                                const std::vector<TokenSubst>& variants) const {
  if (target_begin <= 0 || target_begin >= static_cast<int>(base_ids.size())) {
    raise("validation-failure", "target_begin must split the stream");
  }
  std::vector<double> losses;
  losses.reserve(variants.size());
  TokenSeq ids = base_ids;
  for (const auto& var : variants) {
    for (size_t j = 0; j < var.positions.size(); ++j) ids[var.positions[j]] = var.tokens[j];
    const TokenSeq prefix(ids.begin(), ids.begin() + target_begin);
    const TokenSeq target(ids.begin() + target_begin, ids.end());
    losses.push_back(continuation_loss(prefix, target));
    for (size_t j = 0; j < var.positions.size(); ++j) ids[var.positions[j]] = base_ids[var.positions[j]];
  }
  return losses;
}

}  // namespace refforge
