#pragma once

#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "duomodal/errors.hpp"

namespace duomodal {

using TokenSequence = std::vector<std::int64_t>;

constexpr std::int64_t kPadId = 0;
constexpr std::int64_t kMaskId = 1;
constexpr std::int64_t kUnkId = 2;
constexpr std::int64_t kNumSpecialTokens = 3;

// Whitespace tokenizer over a fixed symbol vocabulary. Ids 0..2 are the
// special tokens; content symbols follow in the order the vocabulary lists
// them.
class Tokenizer {
 public:
  Tokenizer() = default;

  explicit Tokenizer(const std::vector<std::string>& symbols) {
    for (const auto& s : symbols) {
      check_data(!s.empty(), "tokenizer: empty vocabulary symbol");
      const auto id =
          static_cast<std::int64_t>(id_of_.size()) + kNumSpecialTokens;
      const bool inserted = id_of_.emplace(s, id).second;
      check_data(inserted, "tokenizer: duplicate vocabulary symbol \"" + s +
                               "\"");
      symbols_.push_back(s);
    }
  }

  std::size_t vocab_size() const {
    return symbols_.size() + kNumSpecialTokens;
  }

  TokenSequence encode(const std::string& line) const {
    TokenSequence out;
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) {
      auto it = id_of_.find(tok);
      out.push_back(it == id_of_.end() ? kUnkId : it->second);
    }
    return out;
  }

  std::string decode(std::int64_t id) const {
    switch (id) {
      case kPadId:
        return "<pad>";
      case kMaskId:
        return "<mask>";
      case kUnkId:
        return "<unk>";
      default:
        break;
    }
    const auto idx = static_cast<std::size_t>(id - kNumSpecialTokens);
    check_contract(idx < symbols_.size(),
                   "tokenizer: id " + std::to_string(id) + " out of range");
    return symbols_[idx];
  }

  std::string decode(const TokenSequence& ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) out += ' ';
      out += decode(ids[i]);
    }
    return out;
  }

  const std::vector<std::string>& content_symbols() const { return symbols_; }

 private:
  std::map<std::string, std::int64_t> id_of_;
  std::vector<std::string> symbols_;
};

}  // namespace duomodal
