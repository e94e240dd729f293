#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "zerorl/errors.hpp"

namespace zerorl {

using TokenId = int;

inline constexpr std::string_view kBos = "<bos>";
inline constexpr std::string_view kEos = "<eos>";
inline constexpr std::string_view kAnsOpen = "<ans>";
inline constexpr std::string_view kAnsClose = "</ans>";
inline constexpr std::size_t kMaxVocab = 64;

class Vocabulary {
 public:
  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.size() > kMaxVocab) throw InputError("vocabulary larger than 64 tokens");
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (tokens_[i].empty()) throw InputError("empty token string");
      if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second)
        throw InputError("duplicate token '" + tokens_[i] + "'");
    }
    bos_ = require(kBos);
    eos_ = require(kEos);
    ans_open_ = require(kAnsOpen);
    ans_close_ = require(kAnsClose);
    for (const auto& t : tokens_) max_len_ = std::max(max_len_, t.size());
  }

  // Specials, digits, the arithmetic operators and space.
  static const Vocabulary& standard() {
    static const Vocabulary v({std::string(kBos), std::string(kEos), std::string(kAnsOpen),
                               std::string(kAnsClose), "0", "1", "2", "3", "4", "5", "6", "7",
                               "8", "9", "+", "-", "*", "(", ")", "=", " "});
    return v;
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  TokenId bos() const { return bos_; }
  TokenId eos() const { return eos_; }
  TokenId ans_open() const { return ans_open_; }
  TokenId ans_close() const { return ans_close_; }

  bool contains(std::string_view tok) const { return index_.count(std::string(tok)) != 0; }

  TokenId id(std::string_view tok) const {
    auto it = index_.find(std::string(tok));
    if (it == index_.end()) throw InputError("unknown token '" + std::string(tok) + "'");
    return it->second;
  }

  // Longest-match tokenization. Throws InputError on the first character
  // that no token covers.
  std::vector<TokenId> encode(std::string_view text) const {
    std::vector<TokenId> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
      bool matched = false;
      for (std::size_t len = std::min(max_len_, text.size() - pos); len > 0; --len) {
        auto it = index_.find(std::string(text.substr(pos, len)));
        if (it != index_.end()) {
          out.push_back(it->second);
          pos += len;
          matched = true;
          break;
        }
      }
      if (!matched)
        throw InputError("unrepresentable character '" + std::string(1, text[pos]) +
                         "' at offset " + std::to_string(pos));
    }
    return out;
  }

  // BOS and EOS are dropped; everything else is concatenated verbatim.
  std::string decode(const std::vector<TokenId>& ids) const {
    std::string out;
    for (TokenId id : ids) {
      if (id == bos_ || id == eos_) continue;
      out += token(id);
    }
    return out;
  }

 private:
  TokenId require(std::string_view tok) const {
    auto it = index_.find(std::string(tok));
    if (it == index_.end()) throw InputError("vocabulary lacks '" + std::string(tok) + "'");
    return it->second;
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId bos_ = 0, eos_ = 0, ans_open_ = 0, ans_close_ = 0;
  std::size_t max_len_ = 1;
};

}  // namespace zerorl
