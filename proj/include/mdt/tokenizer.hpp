#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mdt/errors.hpp"

namespace mdt {

// Padded token ids for a set of comments, one row each.
struct TextBatch {
  std::size_t rows = 0;
  std::size_t max_len = 0;
  std::vector<std::int32_t> ids;  // rows x max_len
  std::vector<std::uint8_t> valid;  // 1 where the position holds a real token

  std::int32_t id(std::size_t r, std::size_t p) const { return ids[r * max_len + p]; }
  bool is_valid(std::size_t r, std::size_t p) const { return valid[r * max_len + p] != 0; }
};

// Word-level vocabulary. Ids 0..3 are reserved; corpus tokens start at 4.
class Tokenizer {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;
  static constexpr std::int32_t kCls = 2;
  static constexpr std::int32_t kSep = 3;
  static constexpr std::int32_t kFirstCorpusId = 4;

  Tokenizer() = default;

  // Lowercases ASCII letters and splits on anything that is not a letter or
  // digit. Bytes >= 0x80 are kept as word characters so UTF-8 words survive.
  static std::vector<std::string> split(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char ch : text) {
      if (std::isalnum(ch) || ch >= 0x80) {
        cur.push_back(static_cast<char>(std::tolower(ch)));
      } else if (!cur.empty()) {
        out.push_back(std::move(cur));
        cur.clear();
      }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
  }

  // Most frequent tokens first; equal counts in lexicographic order.
  static Tokenizer build(const std::vector<std::string>& texts, std::size_t max_vocab = 0, std::size_t min_count = 1) {
    std::map<std::string, std::size_t> counts;
    for (const auto& t : texts)
      for (auto& tok : split(t)) ++counts[tok];
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> tokens;
    for (auto& [tok, c] : ranked) {
      if (c < min_count) continue;
      if (max_vocab && tokens.size() >= max_vocab) break;
      tokens.push_back(tok);
    }
    return from_tokens(std::move(tokens));
  }

  static Tokenizer from_tokens(std::vector<std::string> tokens) {
    Tokenizer t;
    for (auto& tok : tokens) {
      if (tok.empty()) throw DataError("vocabulary contains an empty token");
      const auto id = static_cast<std::int32_t>(t.tokens_.size()) + kFirstCorpusId;
      if (!t.ids_.emplace(tok, id).second) throw DataError("duplicate vocabulary token '" + tok + "'");
      t.tokens_.push_back(std::move(tok));
    }
    return t;
  }

  // Vocabulary file: one token per line; line k (0-based) has id k + 4.
  static Tokenizer load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read vocabulary file " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      tokens.push_back(line);
    }
    return from_tokens(std::move(tokens));
  }

  std::string serialize() const {
    std::string out;
    for (const auto& t : tokens_) out += t + '\n';
    return out;
  }

  static Tokenizer deserialize(const std::string& text) {
    std::vector<std::string> tokens;
    std::size_t start = 0;
    while (start < text.size()) {
      auto end = text.find('\n', start);
      if (end == std::string::npos) end = text.size();
      tokens.push_back(text.substr(start, end - start));
      start = end + 1;
    }
    return from_tokens(std::move(tokens));
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write vocabulary file " + path);
    out << serialize();
  }

  std::size_t vocab_size() const noexcept { return tokens_.size() + kFirstCorpusId; }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  std::int32_t id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
  }

  // [CLS] tokens... [SEP] then padding, truncated so SEP fits in max_len.
  void encode_into(std::string_view text, std::size_t max_len, std::int32_t* ids, std::uint8_t* valid) const {
    if (max_len < 2) throw ConfigError("max_len must be at least 2");
    const auto toks = split(text);
    const std::size_t body = std::min(toks.size(), max_len - 2);
    std::size_t p = 0;
    ids[p] = kCls;
    valid[p++] = 1;
    for (std::size_t i = 0; i < body; ++i) {
      ids[p] = id(toks[i]);
      valid[p++] = 1;
    }
    ids[p] = kSep;
    valid[p++] = 1;
    for (; p < max_len; ++p) {
      ids[p] = kPad;
      valid[p] = 0;
    }
  }

  std::vector<std::int32_t> tokenize(std::string_view text, std::size_t max_len) const {
    std::vector<std::int32_t> ids(max_len);
    std::vector<std::uint8_t> valid(max_len);
    encode_into(text, max_len, ids.data(), valid.data());
    return ids;
  }

  TextBatch encode_batch(const std::vector<std::string>& texts, std::size_t max_len) const {
    TextBatch b;
    b.rows = texts.size();
    b.max_len = max_len;
    b.ids.resize(b.rows * max_len);
    b.valid.resize(b.rows * max_len);
    for (std::size_t r = 0; r < b.rows; ++r) encode_into(texts[r], max_len, &b.ids[r * max_len], &b.valid[r * max_len]);
    return b;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> ids_;
};

}  // namespace mdt
