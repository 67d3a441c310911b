#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace neuroaudit {

using TokenId = std::int32_t;

// Half-open byte range [begin, end) into the encoded text.
struct ByteRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool operator==(const ByteRange&) const = default;
};

struct Encoding {
  std::vector<TokenId> ids;
  // offsets[i] is the slice of the input text covered by ids[i]; the ranges
  // partition the input in order.
  std::vector<ByteRange> offsets;
};

// GPT-2 style byte-level BPE. Every byte maps to a printable code point
// before merging, so any byte string is encodable once the 256 byte symbols
// are in the vocabulary (checked at load).
class Tokenizer {
 public:
  static Tokenizer load(const std::filesystem::path& vocab_json, const std::filesystem::path& merges_txt);
  static Tokenizer from_strings(std::string_view vocab_json, std::string_view merges_txt);

  Encoding encode(std::string_view text) const;
  std::string decode(const std::vector<TokenId>& ids) const;

  // Raw bytes of a single token.
  std::string token_bytes(TokenId id) const;
  // Vocabulary spelling (byte-to-unicode form, e.g. "Ġ2000").
  const std::string& token_symbol(TokenId id) const;

  std::size_t vocab_size() const { return id_to_symbol_.size(); }
  TokenId max_id() const { return max_id_; }

  // The pre-tokenization pieces as byte ranges; exposed for tests.
  static std::vector<ByteRange> pretokenize(std::string_view text);

 private:
  std::vector<TokenId> bpe(std::string_view piece, std::vector<std::size_t>& lengths) const;

  std::unordered_map<std::string, TokenId> symbol_to_id_;
  std::vector<std::string> id_to_symbol_;
  std::unordered_map<std::string, std::size_t> merge_rank_;
  std::array<std::string, 256> byte_symbol_;
  std::unordered_map<std::string, unsigned char> symbol_byte_;
  TokenId max_id_ = -1;
};

// The byte -> code point table used by GPT-2's vocabulary files, as UTF-8.
std::array<std::string, 256> byte_to_unicode_table();

}  // namespace neuroaudit
