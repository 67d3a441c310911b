#include "neuroaudit/tokenizer.hpp"

#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "neuroaudit/error.hpp"

namespace neuroaudit {
namespace {

enum class CharClass { Letter, Number, Space, Other };

struct CodePoint {
  std::uint32_t value;
  std::size_t begin;
  std::size_t length;
  CharClass cls;
};

std::string utf8_encode(std::uint32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
  return out;
}

bool in(std::uint32_t cp, std::uint32_t lo, std::uint32_t hi) { return cp >= lo && cp <= hi; }

// ASCII is classified exactly as the GPT-2 pattern does. Outside ASCII this
// is a table approximation of \p{L} / \p{N} / \s covering common scripts,
// punctuation blocks and symbols; unlisted code points count as letters.
CharClass classify(std::uint32_t cp) {
  if (cp < 0x80) {
    if ((cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z')) return CharClass::Letter;
    if (cp >= '0' && cp <= '9') return CharClass::Number;
    if (cp == ' ' || in(cp, 0x09, 0x0D) || in(cp, 0x1C, 0x1F)) return CharClass::Space;
    return CharClass::Other;
  }
  if (cp == 0x85 || cp == 0xA0 || cp == 0x1680 || in(cp, 0x2000, 0x200A) || cp == 0x2028 || cp == 0x2029 ||
      cp == 0x202F || cp == 0x205F || cp == 0x3000)
    return CharClass::Space;
  if (cp == 0xB2 || cp == 0xB3 || cp == 0xB9 || in(cp, 0xBC, 0xBE) || in(cp, 0x660, 0x669) ||
      in(cp, 0x6F0, 0x6F9) || in(cp, 0x966, 0x96F) || in(cp, 0xFF10, 0xFF19) || in(cp, 0x2150, 0x218B) ||
      in(cp, 0x2460, 0x249B))
    return CharClass::Number;
  if (cp == 0xAA || cp == 0xB5 || cp == 0xBA) return CharClass::Letter;
  if (in(cp, 0x80, 0xBF) || cp == 0xD7 || cp == 0xF7 || in(cp, 0x2010, 0x2027) || in(cp, 0x2030, 0x205E) ||
      in(cp, 0x20A0, 0x20CF) || in(cp, 0x2190, 0x23FF) || in(cp, 0x2500, 0x27BF) || in(cp, 0x3001, 0x303F) ||
      in(cp, 0xFF01, 0xFF0F) || in(cp, 0xFF1A, 0xFF20) || in(cp, 0x1F000, 0x1FAFF) || in(cp, 0xFE00, 0xFE0F))
    return CharClass::Other;
  return CharClass::Letter;
}

bool continuation(unsigned char c) { return (c & 0xC0) == 0x80; }

// Lenient UTF-8 scan: invalid sequences become one-byte "Other" units so the
// pieces still cover every byte.
std::vector<CodePoint> scan_utf8(std::string_view text) {
  std::vector<CodePoint> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      len = 1;
      cp = c;
    } else if (c >= 0xC2 && c <= 0xDF) {
      len = 2;
      cp = c & 0x1F;
    } else if (c >= 0xE0 && c <= 0xEF) {
      len = 3;
      cp = c & 0x0F;
    } else if (c >= 0xF0 && c <= 0xF4) {
      len = 4;
      cp = c & 0x07;
    }
    bool valid = len > 0 && i + len <= text.size();
    for (std::size_t k = 1; valid && k < len; ++k) {
      const auto cc = static_cast<unsigned char>(text[i + k]);
      if (!continuation(cc)) valid = false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    if (valid && ((len == 3 && cp < 0x800) || (len == 4 && (cp < 0x10000 || cp > 0x10FFFF)) ||
                  in(cp, 0xD800, 0xDFFF)))
      valid = false;
    if (!valid) {
      out.push_back({c, i, 1, CharClass::Other});
      ++i;
      continue;
    }
    out.push_back({cp, i, len, classify(cp)});
    i += len;
  }
  return out;
}

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead & 0xE0) == 0xC0) return 2;
  if ((lead & 0xF0) == 0xE0) return 3;
  return 4;
}

std::string merge_key(const std::string& a, const std::string& b) { return a + ' ' + b; }

}  // namespace

std::array<std::string, 256> byte_to_unicode_table() {
  std::array<std::string, 256> table;
  std::array<bool, 256> printable{};
  for (int b = '!'; b <= '~'; ++b) printable[b] = true;
  for (int b = 0xA1; b <= 0xAC; ++b) printable[b] = true;
  for (int b = 0xAE; b <= 0xFF; ++b) printable[b] = true;
  std::uint32_t next = 256;
  for (int b = 0; b < 256; ++b) table[b] = utf8_encode(printable[b] ? static_cast<std::uint32_t>(b) : next++);
  return table;
}

std::vector<ByteRange> Tokenizer::pretokenize(std::string_view text) {
  const auto cps = scan_utf8(text);
  const std::size_t n = cps.size();
  std::vector<ByteRange> pieces;
  auto end_of = [&](std::size_t idx) { return idx < n ? cps[idx].begin : text.size(); };
  auto is_ascii = [&](std::size_t idx, char ch) { return idx < n && cps[idx].value == static_cast<unsigned char>(ch) && cps[idx].length == 1; };

  std::size_t i = 0;
  while (i < n) {
    // 's 't 're 've 'm 'll 'd
    if (is_ascii(i, '\'')) {
      std::size_t len = 0;
      if (is_ascii(i + 1, 's') || is_ascii(i + 1, 't') || is_ascii(i + 1, 'm') || is_ascii(i + 1, 'd'))
        len = 2;
      else if ((is_ascii(i + 1, 'r') && is_ascii(i + 2, 'e')) || (is_ascii(i + 1, 'v') && is_ascii(i + 2, 'e')) ||
               (is_ascii(i + 1, 'l') && is_ascii(i + 2, 'l')))
        len = 3;
      if (len > 0) {
        pieces.push_back({cps[i].begin, end_of(i + len)});
        i += len;
        continue;
      }
    }
    // optional single space, then a run of one class
    std::size_t j = i;
    if (is_ascii(i, ' ') && i + 1 < n && cps[i + 1].cls != CharClass::Space) j = i + 1;
    const CharClass cls = cps[j].cls;
    if (cls != CharClass::Space) {
      std::size_t k = j + 1;
      while (k < n && cps[k].cls == cls) ++k;
      pieces.push_back({cps[i].begin, end_of(k)});
      i = k;
      continue;
    }
    // whitespace: \s+(?!\S) then \s+
    std::size_t k = i;
    while (k < n && cps[k].cls == CharClass::Space) ++k;
    if (k < n && k - i >= 2) {
      pieces.push_back({cps[i].begin, end_of(k - 1)});
      i = k - 1;
    } else if (k < n) {
      pieces.push_back({cps[i].begin, end_of(i + 1)});
      i = i + 1;
    } else {
      pieces.push_back({cps[i].begin, text.size()});
      i = k;
    }
  }
  return pieces;
}

Tokenizer Tokenizer::load(const std::filesystem::path& vocab_json, const std::filesystem::path& merges_txt) {
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw FormatError("cannot open tokenizer file " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  return from_strings(slurp(vocab_json), slurp(merges_txt));
}

Tokenizer Tokenizer::from_strings(std::string_view vocab_json, std::string_view merges_txt) {
  Tokenizer tok;
  nlohmann::json vocab;
  try {
    vocab = nlohmann::json::parse(vocab_json);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("vocabulary file is not valid JSON: ") + e.what());
  }
  if (!vocab.is_object()) throw FormatError("vocabulary file must be a JSON object of token -> id");
  for (const auto& [symbol, id] : vocab.items()) {
    if (!id.is_number_integer() || id.get<std::int64_t>() < 0 ||
        id.get<std::int64_t>() > std::numeric_limits<TokenId>::max())
      throw FormatError("vocabulary entry '" + symbol + "' has an invalid id");
    const auto tid = id.get<TokenId>();
    tok.symbol_to_id_.emplace(symbol, tid);
    tok.max_id_ = std::max(tok.max_id_, tid);
  }
  tok.id_to_symbol_.assign(static_cast<std::size_t>(tok.max_id_ + 1), std::string{});
  std::vector<bool> seen(tok.id_to_symbol_.size(), false);
  for (const auto& [symbol, id] : tok.symbol_to_id_) {
    if (seen[id]) throw FormatError("vocabulary id " + std::to_string(id) + " is assigned twice");
    seen[id] = true;
    tok.id_to_symbol_[id] = symbol;
  }

  tok.byte_symbol_ = byte_to_unicode_table();
  for (int b = 0; b < 256; ++b) {
    tok.symbol_byte_.emplace(tok.byte_symbol_[b], static_cast<unsigned char>(b));
    if (!tok.symbol_to_id_.count(tok.byte_symbol_[b]))
      throw FormatError("vocabulary lacks the byte symbol for byte " + std::to_string(b));
  }

  std::size_t line_no = 0;
  std::size_t rank = 0;
  std::size_t pos = 0;
  while (pos < merges_txt.size()) {
    std::size_t eol = merges_txt.find('\n', pos);
    if (eol == std::string_view::npos) eol = merges_txt.size();
    std::string_view line = merges_txt.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || (line_no == 1 && line.starts_with("#version"))) continue;
    const auto sp = line.find(' ');
    if (sp == std::string_view::npos || sp == 0 || sp + 1 >= line.size() ||
        line.find(' ', sp + 1) != std::string_view::npos)
      throw FormatError("merges line " + std::to_string(line_no) + ": expected two space-separated symbols");
    tok.merge_rank_.emplace(std::string(line), rank++);
  }
  return tok;
}

std::vector<TokenId> Tokenizer::bpe(std::string_view piece, std::vector<std::size_t>& lengths) const {
  std::vector<std::string> symbols;
  std::vector<std::size_t> sizes;
  symbols.reserve(piece.size());
  for (char c : piece) {
    symbols.push_back(byte_symbol_[static_cast<unsigned char>(c)]);
    sizes.push_back(1);
  }
  while (symbols.size() > 1) {
    std::size_t best_rank = std::numeric_limits<std::size_t>::max();
    std::size_t best = 0;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      const auto it = merge_rank_.find(merge_key(symbols[i], symbols[i + 1]));
      if (it != merge_rank_.end() && it->second < best_rank) {
        best_rank = it->second;
        best = i;
      }
    }
    if (best_rank == std::numeric_limits<std::size_t>::max()) break;
    const std::string left = symbols[best];
    const std::string right = symbols[best + 1];
    std::vector<std::string> merged;
    std::vector<std::size_t> merged_sizes;
    for (std::size_t i = 0; i < symbols.size();) {
      if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
        merged.push_back(left + right);
        merged_sizes.push_back(sizes[i] + sizes[i + 1]);
        i += 2;
      } else {
        merged.push_back(symbols[i]);
        merged_sizes.push_back(sizes[i]);
        ++i;
      }
    }
    symbols = std::move(merged);
    sizes = std::move(merged_sizes);
  }

  std::vector<TokenId> ids;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    const auto it = symbol_to_id_.find(symbols[i]);
    if (it != symbol_to_id_.end()) {
      ids.push_back(it->second);
      lengths.push_back(sizes[i]);
      continue;
    }
    // merged symbol absent from the vocabulary: fall back to its bytes
    const std::string& s = symbols[i];
    for (std::size_t k = 0; k < s.size();) {
      const std::size_t len = utf8_length(static_cast<unsigned char>(s[k]));
      ids.push_back(symbol_to_id_.at(s.substr(k, len)));
      lengths.push_back(1);
      k += len;
    }
  }
  return ids;
}

Encoding Tokenizer::encode(std::string_view text) const {
  Encoding enc;
  for (const ByteRange& piece : pretokenize(text)) {
    std::vector<std::size_t> lengths;
    const auto ids = bpe(text.substr(piece.begin, piece.size()), lengths);
    std::size_t cursor = piece.begin;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      enc.ids.push_back(ids[i]);
      enc.offsets.push_back({cursor, cursor + lengths[i]});
      cursor += lengths[i];
    }
  }
  return enc;
}

const std::string& Tokenizer::token_symbol(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_symbol_.size() || id_to_symbol_[id].empty())
    throw InvalidArgument("token id " + std::to_string(id) + " is not in the vocabulary");
  return id_to_symbol_[id];
}

std::string Tokenizer::token_bytes(TokenId id) const {
  const std::string& symbol = token_symbol(id);
  std::string out;
  for (std::size_t k = 0; k < symbol.size();) {
    const std::size_t len = utf8_length(static_cast<unsigned char>(symbol[k]));
    const auto it = symbol_byte_.find(symbol.substr(k, len));
    if (it == symbol_byte_.end())
      throw FormatError("vocabulary symbol '" + symbol + "' contains a character outside the byte alphabet");
    out += static_cast<char>(it->second);
    k += len;
  }
  return out;
}

std::string Tokenizer::decode(const std::vector<TokenId>& ids) const {
  std::string out;
  for (TokenId id : ids) out += token_bytes(id);
  return out;
}

}  // namespace neuroaudit
