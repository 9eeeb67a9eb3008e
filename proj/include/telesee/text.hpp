#pragma once

#include <cctype>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace telesee {

// Word-level normalization used consistently for metric token sets, model
// vocabulary and corpus statistics: lowercase, split on whitespace and
// punctuation, punctuation-only pieces dropped. Input is assumed NFC;
// non-ASCII bytes are kept verbatim and treated as word characters.

namespace detail {

inline bool is_word_byte(unsigned char c) {
  return std::isalnum(c) != 0 || c >= 0x80;
}

inline char ascii_lower(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

}  // namespace detail

// Ordered token sequence, duplicates kept.
inline std::vector<std::string> normalize_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (detail::is_word_byte(static_cast<unsigned char>(ch))) {
      cur.push_back(detail::ascii_lower(ch));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// Token set for Jaccard computations. Empty input yields the empty set.
inline std::set<std::string> normalize_token_set(std::string_view text) {
  auto words = normalize_words(text);
  return {words.begin(), words.end()};
}

inline std::string lowercase(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) out.push_back(detail::ascii_lower(c));
  return out;
}

inline std::string trim(std::string_view text) {
  size_t b = 0, e = text.size();
  while (b < e && std::isspace(static_cast<unsigned char>(text[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(text[e - 1]))) --e;
  return std::string(text.substr(b, e - b));
}

// Subword-style splitter used only to measure how many pieces a schema
// phrase would cost when spelled out. Words are marked with a leading "_"
// and split wherever the character class (letter / digit / punctuation)
// changes, so "6G-related technique" -> _6, G, -, related, _technique.
inline std::vector<std::string> subword_pieces(std::string_view text) {
  enum class Cls { None, Alpha, Digit, Punct };
  std::vector<std::string> pieces;
  std::string cur;
  Cls cls = Cls::None;
  bool word_start = true;
  auto flush = [&]() {
    if (!cur.empty()) {
      pieces.push_back(cur);
      cur.clear();
    }
  };
  for (char ch : text) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
      cls = Cls::None;
      word_start = true;
      continue;
    }
    Cls next;
    if (std::isdigit(c)) {
      next = Cls::Digit;
    } else if (std::isalpha(c) || c >= 0x80) {
      next = Cls::Alpha;
    } else {
      next = Cls::Punct;
    }
    if (next != cls) {
      flush();
      if (word_start) cur.push_back('_');
      cls = next;
    }
    cur.push_back(ch);
    word_start = false;
  }
  flush();
  return pieces;
}

// Sentence rule for corpus statistics: split on '.', '?' or '!' followed by
// whitespace or end of text. Fragments without a terminator count as one
// sentence when non-empty.
inline std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (size_t i = 0; i < text.size(); ++i) {
    char ch = text[i];
    cur.push_back(ch);
    if (ch == '.' || ch == '?' || ch == '!') {
      bool at_end = (i + 1 == text.size());
      bool before_space = !at_end && std::isspace(static_cast<unsigned char>(text[i + 1]));
      if (at_end || before_space) {
        std::string s = trim(cur);
        if (!s.empty()) out.push_back(std::move(s));
        cur.clear();
      }
    }
  }
  std::string s = trim(cur);
  if (!s.empty()) out.push_back(std::move(s));
  return out;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out.append(sep);
    out.append(parts[i]);
  }
  return out;
}

}  // namespace telesee
