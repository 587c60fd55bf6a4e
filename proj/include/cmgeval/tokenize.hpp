#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace cmgeval {

using TokenSequence = std::vector<std::string>;

namespace detail {
inline bool is_space(unsigned char c) { return c == ' ' || (c >= '\t' && c <= '\r'); }
inline bool is_punct(unsigned char c) {
  return (c >= '!' && c <= '/') || (c >= ':' && c <= '@') || (c >= '[' && c <= '`') || (c >= '{' && c <= '~');
}
}  // namespace detail

/// Whitespace split; leading and trailing ASCII punctuation characters become single-character
/// tokens, punctuation inside a word stays attached ("don't", "a.b"). Only ASCII is case-folded.
inline TokenSequence tokenize(std::string_view text, bool lowercase = false) {
  TokenSequence out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    while (i < n && detail::is_space(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < n && !detail::is_space(static_cast<unsigned char>(text[j]))) ++j;
    if (i == j) break;
    std::size_t lo = i, hi = j;
    while (lo < hi && detail::is_punct(static_cast<unsigned char>(text[lo]))) ++lo;
    while (hi > lo && detail::is_punct(static_cast<unsigned char>(text[hi - 1]))) --hi;
    for (std::size_t p = i; p < lo; ++p) out.emplace_back(1, text[p]);
    if (lo < hi) {
      std::string word(text.substr(lo, hi - lo));
      if (lowercase)
        for (auto& c : word)
          if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
      out.push_back(std::move(word));
    }
    for (std::size_t p = hi; p < j; ++p) out.emplace_back(1, text[p]);
    i = j;
  }
  return out;
}

}  // namespace cmgeval
