#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace mathforge {

/// Version tag stored alongside anything derived from token boundaries
/// (n-gram indices, token counts). Bump when the rules below change.
inline constexpr std::string_view kTokenizerVersion = "ws-punct-1";

namespace detail {
inline bool is_word_byte(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c >= 0x80;
}
inline bool is_space_byte(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}
}  // namespace detail

/// Pipeline tokenizer: ASCII-lowercased runs of letters/digits (non-ASCII
/// bytes count as letters), and every other visible character on its own.
template <class Sink>
void tokenize_into(std::string_view text, Sink&& sink) {
  std::size_t i = 0;
  const std::size_t n = text.size();
  std::string tok;
  while (i < n) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (detail::is_space_byte(c)) {
      ++i;
    } else if (detail::is_word_byte(c)) {
      tok.clear();
      while (i < n && detail::is_word_byte(static_cast<unsigned char>(text[i]))) {
        const auto w = static_cast<unsigned char>(text[i]);
        tok.push_back((w >= 'A' && w <= 'Z') ? static_cast<char>(w - 'A' + 'a') : static_cast<char>(w));
        ++i;
      }
      sink(std::string_view(tok));
    } else {
      sink(text.substr(i, 1));
      ++i;
    }
  }
}

inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  tokenize_into(text, [&](std::string_view t) { out.emplace_back(t); });
  return out;
}

inline std::size_t count_tokens(std::string_view text) {
  std::size_t n = 0;
  tokenize_into(text, [&](std::string_view) { ++n; });
  return n;
}

}  // namespace mathforge
