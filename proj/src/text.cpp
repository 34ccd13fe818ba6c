#include "pljp/text.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <memory>
#include <optional>

#include <unicode/normalizer2.h>
#include <unicode/unistr.h>

#include "pljp/types.hpp"

namespace pljp::text {
namespace {

struct Decoded {
  char32_t cp;
  std::size_t width;
};

// Lenient UTF-8 decoder: malformed sequences decode as U+FFFD of width 1.
Decoded decode(std::string_view s, std::size_t i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  auto cont = [&](std::size_t k) -> std::optional<unsigned> {
    if (i + k >= s.size()) return std::nullopt;
    const auto b = static_cast<unsigned char>(s[i + k]);
    if ((b & 0xC0) != 0x80) return std::nullopt;
    return b & 0x3F;
  };
  if (b0 < 0x80) return {b0, 1};
  if ((b0 & 0xE0) == 0xC0) {
    if (auto c1 = cont(1)) return {static_cast<char32_t>(((b0 & 0x1F) << 6) | *c1), 2};
  } else if ((b0 & 0xF0) == 0xE0) {
    auto c1 = cont(1), c2 = cont(2);
    if (c1 && c2) return {static_cast<char32_t>(((b0 & 0x0F) << 12) | (*c1 << 6) | *c2), 3};
  } else if ((b0 & 0xF8) == 0xF0) {
    auto c1 = cont(1), c2 = cont(2), c3 = cont(3);
    if (c1 && c2 && c3) {
      return {static_cast<char32_t>(((b0 & 0x07) << 18) | (*c1 << 12) | (*c2 << 6) | *c3), 4};
    }
  }
  return {0xFFFD, 1};
}

bool is_space(char32_t c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v' ||
         c == 0x00A0 || c == 0x3000 || (c >= 0x2000 && c <= 0x200B);
}

bool is_cjk(char32_t c) {
  return (c >= 0x4E00 && c <= 0x9FFF) || (c >= 0x3400 && c <= 0x4DBF) ||
         (c >= 0xF900 && c <= 0xFAFF) || (c >= 0x20000 && c <= 0x2FA1F) ||
         (c >= 0x3040 && c <= 0x30FF) || (c >= 0xAC00 && c <= 0xD7AF);
}

bool is_punct(char32_t c) {
  if (c < 0x80) {
    return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
           (c >= 0x7B && c <= 0x7E);
  }
  return (c >= 0x00A1 && c <= 0x00BF) || (c >= 0x2010 && c <= 0x206F) ||
         (c >= 0x3001 && c <= 0x303F) || (c >= 0xFF01 && c <= 0xFF0F) ||
         (c >= 0xFF1A && c <= 0xFF20) || (c >= 0xFF3B && c <= 0xFF40) ||
         (c >= 0xFF5B && c <= 0xFF65) || c == 0xFFFD;
}

bool is_sentence_end(char32_t c) {
  return c == '.' || c == '!' || c == '?' || c == 0x3002 || c == 0xFF01 || c == 0xFF1F;
}

}  // namespace

std::size_t length(std::string_view utf8) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < utf8.size(); i += decode(utf8, i).width) ++n;
  return n;
}

std::string_view prefix(std::string_view utf8, std::size_t max_code_points) {
  std::size_t i = 0;
  for (std::size_t n = 0; n < max_code_points && i < utf8.size(); ++n) {
    i += decode(utf8, i).width;
  }
  return utf8.substr(0, i);
}

std::string nfc(std::string_view utf8) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* normalizer = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error("ICU NFC normalizer unavailable");
  const auto src = icu::UnicodeString::fromUTF8(icu::StringPiece(utf8.data(), static_cast<int32_t>(utf8.size())));
  icu::UnicodeString out = normalizer->normalize(src, status);
  if (U_FAILURE(status)) throw Error("NFC normalization failed");
  std::string result;
  out.toUTF8String(result);
  return result;
}

std::string normalize_space(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (std::size_t i = 0; i < s.size();) {
    const auto d = decode(s, i);
    if (is_space(d.cp)) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.append(s.substr(i, d.width));
    }
    i += d.width;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n\f\v";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(std::string_view s, std::string_view sep) {
  std::vector<std::string> out;
  if (sep.empty()) {
    out.emplace_back(s);
    return out;
  }
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      return out;
    }
    out.emplace_back(s.substr(start, pos - start));
    start = pos + sep.size();
  }
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.append(sep);
    out.append(parts[i]);
  }
  return out;
}

bool starts_with_ci(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    const auto a = static_cast<unsigned char>(s[i]);
    const auto b = static_cast<unsigned char>(prefix[i]);
    if (std::tolower(a) != std::tolower(b)) return false;
  }
  return true;
}

std::vector<std::string> tokenize(std::string_view utf8) {
  std::vector<std::string> tokens;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) tokens.push_back(std::move(word));
    word.clear();
  };
  for (std::size_t i = 0; i < utf8.size();) {
    const auto d = decode(utf8, i);
    if (is_space(d.cp) || is_punct(d.cp)) {
      flush();
    } else if (is_cjk(d.cp)) {
      flush();
      tokens.emplace_back(utf8.substr(i, d.width));
    } else if (d.cp < 0x80) {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(d.cp))));
    } else {
      word.append(utf8.substr(i, d.width));
    }
    i += d.width;
  }
  flush();
  return tokens;
}

std::vector<std::string> sentences(std::string_view utf8) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < utf8.size();) {
    const auto d = decode(utf8, i);
    i += d.width;
    if (is_sentence_end(d.cp)) {
      // A '.' inside a number ("3.5") does not end a sentence.
      const bool digit_next = i < utf8.size() && std::isdigit(static_cast<unsigned char>(utf8[i]));
      if (d.cp == '.' && digit_next) continue;
      auto piece = trim(utf8.substr(start, i - start));
      if (!piece.empty()) out.emplace_back(piece);
      start = i;
    }
  }
  auto tail = trim(utf8.substr(start));
  if (!tail.empty()) out.emplace_back(tail);
  return out;
}

std::size_t levenshtein(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace pljp::text
