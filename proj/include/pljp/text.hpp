#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace pljp::text {

/// Number of Unicode code points in a UTF-8 string. Invalid bytes count as
/// one code point each.
std::size_t length(std::string_view utf8);

/// Longest prefix holding at most `max_code_points` code points.
std::string_view prefix(std::string_view utf8, std::size_t max_code_points);

/// Unicode NFC normalization.
std::string nfc(std::string_view utf8);

/// Collapses whitespace runs to single spaces and trims both ends.
std::string normalize_space(std::string_view s);

std::string_view trim(std::string_view s);

std::vector<std::string> split(std::string_view s, std::string_view sep);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

bool starts_with_ci(std::string_view s, std::string_view prefix);

/// Splits text into tokens: lowercase word runs for alphabetic scripts, one
/// token per character for CJK ideographs and kana. Punctuation and
/// whitespace are dropped.
std::vector<std::string> tokenize(std::string_view utf8);

/// Sentence split on '.', '!', '?', and their full-width forms. Terminators
/// stay attached to their sentence.
std::vector<std::string> sentences(std::string_view utf8);

/// Edit distance, used for CLI suggestions.
std::size_t levenshtein(std::string_view a, std::string_view b);

}  // namespace pljp::text
