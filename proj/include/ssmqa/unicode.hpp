#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace ssmqa::unicode {

// Strict UTF-8: rejects overlong forms, surrogates, values above U+10FFFF and
// truncated sequences with EncodingError (message carries the byte offset).
std::u32string decode_utf8(std::string_view s);
void append_utf8(std::string& out, char32_t cp);
std::string encode_utf8(std::u32string_view cps);
void validate_utf8(std::string_view s);
std::size_t codepoint_count(std::string_view s);

// Unicode White_Space.
bool is_whitespace(char32_t cp);

// Extended grapheme clusters (UAX #29, including the Indic conjunct rule).
// Returned offsets are byte positions of every cluster start plus s.size().
std::vector<std::size_t> grapheme_boundaries(std::string_view s);
std::vector<std::string> segment_graphemes(std::string_view s);

// Canonical composition (NFC).
std::string nfc(std::string_view s);

} // namespace ssmqa::unicode
