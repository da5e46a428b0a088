#pragma once

#include <cstddef>
#include <string>
#include <string_view>

// UTF-8 helpers. All character offsets in the toolkit are code-point indices.
namespace spanft::utf8 {

// Throws Error(InvalidArgument) on malformed input.
std::u32string decode(std::string_view text);
std::string encode(std::u32string_view text);

std::size_t length(std::string_view text);

// Code-point substring [start, end) of a UTF-8 string.
std::string slice(std::string_view text, std::size_t start, std::size_t end);

bool is_space(char32_t c) noexcept;
bool is_punct(char32_t c) noexcept;

} // namespace spanft::utf8
