#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ctikg::text {

/// Byte range [begin, end) into some source string.
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool operator==(const Span&) const = default;
  auto operator<=>(const Span&) const = default;
};

bool is_space(char c);
bool is_terminal(char c);  // '.', '!' or '?'

/// Words are maximal runs of non-whitespace bytes.
std::vector<Span> words(std::string_view s);
std::size_t word_count(std::string_view s);

/// Offsets one past each sentence terminator that is followed by whitespace
/// or the end of the text.
std::vector<std::size_t> sentence_ends(std::string_view s);

/// Sentence spans covering the text; a trailing fragment without terminator is
/// its own sentence.
std::vector<Span> sentences(std::string_view s);

std::string to_lower(std::string_view s);
std::string_view trim(std::string_view s);

/// Shortest decimal representation that round-trips exactly.
std::string format_double(double value);
double parse_double(std::string_view s);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

std::vector<std::string> split(std::string_view s, char delim);

}  // namespace ctikg::text
