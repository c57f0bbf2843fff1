#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ctikg/corpus/document.hpp"

namespace ctikg::corpus {

inline constexpr std::size_t kMaxSampleWords = 500;
inline constexpr double kDefaultTestFraction = 0.35;

struct TruncatedSample {
  std::string text;         // prefix of the body ending at a sentence boundary
  std::size_t words = 0;
  bool flagged = false;     // no sentence boundary inside the word window
};

/// Keeps at most `max_words` words and drops the trailing partial sentence.
TruncatedSample truncate_sample(std::string_view body, std::size_t max_words = kMaxSampleWords);
TruncatedSample truncate_sample(const Document& doc, std::size_t max_words = kMaxSampleWords);

/// Text up to and including the first sentence terminator; the whole
/// (left-trimmed) text when there is none.
std::string first_sentence(std::string_view text);

struct CorpusSplit {
  std::vector<std::string> train;
  std::vector<std::string> test;
  std::uint64_t seed = 0;
  double test_fraction = kDefaultTestFraction;
};

/// Seeded shuffle; the test share is round(test_fraction * n), clamped so both
/// sides are non-empty. Ids are listed in corpus order.
CorpusSplit split(std::span<const Document> docs, double test_fraction, std::uint64_t seed);

nlohmann::json to_json(const CorpusSplit& s);
CorpusSplit split_from_json(const nlohmann::json& j);

}  // namespace ctikg::corpus
