#include "ctikg/corpus/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctikg/common/error.hpp"
#include "ctikg/common/rng.hpp"
#include "ctikg/common/text.hpp"

namespace ctikg::corpus {

TruncatedSample truncate_sample(std::string_view body, std::size_t max_words) {
  const auto spans = text::words(body);
  const std::size_t window = std::min(max_words, spans.size());
  for (std::size_t i = window; i-- > 0;) {
    // A word ending in a terminator is a boundary: the next byte is space or end.
    if (text::is_terminal(body[spans[i].end - 1])) {
      return {std::string(body.substr(0, spans[i].end)), i + 1, false};
    }
  }
  return {"", 0, true};
}

TruncatedSample truncate_sample(const Document& doc, std::size_t max_words) {
  return truncate_sample(doc.body, max_words);
}

std::string first_sentence(std::string_view text) {
  const auto trimmed = text::trim(text);
  const auto ends = text::sentence_ends(trimmed);
  if (ends.empty()) return std::string(trimmed);
  return std::string(trimmed.substr(0, ends.front()));
}

CorpusSplit split(std::span<const Document> docs, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    fail(Errc::invalid_argument, "test fraction must lie strictly between 0 and 1");
  }
  const std::size_t n = docs.size();
  if (n < 2) fail(Errc::insufficient_input, "cannot split a corpus of " + std::to_string(n) + " document(s)");
  auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  n_test = std::clamp<std::size_t>(n_test, 1, n - 1);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  shuffle(order, rng);
  std::vector<bool> in_test(n, false);
  for (std::size_t i = 0; i < n_test; ++i) in_test[order[i]] = true;

  CorpusSplit out;
  out.seed = seed;
  out.test_fraction = test_fraction;
  for (std::size_t i = 0; i < n; ++i) (in_test[i] ? out.test : out.train).push_back(docs[i].id);
  return out;
}

nlohmann::json to_json(const CorpusSplit& s) {
  return {{"seed", s.seed}, {"test_fraction", s.test_fraction}, {"train", s.train}, {"test", s.test}};
}

CorpusSplit split_from_json(const nlohmann::json& j) {
  CorpusSplit s;
  try {
    s.seed = j.at("seed").get<std::uint64_t>();
    s.test_fraction = j.at("test_fraction").get<double>();
    s.train = j.at("train").get<std::vector<std::string>>();
    s.test = j.at("test").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::format, std::string("malformed split file: ") + e.what());
  }
  return s;
}

}  // namespace ctikg::corpus
