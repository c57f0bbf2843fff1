#include "ctikg/tokenizer/bpe.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "ctikg/common/error.hpp"
#include "ctikg/common/text.hpp"

namespace ctikg::tokenizer {

namespace {

constexpr std::string_view kSpecialNames[kSpecialTokens] = {"begin", "end", "pad"};

// Replaces every left-to-right occurrence of (a, b) with `merged`.
void merge_in_place(TokenSeq& symbols, TokenId a, TokenId b, TokenId merged) {
  std::size_t out = 0;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size() && symbols[i] == a && symbols[i + 1] == b) {
      symbols[out++] = merged;
      ++i;
    } else {
      symbols[out++] = symbols[i];
    }
  }
  symbols.resize(out);
}

}  // namespace

std::vector<std::string_view> split_pieces(std::string_view text) {
  std::vector<std::string_view> pieces;
  std::size_t start = 0;
  for (std::size_t i = 1; i < text.size(); ++i) {
    if (text[i] == ' ') {
      pieces.push_back(text.substr(start, i - start));
      start = i;
    }
  }
  if (start < text.size()) pieces.push_back(text.substr(start));
  return pieces;
}

BpeVocab::BpeVocab() {
  token_bytes_.reserve(kByteTokens + kSpecialTokens);
  for (std::size_t b = 0; b < kByteTokens; ++b) {
    token_bytes_.emplace_back(1, static_cast<char>(b));
  }
  for (std::size_t s = 0; s < kSpecialTokens; ++s) token_bytes_.emplace_back();
}

void BpeVocab::add_merge(TokenId left, TokenId right) {
  const auto n = static_cast<TokenId>(token_bytes_.size());
  if (left < 0 || right < 0 || left >= n || right >= n || is_special(left) || is_special(right)) {
    fail(Errc::format, "merge refers to an unknown or special token");
  }
  rank_.emplace(pair_key(left, right), merges_.size());
  merges_.emplace_back(left, right);
  token_bytes_.push_back(token_bytes_[static_cast<std::size_t>(left)] +
                         token_bytes_[static_cast<std::size_t>(right)]);
}

BpeVocab BpeVocab::from_merges(std::vector<Merge> merges) {
  BpeVocab vocab;
  for (auto [l, r] : merges) vocab.add_merge(l, r);
  return vocab;
}

BpeVocab BpeVocab::train(std::span<const std::string> texts, std::size_t target_vocab) {
  if (target_vocab <= kByteTokens + kSpecialTokens) {
    fail(Errc::invalid_argument, "target vocabulary must exceed " +
                                     std::to_string(kByteTokens + kSpecialTokens));
  }
  std::map<std::string, std::int64_t> piece_counts;
  for (const auto& text : texts) {
    for (auto piece : split_pieces(text)) ++piece_counts[std::string(piece)];
  }
  if (piece_counts.empty()) fail(Errc::empty_input, "cannot train BPE on an empty corpus");

  BpeVocab vocab;
  std::vector<TokenSeq> words;
  std::vector<std::int64_t> freq;
  for (const auto& [piece, count] : piece_counts) {
    TokenSeq w;
    for (unsigned char c : piece) w.push_back(c);
    words.push_back(std::move(w));
    freq.push_back(count);
  }

  std::unordered_map<std::uint64_t, std::int64_t> counts;
  std::unordered_map<std::uint64_t, std::set<std::size_t>> where;
  auto add_pairs = [&](std::size_t wi, std::int64_t sign) {
    const auto& w = words[wi];
    for (std::size_t i = 0; i + 1 < w.size(); ++i) {
      const auto key = pair_key(w[i], w[i + 1]);
      counts[key] += sign * freq[wi];
      if (sign > 0) where[key].insert(wi);
    }
  };
  for (std::size_t wi = 0; wi < words.size(); ++wi) add_pairs(wi, +1);

  while (vocab.size() < target_vocab) {
    std::uint64_t best = 0;
    std::int64_t best_count = 0;
    for (const auto& [key, count] : counts) {
      if (count <= 0) continue;
      if (count > best_count) {
        best = key;
        best_count = count;
      } else if (count == best_count) {
        const auto& cl = vocab.token_bytes(static_cast<TokenId>(key >> 32));
        const auto& cr = vocab.token_bytes(static_cast<TokenId>(key & 0xffffffffu));
        const auto& bl = vocab.token_bytes(static_cast<TokenId>(best >> 32));
        const auto& br = vocab.token_bytes(static_cast<TokenId>(best & 0xffffffffu));
        if (std::tie(cl, cr) < std::tie(bl, br)) best = key;
      }
    }
    if (best_count == 0) {
      fail(Errc::insufficient_input, "corpus supports only " + std::to_string(vocab.size()) +
                                         " vocabulary entries, " + std::to_string(target_vocab) +
                                         " requested");
    }
    const auto left = static_cast<TokenId>(best >> 32);
    const auto right = static_cast<TokenId>(best & 0xffffffffu);
    const auto merged = static_cast<TokenId>(vocab.size());
    vocab.add_merge(left, right);
    const auto affected = std::move(where[best]);
    where.erase(best);
    for (std::size_t wi : affected) {
      add_pairs(wi, -1);
      merge_in_place(words[wi], left, right, merged);
      add_pairs(wi, +1);
    }
    counts.erase(best);
    std::erase_if(counts, [](const auto& kv) { return kv.second == 0; });
  }
  return vocab;
}

TokenSeq BpeVocab::encode(std::string_view text) const {
  TokenSeq out;
  TokenSeq symbols;
  for (auto piece : split_pieces(text)) {
    symbols.clear();
    for (unsigned char c : piece) symbols.push_back(c);
    while (symbols.size() > 1) {
      std::size_t best_rank = std::numeric_limits<std::size_t>::max();
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
        auto it = rank_.find(pair_key(symbols[i], symbols[i + 1]));
        if (it != rank_.end()) best_rank = std::min(best_rank, it->second);
      }
      if (best_rank == std::numeric_limits<std::size_t>::max()) break;
      const auto [l, r] = merges_[best_rank];
      merge_in_place(symbols, l, r,
                     static_cast<TokenId>(kByteTokens + kSpecialTokens + best_rank));
    }
    out.insert(out.end(), symbols.begin(), symbols.end());
  }
  return out;
}

const std::string& BpeVocab::token_bytes(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= token_bytes_.size()) {
    fail(Errc::out_of_range, "unknown token id " + std::to_string(id));
  }
  return token_bytes_[static_cast<std::size_t>(id)];
}

std::string BpeVocab::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) out += token_bytes(id);
  return out;
}

std::string BpeVocab::serialize(std::string_view comment) const {
  std::ostringstream out;
  out << "ctikg-bpe " << kVocabFormatVersion << ' ' << size() << '\n';
  if (!comment.empty()) out << "# " << comment << '\n';
  for (auto [l, r] : merges_) out << l << ' ' << r << '\n';
  for (std::size_t s = 0; s < kSpecialTokens; ++s) {
    out << "special " << kSpecialNames[s] << ' ' << kByteTokens + s << '\n';
  }
  return out.str();
}

BpeVocab BpeVocab::parse(std::string_view text) {
  const auto lines = text::split(text, '\n');
  std::istringstream header(lines.empty() ? std::string() : lines[0]);
  std::string magic;
  std::uint32_t version = 0;
  std::size_t declared = 0;
  if (!(header >> magic >> version >> declared) || magic != "ctikg-bpe") {
    fail(Errc::format, "vocab file lacks the ctikg-bpe header");
  }
  if (version != kVocabFormatVersion) {
    fail(Errc::version, "vocab format version " + std::to_string(version));
  }
  std::vector<Merge> merges;
  std::size_t specials = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto& line = lines[i];
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    if (line.rfind("special ", 0) == 0) {
      std::string kw, name;
      std::size_t id = 0;
      ls >> kw >> name >> id;
      if (specials >= kSpecialTokens || name != kSpecialNames[specials] ||
          id != kByteTokens + specials) {
        fail(Errc::format, "unexpected special token assignment on line " + std::to_string(i + 1));
      }
      ++specials;
      continue;
    }
    TokenId l = 0, r = 0;
    if (!(ls >> l >> r)) fail(Errc::format, "bad merge on line " + std::to_string(i + 1));
    merges.emplace_back(l, r);
  }
  if (specials != kSpecialTokens) fail(Errc::format, "special token assignments missing");
  auto vocab = from_merges(std::move(merges));
  if (vocab.size() != declared) {
    fail(Errc::format, "header declares " + std::to_string(declared) + " entries, file has " +
                           std::to_string(vocab.size()));
  }
  return vocab;
}

void BpeVocab::save(const std::filesystem::path& path, std::string_view comment) const {
  text::write_file(path, serialize(comment));
}

BpeVocab BpeVocab::load(const std::filesystem::path& path) { return parse(text::read_file(path)); }

}  // namespace ctikg::tokenizer
