#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ctikg/common/types.hpp"

namespace ctikg::tokenizer {

inline constexpr std::size_t kByteTokens = 256;
inline constexpr std::size_t kSpecialTokens = 3;
inline constexpr std::size_t kDefaultVocabSize = 4096;
inline constexpr std::uint32_t kVocabFormatVersion = 1;

/// Pre-tokenisation: a new piece starts at every space byte (except at the
/// beginning), so "a b  c" splits into "a", " b", " ", " c". Merges never
/// cross a piece boundary.
std::vector<std::string_view> split_pieces(std::string_view text);

/// Byte-level BPE vocabulary. Ids 0..255 are the raw bytes, 256..258 the
/// begin/end/pad specials, and each learned merge takes the next id.
class BpeVocab {
 public:
  using Merge = std::pair<TokenId, TokenId>;

  BpeVocab();  // bytes and specials only

  /// Learns merges until the vocabulary holds `target_vocab` entries.
  /// Highest pair frequency wins; ties go to the lexicographically smallest
  /// (left bytes, right bytes) pair.
  static BpeVocab train(std::span<const std::string> texts, std::size_t target_vocab);
  static BpeVocab from_merges(std::vector<Merge> merges);

  TokenSeq encode(std::string_view text) const;
  /// Special tokens decode to nothing; unknown ids throw Errc::out_of_range.
  std::string decode(std::span<const TokenId> ids) const;

  std::size_t size() const { return token_bytes_.size(); }
  const std::vector<Merge>& merges() const { return merges_; }
  const std::string& token_bytes(TokenId id) const;

  TokenId begin_token() const { return 256; }
  TokenId end_token() const { return 257; }
  TokenId pad_token() const { return 258; }
  bool is_special(TokenId id) const { return id >= 256 && id < 259; }

  /// Header "ctikg-bpe <version> <vocab size>", optional "#" comment lines,
  /// one "left right" merge per line, then "special <name> <id>" lines.
  std::string serialize(std::string_view comment = {}) const;
  static BpeVocab parse(std::string_view text);
  void save(const std::filesystem::path& path, std::string_view comment = {}) const;
  static BpeVocab load(const std::filesystem::path& path);

  bool operator==(const BpeVocab& other) const { return merges_ == other.merges_; }

 private:
  void add_merge(TokenId left, TokenId right);

  std::vector<Merge> merges_;
  std::vector<std::string> token_bytes_;
  std::unordered_map<std::uint64_t, std::size_t> rank_;
};

inline std::uint64_t pair_key(TokenId a, TokenId b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

}  // namespace ctikg::tokenizer
