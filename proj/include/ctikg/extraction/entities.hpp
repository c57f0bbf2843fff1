#pragma once

#include <filesystem>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ctikg/common/text.hpp"

namespace ctikg::extraction {

enum class EntityClass {
  campaign,
  attack_pattern,
  tool,
  malware,
  vulnerability,
  threat_actor,
  product,
  indicator,
};

/// "Campaign", "Attack-Pattern", ... as written in graphs and queries.
std::string_view to_string(EntityClass c);
std::optional<EntityClass> try_parse_entity_class(std::string_view s);
EntityClass parse_entity_class(std::string_view s);
const std::vector<EntityClass>& all_entity_classes();

struct Entity {
  std::string surface;
  text::Span span;
  EntityClass cls = EntityClass::campaign;
  std::string source_doc;

  bool operator==(const Entity&) const = default;
};

/// Multi-word surface lists matched case-insensitively on whole terms.
/// A term is a run of ASCII letters and digits; inside a match, terms may be
/// separated only by whitespace or hyphens.
class SurfaceList {
 public:
  void add(std::string_view surface, EntityClass cls);
  std::size_t size() const { return count_; }

  struct Match {
    text::Span span;
    EntityClass cls;
  };
  std::vector<Match> find_all(std::string_view text) const;

 private:
  struct Entry {
    std::vector<std::string> terms;
    EntityClass cls;
  };
  std::unordered_map<std::string, std::vector<Entry>> by_first_term_;
  std::size_t count_ = 0;
};

/// Gazetteer file: "surface<TAB>class" per line; blank and '#' lines ignored.
class Gazetteer {
 public:
  static Gazetteer parse(std::string_view text);
  static Gazetteer load(const std::filesystem::path& path);

  void add(std::string_view surface, EntityClass cls) { list_.add(surface, cls); }
  const SurfaceList& surfaces() const { return list_; }
  std::size_t size() const { return list_.size(); }

 private:
  SurfaceList list_;
};

/// Rule file lines, tab separated:
///   regex   <class> <ECMAScript pattern>   (case-sensitive)
///   iregex  <class> <pattern>              (case-insensitive)
///   phrase  <class> <surface>              (matched like a gazetteer entry)
/// When a pattern has a capture group, group 1 is the entity span.
class RuleSet {
 public:
  static RuleSet parse(std::string_view text);
  static RuleSet load(const std::filesystem::path& path);

  struct Pattern {
    std::regex re;
    EntityClass cls;
    std::string source;
  };

  const std::vector<Pattern>& patterns() const { return patterns_; }
  const SurfaceList& phrases() const { return phrases_; }
  std::size_t size() const { return patterns_.size() + phrases_.size(); }

 private:
  std::vector<Pattern> patterns_;
  SurfaceList phrases_;
};

/// All gazetteer, phrase and pattern hits reduced to non-overlapping spans.
/// Longer spans win; equal lengths prefer gazetteer over phrase over
/// pattern, then the earlier start. Output is ordered by position.
std::vector<Entity> extract_entities(std::string_view text, const Gazetteer& gazetteer,
                                     const RuleSet& rules, std::string_view source_doc = {});

}  // namespace ctikg::extraction
