#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ctikg/ckg/triple.hpp"

namespace ctikg::ckg {

struct AssertReport {
  std::size_t added = 0;
  std::vector<std::string> rejected;  // one diagnostic per rejected triple
};

/// Provenance-aware triple store with set semantics on
/// (subject, predicate, object, provenance). Many readers or one writer.
class Ckg {
 public:
  Ckg() = default;
  Ckg(const Ckg& other);
  Ckg& operator=(const Ckg& other);

  /// Adds valid, new triples. Rejected: empty fields, trust outside [0, 1],
  /// `a` with an unknown class.
  AssertReport assert_triples(std::span<const Triple> triples);
  /// Records with string predicates, e.g. parsed from JSONL; unknown
  /// predicates are rejected with a diagnostic.
  AssertReport assert_records(std::span<const nlohmann::json> records);
  bool remove(const Triple& t);  // exact match including trust

  std::size_t size() const;
  bool contains(const Triple& t) const;  // exact match including trust
  std::vector<Triple> triples() const;    // sorted by key
  std::vector<Triple> with_predicate(Predicate p) const;
  std::set<std::string> classes_of(const std::string& id) const;
  std::set<std::string> entities() const;  // every subject and non-class object
  std::vector<std::string> provenance_of(const std::string& subject, Predicate p,
                                         const std::string& object) const;

  /// Runs `fn(graph)` under a shared lock.
  template <typename Fn>
  void read(Fn&& fn) const {
    std::shared_lock lock(mutex_);
    fn(*this);
  }
  const std::vector<const Triple*>& indexed(Predicate p) const;  // caller holds the lock

  bool operator==(const Ckg& other) const { return triples() == other.triples(); }

 private:
  bool insert_unlocked(const Triple& t);
  void rebuild_indexes();

  std::set<Triple, KeyLess> triples_;
  std::map<std::string, std::set<std::string>> classes_;
  std::map<Predicate, std::vector<const Triple*>> by_predicate_;
  mutable std::shared_mutex mutex_;
};

std::string validate_triple(const Triple& t);  // empty when valid
nlohmann::json to_json(const Triple& t);
Triple triple_from_json(const nlohmann::json& j);

/// Tab-separated "subject predicate object provenance trust" lines sorted by
/// key, preceded by '#' comment lines.
std::string export_tsv(const Ckg& g, std::span<const std::string> header_comments = {});
void export_tsv(const Ckg& g, const std::filesystem::path& path,
                std::span<const std::string> header_comments = {});
/// Errc::format naming the line for malformed or rejected lines.
Ckg parse_tsv(std::string_view text);
Ckg import_tsv(const std::filesystem::path& path);

struct GraphDelta {
  std::vector<Triple> added;
  std::vector<Triple> removed;
  std::map<std::string, std::vector<Triple>> added_by_provenance;

  bool empty() const { return added.empty() && removed.empty(); }
};

/// Exact set differences (a trust change shows up as removed + added).
GraphDelta diff(const Ckg& before, const Ckg& after);
Ckg apply(const Ckg& before, const GraphDelta& delta);
nlohmann::json to_json(const GraphDelta& d);
GraphDelta delta_from_json(const nlohmann::json& j);

}  // namespace ctikg::ckg
