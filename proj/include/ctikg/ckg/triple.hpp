#pragma once

#include <compare>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>

namespace ctikg::ckg {

/// `a` asserts a class; attributed_to links actors to sponsors and is the
/// usual single-valued predicate for consistency checks.
enum class Predicate { a, uses, exploits, targets, mitigates, attributed_to };

std::string_view to_string(Predicate p);
std::optional<Predicate> try_parse_predicate(std::string_view s);
Predicate parse_predicate(std::string_view s);  // Errc::semantic when unknown

/// Subject/object are canonical ids (the object of `a` is a class name).
/// Identity is (subject, predicate, object, provenance); trust rides along.
struct Triple {
  std::string subject;
  Predicate predicate = Predicate::a;
  std::string object;
  std::string provenance;
  double trust = 1.0;

  auto key() const { return std::tie(subject, predicate, object, provenance); }
  bool same_key(const Triple& o) const { return key() == o.key(); }
  bool operator==(const Triple& o) const = default;
};

struct KeyLess {
  bool operator()(const Triple& x, const Triple& y) const { return x.key() < y.key(); }
};

std::string to_string(const Triple& t);

}  // namespace ctikg::ckg
