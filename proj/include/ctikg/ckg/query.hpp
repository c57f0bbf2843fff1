#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "ctikg/ckg/graph.hpp"

namespace ctikg::ckg {

/// Variable (name without '?') or constant. Constants are canonical ids,
/// except the object of `a`, which is a class name.
struct QueryTerm {
  bool is_variable = false;
  std::string value;

  bool operator==(const QueryTerm&) const = default;
};

struct TriplePattern {
  QueryTerm subject;
  Predicate predicate = Predicate::a;
  bool inverse = false;  // ^pred: match (object, pred, subject)
  QueryTerm object;

  bool operator==(const TriplePattern&) const = default;
};

struct QueryAst {
  std::string select;
  std::vector<TriplePattern> patterns;
};

/// Grammar (keywords case-insensitive, '#' starts a comment):
///   SELECT ?var WHERE { subject verb object (; verb object)* (. subject ...)* .? }
///   verb    := a | ^?CKG:name
///   subject := ?var | CKG:name        object := ?var | CKG:name
/// Syntax errors throw SyntaxError with the byte offset; unknown predicates or
/// classes and an unused select variable throw Errc::semantic.
QueryAst parse_query(std::string_view text);

/// Distinct sorted values of the select variable over all solutions.
std::vector<std::string> query(const Ckg& g, const QueryAst& ast);
std::vector<std::string> query(const Ckg& g, std::string_view text);

std::string to_string(const QueryAst& ast);

}  // namespace ctikg::ckg
