#include "ctikg/ckg/query.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <set>

#include "ctikg/common/error.hpp"
#include "ctikg/common/text.hpp"
#include "ctikg/extraction/canonical.hpp"
#include "ctikg/extraction/entities.hpp"

namespace ctikg::ckg {

namespace {

enum class Tok { word, variable, iri, lbrace, rbrace, dot, semicolon, caret, end };

struct Token {
  Tok kind;
  std::string text;  // variable name, iri local name or word
  std::size_t pos;
};

bool is_name_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
         c == '-';
}

std::vector<Token> lex(std::string_view s) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    if (text::is_space(c)) {
      ++i;
    } else if (c == '#') {
      while (i < s.size() && s[i] != '\n') ++i;
    } else if (c == '{' || c == '}' || c == '.' || c == ';' || c == '^') {
      const Tok k = c == '{' ? Tok::lbrace
                    : c == '}' ? Tok::rbrace
                    : c == '.' ? Tok::dot
                    : c == ';' ? Tok::semicolon
                               : Tok::caret;
      out.push_back({k, std::string(1, c), i});
      ++i;
    } else if (c == '?') {
      const std::size_t start = i++;
      while (i < s.size() && is_name_char(s[i])) ++i;
      if (i == start + 1) throw SyntaxError(start, "expected a variable name after '?'");
      out.push_back({Tok::variable, std::string(s.substr(start + 1, i - start - 1)), start});
    } else if (is_name_char(c)) {
      const std::size_t start = i;
      while (i < s.size() && is_name_char(s[i])) ++i;
      if (i < s.size() && s[i] == ':') {
        const std::string prefix(s.substr(start, i - start));
        if (prefix != "CKG") throw SyntaxError(start, "unknown prefix '" + prefix + ":'");
        const std::size_t local = ++i;
        while (i < s.size() && is_name_char(s[i])) ++i;
        if (i == local) throw SyntaxError(local, "expected a name after 'CKG:'");
        out.push_back({Tok::iri, std::string(s.substr(local, i - local)), start});
      } else {
        out.push_back({Tok::word, std::string(s.substr(start, i - start)), start});
      }
    } else {
      throw SyntaxError(i, std::string("unexpected character '") + c + "'");
    }
  }
  out.push_back({Tok::end, "", s.size()});
  return out;
}

bool is_keyword(const Token& t, std::string_view kw) {
  return t.kind == Tok::word && text::to_lower(t.text) == text::to_lower(kw);
}

class Parser {
 public:
  explicit Parser(std::string_view text) : tokens_(lex(text)) {}

  QueryAst parse() {
    QueryAst ast;
    if (!is_keyword(peek(), "SELECT")) throw SyntaxError(peek().pos, "expected SELECT");
    next();
    if (peek().kind != Tok::variable) throw SyntaxError(peek().pos, "expected a variable after SELECT");
    ast.select = next().text;
    if (!is_keyword(peek(), "WHERE")) throw SyntaxError(peek().pos, "expected WHERE");
    next();
    expect(Tok::lbrace, "'{'");
    while (peek().kind != Tok::rbrace) {
      const QueryTerm subject = parse_subject();
      parse_verb_object(subject, ast);
      while (peek().kind == Tok::semicolon) {
        next();
        if (peek().kind == Tok::dot || peek().kind == Tok::rbrace) break;
        parse_verb_object(subject, ast);
      }
      if (peek().kind == Tok::dot) {
        next();
      } else if (peek().kind != Tok::rbrace) {
        throw SyntaxError(peek().pos, "expected '.', ';' or '}'");
      }
    }
    const std::size_t close = peek().pos;
    next();
    if (peek().kind != Tok::end) throw SyntaxError(peek().pos, "unexpected text after '}'");
    if (ast.patterns.empty()) throw SyntaxError(close, "WHERE block has no patterns");
    const bool used = std::any_of(ast.patterns.begin(), ast.patterns.end(), [&](const TriplePattern& p) {
      return (p.subject.is_variable && p.subject.value == ast.select) ||
             (p.object.is_variable && p.object.value == ast.select);
    });
    if (!used) fail(Errc::semantic, "selected variable ?" + ast.select + " appears in no pattern");
    return ast;
  }

 private:
  const Token& peek() const { return tokens_[pos_]; }
  const Token& next() { return tokens_[pos_++]; }

  void expect(Tok kind, const char* what) {
    if (peek().kind != kind) throw SyntaxError(peek().pos, std::string("expected ") + what);
    next();
  }

  QueryTerm parse_subject() {
    const Token& t = peek();
    if (t.kind == Tok::variable) {
      next();
      return {true, t.text};
    }
    if (t.kind == Tok::iri) {
      next();
      return {false, extraction::canonicalize(t.text)};
    }
    throw SyntaxError(t.pos, "expected a variable or CKG: name as subject");
  }

  void parse_verb_object(const QueryTerm& subject, QueryAst& ast) {
    TriplePattern p;
    p.subject = subject;
    const Token& verb = peek();
    if (verb.kind == Tok::word && verb.text == "a") {
      next();
      p.predicate = Predicate::a;
    } else {
      if (verb.kind == Tok::caret) {
        next();
        p.inverse = true;
        if (peek().kind == Tok::word && peek().text == "a") {
          throw SyntaxError(peek().pos, "'a' cannot be inverted");
        }
      }
      const Token& name = peek();
      if (name.kind != Tok::iri) throw SyntaxError(name.pos, "expected a predicate");
      next();
      const auto pred = try_parse_predicate(name.text);
      if (!pred || *pred == Predicate::a) {
        fail(Errc::semantic, "unknown predicate 'CKG:" + name.text + "' at offset " +
                                 std::to_string(name.pos));
      }
      p.predicate = *pred;
    }
    const Token& obj = peek();
    if (obj.kind == Tok::variable) {
      next();
      p.object = {true, obj.text};
    } else if (obj.kind == Tok::iri) {
      next();
      if (p.predicate == Predicate::a) {
        if (!extraction::try_parse_entity_class(obj.text)) {
          fail(Errc::semantic, "unknown class 'CKG:" + obj.text + "' at offset " +
                                   std::to_string(obj.pos));
        }
        p.object = {false, obj.text};
      } else {
        p.object = {false, extraction::canonicalize(obj.text)};
      }
    } else {
      throw SyntaxError(obj.pos, "expected a variable or CKG: name as object");
    }
    ast.patterns.push_back(std::move(p));
  }

  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
};

using Bindings = std::map<std::string, std::string>;

std::optional<std::string> resolve(const QueryTerm& t, const Bindings& b) {
  if (!t.is_variable) return t.value;
  auto it = b.find(t.value);
  if (it == b.end()) return std::nullopt;
  return it->second;
}

std::size_t bound_count(const TriplePattern& p, const Bindings& b) {
  return (resolve(p.subject, b) ? 1 : 0) + (resolve(p.object, b) ? 1 : 0);
}

void solve(const Ckg& g, const std::vector<TriplePattern>& patterns, std::vector<bool>& done,
           Bindings& b, const std::string& select, std::set<std::string>& results) {
  std::size_t pick = patterns.size();
  for (std::size_t i = 0; i < patterns.size(); ++i) {
    if (done[i]) continue;
    if (pick == patterns.size() || bound_count(patterns[i], b) > bound_count(patterns[pick], b)) pick = i;
  }
  if (pick == patterns.size()) {
    if (auto it = b.find(select); it != b.end()) results.insert(it->second);
    return;
  }
  const auto& p = patterns[pick];
  // ?s ^pred ?o is the same as ?o pred ?s.
  const QueryTerm& from = p.inverse ? p.object : p.subject;
  const QueryTerm& to = p.inverse ? p.subject : p.object;
  const auto from_value = resolve(from, b);
  const auto to_value = resolve(to, b);
  done[pick] = true;
  std::set<std::pair<std::string, std::string>> seen;
  for (const Triple* t : g.indexed(p.predicate)) {
    if (from_value && t->subject != *from_value) continue;
    if (to_value && t->object != *to_value) continue;
    if (!seen.insert({t->subject, t->object}).second) continue;  // other provenance, same fact
    if (from.is_variable && to.is_variable && from.value == to.value && t->subject != t->object) continue;
    Bindings saved = b;
    if (from.is_variable) b[from.value] = t->subject;
    if (to.is_variable) b[to.value] = t->object;
    solve(g, patterns, done, b, select, results);
    b = std::move(saved);
  }
  done[pick] = false;
}

}  // namespace

QueryAst parse_query(std::string_view text) { return Parser(text).parse(); }

std::vector<std::string> query(const Ckg& g, const QueryAst& ast) {
  std::set<std::string> results;
  g.read([&](const Ckg& snapshot) {
    std::vector<bool> done(ast.patterns.size(), false);
    Bindings b;
    solve(snapshot, ast.patterns, done, b, ast.select, results);
  });
  return {results.begin(), results.end()};
}

std::vector<std::string> query(const Ckg& g, std::string_view text) {
  return query(g, parse_query(text));
}

std::string to_string(const QueryAst& ast) {
  std::string out = "SELECT ?" + ast.select + " WHERE {";
  for (const auto& p : ast.patterns) {
    const auto term = [](const QueryTerm& t) { return (t.is_variable ? "?" : "CKG:") + t.value; };
    out += " " + term(p.subject) + " ";
    if (p.predicate == Predicate::a) {
      out += "a";
    } else {
      out += std::string(p.inverse ? "^" : "") + "CKG:" + std::string(ckg::to_string(p.predicate));
    }
    out += " " + term(p.object) + " .";
  }
  return out + " }";
}

}  // namespace ctikg::ckg
