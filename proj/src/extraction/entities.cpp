#include "ctikg/extraction/entities.hpp"

#include <algorithm>

#include "ctikg/common/error.hpp"

namespace ctikg::extraction {

namespace {

struct ClassName {
  EntityClass cls;
  std::string_view name;
};

constexpr ClassName kClassNames[] = {
    {EntityClass::campaign, "Campaign"},       {EntityClass::attack_pattern, "Attack-Pattern"},
    {EntityClass::tool, "Tool"},               {EntityClass::malware, "Malware"},
    {EntityClass::vulnerability, "Vulnerability"}, {EntityClass::threat_actor, "Threat-Actor"},
    {EntityClass::product, "Product"},         {EntityClass::indicator, "Indicator"},
};

bool is_term_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

struct Term {
  text::Span span;
  std::string lower;
};

std::vector<Term> terms_of(std::string_view s) {
  std::vector<Term> out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (!is_term_char(s[i])) {
      ++i;
      continue;
    }
    const std::size_t begin = i;
    while (i < s.size() && is_term_char(s[i])) ++i;
    out.push_back({{begin, i}, text::to_lower(s.substr(begin, i - begin))});
  }
  return out;
}

bool joinable_gap(std::string_view gap) {
  if (gap.empty()) return false;
  return std::all_of(gap.begin(), gap.end(), [](char c) { return text::is_space(c) || c == '-'; });
}

std::vector<std::string> lines_of(std::string_view text) { return text::split(text, '\n'); }

std::vector<std::string> fields_of(const std::string& line) {
  std::string l = line;
  if (!l.empty() && l.back() == '\r') l.pop_back();
  return text::split(l, '\t');
}

}  // namespace

std::string_view to_string(EntityClass c) {
  for (const auto& cn : kClassNames) {
    if (cn.cls == c) return cn.name;
  }
  return "?";
}

std::optional<EntityClass> try_parse_entity_class(std::string_view s) {
  for (const auto& cn : kClassNames) {
    if (cn.name == s) return cn.cls;
  }
  return std::nullopt;
}

EntityClass parse_entity_class(std::string_view s) {
  if (auto c = try_parse_entity_class(s)) return *c;
  fail(Errc::semantic, "unknown entity class '" + std::string(s) + "'");
}

const std::vector<EntityClass>& all_entity_classes() {
  static const std::vector<EntityClass> all = [] {
    std::vector<EntityClass> v;
    for (const auto& cn : kClassNames) v.push_back(cn.cls);
    return v;
  }();
  return all;
}

void SurfaceList::add(std::string_view surface, EntityClass cls) {
  auto terms = terms_of(surface);
  if (terms.empty()) {
    fail(Errc::invalid_argument, "surface '" + std::string(surface) + "' contains no terms");
  }
  Entry e;
  e.cls = cls;
  for (auto& t : terms) e.terms.push_back(std::move(t.lower));
  auto& bucket = by_first_term_[e.terms.front()];
  for (const auto& existing : bucket) {
    if (existing.terms == e.terms && existing.cls == cls) return;
  }
  bucket.push_back(std::move(e));
  ++count_;
}

std::vector<SurfaceList::Match> SurfaceList::find_all(std::string_view s) const {
  std::vector<Match> out;
  const auto terms = terms_of(s);
  for (std::size_t i = 0; i < terms.size(); ++i) {
    auto it = by_first_term_.find(terms[i].lower);
    if (it == by_first_term_.end()) continue;
    for (const auto& entry : it->second) {
      const std::size_t n = entry.terms.size();
      if (i + n > terms.size()) continue;
      bool ok = true;
      for (std::size_t j = 1; j < n && ok; ++j) {
        const auto& prev = terms[i + j - 1].span;
        const auto& cur = terms[i + j].span;
        ok = terms[i + j].lower == entry.terms[j] &&
             joinable_gap(s.substr(prev.end, cur.begin - prev.end));
      }
      if (ok) out.push_back({{terms[i].span.begin, terms[i + n - 1].span.end}, entry.cls});
    }
  }
  return out;
}

Gazetteer Gazetteer::parse(std::string_view text) {
  Gazetteer g;
  std::size_t line_no = 0;
  for (const auto& line : lines_of(text)) {
    ++line_no;
    const auto trimmed = text::trim(line);
    if (trimmed.empty() || trimmed.front() == '#') continue;
    const auto f = fields_of(line);
    if (f.size() != 2) {
      fail(Errc::format, "gazetteer line " + std::to_string(line_no) +
                             ": expected 'surface<TAB>class'");
    }
    const auto cls = try_parse_entity_class(text::trim(f[1]));
    if (!cls) {
      fail(Errc::format, "gazetteer line " + std::to_string(line_no) + ": unknown class '" +
                             f[1] + "'");
    }
    g.add(text::trim(f[0]), *cls);
  }
  return g;
}

Gazetteer Gazetteer::load(const std::filesystem::path& path) {
  return parse(text::read_file(path));
}

RuleSet RuleSet::parse(std::string_view text) {
  RuleSet rules;
  std::size_t line_no = 0;
  for (const auto& line : lines_of(text)) {
    ++line_no;
    const auto trimmed = text::trim(line);
    if (trimmed.empty() || trimmed.front() == '#') continue;
    const auto where = "rules line " + std::to_string(line_no) + ": ";
    const auto f = fields_of(line);
    if (f.size() != 3) fail(Errc::format, where + "expected 'kind<TAB>class<TAB>pattern'");
    const auto cls = try_parse_entity_class(f[1]);
    if (!cls) fail(Errc::format, where + "unknown class '" + f[1] + "'");
    if (f[0] == "phrase") {
      rules.phrases_.add(f[2], *cls);
    } else if (f[0] == "regex" || f[0] == "iregex") {
      auto flags = std::regex::ECMAScript;
      if (f[0] == "iregex") flags |= std::regex::icase;
      try {
        rules.patterns_.push_back({std::regex(f[2], flags), *cls, f[2]});
      } catch (const std::regex_error& e) {
        fail(Errc::format, where + "bad pattern: " + e.what());
      }
    } else {
      fail(Errc::format, where + "unknown rule kind '" + f[0] + "'");
    }
  }
  return rules;
}

RuleSet RuleSet::load(const std::filesystem::path& path) { return parse(text::read_file(path)); }

std::vector<Entity> extract_entities(std::string_view text, const Gazetteer& gazetteer,
                                     const RuleSet& rules, std::string_view source_doc) {
  struct Candidate {
    text::Span span;
    EntityClass cls;
    int priority;
  };
  std::vector<Candidate> candidates;
  for (const auto& m : gazetteer.surfaces().find_all(text)) candidates.push_back({m.span, m.cls, 2});
  for (const auto& m : rules.phrases().find_all(text)) candidates.push_back({m.span, m.cls, 1});
  const std::string owned(text);
  for (const auto& p : rules.patterns()) {
    for (auto it = std::sregex_iterator(owned.begin(), owned.end(), p.re);
         it != std::sregex_iterator(); ++it) {
      const auto& m = *it;
      const std::size_t group = (m.size() > 1 && m[1].matched) ? 1 : 0;
      const auto begin = static_cast<std::size_t>(m.position(group));
      const auto len = static_cast<std::size_t>(m.length(group));
      if (len == 0) continue;
      candidates.push_back({{begin, begin + len}, p.cls, 0});
    }
  }

  std::sort(candidates.begin(), candidates.end(), [](const Candidate& x, const Candidate& y) {
    if (x.span.size() != y.span.size()) return x.span.size() > y.span.size();
    if (x.priority != y.priority) return x.priority > y.priority;
    if (x.span.begin != y.span.begin) return x.span.begin < y.span.begin;
    return x.cls < y.cls;
  });

  std::vector<Candidate> kept;
  for (const auto& c : candidates) {
    const bool overlaps = std::any_of(kept.begin(), kept.end(), [&](const Candidate& k) {
      return c.span.begin < k.span.end && k.span.begin < c.span.end;
    });
    if (!overlaps) kept.push_back(c);
  }
  std::sort(kept.begin(), kept.end(),
            [](const Candidate& x, const Candidate& y) { return x.span.begin < y.span.begin; });

  std::vector<Entity> out;
  for (const auto& c : kept) {
    out.push_back({std::string(text.substr(c.span.begin, c.span.size())), c.span, c.cls,
                   std::string(source_doc)});
  }
  return out;
}

}  // namespace ctikg::extraction
