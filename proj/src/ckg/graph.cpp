#include "ctikg/ckg/graph.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include "ctikg/common/error.hpp"
#include "ctikg/common/text.hpp"
#include "ctikg/extraction/entities.hpp"

namespace ctikg::ckg {

using nlohmann::json;

namespace {

struct PredicateName {
  Predicate p;
  std::string_view name;
};

constexpr PredicateName kPredicates[] = {
    {Predicate::a, "a"},
    {Predicate::uses, "uses"},
    {Predicate::exploits, "exploits"},
    {Predicate::targets, "targets"},
    {Predicate::mitigates, "mitigates"},
    {Predicate::attributed_to, "attributed_to"},
};

bool has_control(std::string_view s) {
  return std::any_of(s.begin(), s.end(), [](char c) { return c == '\t' || c == '\n' || c == '\r'; });
}

}  // namespace

std::string_view to_string(Predicate p) {
  for (const auto& pn : kPredicates) {
    if (pn.p == p) return pn.name;
  }
  return "?";
}

std::optional<Predicate> try_parse_predicate(std::string_view s) {
  for (const auto& pn : kPredicates) {
    if (pn.name == s) return pn.p;
  }
  return std::nullopt;
}

Predicate parse_predicate(std::string_view s) {
  if (auto p = try_parse_predicate(s)) return *p;
  fail(Errc::semantic, "unknown predicate '" + std::string(s) + "'");
}

std::string to_string(const Triple& t) {
  return "(" + t.subject + ", " + std::string(to_string(t.predicate)) + ", " + t.object + ") @" +
         t.provenance;
}

std::string validate_triple(const Triple& t) {
  if (t.subject.empty() || t.object.empty()) return "empty subject or object";
  if (t.provenance.empty()) return "missing provenance";
  if (has_control(t.subject) || has_control(t.object) || has_control(t.provenance)) {
    return "tab or newline inside a field";
  }
  if (!std::isfinite(t.trust) || t.trust < 0.0 || t.trust > 1.0) return "trust outside [0, 1]";
  if (t.predicate == Predicate::a && !extraction::try_parse_entity_class(t.object)) {
    return "unknown class '" + t.object + "'";
  }
  return {};
}

Ckg::Ckg(const Ckg& other) {
  std::shared_lock lock(other.mutex_);
  triples_ = other.triples_;
  rebuild_indexes();
}

Ckg& Ckg::operator=(const Ckg& other) {
  if (this == &other) return *this;
  std::set<Triple, KeyLess> copy;
  {
    std::shared_lock lock(other.mutex_);
    copy = other.triples_;
  }
  std::unique_lock lock(mutex_);
  triples_ = std::move(copy);
  rebuild_indexes();
  return *this;
}

void Ckg::rebuild_indexes() {
  classes_.clear();
  by_predicate_.clear();
  for (const auto& t : triples_) {
    by_predicate_[t.predicate].push_back(&t);
    if (t.predicate == Predicate::a) classes_[t.subject].insert(t.object);
  }
}

bool Ckg::insert_unlocked(const Triple& t) {
  auto [it, inserted] = triples_.insert(t);
  if (!inserted) return false;
  auto& bucket = by_predicate_[t.predicate];
  const auto pos = std::lower_bound(bucket.begin(), bucket.end(), &*it,
                                    [](const Triple* a, const Triple* b) { return KeyLess{}(*a, *b); });
  bucket.insert(pos, &*it);
  if (t.predicate == Predicate::a) classes_[t.subject].insert(t.object);
  return true;
}

AssertReport Ckg::assert_triples(std::span<const Triple> triples) {
  AssertReport report;
  std::unique_lock lock(mutex_);
  for (const auto& t : triples) {
    const auto problem = validate_triple(t);
    if (!problem.empty()) {
      report.rejected.push_back(to_string(t) + ": " + problem);
      continue;
    }
    if (insert_unlocked(t)) ++report.added;
  }
  return report;
}

AssertReport Ckg::assert_records(std::span<const json> records) {
  std::vector<Triple> valid;
  AssertReport report;
  for (std::size_t i = 0; i < records.size(); ++i) {
    try {
      valid.push_back(triple_from_json(records[i]));
    } catch (const Error& e) {
      report.rejected.push_back("record " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  auto inner = assert_triples(valid);
  report.added = inner.added;
  report.rejected.insert(report.rejected.end(), inner.rejected.begin(), inner.rejected.end());
  return report;
}

bool Ckg::remove(const Triple& t) {
  std::unique_lock lock(mutex_);
  auto it = triples_.find(t);
  if (it == triples_.end() || !(*it == t)) return false;
  triples_.erase(it);
  rebuild_indexes();
  return true;
}

std::size_t Ckg::size() const {
  std::shared_lock lock(mutex_);
  return triples_.size();
}

bool Ckg::contains(const Triple& t) const {
  std::shared_lock lock(mutex_);
  auto it = triples_.find(t);
  return it != triples_.end() && *it == t;
}

std::vector<Triple> Ckg::triples() const {
  std::shared_lock lock(mutex_);
  return {triples_.begin(), triples_.end()};
}

std::vector<Triple> Ckg::with_predicate(Predicate p) const {
  std::shared_lock lock(mutex_);
  std::vector<Triple> out;
  for (const auto* t : indexed(p)) out.push_back(*t);
  return out;
}

const std::vector<const Triple*>& Ckg::indexed(Predicate p) const {
  static const std::vector<const Triple*> empty;
  auto it = by_predicate_.find(p);
  return it == by_predicate_.end() ? empty : it->second;
}

std::set<std::string> Ckg::classes_of(const std::string& id) const {
  std::shared_lock lock(mutex_);
  auto it = classes_.find(id);
  return it == classes_.end() ? std::set<std::string>{} : it->second;
}

std::set<std::string> Ckg::entities() const {
  std::shared_lock lock(mutex_);
  std::set<std::string> out;
  for (const auto& t : triples_) {
    out.insert(t.subject);
    if (t.predicate != Predicate::a) out.insert(t.object);
  }
  return out;
}

std::vector<std::string> Ckg::provenance_of(const std::string& subject, Predicate p,
                                            const std::string& object) const {
  std::shared_lock lock(mutex_);
  std::vector<std::string> out;
  for (const auto* t : indexed(p)) {
    if (t->subject == subject && t->object == object) out.push_back(t->provenance);
  }
  return out;
}

json to_json(const Triple& t) {
  return {{"subject", t.subject},
          {"predicate", to_string(t.predicate)},
          {"object", t.object},
          {"provenance", t.provenance},
          {"trust", t.trust}};
}

Triple triple_from_json(const json& j) {
  Triple t;
  try {
    t.subject = j.at("subject").get<std::string>();
    t.predicate = parse_predicate(j.at("predicate").get<std::string>());
    t.object = j.at("object").get<std::string>();
    t.provenance = j.at("provenance").get<std::string>();
    t.trust = j.value("trust", 1.0);
  } catch (const json::exception& e) {
    fail(Errc::format, std::string("malformed triple: ") + e.what());
  }
  return t;
}

std::string export_tsv(const Ckg& g, std::span<const std::string> header_comments) {
  std::string out;
  for (const auto& c : header_comments) out += "# " + c + "\n";
  for (const auto& t : g.triples()) {
    out += t.subject + '\t' + std::string(to_string(t.predicate)) + '\t' + t.object + '\t' +
           t.provenance + '\t' + text::format_double(t.trust) + '\n';
  }
  return out;
}

void export_tsv(const Ckg& g, const std::filesystem::path& path,
                std::span<const std::string> header_comments) {
  text::write_file(path, export_tsv(g, header_comments));
}

Ckg parse_tsv(std::string_view text) {
  std::vector<Triple> triples;
  std::size_t line_no = 0;
  for (auto line : text::split(text, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty() || line.front() == '#') continue;
    const auto where = "graph line " + std::to_string(line_no) + ": ";
    const auto f = text::split(line, '\t');
    if (f.size() != 5) {
      fail(Errc::format, where + "expected 5 tab-separated fields, found " + std::to_string(f.size()));
    }
    Triple t;
    t.subject = f[0];
    const auto p = try_parse_predicate(f[1]);
    if (!p) fail(Errc::format, where + "unknown predicate '" + f[1] + "'");
    t.predicate = *p;
    t.object = f[2];
    t.provenance = f[3];
    try {
      t.trust = text::parse_double(f[4]);
    } catch (const Error&) {
      fail(Errc::format, where + "trust '" + f[4] + "' is not a number");
    }
    const auto problem = validate_triple(t);
    if (!problem.empty()) fail(Errc::format, where + problem);
    triples.push_back(std::move(t));
  }
  Ckg g;
  g.assert_triples(triples);
  return g;
}

Ckg import_tsv(const std::filesystem::path& path) {
  try {
    return parse_tsv(text::read_file(path));
  } catch (const Error& e) {
    if (e.code() == Errc::format) fail(Errc::format, path.string() + ": " + e.what());
    throw;
  }
}

GraphDelta diff(const Ckg& before, const Ckg& after) {
  const auto a = before.triples();
  const auto b = after.triples();
  const auto full_less = [](const Triple& x, const Triple& y) {
    if (x.key() != y.key()) return x.key() < y.key();
    return x.trust < y.trust;
  };
  GraphDelta d;
  std::set_difference(b.begin(), b.end(), a.begin(), a.end(), std::back_inserter(d.added), full_less);
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(d.removed), full_less);
  for (const auto& t : d.added) d.added_by_provenance[t.provenance].push_back(t);
  return d;
}

Ckg apply(const Ckg& before, const GraphDelta& delta) {
  Ckg out = before;
  for (const auto& t : delta.removed) out.remove(t);
  out.assert_triples(delta.added);
  return out;
}

json to_json(const GraphDelta& d) {
  json added = json::array(), removed = json::array(), by_prov = json::object();
  for (const auto& t : d.added) added.push_back(to_json(t));
  for (const auto& t : d.removed) removed.push_back(to_json(t));
  for (const auto& [prov, ts] : d.added_by_provenance) by_prov[prov] = ts.size();
  return {{"added", added}, {"removed", removed}, {"added_by_provenance", by_prov}};
}

GraphDelta delta_from_json(const json& j) {
  GraphDelta d;
  try {
    for (const auto& t : j.at("added")) d.added.push_back(triple_from_json(t));
    for (const auto& t : j.at("removed")) d.removed.push_back(triple_from_json(t));
  } catch (const json::exception& e) {
    fail(Errc::format, std::string("malformed delta: ") + e.what());
  }
  for (const auto& t : d.added) d.added_by_provenance[t.provenance].push_back(t);
  return d;
}

}  // namespace ctikg::ckg
