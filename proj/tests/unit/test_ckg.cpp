#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>
#include <thread>

#include "ctikg/ckg/query.hpp"
#include "ctikg/common/error.hpp"
#include "ctikg/common/rng.hpp"
#include "ctikg/common/text.hpp"

using namespace ctikg;
using namespace ctikg::ckg;

namespace {

const std::filesystem::path kData = CTIKG_DATA_DIR;

using Strings = std::vector<std::string>;

// Enumerates every assignment of the query variables over all graph values.
Strings brute_force(const Ckg& g, const QueryAst& ast) {
  std::set<std::string> domain;
  std::set<std::string> vars;
  for (const auto& t : g.triples()) {
    domain.insert(t.subject);
    domain.insert(t.object);
  }
  for (const auto& p : ast.patterns) {
    if (p.subject.is_variable) vars.insert(p.subject.value);
    if (p.object.is_variable) vars.insert(p.object.value);
  }
  const Strings values(domain.begin(), domain.end());
  const Strings names(vars.begin(), vars.end());
  const auto all = g.triples();
  std::set<std::string> out;
  std::vector<std::size_t> idx(names.size(), 0);
  if (values.empty()) return {};
  while (true) {
    std::map<std::string, std::string> b;
    for (std::size_t i = 0; i < names.size(); ++i) b[names[i]] = values[idx[i]];
    const auto resolve = [&](const QueryTerm& t) { return t.is_variable ? b[t.value] : t.value; };
    const bool ok = std::all_of(ast.patterns.begin(), ast.patterns.end(), [&](const TriplePattern& p) {
      auto s = resolve(p.subject);
      auto o = resolve(p.object);
      if (p.inverse) std::swap(s, o);
      return std::any_of(all.begin(), all.end(), [&](const Triple& t) {
        return t.subject == s && t.predicate == p.predicate && t.object == o;
      });
    });
    if (ok) out.insert(b[ast.select]);
    std::size_t k = 0;
    while (k < idx.size() && ++idx[k] == values.size()) idx[k++] = 0;
    if (k == idx.size()) break;
  }
  return {out.begin(), out.end()};
}

Ckg random_graph(Rng& rng, std::size_t n) {
  const Strings ids = {"e0", "e1", "e2", "e3", "e4", "e5"};
  const Strings classes = {"Campaign", "Attack-Pattern", "Tool", "Malware"};
  const std::vector<Predicate> preds = {Predicate::uses, Predicate::exploits, Predicate::targets};
  std::vector<Triple> ts;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = ids[rng.below(ids.size())];
    const auto prov = "d" + std::to_string(rng.below(3));
    if (rng.below(3) == 0) {
      ts.push_back({s, Predicate::a, classes[rng.below(classes.size())], prov, 1.0});
    } else {
      ts.push_back({s, preds[rng.below(preds.size())], ids[rng.below(ids.size())], prov,
                    0.5 + 0.1 * static_cast<double>(rng.below(5))});
    }
  }
  Ckg g;
  g.assert_triples(ts);
  return g;
}

std::size_t syntax_position(std::string_view q) {
  try {
    parse_query(q);
  } catch (const SyntaxError& e) {
    return e.position();
  }
  FAIL("expected a syntax error for: " << q);
  return 0;
}

Errc error_code(std::string_view q) {
  try {
    parse_query(q);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error for: " << q);
  return Errc::runtime;
}

}  // namespace

TEST_CASE("fixture queries") {
  const auto clean = import_tsv(kData / "ckg" / "fig2_clean.tsv");
  const auto poisoned = import_tsv(kData / "ckg" / "fig3_poisoned.tsv");
  const auto click_bait = text::read_file(kData / "queries" / "campaigns_using_click_bait.rq");
  const auto patterns = text::read_file(kData / "queries" / "solarwinds_attack_patterns.rq");

  CHECK(query(clean, click_bait).empty());
  CHECK(query(poisoned, click_bait) == Strings{"solarwinds_hack"});
  CHECK(query(clean, patterns) == Strings{"malicious_code", "offloading_sensitive_tools"});
  CHECK(query(poisoned, patterns) == Strings{"clicks_an_icon", "connect_the_service_page",
                                             "malicious_code", "offloading_sensitive_tools"});
  CHECK(poisoned.size() == 15);
  CHECK(clean.size() == 10);
  CHECK(poisoned.provenance_of("solarwinds_hack", Predicate::uses, "clicks_an_icon") ==
        Strings{"sw-fake-001"});
}

TEST_CASE("query parsing") {
  SUBCASE("structure") {
    const auto ast = parse_query(
        "select ?x where { ?x a CKG:Campaign ; CKG:uses ?y . ?y ^CKG:mitigates CKG:Some-Thing }");
    CHECK(ast.select == "x");
    REQUIRE(ast.patterns.size() == 3);
    CHECK(ast.patterns[0] == TriplePattern{{true, "x"}, Predicate::a, false, {false, "Campaign"}});
    CHECK(ast.patterns[1] == TriplePattern{{true, "x"}, Predicate::uses, false, {true, "y"}});
    CHECK(ast.patterns[2] ==
          TriplePattern{{true, "y"}, Predicate::mitigates, true, {false, "some_thing"}});
    const auto again = parse_query(to_string(ast));
    CHECK(again.select == ast.select);
    CHECK(again.patterns == ast.patterns);
  }
  SUBCASE("syntax errors carry positions") {
    CHECK(syntax_position("SELECT WHERE {}") == 7);
    CHECK(syntax_position("SELECT ?x {") == 10);
    CHECK(syntax_position("SELECT ?x WHERE { ?x a CKG:Campaign") == 35);
    CHECK(syntax_position("SELECT ?x WHERE { ?x a CKG:Campaign } extra") == 38);
    CHECK(syntax_position("SELECT ?x WHERE { ?x a FOO:Campaign }") == 23);
    CHECK(syntax_position("") == 0);
  }
  SUBCASE("semantic errors") {
    CHECK(error_code("SELECT ?x WHERE { ?x CKG:likes ?y }") == Errc::semantic);
    CHECK(error_code("SELECT ?x WHERE { ?x a CKG:Spaceship }") == Errc::semantic);
    CHECK(error_code("SELECT ?z WHERE { ?x a CKG:Campaign }") == Errc::semantic);
  }
}

TEST_CASE("query evaluation matches exhaustive enumeration") {
  Rng rng(2024);
  const Strings queries = {
      "SELECT ?x WHERE { ?x a CKG:Campaign }",
      "SELECT ?y WHERE { ?x CKG:uses ?y }",
      "SELECT ?x WHERE { ?x CKG:uses ?y . ?y a CKG:Tool }",
      "SELECT ?x WHERE { ?x a CKG:Malware ; ^CKG:uses ?y . ?y CKG:exploits ?z }",
      "SELECT ?y WHERE { CKG:e1 CKG:targets ?y . ?y CKG:uses ?y }",
      "SELECT ?x WHERE { ?x ^CKG:exploits CKG:e2 }",
  };
  for (int trial = 0; trial < 20; ++trial) {
    const auto g = random_graph(rng, 25);
    for (const auto& q : queries) {
      const auto ast = parse_query(q);
      CHECK(query(g, ast) == brute_force(g, ast));
    }
  }
}

TEST_CASE("inverse predicate equals swapped pattern") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto g = random_graph(rng, 30);
    CHECK(query(g, "SELECT ?x WHERE { ?x ^CKG:uses ?y }") ==
          query(g, "SELECT ?x WHERE { ?y CKG:uses ?x }"));
    CHECK(query(g, "SELECT ?x WHERE { CKG:e0 ^CKG:targets ?x }") ==
          query(g, "SELECT ?x WHERE { ?x CKG:targets CKG:e0 }"));
  }
}

TEST_CASE("assert semantics") {
  Ckg g;
  const std::vector<Triple> ts = {
      {"x", Predicate::a, "Campaign", "d1", 1.0},
      {"x", Predicate::uses, "y", "d1", 0.9},
      {"x", Predicate::uses, "y", "d2", 0.9},
  };
  CHECK(g.assert_triples(ts).added == 3);
  const auto snapshot = g;
  const auto again = g.assert_triples(ts);
  CHECK(again.added == 0);
  CHECK(again.rejected.empty());
  CHECK(g == snapshot);
  CHECK(g.classes_of("x") == std::set<std::string>{"Campaign"});
  CHECK(g.provenance_of("x", Predicate::uses, "y") == Strings{"d1", "d2"});

  const std::vector<Triple> bad = {
      {"", Predicate::uses, "y", "d", 0.5},
      {"x", Predicate::uses, "y", "d", 1.5},
      {"x", Predicate::uses, "y", "", 0.5},
      {"x", Predicate::a, "Spaceship", "d", 1.0},
  };
  const auto r = g.assert_triples(bad);
  CHECK(r.added == 0);
  CHECK(r.rejected.size() == 4);
  CHECK(g == snapshot);

  const std::vector<nlohmann::json> records = {
      {{"subject", "z"}, {"predicate", "targets"}, {"object", "w"}, {"provenance", "d3"}},
      {{"subject", "z"}, {"predicate", "likes"}, {"object", "w"}, {"provenance", "d3"}},
  };
  const auto rr = g.assert_records(records);
  CHECK(rr.added == 1);
  CHECK(rr.rejected.size() == 1);
  CHECK(g.contains({"z", Predicate::targets, "w", "d3", 1.0}));
  CHECK(g.remove({"z", Predicate::targets, "w", "d3", 1.0}));
  CHECK_FALSE(g.remove({"z", Predicate::targets, "w", "d3", 1.0}));
}

TEST_CASE("tsv round trip and errors") {
  Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    const auto g = random_graph(rng, 40);
    const Strings header = {"seed 77"};
    const auto text = export_tsv(g, header);
    CHECK(text.rfind("# seed 77\n", 0) == 0);
    CHECK(parse_tsv(text) == g);
    CHECK(export_tsv(parse_tsv(text), header) == text);
  }
  const auto fixture = text::read_file(kData / "ckg" / "fig3_poisoned.tsv");
  const Strings header = {"SolarWinds graph after ingesting one fake report (provenance sw-fake-001)"};
  CHECK(export_tsv(parse_tsv(fixture), header) == fixture);

  try {
    parse_tsv("a\tuses\tb\td\t1\na\tuses\tb\td\n");
    FAIL("expected a format error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::format);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_tsv("a\tlikes\tb\td\t1\n"), Error);
  CHECK_THROWS_AS(parse_tsv("a\tuses\tb\td\tlots\n"), Error);
}

TEST_CASE("diff and apply") {
  Rng rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    const auto before = random_graph(rng, 20);
    const auto after = random_graph(rng, 20);
    const auto d = diff(before, after);
    CHECK(apply(before, d) == after);
    CHECK(diff(before, before).empty());

    std::set<std::string> expected_added;
    std::set<std::string> expected_removed;
    const auto b = before.triples();
    const auto a = after.triples();
    for (const auto& t : a) {
      if (std::find(b.begin(), b.end(), t) == b.end()) expected_added.insert(to_string(t));
    }
    for (const auto& t : b) {
      if (std::find(a.begin(), a.end(), t) == a.end()) expected_removed.insert(to_string(t));
    }
    std::set<std::string> added;
    std::set<std::string> removed;
    for (const auto& t : d.added) added.insert(to_string(t));
    for (const auto& t : d.removed) removed.insert(to_string(t));
    CHECK(added == expected_added);
    CHECK(removed == expected_removed);

    std::size_t grouped = 0;
    for (const auto& [prov, ts] : d.added_by_provenance) {
      for (const auto& t : ts) CHECK(t.provenance == prov);
      grouped += ts.size();
    }
    CHECK(grouped == d.added.size());

    const auto round = delta_from_json(to_json(d));
    CHECK(round.added == d.added);
    CHECK(round.removed == d.removed);
  }
  const auto clean = import_tsv(kData / "ckg" / "fig2_clean.tsv");
  const auto poisoned = import_tsv(kData / "ckg" / "fig3_poisoned.tsv");
  const auto d = diff(clean, poisoned);
  CHECK(d.removed.empty());
  CHECK(d.added.size() == 5);
  REQUIRE(d.added_by_provenance.size() == 1);
  CHECK(d.added_by_provenance.begin()->first == "sw-fake-001");
}

TEST_CASE("concurrent readers") {
  const auto g = import_tsv(kData / "ckg" / "fig3_poisoned.tsv");
  const auto expected = query(g, "SELECT ?x WHERE { ?x a CKG:Attack-Pattern }");
  std::vector<std::thread> threads;
  std::vector<int> ok(4, 0);
  for (int i = 0; i < 4; ++i) {
    threads.emplace_back([&, i] {
      for (int k = 0; k < 50; ++k) {
        ok[i] += query(g, "SELECT ?x WHERE { ?x a CKG:Attack-Pattern }") == expected ? 1 : 0;
      }
    });
  }
  for (auto& t : threads) t.join();
  for (int v : ok) CHECK(v == 50);
}
