#include <doctest.h>

#include <algorithm>
#include <set>

#include "ctikg/ckg/graph.hpp"
#include "ctikg/common/error.hpp"
#include "ctikg/common/rng.hpp"
#include "ctikg/corpus/document.hpp"
#include "ctikg/extraction/canonical.hpp"
#include "ctikg/extraction/pipeline.hpp"
#include "ctikg/lm/train.hpp"

using namespace ctikg;
using namespace ctikg::extraction;

namespace {

const std::filesystem::path kData = CTIKG_DATA_DIR;

const std::string kFakeSentence =
    "Malicious domain in SolarWinds hack turned into killswitch service where the malicious user "
    "clicks an icon (i.e., a cross-domain link) to connect the service page to a specific target.";

const Pipeline& pipeline() {
  static const Pipeline p = Pipeline::from_files(kData / "gazetteer.tsv", kData / "rules.txt");
  return p;
}

std::set<std::pair<std::string, std::string>> surface_classes(const std::vector<Entity>& es) {
  std::set<std::pair<std::string, std::string>> out;
  for (const auto& e : es) out.insert({e.surface, std::string(to_string(e.cls))});
  return out;
}

std::set<std::tuple<std::string, std::string, std::string>> relational(
    const std::vector<ckg::Triple>& ts) {
  std::set<std::tuple<std::string, std::string, std::string>> out;
  for (const auto& t : ts) {
    if (t.predicate != ckg::Predicate::a) {
      out.insert({t.subject, std::string(ckg::to_string(t.predicate)), t.object});
    }
  }
  return out;
}

struct Embeddings {
  tokenizer::BpeVocab vocab;
  lm::TrainState<float> state;
  EmbeddingSource source;

  Embeddings()
      : vocab(tokenizer::BpeVocab::train(
            std::vector<std::string>{kFakeSentence, "The SolarWinds hack used Orion Software."}, 300)),
        state(lm::TrainState<float>::fresh(lm::LmConfig::tiny(300))) {
    source = {&vocab, &state.params.token_embedding};
  }
};

const Embeddings& embeddings() {
  static const Embeddings e;
  return e;
}

}  // namespace

TEST_CASE("canonicalize") {
  CHECK(canonicalize("SolarWinds hack") == "solarwinds_hack");
  CHECK(canonicalize("  clicks  an icon ") == "clicks_an_icon");
  CHECK(canonicalize("Solarwinds-hack") == "solarwinds_hack");
  CHECK(canonicalize("CVE-2019-0001") == "cve_2019_0001");
  CHECK_THROWS_AS(canonicalize("  "), Error);
  CHECK_THROWS_AS(canonicalize("--"), Error);

  Rng rng(17);
  const std::string alphabet = "aZ9 _-.\t/Q";
  for (int i = 0; i < 500; ++i) {
    std::string s;
    const auto n = 1 + rng.below(20);
    for (std::uint64_t j = 0; j < n; ++j) s += alphabet[rng.below(alphabet.size())];
    std::string c;
    try {
      c = canonicalize(s);
    } catch (const Error&) {
      continue;
    }
    CHECK(canonicalize(c) == c);
    CHECK(std::all_of(c.begin(), c.end(), [](char ch) {
      return (ch >= 'a' && ch <= 'z') || (ch >= '0' && ch <= '9') || ch == '_';
    }));
    CHECK(c.front() != '_');
    CHECK(c.back() != '_');
  }
}

TEST_CASE("extract_entities") {
  const auto& p = pipeline();
  SUBCASE("fake SolarWinds sentence") {
    const auto es = extract_entities(kFakeSentence, p.gazetteer, p.rules, "sw-fake-001");
    const std::set<std::pair<std::string, std::string>> expected{
        {"SolarWinds hack", "Campaign"},
        {"clicks an icon", "Attack-Pattern"},
        {"connect the service", "Attack-Pattern"}};
    CHECK(surface_classes(es) == expected);
    CHECK(es.size() == 3);
    for (const auto& e : es) CHECK(e.source_doc == "sw-fake-001");
  }
  SUBCASE("CVE pattern") {
    const auto es = extract_entities("CVE-2019-0001 allows remote execution", p.gazetteer, p.rules);
    REQUIRE(es.size() == 1);
    CHECK(es[0].surface == "CVE-2019-0001");
    CHECK(es[0].cls == EntityClass::vulnerability);
    CHECK(es[0].span == text::Span{0, 13});
  }
  SUBCASE("no hits") {
    CHECK(extract_entities("the weather was pleasant all week", p.gazetteer, p.rules).empty());
    CHECK(extract_entities("", p.gazetteer, p.rules).empty());
  }
  SUBCASE("longest match and tie breaking") {
    Gazetteer g;
    g.add("service", EntityClass::tool);
    g.add("service page", EntityClass::product);
    g.add("Acme hack", EntityClass::malware);
    const auto rules = RuleSet::parse("regex\tCampaign\t\\b([A-Z][a-z]+ hack)\\b\n");
    const auto es = extract_entities("the service page and the service; Acme hack", g, rules);
    REQUIRE(es.size() == 3);
    CHECK(es[0].surface == "service page");
    CHECK(es[0].cls == EntityClass::product);
    CHECK(es[1].surface == "service");
    CHECK(es[2].surface == "Acme hack");
    CHECK(es[2].cls == EntityClass::malware);  // gazetteer beats an equal-length pattern
  }
  SUBCASE("whole terms, case-insensitive") {
    Gazetteer g;
    g.add("clicks an icon", EntityClass::attack_pattern);
    const RuleSet none;
    CHECK(extract_entities("He CLICKS AN ICON.", g, none).size() == 1);
    CHECK(extract_entities("He clicks an icons.", g, none).empty());
    CHECK(extract_entities("He clicks, an icon.", g, none).empty());
  }
  SUBCASE("spans never overlap and match their slice") {
    const std::vector<std::string> texts = {
        kFakeSentence,
        "APT41 used Cobalt Strike and Mimikatz; CVE-2021-26855 hit Microsoft Exchange 2019.1 via "
        "evil-domain.com and 10.0.0.1. The Sunburst campaign used Sunburst.",
        "An issue was discovered in the Quiz and Survey Master plugin before 7.0.1 for WordPress.",
    };
    for (const auto& t : texts) {
      const auto es = extract_entities(t, p.gazetteer, p.rules);
      CHECK(es == extract_entities(t, p.gazetteer, p.rules));
      for (std::size_t i = 0; i < es.size(); ++i) {
        CHECK(es[i].span.begin < es[i].span.end);
        CHECK(t.substr(es[i].span.begin, es[i].span.size()) == es[i].surface);
        if (i > 0) CHECK(es[i - 1].span.end <= es[i].span.begin);
      }
    }
  }
  SUBCASE("file errors") {
    CHECK_THROWS_AS(Gazetteer::parse("just one field\n"), Error);
    CHECK_THROWS_AS(Gazetteer::parse("x\tNotAClass\n"), Error);
    CHECK_THROWS_AS(RuleSet::parse("regex\tTool\t(unclosed\n"), Error);
    CHECK_THROWS_AS(RuleSet::parse("glob\tTool\tx\n"), Error);
    CHECK(Gazetteer::parse("# comment\n\nfoo\tTool\n").size() == 1);
  }
}

TEST_CASE("pair_features") {
  const auto& emb = embeddings();
  const std::string text = "The SolarWinds hack used Orion Software. Later clicks an icon.";
  const Entity hack{"SolarWinds hack", {4, 19}, EntityClass::campaign, ""};
  const Entity used{"used", {20, 24}, EntityClass::attack_pattern, ""};
  const Entity orion{"Orion Software", {25, 39}, EntityClass::tool, ""};
  const Entity icon{"clicks an icon", {47, 61}, EntityClass::attack_pattern, ""};
  const std::size_t d = emb.source.dim();

  SUBCASE("layout and oracle") {
    const auto f = pair_features(hack, icon, text, emb.source);
    REQUIRE(f.size() == 2 * d + 2);
    // Direct table lookup of the tokens of each surface.
    const auto check_mean = [&](const std::string& surface, std::size_t offset) {
      const auto ids = emb.vocab.encode(surface);
      for (std::size_t i = 0; i < d; ++i) {
        double sum = 0.0;
        for (TokenId id : ids) sum += emb.state.params.token_embedding(static_cast<std::size_t>(id), i);
        CHECK(f[offset + i] == doctest::Approx(sum / static_cast<double>(ids.size())).epsilon(1e-12));
      }
    };
    check_mean(hack.surface, 0);
    check_mean(icon.surface, d);
    CHECK(f[2 * d] == doctest::Approx(4.0 / kDistanceScale));
    CHECK(f[2 * d + 1] == 0.0);
  }
  SUBCASE("symmetry and adjacency") {
    const auto same = pair_features(hack, hack, text, emb.source);
    for (std::size_t i = 0; i < d; ++i) CHECK(same[i] == same[d + i]);
    const auto adjacent = pair_features(hack, used, text, emb.source);
    CHECK(adjacent[2 * d] == 0.0);
    CHECK(adjacent[2 * d + 1] == 1.0);
    CHECK(pair_features(hack, orion, text, emb.source)[2 * d] == doctest::Approx(1.0 / kDistanceScale));
  }
  SUBCASE("entity not in text") {
    const Entity wrong{"SolarWinds hack", {0, 15}, EntityClass::campaign, ""};
    CHECK_THROWS_AS(pair_features(wrong, icon, text, emb.source), Error);
  }
}

TEST_CASE("extract_relations") {
  const auto& p = pipeline();
  SUBCASE("fake SolarWinds sentence") {
    const auto es = extract_entities(kFakeSentence, p.gazetteer, p.rules);
    const auto ts = extract_relations(es, kFakeSentence, "sw-fake-001", {});
    const std::set<std::tuple<std::string, std::string, std::string>> expected{
        {"solarwinds_hack", "uses", "clicks_an_icon"},
        {"solarwinds_hack", "uses", "connect_the_service"}};
    CHECK(relational(ts) == expected);
    CHECK(ts.size() == 5);
    for (const auto& t : ts) {
      CHECK(t.provenance == "sw-fake-001");
      if (t.predicate == ckg::Predicate::a) {
        CHECK(t.trust == 1.0);
      } else {
        CHECK(t.trust == doctest::Approx(0.9));
      }
    }
  }
  SUBCASE("single entity") {
    const std::string text = "APT41 was active.";
    const auto es = extract_entities(text, p.gazetteer, p.rules);
    REQUIRE(es.size() == 1);
    const auto ts = extract_relations(es, text, "d", {});
    REQUIRE(ts.size() == 1);
    CHECK(ts[0] == ckg::Triple{"apt41", ckg::Predicate::a, "Threat-Actor", "d", 1.0});
  }
  SUBCASE("threshold ceiling") {
    const auto es = extract_entities(kFakeSentence, p.gazetteer, p.rules);
    RelationOptions o;
    o.threshold = 1.01;
    CHECK(relational(extract_relations(es, kFakeSentence, "x", o)).empty());
  }
  SUBCASE("relational endpoints carry class assertions") {
    const std::string text =
        "APT41 used Cobalt Strike and exploited CVE-2021-26855 in Microsoft Exchange. "
        "Separately TrickBot targeted WordPress.";
    const auto es = extract_entities(text, p.gazetteer, p.rules);
    const auto ts = extract_relations(es, text, "doc", {});
    std::set<std::string> classed;
    for (const auto& t : ts) {
      if (t.predicate == ckg::Predicate::a) classed.insert(t.subject);
    }
    CHECK_FALSE(relational(ts).empty());
    for (const auto& t : ts) {
      if (t.predicate == ckg::Predicate::a) continue;
      CHECK(classed.count(t.subject));
      CHECK(classed.count(t.object));
    }
    // No cross-sentence fallback relation.
    CHECK_FALSE(relational(ts).count({"apt41", "targets", "wordpress"}));
    CHECK(relational(ts).count({"apt41", "exploits", "cve_2021_26855"}));
  }
  SUBCASE("trained model") {
    const auto& emb = embeddings();
    const auto pairs = read_labeled_pairs(kData / "relations.jsonl");
    REQUIRE(pairs.size() == 27);
    const auto model = train_relation_model(pairs, emb.source);
    CHECK(model.feature_dim() == 2 * emb.source.dim() + 2);
    CHECK(RelationModel::from_json(model.to_json()) == model);
    CHECK(train_relation_model(pairs, emb.source) == model);

    const auto es = extract_entities(kFakeSentence, p.gazetteer, p.rules);
    RelationOptions o;
    o.model = &model;
    o.embeddings = &emb.source;
    const auto ts = extract_relations(es, kFakeSentence, "x", o);
    for (const auto& t : ts) CHECK((t.trust >= 0.5 && t.trust <= 1.0));
    o.threshold = 1.01;
    CHECK(relational(extract_relations(es, kFakeSentence, "x", o)).empty());
    o.embeddings = nullptr;
    CHECK_THROWS_AS(extract_relations(es, kFakeSentence, "x", o), Error);
  }
}

TEST_CASE("pipeline on the SolarWinds true reports reproduces the clean fixture graph") {
  const auto docs = corpus::load_corpus(kData / "solarwinds" / "true.jsonl");
  ckg::Ckg g;
  const auto triples = extract_corpus(docs, pipeline());
  CHECK(g.assert_triples(triples).rejected.empty());
  CHECK(g == ckg::import_tsv(kData / "ckg" / "fig2_clean.tsv"));
  CHECK(extract_corpus(docs, pipeline()) == triples);
}
