#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ctikg/common/error.hpp"
#include "ctikg/common/rng.hpp"
#include "ctikg/defense/defense.hpp"
#include "ctikg/extraction/pipeline.hpp"
#include "ctikg/generator/generator.hpp"
#include "ctikg/lm/train.hpp"

using namespace ctikg;
using namespace ctikg::defense;
using ckg::Predicate;
using ckg::Triple;

namespace {

const std::filesystem::path kData = CTIKG_DATA_DIR;

const std::vector<std::string> kHuman = {
    "APT41 is a state-sponsored espionage group. The group uses spear phishing against "
    "software companies. It deploys custom malware on compromised hosts.",
    "An issue was discovered in the Quiz and Survey Master plugin before 7.0.1 for WordPress. "
    "It made it possible for attackers to upload arbitrary files.",
    "The attackers took advantage of the vulnerability in Win32k framework. The exploit "
    "grants kernel privileges on unpatched hosts.",
    "Malicious domain in SolarWinds hack turned into killswitch service. The domain was "
    "seized to stop the spread of the backdoor.",
};

const std::string kHeldOut =
    "Researchers observed a new loader delivered through poisoned search results. Victims "
    "downloaded a signed installer that quietly fetched a second stage.";

struct Reference {
  tokenizer::BpeVocab vocab = tokenizer::BpeVocab::train(kHuman, 300);
  lm::TrainState<float> state = train();

  lm::TrainState<float> train() const {
    auto cfg = lm::LmConfig::tiny(300);
    cfg.seed = 8;
    auto s = lm::TrainState<float>::fresh(cfg);
    std::vector<corpus::Document> docs;
    for (const auto& body : kHuman) {
      corpus::Document d;
      d.id = "h" + std::to_string(docs.size());
      d.body = body;
      docs.push_back(d);
    }
    const auto blocks = generator::make_blocks(generator::encode_stream(vocab, docs), 32);
    for (int step = 0; step < 60; ++step) lm::train_step(s, lm::Batch(blocks), 1e-2);
    return s;
  }

  ReferenceModel model() const { return {vocab, state.params}; }
};

const Reference& reference() {
  static const Reference r;
  return r;
}

// Counts, for each trigram occurrence, whether any other occurrence equals it.
double repetition_oracle(const std::vector<std::string>& w) {
  if (w.size() < 3) return 0.0;
  const std::size_t n = w.size() - 2;
  std::size_t repeated = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j && w[i] == w[j] && w[i + 1] == w[j + 1] && w[i + 2] == w[j + 2]) {
        ++repeated;
        break;
      }
    }
  }
  return static_cast<double>(repeated) / static_cast<double>(n);
}

ckg::Ckg attribution_graph() {
  ckg::Ckg g;
  const std::vector<Triple> ts = {
      {"apt41", Predicate::a, "Threat-Actor", "r1", 1.0},
      {"apt41", Predicate::attributed_to, "china", "r1", 0.9},
      {"apt41", Predicate::uses, "spear_phishing", "r1", 0.9},
  };
  g.assert_triples(ts);
  return g;
}

}  // namespace

TEST_CASE("lexical scores") {
  const std::vector<std::string> degenerate(6, "the");
  CHECK(repetition_rate(degenerate) == 1.0);
  CHECK(type_token_ratio(degenerate) == doctest::Approx(1.0 / 6.0));
  const std::vector<std::string> distinct = {"alpha", "beta", "gamma", "delta"};
  CHECK(type_token_ratio(distinct) == 1.0);
  CHECK(repetition_rate(distinct) == 0.0);
  const std::vector<std::string> abcabc = {"a", "b", "c", "a", "b", "c"};
  CHECK(repetition_rate(abcabc) == 0.5);

  Rng rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::string> w;
    const auto n = rng.below(25);
    for (std::uint64_t i = 0; i < n; ++i) w.push_back(std::string(1, static_cast<char>('a' + rng.below(3))));
    CHECK(repetition_rate(w) == doctest::Approx(repetition_oracle(w)));
    const double ttr = type_token_ratio(w);
    CHECK((ttr >= 0.0 && ttr <= 1.0));
  }
}

TEST_CASE("perplexity normalization") {
  CHECK(normalize_perplexity(1.0, 300) == 0.0);
  CHECK(normalize_perplexity(300.0, 300) == doctest::Approx(1.0));
  CHECK(normalize_perplexity(1e9, 300) == 1.0);
  CHECK(normalize_perplexity(std::sqrt(300.0), 300) == doctest::Approx(0.5));
  CHECK_THROWS_AS(normalize_perplexity(5.0, 1), Error);

  // All-zero weights give uniform predictions.
  const auto zeros = lm::LmParams<float>::zeros(lm::LmConfig::tiny(300));
  const ReferenceModel uniform{reference().vocab, zeros};
  CHECK(reference_perplexity("Attackers used a loader.", uniform) == doctest::Approx(300.0).epsilon(1e-6));
}

TEST_CASE("disfluency_score") {
  const auto ref = reference().model();
  SUBCASE("degenerate repetition scores high") {
    const auto r = disfluency_score("the the the the the the", ref);
    CHECK(r.repetition_rate == 1.0);
    CHECK(r.composite >= 0.3 + 0.3 * (5.0 / 6.0) - 1e-12);
    CHECK(r.composite == doctest::Approx(0.4 * r.normalized_perplexity + 0.3 + 0.3 * (5.0 / 6.0)));
  }
  SUBCASE("distinct words") {
    const auto r = disfluency_score("Attackers quietly exfiltrated payroll records.", ref);
    CHECK(r.type_token_ratio == 1.0);
    CHECK(r.repetition_rate == 0.0);
    CHECK(r.composite == doctest::Approx(0.4 * r.normalized_perplexity));
  }
  SUBCASE("too short") {
    try {
      disfluency_score("two words", ref);
      FAIL("expected insufficient input");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::insufficient_input);
    }
    CHECK_THROWS_AS(disfluency_score("... -- !!", ref), Error);
    CHECK_THROWS_AS(disfluency_score("", ref), Error);
  }
  SUBCASE("weights") {
    DisfluencyWeights w{1.0, 0.0, 0.0};
    const auto r = disfluency_score("the the the the the the", ref, w);
    CHECK(r.composite == doctest::Approx(r.normalized_perplexity));
    CHECK_THROWS_AS(disfluency_score("a b c", ref, DisfluencyWeights{0.5, 0.5, 0.5}), Error);
    CHECK_THROWS_AS(disfluency_score("a b c", ref, DisfluencyWeights{-0.2, 0.6, 0.6}), Error);
  }
  SUBCASE("bounded and deterministic") {
    Rng rng(4);
    const std::vector<std::string> vocab = {"the", "attack", "group", "uses", "malware", "on", "hosts", "."};
    for (int trial = 0; trial < 30; ++trial) {
      std::string text;
      const auto n = 3 + rng.below(40);
      for (std::uint64_t i = 0; i < n; ++i) text += vocab[rng.below(vocab.size() - 1)] + " ";
      const auto r = disfluency_score(text, ref);
      CHECK((r.composite >= 0.0 && r.composite <= 1.0));
      CHECK((r.normalized_perplexity >= 0.0 && r.normalized_perplexity <= 1.0));
      CHECK(disfluency_score(text, ref).composite == r.composite);
    }
  }
  SUBCASE("generated text is more predictable to the model that wrote it") {
    generator::GenSettings g;
    g.strategy = generator::Strategy::greedy;
    g.max_words = 30;
    const auto sample = generator::generate(reference().state.params, reference().vocab,
                                            "The attackers took advantage", g);
    const auto generated = disfluency_score(sample.full_text(), ref);
    const auto human = disfluency_score(kHeldOut, ref);
    MESSAGE("generated ppl " << generated.reference_perplexity << ", human ppl "
                             << human.reference_perplexity);
    CHECK(generated.reference_perplexity < human.reference_perplexity);
  }
}

TEST_CASE("consistency_check") {
  const auto reference = attribution_graph();
  const auto sv = load_single_valued(kData / "single_valued.txt");
  CHECK(sv == SingleValued{Predicate::attributed_to});

  const Triple russia{"apt41", Predicate::attributed_to, "russia", "fake", 0.9};
  const Triple china{"apt41", Predicate::attributed_to, "china", "other", 0.9};
  const Triple new_tool{"apt41", Predicate::uses, "cobalt_strike", "fake", 0.9};
  const Triple other_actor{"apt29", Predicate::attributed_to, "russia", "fake", 0.9};

  const std::vector<Triple> one{russia};
  const auto conflicts = consistency_check(one, reference, sv);
  REQUIRE(conflicts.size() == 1);
  CHECK(conflicts[0].candidate == russia);
  REQUIRE(conflicts[0].contradicted.size() == 1);
  CHECK(conflicts[0].contradicted[0].object == "china");

  const std::vector<Triple> agree{china};
  CHECK(consistency_check(agree, reference, sv).empty());
  const std::vector<Triple> multi{new_tool};
  CHECK(consistency_check(multi, reference, sv).empty());
  const std::vector<Triple> unseen{other_actor};
  CHECK(consistency_check(unseen, reference, sv).empty());
  CHECK(consistency_check(one, reference, SingleValued{}).empty());

  std::vector<Triple> mixed{new_tool, russia, china, other_actor, russia};
  const auto base = consistency_check(mixed, reference, sv);
  CHECK(base.size() == 1);
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    shuffle(mixed, rng);
    const auto again = consistency_check(mixed, reference, sv);
    REQUIRE(again.size() == base.size());
    CHECK(again[0].candidate.key() == base[0].candidate.key());
  }

  CHECK_THROWS_AS(parse_single_valued("likes\n"), Error);
  CHECK_THROWS_AS(parse_single_valued("a\n"), Error);
  CHECK(parse_single_valued("# none\n\n").empty());
}

TEST_CASE("source registry") {
  const auto reg = SourceRegistry::load(kData / "source_registry.json");
  CHECK(reg.score("no-such-source") == 0.5);
  CHECK(reg.resolve("https://www.krebsonsecurity.com/2020/12/post") == "krebsonsecurity.com");
  CHECK(reg.score("https://example.org/solarwinds-analysis") == 0.9);
  CHECK(reg.score("nvd.nist.gov") == 0.95);
  CHECK_THROWS_AS(SourceRegistry::from_json(nlohmann::json{{"a", 0.5}}), Error);
  CHECK_THROWS_AS(SourceRegistry::from_json(nlohmann::json{{"default", 1.5}}), Error);
  CHECK_THROWS_AS(SourceRegistry::from_json(nlohmann::json{{"default", "high"}}), Error);
}

TEST_CASE("trust_score") {
  SUBCASE("neutral factors") {
    CHECK(trust_composite(0.9, 0, 0.0) == 0.9);
    CHECK(trust_composite(0.7, 0, 0.0) == 0.7);
  }
  SUBCASE("saturation") {
    for (std::size_t k = 4; k < 10; ++k) CHECK(trust_composite(1.0, k, 0.0) == 0.0);
    CHECK(trust_composite(1.0, 2, 0.0) == 0.5);
  }
  SUBCASE("monotone in conflicts and bounded") {
    Rng rng(10);
    for (int trial = 0; trial < 200; ++trial) {
      const double s = rng.uniform();
      const double nov = rng.uniform();
      const TrustWeights w{rng.uniform(), rng.uniform()};
      double prev = 2.0;
      for (std::size_t k = 0; k < 8; ++k) {
        const double c = trust_composite(s, k, nov, w);
        CHECK((c >= 0.0 && c <= 1.0));
        CHECK(c <= prev);
        prev = c;
      }
    }
    CHECK_THROWS_AS(trust_composite(1.2, 0, 0.0), Error);
    CHECK_THROWS_AS(trust_composite(0.5, 0, 0.0, TrustWeights{2.0, 0.5}), Error);
  }
  SUBCASE("SolarWinds fake report against the clean graph") {
    const auto reg = SourceRegistry::load(kData / "source_registry.json");
    const auto clean = ckg::import_tsv(kData / "ckg" / "fig2_clean.tsv");
    const auto fake = corpus::load_corpus(kData / "solarwinds" / "fake.jsonl").at(0);
    const auto pipeline = extraction::Pipeline::from_files(kData / "gazetteer.tsv", kData / "rules.txt");
    const auto candidates = extraction::extract_document(fake, pipeline).triples;
    const auto sv = load_single_valued(kData / "single_valued.txt");
    const auto t = trust_score(fake, reg, clean, candidates, sv);
    CHECK(t.source == "default");
    CHECK(t.source_score == 0.5);
    CHECK(t.conflicts.empty());
    CHECK(t.candidate_entities == 3);
    CHECK(t.novel_entities == 2);
    CHECK(t.novelty == doctest::Approx(2.0 / 3.0));
    // 0.5 * 1 * (1 - 0.5 * 2/3)
    CHECK(t.composite == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(t.composite < t.source_score);
  }
  SUBCASE("conflicting attribution lowers trust") {
    const auto reference = attribution_graph();
    const auto reg = SourceRegistry::from_json(nlohmann::json{{"default", 0.8}});
    corpus::Document doc;
    doc.id = "x";
    doc.provenance = "blog";
    const std::vector<Triple> agree{{"apt41", Predicate::attributed_to, "china", "x", 0.9}};
    const std::vector<Triple> conflict{{"apt41", Predicate::attributed_to, "russia", "x", 0.9}};
    const auto sv = SingleValued{Predicate::attributed_to};
    const auto a = trust_score(doc, reg, reference, agree, sv);
    const auto b = trust_score(doc, reg, reference, conflict, sv);
    CHECK(a.composite == 0.8);
    CHECK(b.conflicts.size() == 1);
    // russia is also unseen: 0.8 * 0.75 * (1 - 0.5 * 0.5)
    CHECK(b.composite == doctest::Approx(0.8 * 0.75 * 0.75));
  }
}
