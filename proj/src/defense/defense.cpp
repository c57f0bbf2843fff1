#include "ctikg/defense/defense.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "ctikg/common/error.hpp"
#include "ctikg/common/text.hpp"
#include "ctikg/generator/generator.hpp"

namespace ctikg::defense {

using nlohmann::json;

namespace {

bool is_alnum(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

// Lowercase words with surrounding punctuation removed.
std::vector<std::string> normalized_words(std::string_view s) {
  std::vector<std::string> out;
  for (const auto& span : text::words(s)) {
    auto w = s.substr(span.begin, span.size());
    while (!w.empty() && !is_alnum(w.front())) w.remove_prefix(1);
    while (!w.empty() && !is_alnum(w.back())) w.remove_suffix(1);
    if (!w.empty()) out.push_back(text::to_lower(w));
  }
  return out;
}

bool unit_interval(double x) { return std::isfinite(x) && x >= 0.0 && x <= 1.0; }

}  // namespace

void DisfluencyWeights::validate() const {
  for (double w : {perplexity, repetition, low_diversity}) {
    if (!std::isfinite(w) || w < 0.0) fail(Errc::invalid_argument, "disfluency weights must be non-negative");
  }
  if (std::abs(perplexity + repetition + low_diversity - 1.0) > 1e-9) {
    fail(Errc::invalid_argument, "disfluency weights must sum to 1");
  }
}

double repetition_rate(std::span<const std::string> words) {
  if (words.size() < 3) return 0.0;
  std::map<std::tuple<std::string_view, std::string_view, std::string_view>, std::size_t> counts;
  for (std::size_t i = 0; i + 2 < words.size(); ++i) ++counts[{words[i], words[i + 1], words[i + 2]}];
  std::size_t repeated = 0;
  for (const auto& [tri, n] : counts) {
    if (n > 1) repeated += n;
  }
  return static_cast<double>(repeated) / static_cast<double>(words.size() - 2);
}

double type_token_ratio(std::span<const std::string> words) {
  if (words.empty()) return 0.0;
  const std::set<std::string_view> distinct(words.begin(), words.end());
  return static_cast<double>(distinct.size()) / static_cast<double>(words.size());
}

double normalize_perplexity(double ppl, std::size_t vocab_size) {
  if (vocab_size < 2) fail(Errc::invalid_argument, "vocabulary must hold at least 2 tokens");
  if (std::isnan(ppl)) fail(Errc::non_finite, "perplexity is NaN");
  if (ppl <= 1.0) return 0.0;
  return std::clamp(std::log(ppl) / std::log(static_cast<double>(vocab_size)), 0.0, 1.0);
}

double reference_perplexity(std::string_view text, const ReferenceModel& ref) {
  if (static_cast<std::int64_t>(ref.vocab.size()) != ref.params.config.vocab_size) {
    fail(Errc::shape_mismatch, "reference vocabulary has " + std::to_string(ref.vocab.size()) +
                                   " tokens, model expects " +
                                   std::to_string(ref.params.config.vocab_size));
  }
  TokenSeq seq{ref.vocab.begin_token()};
  const auto body = ref.vocab.encode(text);
  seq.insert(seq.end(), body.begin(), body.end());
  seq.push_back(ref.vocab.end_token());
  const std::vector<TokenSeq> seqs{seq};
  return generator::perplexity(ref.params, seqs);
}

DisfluencyReport disfluency_score(std::string_view text, const ReferenceModel& ref,
                                  const DisfluencyWeights& weights) {
  weights.validate();
  const auto words = normalized_words(text);
  if (words.size() < 3) {
    fail(Errc::insufficient_input,
         "disfluency scoring needs at least 3 words, got " + std::to_string(words.size()));
  }
  DisfluencyReport r;
  r.words = words.size();
  r.repetition_rate = repetition_rate(words);
  r.type_token_ratio = type_token_ratio(words);
  r.reference_perplexity = reference_perplexity(text, ref);
  r.normalized_perplexity = normalize_perplexity(r.reference_perplexity, ref.vocab.size());
  r.composite = weights.perplexity * r.normalized_perplexity + weights.repetition * r.repetition_rate +
                weights.low_diversity * (1.0 - r.type_token_ratio);
  r.composite = std::clamp(r.composite, 0.0, 1.0);
  return r;
}

json to_json(const DisfluencyReport& r) {
  return {{"words", r.words},
          {"repetition_rate", r.repetition_rate},
          {"type_token_ratio", r.type_token_ratio},
          {"reference_perplexity", r.reference_perplexity},
          {"normalized_perplexity", r.normalized_perplexity},
          {"composite", r.composite}};
}

SingleValued parse_single_valued(std::string_view text) {
  SingleValued out;
  std::size_t line_no = 0;
  for (const auto& raw : text::split(text, '\n')) {
    ++line_no;
    auto line = text::trim(raw);
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = text::trim(line.substr(0, hash));
    if (line.empty()) continue;
    const auto p = ckg::try_parse_predicate(line);
    if (!p) {
      fail(Errc::format, "single-valued line " + std::to_string(line_no) + ": unknown predicate '" +
                             std::string(line) + "'");
    }
    if (*p == ckg::Predicate::a) {
      fail(Errc::format, "single-valued line " + std::to_string(line_no) + ": 'a' cannot be single-valued");
    }
    out.insert(*p);
  }
  return out;
}

SingleValued load_single_valued(const std::filesystem::path& path) {
  return parse_single_valued(text::read_file(path));
}

std::vector<Conflict> consistency_check(std::span<const ckg::Triple> candidates,
                                        const ckg::Ckg& reference, const SingleValued& single_valued) {
  std::map<std::tuple<std::string, ckg::Predicate, std::string>, ckg::Triple> unique;
  for (const auto& c : candidates) {
    if (!single_valued.count(c.predicate)) continue;
    auto key = std::make_tuple(c.subject, c.predicate, c.object);
    auto it = unique.find(key);
    if (it == unique.end() || ckg::KeyLess{}(c, it->second)) unique[key] = c;
  }
  std::vector<Conflict> out;
  reference.read([&](const ckg::Ckg& g) {
    for (const auto& [key, cand] : unique) {
      Conflict conflict{cand, {}};
      for (const ckg::Triple* t : g.indexed(cand.predicate)) {
        if (t->subject == cand.subject && t->object != cand.object) conflict.contradicted.push_back(*t);
      }
      if (!conflict.contradicted.empty()) {
        std::sort(conflict.contradicted.begin(), conflict.contradicted.end(), ckg::KeyLess{});
        out.push_back(std::move(conflict));
      }
    }
  });
  return out;
}

SourceRegistry SourceRegistry::from_json(const json& j) {
  if (!j.is_object()) fail(Errc::format, "source registry must be a JSON object");
  SourceRegistry r;
  for (const auto& [source, value] : j.items()) {
    if (!value.is_number()) fail(Errc::format, "source registry: score of '" + source + "' is not a number");
    const double s = value.get<double>();
    if (!unit_interval(s)) fail(Errc::format, "source registry: score of '" + source + "' outside [0, 1]");
    r.scores_[source] = s;
  }
  if (!r.scores_.count("default")) fail(Errc::format, "source registry needs a 'default' entry");
  return r;
}

SourceRegistry SourceRegistry::load(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(text::read_file(path));
  } catch (const json::exception& e) {
    fail(Errc::format, path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::string SourceRegistry::resolve(std::string_view provenance) const {
  if (scores_.count(provenance)) return std::string(provenance);
  if (auto scheme = provenance.find("://"); scheme != std::string_view::npos) {
    std::string host(provenance.substr(scheme + 3));
    if (const auto slash = host.find('/'); slash != std::string::npos) host.resize(slash);
    if (host.rfind("www.", 0) == 0) host.erase(0, 4);
    if (scores_.count(host)) return host;
  }
  return "default";
}

double SourceRegistry::score(std::string_view provenance) const {
  return scores_.find(resolve(provenance))->second;
}

void TrustWeights::validate() const {
  if (!unit_interval(conflict_penalty) || !unit_interval(novelty_penalty)) {
    fail(Errc::invalid_argument, "trust penalties must lie in [0, 1]");
  }
}

double novelty(std::span<const ckg::Triple> candidates, const ckg::Ckg& reference, std::size_t* novel,
               std::size_t* total) {
  std::set<std::string> entities;
  for (const auto& t : candidates) {
    entities.insert(t.subject);
    if (t.predicate != ckg::Predicate::a) entities.insert(t.object);
  }
  const auto known = reference.entities();
  const auto unseen = static_cast<std::size_t>(
      std::count_if(entities.begin(), entities.end(), [&](const std::string& e) { return !known.count(e); }));
  if (novel) *novel = unseen;
  if (total) *total = entities.size();
  return entities.empty() ? 0.0 : static_cast<double>(unseen) / static_cast<double>(entities.size());
}

double trust_composite(double source_score, std::size_t conflicts, double novelty_fraction,
                       const TrustWeights& weights) {
  weights.validate();
  if (!unit_interval(source_score) || !unit_interval(novelty_fraction)) {
    fail(Errc::invalid_argument, "source score and novelty must lie in [0, 1]");
  }
  const double conflict_factor =
      1.0 - std::min(1.0, weights.conflict_penalty * static_cast<double>(conflicts));
  return source_score * conflict_factor * (1.0 - weights.novelty_penalty * novelty_fraction);
}

TrustAssessment trust_score(const corpus::Document& doc, const SourceRegistry& registry,
                            const ckg::Ckg& reference, std::span<const ckg::Triple> candidates,
                            const SingleValued& single_valued, const TrustWeights& weights) {
  TrustAssessment t;
  t.source = registry.resolve(doc.provenance);
  t.source_score = registry.score(doc.provenance);
  t.conflicts = consistency_check(candidates, reference, single_valued);
  t.novelty = novelty(candidates, reference, &t.novel_entities, &t.candidate_entities);
  t.composite = trust_composite(t.source_score, t.conflicts.size(), t.novelty, weights);
  return t;
}

json to_json(const TrustAssessment& t) {
  json conflicts = json::array();
  for (const auto& c : t.conflicts) {
    json contradicted = json::array();
    for (const auto& r : c.contradicted) contradicted.push_back(ckg::to_json(r));
    conflicts.push_back({{"candidate", ckg::to_json(c.candidate)}, {"contradicted", contradicted}});
  }
  return {{"source", t.source},
          {"source_score", t.source_score},
          {"conflicts", conflicts},
          {"candidate_entities", t.candidate_entities},
          {"novel_entities", t.novel_entities},
          {"novelty", t.novelty},
          {"composite", t.composite}};
}

}  // namespace ctikg::defense
