#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ctikg/ckg/graph.hpp"
#include "ctikg/corpus/document.hpp"
#include "ctikg/lm/model.hpp"
#include "ctikg/tokenizer/bpe.hpp"

namespace ctikg::defense {

// ------------------------------------------------------------------ disfluency

/// Non-negative, summing to 1, so the composite stays in [0, 1].
struct DisfluencyWeights {
  double perplexity = 0.4;
  double repetition = 0.3;
  double low_diversity = 0.3;  // applied to 1 - type_token_ratio

  void validate() const;
};

struct DisfluencyReport {
  std::size_t words = 0;
  double repetition_rate = 0.0;   // trigram occurrences whose trigram occurs more than once
  double type_token_ratio = 0.0;  // distinct / total lowercase words
  double reference_perplexity = 0.0;
  double normalized_perplexity = 0.0;  // clamp(ln ppl / ln vocab, 0, 1)
  double composite = 0.0;
};

double repetition_rate(std::span<const std::string> words);
double type_token_ratio(std::span<const std::string> words);
double normalize_perplexity(double ppl, std::size_t vocab_size);

struct ReferenceModel {
  const tokenizer::BpeVocab& vocab;
  const lm::LmParams<float>& params;
};

/// Perplexity of <begin> text <end> under the reference model.
double reference_perplexity(std::string_view text, const ReferenceModel& ref);

/// Errors: fewer than 3 words (insufficient_input).
DisfluencyReport disfluency_score(std::string_view text, const ReferenceModel& ref,
                                  const DisfluencyWeights& weights = {});

nlohmann::json to_json(const DisfluencyReport& r);

// ----------------------------------------------------------------- consistency

using SingleValued = std::set<ckg::Predicate>;

/// One predicate name per line; '#' comments and blank lines ignored.
SingleValued parse_single_valued(std::string_view text);
SingleValued load_single_valued(const std::filesystem::path& path);

struct Conflict {
  ckg::Triple candidate;
  std::vector<ckg::Triple> contradicted;  // reference triples, sorted by key
};

/// A candidate conflicts when its predicate is single-valued and the reference
/// holds the same (subject, predicate) with another object. Candidates are
/// deduplicated on (subject, predicate, object); output is sorted by candidate.
std::vector<Conflict> consistency_check(std::span<const ckg::Triple> candidates,
                                        const ckg::Ckg& reference, const SingleValued& single_valued);

// ----------------------------------------------------------------------- trust

/// Source -> score in [0, 1]; must contain "default".
class SourceRegistry {
 public:
  static SourceRegistry from_json(const nlohmann::json& j);
  static SourceRegistry load(const std::filesystem::path& path);

  /// Exact provenance match, then the host of a URL provenance, then default.
  double score(std::string_view provenance) const;
  /// The registry key that `score` used.
  std::string resolve(std::string_view provenance) const;

 private:
  std::map<std::string, double, std::less<>> scores_;
};

struct TrustWeights {
  double conflict_penalty = 0.25;  // per conflict, saturating at 1
  double novelty_penalty = 0.5;

  void validate() const;
};

struct TrustAssessment {
  std::string source;  // registry key used
  double source_score = 0.0;
  std::vector<Conflict> conflicts;
  std::size_t candidate_entities = 0;
  std::size_t novel_entities = 0;
  double novelty = 0.0;
  double composite = 0.0;
};

/// Fraction of distinct entities in `candidates` (subjects and non-class
/// objects) that never appear in `reference`; 0 when there are none.
double novelty(std::span<const ckg::Triple> candidates, const ckg::Ckg& reference,
               std::size_t* novel = nullptr, std::size_t* total = nullptr);

/// source * (1 - min(1, conflict_penalty * conflicts)) * (1 - novelty_penalty * novelty)
double trust_composite(double source_score, std::size_t conflicts, double novelty,
                       const TrustWeights& weights = {});

TrustAssessment trust_score(const corpus::Document& doc, const SourceRegistry& registry,
                            const ckg::Ckg& reference, std::span<const ckg::Triple> candidates,
                            const SingleValued& single_valued, const TrustWeights& weights = {});

nlohmann::json to_json(const TrustAssessment& t);

}  // namespace ctikg::defense
