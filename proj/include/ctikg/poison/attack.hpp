#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctikg/ckg/graph.hpp"
#include "ctikg/ckg/query.hpp"
#include "ctikg/corpus/document.hpp"
#include "ctikg/extraction/pipeline.hpp"
#include "ctikg/generator/generator.hpp"

namespace ctikg::poison {

struct AttackPlan {
  double fake_ratio = 0.0;                          // fraction of output documents that are fake
  std::map<std::string, std::string> substitutions;  // surface -> replacement
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const AttackPlan& p);
/// Keys: fake_ratio (required), substitutions, seed. Unknown keys are rejected.
AttackPlan plan_from_json(const nlohmann::json& j);
AttackPlan load_plan(const std::filesystem::path& path);

/// Number of fakes that makes them `ratio` of the combined corpus:
/// round(ratio * n_true / (1 - ratio)). A ratio of 1 has no finite answer and
/// is handled by the caller.
std::size_t fakes_needed(double ratio, std::size_t n_true);

using GroundTruth = std::map<std::string, corpus::Authenticity>;

/// Documents as ingested plus the label sidecar that survives label stripping.
struct PoisonedCorpus {
  std::vector<corpus::Document> documents;
  GroundTruth ground_truth;

  std::size_t fake_count() const;
};

/// True documents keep their order; the first `fakes_needed` fakes of a seeded
/// shuffle are inserted at seeded positions. Ratio 1 yields every fake and no
/// true document. Errors: a fake not labelled fake_cti or a true document not
/// labelled true_cti (invalid_argument), duplicate ids (invalid_argument), too
/// few fakes (insufficient_input).
PoisonedCorpus build_poisoned_corpus(std::span<const corpus::Document> true_docs,
                                     std::span<const corpus::Document> fakes,
                                     const AttackPlan& plan);

/// Attacker's view: authenticity written as "unknown" on every document.
/// Refuses (Errc::containment) while the corpus holds fakes unless the caller
/// acknowledges that the file stays local.
void export_attacker_view(const std::filesystem::path& path, const PoisonedCorpus& corpus,
                          bool acknowledge_containment, const nlohmann::json& meta = {});
nlohmann::json ground_truth_to_json(const GroundTruth& gt);
GroundTruth ground_truth_from_json(const nlohmann::json& j);

// ------------------------------------------------------------ targeted rewrite

struct Substitution {
  std::string from;
  std::string to;
  std::size_t position = 0;  // byte offset in the input text
};

struct RewriteResult {
  std::string text;
  std::vector<Substitution> applied;
  std::optional<std::string> warning;  // set when nothing was replaced
};

/// Literal, case-sensitive, left-to-right; at each position the longest
/// matching key wins and scanning resumes after the replaced span.
/// Errors: empty map or empty key (invalid_argument).
RewriteResult rewrite_text(std::string_view text, const std::map<std::string, std::string>& subs);

struct RewrittenSample {
  generator::GeneratedSample sample;
  std::vector<Substitution> applied;  // positions refer to the continuation
  std::optional<std::string> warning;
};

/// Rewrites the continuation; the prompt is the true text and stays as is.
RewrittenSample targeted_rewrite(const generator::GeneratedSample& sample,
                                 const std::map<std::string, std::string>& subs);

// ------------------------------------------------------------------ attack run

struct NamedQuery {
  std::string name;
  std::string text;
};

/// Every *.rq file in a directory, sorted by file name; name is the stem.
std::vector<NamedQuery> load_queries(const std::filesystem::path& dir);

struct CorruptedQuery {
  std::string name;
  std::string query;
  std::vector<std::string> clean;
  std::vector<std::string> poisoned;
};

struct Attribution {
  std::size_t added = 0;
  std::size_t added_from_fake = 0;  // added triples whose provenance is labelled fake
  std::size_t fake_in_poisoned = 0;  // fake-provenance triples in the poisoned graph
  double precision = 1.0;            // added_from_fake / added
  double recall = 1.0;               // added_from_fake / fake_in_poisoned
};

/// Scores the delta's provenance against ground-truth labels.
Attribution attribute(const ckg::GraphDelta& delta, const ckg::Ckg& poisoned,
                      const GroundTruth& truth);

/// Document-level detector result, positive class = fake.
struct DetectorCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  double precision() const;
  double recall() const;
};

using Detector = std::function<bool(const corpus::Document&)>;

struct AttackReport {
  std::vector<ckg::Triple> poisoned_triples;  // added, fake provenance
  std::vector<ckg::Triple> unattributed;      // added, provenance not labelled fake
  std::vector<ckg::Triple> removed;
  Attribution attribution;
  std::vector<CorruptedQuery> corrupted_queries;
  std::optional<DetectorCounts> detector;
  std::size_t clean_size = 0;
  std::size_t poisoned_size = 0;

  bool empty() const {
    return poisoned_triples.empty() && unattributed.empty() && removed.empty() &&
           corrupted_queries.empty();
  }
};

nlohmann::json to_json(const AttackReport& r);

/// Builds both graphs with the same pipeline (concurrently), diffs them and
/// evaluates every query on both. Failures are rethrown with the phase name.
AttackReport run_attack(std::span<const corpus::Document> clean,
                        const PoisonedCorpus& poisoned, std::span<const NamedQuery> queries,
                        const extraction::Pipeline& pipeline, const Detector& detector = {});

/// Graph of a corpus under a pipeline.
ckg::Ckg build_graph(std::span<const corpus::Document> docs, const extraction::Pipeline& pipeline);

}  // namespace ctikg::poison
