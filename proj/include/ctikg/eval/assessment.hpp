#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ctikg/corpus/document.hpp"
#include "ctikg/generator/generator.hpp"

namespace ctikg::eval {

inline constexpr std::size_t kPairsPerAssessment = 56;
inline constexpr std::size_t kTrueItemsPerTask = 28;

struct AnnotationItem {
  std::string item_id;
  std::string text;
  corpus::Authenticity truth = corpus::Authenticity::unknown;
  std::string pair_id;  // id of the true document; shared by the item and its counterpart
};

struct AnnotationTask {
  std::string name;
  std::vector<AnnotationItem> items;
  std::uint64_t seed = 0;

  const AnnotationItem* find(std::string_view item_id) const;
};

struct Assessment {
  AnnotationTask first;
  AnnotationTask second;
};

/// A true sample (truncated text) and the fake generated from its first sentence.
struct SamplePair {
  std::string pair_id;
  std::string true_text;
  std::string fake_text;
};

/// Splits `pairs` in half by seed: the first half puts its true text in the
/// first task and its fake in the second, the other half the reverse. Items
/// are shuffled within each task and get opaque ids ("A-01", "B-17", ...).
/// Errors: odd pair count or duplicate pair ids (invalid_argument).
Assessment assemble_tasks(std::span<const SamplePair> pairs, std::uint64_t seed);

/// Usable pool documents: true_cti, truncation not flagged, and a first-sentence
/// prompt that fits the model context.
std::vector<corpus::Document> usable_documents(std::span<const corpus::Document> pool,
                                               const tokenizer::BpeVocab& vocab,
                                               std::size_t context_length);

/// Picks `pairs` usable documents by seed, generates a fake counterpart for
/// each and assembles the two tasks. Errors: too few usable documents
/// (insufficient_input, message carries the count).
Assessment build_assessment(std::span<const corpus::Document> pool, const lm::LmParams<float>& params,
                            const tokenizer::BpeVocab& vocab, const generator::GenSettings& settings,
                            std::uint64_t seed, std::size_t pairs = kPairsPerAssessment);

/// Participant view: ids and texts only.
nlohmann::json participant_view(const AnnotationTask& task);
/// Full task including hidden truth and pair ids.
nlohmann::json to_json(const AnnotationTask& task);
AnnotationTask task_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Assessment& a);
Assessment assessment_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------- scoring

/// Actual class first: tp = true labelled true, fn = true labelled fake,
/// fp = fake labelled true, tn = fake labelled fake.
struct ConfusionMatrix {
  std::size_t tp = 0, fn = 0, fp = 0, tn = 0;

  std::size_t total() const { return tp + fn + fp + tn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

struct Rates {
  double accuracy = 0.0;            // (tp + tn) / total
  double fraction_correct = 0.0;    // same quantity, reported under the study's wording
  double fraction_incorrect = 0.0;  // (fn + fp) / total
  double fake_labelled_true = 0.0;  // fp / (fp + tn)
  double true_labelled_true = 0.0;  // tp / (tp + fn)
};

struct ScoreReport {
  ConfusionMatrix matrix;
  Rates rates;
  std::vector<std::string> notes;
};

/// Errors: empty matrix (empty_input).
Rates rates_of(const ConfusionMatrix& m);

/// Rates plus notes; the published study counts get a note that its reported
/// 36.8% accuracy does not follow from them.
ScoreReport score_matrix(const ConfusionMatrix& m);

struct Label {
  std::string participant;
  std::string item_id;
  bool labelled_true = false;
};

/// CSV with header "participant,item_id,label"; label is true/fake (also
/// true_cti/fake_cti). Errors: Errc::format naming the line.
std::vector<Label> parse_labels(std::string_view csv);
std::vector<Label> load_labels(const std::filesystem::path& path);

/// Each participant must label every item of each task they touch, once.
/// Errors: unknown item, duplicate label (format); missing labels
/// (insufficient_input, listing the item ids).
ScoreReport score_annotations(std::span<const AnnotationTask> tasks, std::span<const Label> labels);

nlohmann::json to_json(const ScoreReport& r);
ConfusionMatrix matrix_from_json(const nlohmann::json& j);

}  // namespace ctikg::eval
