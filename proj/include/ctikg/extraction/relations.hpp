#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ctikg/ckg/triple.hpp"
#include "ctikg/extraction/entities.hpp"
#include "ctikg/lm/tensor.hpp"
#include "ctikg/tokenizer/bpe.hpp"

namespace ctikg::extraction {

/// Token embeddings borrowed from a language model: surfaces are encoded with
/// the tokenizer and their rows averaged. Both referents must outlive this.
struct EmbeddingSource {
  const tokenizer::BpeVocab* vocab = nullptr;
  const lm::Tensor<float>* table = nullptr;  // [vocab x dim]

  std::size_t dim() const { return table ? table->cols() : 0; }
  std::vector<double> mean_embedding(std::string_view surface) const;
};

/// Gap words are normalised by this count and clipped at 1.
inline constexpr double kDistanceScale = 32.0;

/// [mean(e1) | mean(e2) | min(1, gap words / scale) | same sentence]
/// Length 2*dim + 2. Errc::invalid_argument when an entity does not match
/// its slice of `text`.
std::vector<double> pair_features(const Entity& e1, const Entity& e2, std::string_view text,
                                  const EmbeddingSource& embeddings);

inline constexpr std::array<ckg::Predicate, 4> kRelationPredicates = {
    ckg::Predicate::uses, ckg::Predicate::exploits, ckg::Predicate::targets,
    ckg::Predicate::mitigates};

/// One labelled entity pair; an empty predicate means "no relation".
struct LabeledPair {
  std::string doc_id;
  std::string text;
  text::Span subject;
  text::Span object;
  std::optional<ckg::Predicate> predicate;
};

/// JSONL records {doc_id, text?, subject: [b,e], object: [b,e], predicate}
/// where predicate is a relation name or "none". Missing text is looked up
/// by doc_id through `lookup`.
std::vector<LabeledPair> read_labeled_pairs(
    const std::filesystem::path& path,
    const std::function<std::optional<std::string>(const std::string&)>& lookup = {});

struct TrainOptions {
  std::size_t epochs = 300;
  double lr = 0.5;
  double l2 = 1e-4;
};

/// One-vs-rest logistic scorer over pair features.
class RelationModel {
 public:
  RelationModel() = default;
  explicit RelationModel(std::size_t feature_dim);

  struct Prediction {
    ckg::Predicate predicate;
    double score;
  };

  /// Highest-probability relation (earlier predicate on ties).
  Prediction predict(std::span<const double> features) const;
  double probability(std::size_t cls, std::span<const double> features) const;

  /// Full-batch gradient descent from zero weights; deterministic.
  static RelationModel train(std::span<const std::vector<double>> features,
                             std::span<const std::optional<ckg::Predicate>> labels,
                             const TrainOptions& options = {});

  std::size_t feature_dim() const { return feature_dim_; }

  nlohmann::json to_json() const;
  static RelationModel from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static RelationModel load(const std::filesystem::path& path);

  bool operator==(const RelationModel&) const = default;

 private:
  std::size_t feature_dim_ = 0;
  // Per predicate: weights followed by the bias.
  std::vector<std::vector<double>> weights_;
};

RelationModel train_relation_model(std::span<const LabeledPair> pairs,
                                   const EmbeddingSource& embeddings,
                                   const TrainOptions& options = {});

/// Fallback within one sentence, subject any of Campaign / Threat-Actor /
/// Malware: object Attack-Pattern, Tool or Malware gives `uses` (0.9),
/// Vulnerability gives `exploits` (0.8), Product gives `targets` (0.7).
std::optional<RelationModel::Prediction> rule_relation(const Entity& subject, const Entity& object,
                                                       std::string_view text);

struct RelationOptions {
  double threshold = 0.5;
  const RelationModel* model = nullptr;            // rule fallback when null
  const EmbeddingSource* embeddings = nullptr;     // required with a model
};

/// Class assertions (trust 1) for every entity, then relational triples for
/// ordered entity pairs whose score reaches the threshold. Subjects and
/// objects are canonical ids; duplicate keys keep the highest trust.
std::vector<ckg::Triple> extract_relations(std::span<const Entity> entities, std::string_view text,
                                           std::string_view provenance,
                                           const RelationOptions& options);

}  // namespace ctikg::extraction
