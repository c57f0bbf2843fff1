#include "ctikg/extraction/relations.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "ctikg/common/error.hpp"
#include "ctikg/common/text.hpp"
#include "ctikg/extraction/canonical.hpp"

namespace ctikg::extraction {

using nlohmann::json;

std::vector<double> EmbeddingSource::mean_embedding(std::string_view surface) const {
  if (!vocab || !table) fail(Errc::invalid_argument, "embedding source is not configured");
  if (table->rows() != vocab->size()) {
    fail(Errc::shape_mismatch, "embedding table has " + std::to_string(table->rows()) +
                                   " rows for a vocabulary of " + std::to_string(vocab->size()));
  }
  const auto ids = vocab->encode(surface);
  std::vector<double> out(dim(), 0.0);
  if (ids.empty()) return out;
  for (TokenId id : ids) {
    const auto row = table->row(static_cast<std::size_t>(id));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += row[i];
  }
  for (auto& v : out) v /= static_cast<double>(ids.size());
  return out;
}

namespace {

void check_entity(const Entity& e, std::string_view text) {
  if (e.span.begin >= e.span.end || e.span.end > text.size() ||
      text.substr(e.span.begin, e.span.size()) != e.surface) {
    fail(Errc::invalid_argument, "entity '" + e.surface + "' does not occur at its span");
  }
}

std::size_t sentence_of(const std::vector<text::Span>& sentences, std::size_t offset) {
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (offset < sentences[i].end) return i;
  }
  return sentences.size();
}

bool same_sentence(const Entity& a, const Entity& b, std::string_view text) {
  const auto s = text::sentences(text);
  return sentence_of(s, a.span.begin) == sentence_of(s, b.span.begin);
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

std::vector<double> pair_features(const Entity& e1, const Entity& e2, std::string_view text,
                                  const EmbeddingSource& embeddings) {
  check_entity(e1, text);
  check_entity(e2, text);
  auto out = embeddings.mean_embedding(e1.surface);
  const auto second = embeddings.mean_embedding(e2.surface);
  out.insert(out.end(), second.begin(), second.end());

  const Entity& first = e1.span.begin <= e2.span.begin ? e1 : e2;
  const Entity& later = &first == &e1 ? e2 : e1;
  std::size_t gap_words = 0;
  if (later.span.begin > first.span.end) {
    gap_words = text::word_count(text.substr(first.span.end, later.span.begin - first.span.end));
  }
  out.push_back(std::min(1.0, static_cast<double>(gap_words) / kDistanceScale));
  out.push_back(same_sentence(e1, e2, text) ? 1.0 : 0.0);
  return out;
}

std::vector<LabeledPair> read_labeled_pairs(
    const std::filesystem::path& path,
    const std::function<std::optional<std::string>(const std::string&)>& lookup) {
  std::vector<LabeledPair> out;
  std::size_t line_no = 0;
  for (const auto& raw : text::split(text::read_file(path), '\n')) {
    ++line_no;
    const auto line = text::trim(raw);
    if (line.empty()) continue;
    const auto where = path.filename().string() + " line " + std::to_string(line_no) + ": ";
    try {
      const json j = json::parse(line);
      if (j.contains("_meta")) continue;
      LabeledPair p;
      p.doc_id = j.at("doc_id").get<std::string>();
      if (j.contains("text")) {
        p.text = j.at("text").get<std::string>();
      } else {
        std::optional<std::string> found;
        if (lookup) found = lookup(p.doc_id);
        if (!found) fail(Errc::format, where + "no text for document '" + p.doc_id + "'");
        p.text = *found;
      }
      const auto span_of = [&](const char* key) {
        const auto a = j.at(key).get<std::vector<std::size_t>>();
        if (a.size() != 2 || a[0] >= a[1] || a[1] > p.text.size()) {
          fail(Errc::format, where + "bad " + key + " span");
        }
        return text::Span{a[0], a[1]};
      };
      p.subject = span_of("subject");
      p.object = span_of("object");
      const auto pred = j.at("predicate").get<std::string>();
      if (pred != "none") {
        const auto parsed = ckg::try_parse_predicate(pred);
        if (!parsed || *parsed == ckg::Predicate::a) {
          fail(Errc::format, where + "unknown relation '" + pred + "'");
        }
        p.predicate = parsed;
      }
      out.push_back(std::move(p));
    } catch (const json::exception& e) {
      fail(Errc::format, where + e.what());
    }
  }
  return out;
}

RelationModel::RelationModel(std::size_t feature_dim)
    : feature_dim_(feature_dim),
      weights_(kRelationPredicates.size(), std::vector<double>(feature_dim + 1, 0.0)) {}

double RelationModel::probability(std::size_t cls, std::span<const double> features) const {
  if (features.size() != feature_dim_) {
    fail(Errc::shape_mismatch, "relation model expects " + std::to_string(feature_dim_) +
                                   " features, got " + std::to_string(features.size()));
  }
  const auto& w = weights_.at(cls);
  double z = w[feature_dim_];
  for (std::size_t i = 0; i < feature_dim_; ++i) z += w[i] * features[i];
  return sigmoid(z);
}

RelationModel::Prediction RelationModel::predict(std::span<const double> features) const {
  Prediction best{kRelationPredicates[0], -1.0};
  for (std::size_t c = 0; c < kRelationPredicates.size(); ++c) {
    const double p = probability(c, features);
    if (p > best.score) best = {kRelationPredicates[c], p};
  }
  return best;
}

RelationModel RelationModel::train(std::span<const std::vector<double>> features,
                                   std::span<const std::optional<ckg::Predicate>> labels,
                                   const TrainOptions& options) {
  if (features.empty()) fail(Errc::empty_input, "no labelled pairs to train on");
  if (features.size() != labels.size()) fail(Errc::shape_mismatch, "features and labels differ in count");
  const std::size_t dim = features[0].size();
  for (const auto& f : features) {
    if (f.size() != dim) fail(Errc::shape_mismatch, "feature vectors differ in length");
  }
  RelationModel model(dim);
  const double n = static_cast<double>(features.size());
  std::vector<double> grad(dim + 1);
  for (std::size_t c = 0; c < kRelationPredicates.size(); ++c) {
    auto& w = model.weights_[c];
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t s = 0; s < features.size(); ++s) {
        const double y = labels[s] == kRelationPredicates[c] ? 1.0 : 0.0;
        const double err = model.probability(c, features[s]) - y;
        for (std::size_t i = 0; i < dim; ++i) grad[i] += err * features[s][i];
        grad[dim] += err;
      }
      for (std::size_t i = 0; i < dim; ++i) w[i] -= options.lr * (grad[i] / n + options.l2 * w[i]);
      w[dim] -= options.lr * grad[dim] / n;
    }
  }
  return model;
}

json RelationModel::to_json() const {
  json preds = json::array();
  for (auto p : kRelationPredicates) preds.push_back(ckg::to_string(p));
  return {{"format", "ctikg-relation-model"},
          {"version", 1},
          {"feature_dim", feature_dim_},
          {"predicates", preds},
          {"weights", weights_}};
}

RelationModel RelationModel::from_json(const json& j) {
  RelationModel m;
  try {
    if (j.at("format").get<std::string>() != "ctikg-relation-model") {
      fail(Errc::format, "not a relation model");
    }
    if (j.at("version").get<int>() != 1) fail(Errc::version, "unsupported relation model version");
    m.feature_dim_ = j.at("feature_dim").get<std::size_t>();
    const auto preds = j.at("predicates").get<std::vector<std::string>>();
    if (preds.size() != kRelationPredicates.size()) fail(Errc::format, "relation list mismatch");
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (preds[i] != ckg::to_string(kRelationPredicates[i])) {
        fail(Errc::format, "relation list mismatch");
      }
    }
    m.weights_ = j.at("weights").get<std::vector<std::vector<double>>>();
  } catch (const json::exception& e) {
    fail(Errc::format, std::string("malformed relation model: ") + e.what());
  }
  if (m.weights_.size() != kRelationPredicates.size()) fail(Errc::format, "weight rows mismatch");
  for (const auto& w : m.weights_) {
    if (w.size() != m.feature_dim_ + 1) fail(Errc::shape_mismatch, "weight row length mismatch");
  }
  return m;
}

void RelationModel::save(const std::filesystem::path& path) const {
  text::write_file(path, to_json().dump(2) + "\n");
}

RelationModel RelationModel::load(const std::filesystem::path& path) {
  try {
    return from_json(json::parse(text::read_file(path)));
  } catch (const json::parse_error& e) {
    fail(Errc::format, path.string() + ": " + e.what());
  }
}

RelationModel train_relation_model(std::span<const LabeledPair> pairs,
                                   const EmbeddingSource& embeddings, const TrainOptions& options) {
  std::vector<std::vector<double>> features;
  std::vector<std::optional<ckg::Predicate>> labels;
  for (const auto& p : pairs) {
    const Entity s{p.text.substr(p.subject.begin, p.subject.size()), p.subject,
                   EntityClass::campaign, p.doc_id};
    const Entity o{p.text.substr(p.object.begin, p.object.size()), p.object,
                   EntityClass::campaign, p.doc_id};
    features.push_back(pair_features(s, o, p.text, embeddings));
    labels.push_back(p.predicate);
  }
  return RelationModel::train(features, labels, options);
}

std::optional<RelationModel::Prediction> rule_relation(const Entity& subject, const Entity& object,
                                                       std::string_view text) {
  using C = EntityClass;
  const bool actor = subject.cls == C::campaign || subject.cls == C::threat_actor ||
                     subject.cls == C::malware;
  if (!actor || !same_sentence(subject, object, text)) return std::nullopt;
  switch (object.cls) {
    case C::attack_pattern:
    case C::tool:
      return RelationModel::Prediction{ckg::Predicate::uses, 0.9};
    case C::malware:
      if (subject.cls == C::malware) return std::nullopt;
      return RelationModel::Prediction{ckg::Predicate::uses, 0.9};
    case C::vulnerability:
      return RelationModel::Prediction{ckg::Predicate::exploits, 0.8};
    case C::product:
      return RelationModel::Prediction{ckg::Predicate::targets, 0.7};
    default:
      return std::nullopt;
  }
}

std::vector<ckg::Triple> extract_relations(std::span<const Entity> entities, std::string_view text,
                                           std::string_view provenance,
                                           const RelationOptions& options) {
  if (options.model && !options.embeddings) {
    fail(Errc::invalid_argument, "a relation model needs an embedding source");
  }
  std::map<std::tuple<std::string, ckg::Predicate, std::string>, double> found;
  std::vector<std::string> ids;
  for (const auto& e : entities) {
    check_entity(e, text);
    ids.push_back(canonicalize(e.surface));
    found.emplace(std::make_tuple(ids.back(), ckg::Predicate::a, std::string(to_string(e.cls))), 1.0);
  }
  for (std::size_t i = 0; i < entities.size(); ++i) {
    for (std::size_t j = 0; j < entities.size(); ++j) {
      if (i == j || ids[i] == ids[j]) continue;
      std::optional<RelationModel::Prediction> pred;
      if (options.model) {
        pred = options.model->predict(pair_features(entities[i], entities[j], text, *options.embeddings));
      } else {
        pred = rule_relation(entities[i], entities[j], text);
      }
      if (!pred || pred->score < options.threshold) continue;
      auto [it, inserted] = found.emplace(std::make_tuple(ids[i], pred->predicate, ids[j]), pred->score);
      if (!inserted) it->second = std::max(it->second, pred->score);
    }
  }
  std::vector<ckg::Triple> out;
  for (const auto& [key, trust] : found) {
    out.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), std::string(provenance), trust});
  }
  return out;
}

}  // namespace ctikg::extraction
