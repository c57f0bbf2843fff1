#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctikg/ckg/triple.hpp"
#include "ctikg/corpus/document.hpp"
#include "ctikg/extraction/entities.hpp"
#include "ctikg/extraction/relations.hpp"

namespace ctikg::extraction {

/// Concept extractor plus relation extractor, configured once and applied to
/// many documents.
struct Pipeline {
  Gazetteer gazetteer;
  RuleSet rules;
  std::optional<RelationModel> model;
  std::optional<EmbeddingSource> embeddings;
  double threshold = 0.5;

  static Pipeline from_files(const std::filesystem::path& gazetteer_path,
                             const std::filesystem::path& rules_path);

  RelationOptions relation_options() const;
};

struct DocumentExtraction {
  std::string doc_id;
  std::vector<Entity> entities;
  std::vector<ckg::Triple> triples;
};

/// Runs on the document body; provenance of every triple is the document id.
DocumentExtraction extract_document(const corpus::Document& doc, const Pipeline& pipeline);

/// Triples of all documents, processed in ascending id order.
std::vector<ckg::Triple> extract_corpus(std::span<const corpus::Document> docs,
                                        const Pipeline& pipeline);

}  // namespace ctikg::extraction
