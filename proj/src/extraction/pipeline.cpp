#include "ctikg/extraction/pipeline.hpp"

#include <algorithm>

namespace ctikg::extraction {

Pipeline Pipeline::from_files(const std::filesystem::path& gazetteer_path,
                              const std::filesystem::path& rules_path) {
  Pipeline p;
  p.gazetteer = Gazetteer::load(gazetteer_path);
  p.rules = RuleSet::load(rules_path);
  return p;
}

RelationOptions Pipeline::relation_options() const {
  RelationOptions o;
  o.threshold = threshold;
  o.model = model ? &*model : nullptr;
  o.embeddings = embeddings ? &*embeddings : nullptr;
  return o;
}

DocumentExtraction extract_document(const corpus::Document& doc, const Pipeline& pipeline) {
  DocumentExtraction out;
  out.doc_id = doc.id;
  out.entities = extract_entities(doc.body, pipeline.gazetteer, pipeline.rules, doc.id);
  out.triples = extract_relations(out.entities, doc.body, doc.id, pipeline.relation_options());
  return out;
}

std::vector<ckg::Triple> extract_corpus(std::span<const corpus::Document> docs,
                                        const Pipeline& pipeline) {
  std::vector<const corpus::Document*> order;
  for (const auto& d : docs) order.push_back(&d);
  std::sort(order.begin(), order.end(),
            [](const corpus::Document* a, const corpus::Document* b) { return a->id < b->id; });
  std::vector<ckg::Triple> out;
  for (const auto* d : order) {
    auto triples = extract_document(*d, pipeline).triples;
    out.insert(out.end(), triples.begin(), triples.end());
  }
  return out;
}

}  // namespace ctikg::extraction
