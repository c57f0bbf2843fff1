#include "ctikg/poison/attack.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <set>

#include "ctikg/common/error.hpp"
#include "ctikg/common/rng.hpp"
#include "ctikg/common/text.hpp"

namespace ctikg::poison {

using corpus::Authenticity;
using corpus::Document;
using nlohmann::json;

void AttackPlan::validate() const {
  if (!std::isfinite(fake_ratio) || fake_ratio < 0.0 || fake_ratio > 1.0) {
    fail(Errc::invalid_argument, "fake_ratio must lie in [0, 1], got " + text::format_double(fake_ratio));
  }
  for (const auto& [from, to] : substitutions) {
    if (from.empty()) fail(Errc::invalid_argument, "substitution keys must be non-empty");
  }
}

json to_json(const AttackPlan& p) {
  return {{"fake_ratio", p.fake_ratio}, {"substitutions", p.substitutions}, {"seed", p.seed}};
}

AttackPlan plan_from_json(const json& j) {
  if (!j.is_object()) fail(Errc::format, "attack plan must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key != "fake_ratio" && key != "substitutions" && key != "seed") {
      fail(Errc::format, "attack plan: unknown key '" + key + "'");
    }
  }
  if (!j.contains("fake_ratio")) fail(Errc::format, "attack plan: fake_ratio is required");
  AttackPlan p;
  try {
    p.fake_ratio = j.at("fake_ratio").get<double>();
    if (j.contains("substitutions")) {
      p.substitutions = j.at("substitutions").get<std::map<std::string, std::string>>();
    }
    if (j.contains("seed")) p.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    fail(Errc::format, std::string("attack plan: ") + e.what());
  }
  p.validate();
  return p;
}

AttackPlan load_plan(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(text::read_file(path));
  } catch (const json::exception& e) {
    fail(Errc::format, path.string() + ": " + e.what());
  }
  return plan_from_json(j);
}

std::size_t fakes_needed(double ratio, std::size_t n_true) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    fail(Errc::invalid_argument, "fakes_needed: ratio must lie in [0, 1)");
  }
  return static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n_true) / (1.0 - ratio)));
}

std::size_t PoisonedCorpus::fake_count() const {
  return static_cast<std::size_t>(std::count_if(
      ground_truth.begin(), ground_truth.end(),
      [](const auto& kv) { return kv.second == Authenticity::fake_cti; }));
}

PoisonedCorpus build_poisoned_corpus(std::span<const Document> true_docs,
                                     std::span<const Document> fakes, const AttackPlan& plan) {
  plan.validate();
  std::set<std::string> ids;
  const auto check = [&](const Document& d, Authenticity expected) {
    if (d.authenticity != expected) {
      fail(Errc::invalid_argument, "document '" + d.id + "' must be labelled " +
                                       std::string(corpus::to_string(expected)));
    }
    if (!ids.insert(d.id).second) fail(Errc::invalid_argument, "duplicate document id '" + d.id + "'");
  };
  for (const auto& d : true_docs) check(d, Authenticity::true_cti);
  for (const auto& d : fakes) check(d, Authenticity::fake_cti);

  const bool all_fake = plan.fake_ratio == 1.0;
  const std::size_t n_true = all_fake ? 0 : true_docs.size();
  const std::size_t n_fake = all_fake ? fakes.size() : fakes_needed(plan.fake_ratio, true_docs.size());
  if (n_fake > fakes.size()) {
    fail(Errc::insufficient_input, "fake_ratio " + text::format_double(plan.fake_ratio) + " needs " +
                                       std::to_string(n_fake) + " fakes, only " +
                                       std::to_string(fakes.size()) + " supplied");
  }
  if (all_fake && n_fake == 0) fail(Errc::insufficient_input, "fake_ratio 1 needs at least one fake");

  std::vector<std::size_t> pick(fakes.size());
  for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = i;
  Rng pick_rng(derive_seed(plan.seed, "poison.pick"));
  shuffle(pick, pick_rng);
  pick.resize(n_fake);

  const std::size_t total = n_true + n_fake;
  std::vector<std::size_t> slots(total);
  for (std::size_t i = 0; i < total; ++i) slots[i] = i;
  Rng slot_rng(derive_seed(plan.seed, "poison.slots"));
  shuffle(slots, slot_rng);
  std::vector<bool> is_fake_slot(total, false);
  for (std::size_t i = 0; i < n_fake; ++i) is_fake_slot[slots[i]] = true;

  PoisonedCorpus out;
  out.documents.reserve(total);
  std::size_t next_true = 0;
  std::size_t next_fake = 0;
  for (std::size_t s = 0; s < total; ++s) {
    const Document& d = is_fake_slot[s] ? fakes[pick[next_fake++]] : true_docs[next_true++];
    out.documents.push_back(d);
    out.ground_truth[d.id] = d.authenticity;
  }
  return out;
}

void export_attacker_view(const std::filesystem::path& path, const PoisonedCorpus& corpus,
                          bool acknowledge_containment, const json& meta) {
  if (corpus.fake_count() > 0 && !acknowledge_containment) {
    fail(Errc::containment,
         "refusing to export " + std::to_string(corpus.fake_count()) +
             " generated documents without an explicit containment acknowledgement");
  }
  std::vector<Document> stripped = corpus.documents;
  for (auto& d : stripped) d.authenticity = Authenticity::unknown;
  corpus::write_corpus(path, stripped, meta.is_null() ? nullptr : &meta);
}

json ground_truth_to_json(const GroundTruth& gt) {
  json j = json::object();
  for (const auto& [id, a] : gt) j[id] = corpus::to_string(a);
  return j;
}

GroundTruth ground_truth_from_json(const json& j) {
  if (!j.is_object()) fail(Errc::format, "ground truth must be a JSON object");
  GroundTruth gt;
  for (const auto& [id, value] : j.items()) {
    if (!value.is_string()) fail(Errc::format, "ground truth for '" + id + "' must be a string");
    gt[id] = corpus::parse_authenticity(value.get<std::string>());
  }
  return gt;
}

RewriteResult rewrite_text(std::string_view text, const std::map<std::string, std::string>& subs) {
  if (subs.empty()) fail(Errc::invalid_argument, "targeted rewrite needs at least one substitution");
  for (const auto& [from, to] : subs) {
    if (from.empty()) fail(Errc::invalid_argument, "substitution keys must be non-empty");
  }
  RewriteResult r;
  std::size_t i = 0;
  while (i < text.size()) {
    const std::string* best = nullptr;
    for (const auto& [from, to] : subs) {
      if (text.compare(i, from.size(), from) == 0 && (!best || from.size() > best->size())) {
        best = &from;
      }
    }
    if (!best) {
      r.text += text[i++];
      continue;
    }
    const auto& to = subs.at(*best);
    r.applied.push_back({*best, to, i});
    r.text += to;
    i += best->size();
  }
  if (r.applied.empty()) r.warning = "no substitution applied";
  return r;
}

RewrittenSample targeted_rewrite(const generator::GeneratedSample& sample,
                                 const std::map<std::string, std::string>& subs) {
  auto r = rewrite_text(sample.continuation, subs);
  RewrittenSample out{sample, std::move(r.applied), std::move(r.warning)};
  out.sample.continuation = std::move(r.text);
  out.sample.authenticity = Authenticity::fake_cti;
  out.sample.contained = true;
  return out;
}

std::vector<NamedQuery> load_queries(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) {
    fail(Errc::io, "query directory not found: " + dir.string());
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".rq") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) fail(Errc::empty_input, "no .rq files in " + dir.string());
  std::vector<NamedQuery> out;
  for (const auto& f : files) out.push_back({f.stem().string(), text::read_file(f)});
  return out;
}

Attribution attribute(const ckg::GraphDelta& delta, const ckg::Ckg& poisoned,
                      const GroundTruth& truth) {
  const auto is_fake = [&](const std::string& prov) {
    auto it = truth.find(prov);
    return it != truth.end() && it->second == Authenticity::fake_cti;
  };
  Attribution a;
  a.added = delta.added.size();
  for (const auto& t : delta.added) a.added_from_fake += is_fake(t.provenance) ? 1 : 0;
  for (const auto& t : poisoned.triples()) a.fake_in_poisoned += is_fake(t.provenance) ? 1 : 0;
  if (a.added > 0) a.precision = static_cast<double>(a.added_from_fake) / static_cast<double>(a.added);
  if (a.fake_in_poisoned > 0) {
    a.recall = static_cast<double>(a.added_from_fake) / static_cast<double>(a.fake_in_poisoned);
  }
  return a;
}

double DetectorCounts::precision() const {
  return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
}

double DetectorCounts::recall() const {
  return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
}

ckg::Ckg build_graph(std::span<const Document> docs, const extraction::Pipeline& pipeline) {
  ckg::Ckg g;
  const auto triples = extraction::extract_corpus(docs, pipeline);
  const auto report = g.assert_triples(triples);
  if (!report.rejected.empty()) {
    fail(Errc::runtime, "graph assertion rejected a triple: " + report.rejected.front());
  }
  return g;
}

namespace {

ckg::Ckg build_phase(const char* phase, std::span<const Document> docs,
                     const extraction::Pipeline& pipeline) {
  try {
    return build_graph(docs, pipeline);
  } catch (const Error& e) {
    fail(e.code(), std::string(phase) + " phase: " + e.what());
  }
}

json triples_json(const std::vector<ckg::Triple>& ts) {
  json arr = json::array();
  for (const auto& t : ts) arr.push_back(ckg::to_json(t));
  return arr;
}

}  // namespace

AttackReport run_attack(std::span<const Document> clean, const PoisonedCorpus& poisoned,
                        std::span<const NamedQuery> queries, const extraction::Pipeline& pipeline,
                        const Detector& detector) {
  std::vector<ckg::QueryAst> parsed;
  for (const auto& q : queries) {
    try {
      parsed.push_back(ckg::parse_query(q.text));
    } catch (const Error& e) {
      fail(e.code(), "query '" + q.name + "': " + e.what());
    }
  }

  auto clean_future = std::async(std::launch::async, [&] { return build_phase("clean", clean, pipeline); });
  ckg::Ckg poisoned_graph = build_phase("poisoned", poisoned.documents, pipeline);
  ckg::Ckg clean_graph = clean_future.get();

  AttackReport r;
  r.clean_size = clean_graph.size();
  r.poisoned_size = poisoned_graph.size();
  const auto delta = ckg::diff(clean_graph, poisoned_graph);
  r.attribution = attribute(delta, poisoned_graph, poisoned.ground_truth);
  for (const auto& t : delta.added) {
    auto it = poisoned.ground_truth.find(t.provenance);
    const bool fake = it != poisoned.ground_truth.end() && it->second == Authenticity::fake_cti;
    (fake ? r.poisoned_triples : r.unattributed).push_back(t);
  }
  r.removed = delta.removed;

  for (std::size_t i = 0; i < queries.size(); ++i) {
    auto before = ckg::query(clean_graph, parsed[i]);
    auto after = ckg::query(poisoned_graph, parsed[i]);
    if (before != after) {
      r.corrupted_queries.push_back({queries[i].name, queries[i].text, std::move(before), std::move(after)});
    }
  }

  if (detector) {
    DetectorCounts c;
    for (const auto& d : poisoned.documents) {
      auto it = poisoned.ground_truth.find(d.id);
      const bool fake = it != poisoned.ground_truth.end() && it->second == Authenticity::fake_cti;
      const bool flagged = detector(d);
      if (fake) {
        ++(flagged ? c.tp : c.fn);
      } else {
        ++(flagged ? c.fp : c.tn);
      }
    }
    r.detector = c;
  }
  return r;
}

json to_json(const AttackReport& r) {
  json j;
  j["clean_triples"] = r.clean_size;
  j["poisoned_graph_triples"] = r.poisoned_size;
  j["poisoned_triples"] = triples_json(r.poisoned_triples);
  j["unattributed_triples"] = triples_json(r.unattributed);
  j["removed_triples"] = triples_json(r.removed);
  j["attribution"] = {{"added", r.attribution.added},
                      {"added_from_fake", r.attribution.added_from_fake},
                      {"fake_in_poisoned", r.attribution.fake_in_poisoned},
                      {"precision", r.attribution.precision},
                      {"recall", r.attribution.recall}};
  json qs = json::array();
  for (const auto& q : r.corrupted_queries) {
    qs.push_back({{"name", q.name}, {"query", q.query}, {"clean", q.clean}, {"poisoned", q.poisoned}});
  }
  j["corrupted_queries"] = qs;
  if (r.detector) {
    const auto& c = *r.detector;
    j["detector"] = {{"tp", c.tp},        {"fp", c.fp},
                     {"fn", c.fn},        {"tn", c.tn},
                     {"precision", c.precision()}, {"recall", c.recall()}};
  }
  return j;
}

}  // namespace ctikg::poison
