#include "ctikg/eval/assessment.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>

#include "ctikg/common/error.hpp"
#include "ctikg/common/rng.hpp"
#include "ctikg/common/text.hpp"
#include "ctikg/corpus/preprocess.hpp"

namespace ctikg::eval {

using corpus::Authenticity;
using nlohmann::json;

const AnnotationItem* AnnotationTask::find(std::string_view item_id) const {
  for (const auto& item : items) {
    if (item.item_id == item_id) return &item;
  }
  return nullptr;
}

namespace {

std::string item_id(char task, std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%c-%02zu", task, index + 1);
  return buf;
}

void finish_task(AnnotationTask& task, char letter, std::uint64_t seed) {
  Rng rng(derive_seed(seed, std::string("eval.order.") + letter));
  shuffle(task.items, rng);
  for (std::size_t i = 0; i < task.items.size(); ++i) task.items[i].item_id = item_id(letter, i);
  task.seed = seed;
}

}  // namespace

Assessment assemble_tasks(std::span<const SamplePair> pairs, std::uint64_t seed) {
  if (pairs.empty() || pairs.size() % 2 != 0) {
    fail(Errc::invalid_argument, "assessment needs a positive, even number of pairs, got " +
                                     std::to_string(pairs.size()));
  }
  std::set<std::string> ids;
  for (const auto& p : pairs) {
    if (!ids.insert(p.pair_id).second) fail(Errc::invalid_argument, "duplicate pair id '" + p.pair_id + "'");
  }
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, "eval.split"));
  shuffle(order, rng);

  Assessment a;
  a.first.name = "A";
  a.second.name = "B";
  const std::size_t half = pairs.size() / 2;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& p = pairs[order[k]];
    auto& gets_true = k < half ? a.first : a.second;
    auto& gets_fake = k < half ? a.second : a.first;
    gets_true.items.push_back({"", p.true_text, Authenticity::true_cti, p.pair_id});
    gets_fake.items.push_back({"", p.fake_text, Authenticity::fake_cti, p.pair_id});
  }
  finish_task(a.first, 'A', seed);
  finish_task(a.second, 'B', seed);
  return a;
}

std::vector<corpus::Document> usable_documents(std::span<const corpus::Document> pool,
                                               const tokenizer::BpeVocab& vocab,
                                               std::size_t context_length) {
  std::vector<corpus::Document> out;
  for (const auto& d : pool) {
    if (d.authenticity != Authenticity::true_cti) continue;
    const auto sample = corpus::truncate_sample(d);
    if (sample.flagged) continue;
    const auto prompt = corpus::first_sentence(sample.text);
    if (prompt.empty() || 1 + vocab.encode(prompt).size() > context_length) continue;
    out.push_back(d);
  }
  return out;
}

Assessment build_assessment(std::span<const corpus::Document> pool, const lm::LmParams<float>& params,
                            const tokenizer::BpeVocab& vocab, const generator::GenSettings& settings,
                            std::uint64_t seed, std::size_t pairs) {
  auto usable = usable_documents(pool, vocab, static_cast<std::size_t>(params.config.context_length));
  if (usable.size() < pairs) {
    fail(Errc::insufficient_input, "assessment needs " + std::to_string(pairs) +
                                       " usable true documents, found " + std::to_string(usable.size()) +
                                       " in a pool of " + std::to_string(pool.size()));
  }
  Rng rng(derive_seed(seed, "eval.pick"));
  shuffle(usable, rng);
  usable.resize(pairs);

  std::vector<SamplePair> samples;
  samples.reserve(pairs);
  for (std::size_t i = 0; i < usable.size(); ++i) {
    auto s = settings;
    s.seed = derive_seed(seed, "eval.generate." + usable[i].id);
    const auto fake = generator::make_fake_counterpart(params, vocab, usable[i], s);
    samples.push_back({usable[i].id, corpus::truncate_sample(usable[i]).text, fake.full_text()});
  }
  return assemble_tasks(samples, seed);
}

json participant_view(const AnnotationTask& task) {
  json items = json::array();
  for (const auto& item : task.items) items.push_back({{"item_id", item.item_id}, {"text", item.text}});
  return {{"task", task.name}, {"items", items}};
}

json to_json(const AnnotationTask& task) {
  json items = json::array();
  for (const auto& item : task.items) {
    items.push_back({{"item_id", item.item_id},
                     {"text", item.text},
                     {"truth", corpus::to_string(item.truth)},
                     {"pair_id", item.pair_id}});
  }
  return {{"task", task.name}, {"seed", task.seed}, {"items", items}};
}

AnnotationTask task_from_json(const json& j) {
  AnnotationTask t;
  try {
    t.name = j.at("task").get<std::string>();
    t.seed = j.value("seed", std::uint64_t{0});
    for (const auto& item : j.at("items")) {
      t.items.push_back({item.at("item_id").get<std::string>(), item.at("text").get<std::string>(),
                         corpus::parse_authenticity(item.at("truth").get<std::string>()),
                         item.at("pair_id").get<std::string>()});
    }
  } catch (const json::exception& e) {
    fail(Errc::format, std::string("annotation task: ") + e.what());
  }
  return t;
}

json to_json(const Assessment& a) { return {{"tasks", {to_json(a.first), to_json(a.second)}}}; }

Assessment assessment_from_json(const json& j) {
  if (!j.contains("tasks") || !j["tasks"].is_array() || j["tasks"].size() != 2) {
    fail(Errc::format, "assessment must hold exactly two tasks");
  }
  return {task_from_json(j["tasks"][0]), task_from_json(j["tasks"][1])};
}

Rates rates_of(const ConfusionMatrix& m) {
  const auto total = static_cast<double>(m.total());
  if (m.total() == 0) fail(Errc::empty_input, "confusion matrix is empty");
  const auto ratio = [](std::size_t a, std::size_t b) {
    return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
  };
  Rates r;
  r.accuracy = static_cast<double>(m.tp + m.tn) / total;
  r.fraction_correct = r.accuracy;
  r.fraction_incorrect = static_cast<double>(m.fn + m.fp) / total;
  r.fake_labelled_true = ratio(m.fp, m.fp + m.tn);
  r.true_labelled_true = ratio(m.tp, m.tp + m.fn);
  return r;
}

ScoreReport score_matrix(const ConfusionMatrix& m) {
  ScoreReport r{m, rates_of(m), {}};
  if (m == ConfusionMatrix{206, 74, 220, 60}) {
    r.notes.push_back(
        "published accuracy 36.8% is not derivable from these counts: (tp+tn)/total = 266/560 = "
        "47.5%; 36.8% matches tp/total = 206/560 instead");
  }
  return r;
}

std::vector<Label> parse_labels(std::string_view csv) {
  std::vector<Label> out;
  std::size_t line_no = 0;
  bool header_seen = false;
  for (const auto& raw : text::split(csv, '\n')) {
    ++line_no;
    const auto line = text::trim(raw);
    if (line.empty()) continue;
    const auto fields = text::split(line, ',');
    const auto where = "labels line " + std::to_string(line_no) + ": ";
    if (fields.size() != 3) fail(Errc::format, where + "expected participant,item_id,label");
    if (!header_seen) {
      header_seen = true;
      if (text::trim(fields[0]) == "participant" && text::trim(fields[1]) == "item_id" &&
          text::trim(fields[2]) == "label") {
        continue;
      }
      fail(Errc::format, where + "missing header 'participant,item_id,label'");
    }
    const auto label = text::to_lower(text::trim(fields[2]));
    Label l{std::string(text::trim(fields[0])), std::string(text::trim(fields[1])), false};
    if (label == "true" || label == "true_cti") {
      l.labelled_true = true;
    } else if (label != "fake" && label != "fake_cti") {
      fail(Errc::format, where + "label must be true or fake, got '" + std::string(fields[2]) + "'");
    }
    if (l.participant.empty() || l.item_id.empty()) fail(Errc::format, where + "empty field");
    out.push_back(std::move(l));
  }
  if (!header_seen) fail(Errc::empty_input, "labels file is empty");
  return out;
}

std::vector<Label> load_labels(const std::filesystem::path& path) {
  return parse_labels(text::read_file(path));
}

ScoreReport score_annotations(std::span<const AnnotationTask> tasks, std::span<const Label> labels) {
  std::map<std::string, std::pair<std::size_t, const AnnotationItem*>> items;  // id -> (task, item)
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    for (const auto& item : tasks[t].items) {
      if (!items.emplace(item.item_id, std::make_pair(t, &item)).second) {
        fail(Errc::format, "item id '" + item.item_id + "' appears in more than one place");
      }
    }
  }
  ConfusionMatrix m;
  std::map<std::string, std::set<std::string>> seen;  // participant -> item ids
  std::map<std::string, std::set<std::size_t>> touched;
  for (const auto& l : labels) {
    auto it = items.find(l.item_id);
    if (it == items.end()) fail(Errc::format, "label for unknown item '" + l.item_id + "'");
    if (!seen[l.participant].insert(l.item_id).second) {
      fail(Errc::format, "participant '" + l.participant + "' labelled '" + l.item_id + "' twice");
    }
    touched[l.participant].insert(it->second.first);
    const bool actual_true = it->second.second->truth == Authenticity::true_cti;
    if (actual_true) {
      ++(l.labelled_true ? m.tp : m.fn);
    } else {
      ++(l.labelled_true ? m.fp : m.tn);
    }
  }
  std::string missing;
  for (const auto& [participant, task_ids] : touched) {
    for (std::size_t t : task_ids) {
      for (const auto& item : tasks[t].items) {
        if (!seen[participant].count(item.item_id)) {
          missing += (missing.empty() ? "" : ", ") + participant + ":" + item.item_id;
        }
      }
    }
  }
  if (!missing.empty()) fail(Errc::insufficient_input, "missing labels: " + missing);
  return score_matrix(m);
}

json to_json(const ScoreReport& r) {
  return {{"matrix", {{"tp", r.matrix.tp}, {"fn", r.matrix.fn}, {"fp", r.matrix.fp}, {"tn", r.matrix.tn}}},
          {"total", r.matrix.total()},
          {"rates",
           {{"accuracy", r.rates.accuracy},
            {"fraction_correct", r.rates.fraction_correct},
            {"fraction_incorrect", r.rates.fraction_incorrect},
            {"fake_labelled_true", r.rates.fake_labelled_true},
            {"true_labelled_true", r.rates.true_labelled_true}}},
          {"notes", r.notes}};
}

ConfusionMatrix matrix_from_json(const json& j) {
  try {
    const auto& m = j.contains("matrix") ? j.at("matrix") : j;
    return {m.at("tp").get<std::size_t>(), m.at("fn").get<std::size_t>(), m.at("fp").get<std::size_t>(),
            m.at("tn").get<std::size_t>()};
  } catch (const json::exception& e) {
    fail(Errc::format, std::string("confusion matrix: ") + e.what());
  }
}

}  // namespace ctikg::eval
