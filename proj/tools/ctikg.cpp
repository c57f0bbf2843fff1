// ctikg command-line entry point.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <memory>

#include "ctikg/ckg/graph.hpp"
#include "ctikg/ckg/query.hpp"
#include "ctikg/common/error.hpp"
#include "ctikg/common/rng.hpp"
#include "ctikg/common/text.hpp"
#include "ctikg/corpus/document.hpp"
#include "ctikg/corpus/preprocess.hpp"
#include "ctikg/defense/defense.hpp"
#include "ctikg/eval/assessment.hpp"
#include "ctikg/extraction/pipeline.hpp"
#include "ctikg/generator/generator.hpp"
#include "ctikg/lm/checkpoint.hpp"
#include "ctikg/poison/attack.hpp"
#include "ctikg/tokenizer/bpe.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ctikg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitInput = 3;
constexpr int kExitRuntime = 4;

const fs::path kDataDir = CTIKG_DATA_DIR;

struct Globals {
  std::uint64_t seed = 1;
  int verbosity = 0;
  bool quiet = false;
};

Globals g_globals;

void log(const std::string& msg) {
  if (!g_globals.quiet) std::cerr << "ctikg: " << msg << "\n";
}

void debug(const std::string& msg) {
  if (g_globals.verbosity > 0 && !g_globals.quiet) std::cerr << "ctikg: " << msg << "\n";
}

std::uint64_t stage_seed(std::string_view stage) { return derive_seed(g_globals.seed, stage); }

json meta(const std::string& command) {
  return {{"tool", "ctikg"}, {"version", CTIKG_VERSION}, {"command", command}, {"seed", g_globals.seed}};
}

std::string meta_comment(const std::string& command) {
  return std::string("ctikg ") + CTIKG_VERSION + " " + command + " seed=" + std::to_string(g_globals.seed);
}

void write_json(const fs::path& path, const json& j) { text::write_file(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  try {
    return json::parse(text::read_file(path));
  } catch (const json::exception& e) {
    fail(Errc::format, path.string() + ": " + e.what());
  }
}

std::vector<corpus::Document> load_corpora(const std::vector<std::string>& paths) {
  std::vector<corpus::Document> docs;
  for (const auto& p : paths) {
    auto part = corpus::load_corpus(p);
    for (auto& d : part) {
      if (corpus::find(docs, d.id)) fail(Errc::format, "duplicate document id '" + d.id + "' in " + p);
      docs.push_back(std::move(d));
    }
  }
  return docs;
}

/// A single JSON document, a JSON array of documents, or a JSONL corpus.
std::vector<corpus::Document> load_documents(const fs::path& path) {
  const auto raw = text::read_file(path);
  const auto trimmed = text::trim(raw);
  if (!trimmed.empty() && (trimmed.front() == '{' || trimmed.front() == '[')) {
    json j;
    bool single = true;
    try {
      j = json::parse(raw);
    } catch (const json::exception&) {
      single = false;  // several lines: JSONL
    }
    if (single) {
      std::string jsonl;
      if (j.is_array()) {
        for (const auto& d : j) jsonl += d.dump() + "\n";
      } else {
        jsonl = j.dump() + "\n";
      }
      auto result = corpus::ingest_text(jsonl, std::nullopt, path.filename().string());
      if (!result.diagnostics.empty()) fail(Errc::format, path.string() + " " + result.diagnostics.front());
      return result.documents;
    }
  }
  return corpus::load_corpus(path);
}

struct PipelineOptions {
  std::string gazetteer = (kDataDir / "gazetteer.tsv").string();
  std::string rules = (kDataDir / "rules.txt").string();
  std::string relation_model;
  std::string model;
  std::string vocab;
  double threshold = 0.5;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--gazetteer", gazetteer, "Gazetteer TSV (surface<TAB>class)")
        ->check(CLI::ExistingFile)
        ->capture_default_str();
    cmd->add_option("--rules", rules, "Pattern rules file")->check(CLI::ExistingFile)->capture_default_str();
    cmd->add_option("--relation-model", relation_model, "Trained relation model JSON")
        ->check(CLI::ExistingFile);
    cmd->add_option("--embeddings-model", model, "Checkpoint whose token embeddings feed the relation model")
        ->check(CLI::ExistingFile);
    cmd->add_option("--embeddings-vocab", vocab, "Vocabulary of the embeddings checkpoint")
        ->check(CLI::ExistingFile);
    cmd->add_option("--threshold", threshold, "Relation confidence threshold")->capture_default_str();
  }
};

/// Owns everything a configured pipeline points into.
struct LoadedPipeline {
  extraction::Pipeline pipeline;
  std::unique_ptr<tokenizer::BpeVocab> vocab;
  std::unique_ptr<lm::TrainState<float>> state;
};

std::unique_ptr<LoadedPipeline> load_pipeline(const PipelineOptions& o) {
  auto lp = std::make_unique<LoadedPipeline>();
  lp->pipeline = extraction::Pipeline::from_files(o.gazetteer, o.rules);
  lp->pipeline.threshold = o.threshold;
  if (!o.relation_model.empty()) {
    if (o.model.empty() || o.vocab.empty()) {
      fail(Errc::invalid_argument, "--relation-model needs --embeddings-model and --embeddings-vocab");
    }
    lp->vocab = std::make_unique<tokenizer::BpeVocab>(tokenizer::BpeVocab::load(o.vocab));
    lp->state = std::make_unique<lm::TrainState<float>>(lm::load_checkpoint(o.model));
    lp->pipeline.model = extraction::RelationModel::load(o.relation_model);
    lp->pipeline.embeddings = extraction::EmbeddingSource{lp->vocab.get(), &lp->state->params.token_embedding};
  }
  return lp;
}

json triples_jsonl_meta(const std::string& command) { return json{{"_meta", meta(command)}}; }

void write_triples(const fs::path& path, const std::vector<ckg::Triple>& triples, const std::string& command) {
  std::string out = triples_jsonl_meta(command).dump() + "\n";
  for (const auto& t : triples) out += ckg::to_json(t).dump() + "\n";
  text::write_file(path, out);
}

std::vector<json> read_records(const fs::path& path) {
  std::vector<json> out;
  std::size_t line_no = 0;
  for (const auto& raw : text::split(text::read_file(path), '\n')) {
    ++line_no;
    const auto line = text::trim(raw);
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail(Errc::format, path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
    if (j.contains("_meta")) continue;
    out.push_back(std::move(j));
  }
  return out;
}

void save_graph(const ckg::Ckg& graph, const fs::path& path, const std::string& command) {
  const std::vector<std::string> header{meta_comment(command)};
  ckg::export_tsv(graph, path, header);
}

generator::Strategy strategy_option(const std::string& s) { return generator::parse_strategy(s); }

struct GenOptions {
  std::string strategy = "greedy";
  std::size_t k = 40;
  double temperature = 1.0;
  std::size_t max_words = 500;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--strategy", strategy, "greedy or top-k")
        ->check(CLI::IsMember({"greedy", "top-k", "top_k"}))
        ->capture_default_str();
    cmd->add_option("--k", k, "Candidates kept by top-k")->capture_default_str();
    cmd->add_option("--temperature", temperature, "Sampling temperature for top-k")->capture_default_str();
    cmd->add_option("--max-words", max_words, "Word budget of each continuation")->capture_default_str();
  }

  generator::GenSettings settings(std::uint64_t seed) const {
    generator::GenSettings s;
    s.strategy = strategy_option(strategy);
    s.k = k;
    s.temperature = temperature;
    s.max_words = max_words;
    s.seed = seed;
    s.validate();
    return s;
  }
};

using Runner = std::function<void()>;

struct Commands {
  std::map<const CLI::App*, Runner> runners;

  void on(CLI::App* cmd, Runner r) { runners[cmd] = std::move(r); }
};

// ------------------------------------------------------------------ corpus

void add_corpus(CLI::App& app, Commands& cmds) {
  auto* corpus_cmd = app.add_subcommand("corpus", "Ingest and split CTI corpora");
  corpus_cmd->require_subcommand(1);

  auto* ingest = corpus_cmd->add_subcommand("ingest", "Validate JSONL sources into one corpus file");
  auto inputs = std::make_shared<std::vector<std::string>>();
  auto category = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  auto strict = std::make_shared<bool>(false);
  ingest->add_option("--input", *inputs, "JSONL source file (repeatable)")->required()->check(CLI::ExistingFile);
  ingest->add_option("--category", *category, "Expected source category of every record")
      ->check(CLI::IsMember({"news", "cve", "apt_report"}));
  ingest->add_option("--out", *out, "Output corpus JSONL")->required();
  ingest->add_flag("--strict", *strict, "Fail on any rejected record");
  cmds.on(ingest, [=] {
    std::vector<corpus::Document> docs;
    std::size_t rejected = 0;
    const std::optional<corpus::SourceCategory> cat =
        category->empty() ? std::nullopt : std::optional(corpus::parse_category(*category));
    for (const auto& path : *inputs) {
      auto result = corpus::ingest(path, cat);
      for (const auto& d : result.diagnostics) log(path + ": " + d);
      rejected += result.diagnostics.size();
      for (auto& d : result.documents) {
        if (corpus::find(docs, d.id)) fail(Errc::format, path + ": duplicate document id '" + d.id + "'");
        docs.push_back(std::move(d));
      }
    }
    if (*strict && rejected > 0) fail(Errc::format, std::to_string(rejected) + " records rejected");
    const auto m = meta("corpus ingest");
    corpus::write_corpus(*out, docs, &m);
    std::map<std::string, std::size_t> counts;
    for (const auto& d : docs) ++counts[std::string(corpus::to_string(d.source_category))];
    std::string summary;
    for (const auto& [c, n] : counts) summary += " " + c + "=" + std::to_string(n);
    log("wrote " + std::to_string(docs.size()) + " documents (" + std::to_string(rejected) + " rejected):" +
        summary);
  });

  auto* split_cmd = corpus_cmd->add_subcommand("split", "Seeded train/held-out split");
  auto corpora = std::make_shared<std::vector<std::string>>();
  auto fraction = std::make_shared<double>(corpus::kDefaultTestFraction);
  auto split_out = std::make_shared<std::string>();
  split_cmd->add_option("--corpus", *corpora, "Corpus JSONL (repeatable)")->required()->check(CLI::ExistingFile);
  split_cmd->add_option("--test-fraction", *fraction, "Held-out share")->capture_default_str();
  split_cmd->add_option("--out", *split_out, "Output split JSON")->required();
  cmds.on(split_cmd, [=] {
    const auto docs = load_corpora(*corpora);
    auto s = corpus::split(docs, *fraction, stage_seed("split"));
    auto j = corpus::to_json(s);
    j["_meta"] = meta("corpus split");
    write_json(*split_out, j);
    log("split " + std::to_string(docs.size()) + " documents: " + std::to_string(s.train.size()) + " train, " +
        std::to_string(s.test.size()) + " held out");
  });
}

// --------------------------------------------------------------- tokenizer

void add_tokenizer(CLI::App& app, Commands& cmds) {
  auto* tok = app.add_subcommand("tokenizer", "Train and apply the byte-level BPE tokenizer");
  tok->require_subcommand(1);

  auto* train = tok->add_subcommand("train", "Learn BPE merges from corpus bodies");
  auto corpora = std::make_shared<std::vector<std::string>>();
  auto size = std::make_shared<std::size_t>(4096);
  auto out = std::make_shared<std::string>();
  train->add_option("--corpus", *corpora, "Corpus JSONL (repeatable)")->required()->check(CLI::ExistingFile);
  train->add_option("--vocab-size", *size, "Target vocabulary size")->capture_default_str();
  train->add_option("--out", *out, "Output vocabulary file")->required();
  cmds.on(train, [=] {
    const auto docs = load_corpora(*corpora);
    std::vector<std::string> texts;
    for (const auto& d : docs) texts.push_back(d.body);
    const auto vocab = tokenizer::BpeVocab::train(texts, *size);
    vocab.save(*out, meta_comment("tokenizer train"));
    log("trained vocabulary of " + std::to_string(vocab.size()) + " tokens on " + std::to_string(docs.size()) +
        " documents");
  });

  auto* encode = tok->add_subcommand("encode", "Print token ids of a text");
  auto vocab_path = std::make_shared<std::string>();
  auto text_arg = std::make_shared<std::string>();
  encode->add_option("--vocab", *vocab_path, "Vocabulary file")->required()->check(CLI::ExistingFile);
  encode->add_option("--text", *text_arg, "Text to encode")->required();
  cmds.on(encode, [=] {
    const auto vocab = tokenizer::BpeVocab::load(*vocab_path);
    std::string line;
    for (TokenId id : vocab.encode(*text_arg)) line += (line.empty() ? "" : " ") + std::to_string(id);
    std::cout << line << "\n";
  });
}

// ------------------------------------------------------------------- train

void add_train(CLI::App& app, Commands& cmds) {
  auto* train = app.add_subcommand("train", "Fine-tune the decoder-only language model");
  struct Opts {
    std::vector<std::string> corpora;
    std::string vocab, out, preset = "desk", split, init, report;
    double test_fraction = corpus::kDefaultTestFraction;
    generator::FineTuneSettings ft;
  };
  auto o = std::make_shared<Opts>();
  train->add_option("--corpus", o->corpora, "Corpus JSONL (repeatable)")->required()->check(CLI::ExistingFile);
  train->add_option("--vocab", o->vocab, "Vocabulary file")->required()->check(CLI::ExistingFile);
  train->add_option("--out", o->out, "Output checkpoint")->required();
  train->add_option("--preset", o->preset, "Model shape: desk, tiny or paper-117M")
      ->check(CLI::IsMember({"desk", "tiny", "paper-117M"}))
      ->capture_default_str();
  train->add_option("--init", o->init, "Start from this checkpoint instead of random weights")
      ->check(CLI::ExistingFile);
  train->add_option("--split", o->split, "Split JSON from 'corpus split'")->check(CLI::ExistingFile);
  train->add_option("--test-fraction", o->test_fraction, "Held-out share when no split is given")
      ->capture_default_str();
  train->add_option("--epochs", o->ft.epochs, "Training epochs")->capture_default_str();
  train->add_option("--batch-size", o->ft.batch_size, "Blocks per step")->capture_default_str();
  train->add_option("--block-size", o->ft.block_size, "Tokens per block")->capture_default_str();
  train->add_option("--lr", o->ft.lr, "Adam learning rate")->capture_default_str();
  train->add_option("--report", o->report, "Write per-epoch statistics as JSON");
  cmds.on(train, [o] {
    const auto docs = load_corpora(o->corpora);
    const auto vocab = tokenizer::BpeVocab::load(o->vocab);
    const auto s = o->split.empty() ? corpus::split(docs, o->test_fraction, stage_seed("split"))
                                    : corpus::split_from_json(read_json(o->split));
    std::vector<corpus::Document> train_docs, heldout;
    for (const auto& id : s.train) {
      const auto* d = corpus::find(docs, id);
      if (!d) fail(Errc::format, "split names unknown document '" + id + "'");
      train_docs.push_back(*d);
    }
    for (const auto& id : s.test) {
      const auto* d = corpus::find(docs, id);
      if (!d) fail(Errc::format, "split names unknown document '" + id + "'");
      heldout.push_back(*d);
    }
    lm::TrainState<float> state = [&] {
      if (!o->init.empty()) return lm::load_checkpoint(o->init);
      auto cfg = lm::LmConfig::preset(o->preset, static_cast<std::int64_t>(vocab.size()));
      cfg.seed = stage_seed("model.init");
      return lm::TrainState<float>::fresh(cfg);
    }();
    auto ft = o->ft;
    ft.seed = stage_seed("train.shuffle");
    log("training " + std::to_string(train_docs.size()) + " documents, " + std::to_string(heldout.size()) +
        " held out, " + std::to_string(ft.epochs) + " epoch(s)");
    const auto result = generator::fine_tune(std::move(state), vocab, train_docs, heldout, ft,
                                             [](const generator::EpochStats& e) {
                                               log("epoch " + std::to_string(e.epoch) + ": " +
                                                   std::to_string(e.steps) + " steps, train loss " +
                                                   text::format_double(e.train_loss) + ", held-out ppl " +
                                                   text::format_double(e.heldout_perplexity));
                                             });
    json epochs = json::array();
    for (const auto& e : result.epochs) {
      epochs.push_back({{"epoch", e.epoch},
                        {"steps", e.steps},
                        {"train_loss", e.train_loss},
                        {"heldout_perplexity", e.heldout_perplexity}});
    }
    json info = meta("train");
    info["settings"] = generator::to_json(ft);
    info["split"] = corpus::to_json(s);
    info["initial_heldout_perplexity"] = result.initial_heldout_perplexity;
    info["best_epoch"] = result.best_epoch;
    info["epochs"] = epochs;
    lm::save_checkpoint(result.best, o->out, info);
    if (!o->report.empty()) write_json(o->report, info);
    log("initial held-out ppl " + text::format_double(result.initial_heldout_perplexity) + ", kept epoch " +
        std::to_string(result.best_epoch));
  });
}

// ---------------------------------------------------------------- generate

void add_generate(CLI::App& app, Commands& cmds) {
  auto* gen = app.add_subcommand("generate", "Generate fake CTI from prompts or true documents");
  struct Opts {
    std::string model, vocab, out, fakes_out, from_corpus;
    std::vector<std::string> prompts;
    std::size_t limit = 0;
    GenOptions g;
  };
  auto o = std::make_shared<Opts>();
  gen->add_option("--model", o->model, "Checkpoint")->required()->check(CLI::ExistingFile);
  gen->add_option("--vocab", o->vocab, "Vocabulary file")->required()->check(CLI::ExistingFile);
  auto* prompt_opt = gen->add_option("--prompt", o->prompts, "Prompt text (repeatable)");
  auto* corpus_opt = gen->add_option("--from-corpus", o->from_corpus,
                                     "Use the first sentence of each true document as prompt")
                         ->check(CLI::ExistingFile);
  prompt_opt->excludes(corpus_opt);
  gen->add_option("--limit", o->limit, "Use at most this many corpus documents (0: all)");
  gen->add_option("--out", o->out, "Output samples JSONL")->required();
  gen->add_option("--fakes-out", o->fakes_out, "Also write the samples as a fake-labelled corpus");
  o->g.add_to(gen);
  cmds.on(gen, [o] {
    if (o->prompts.empty() && o->from_corpus.empty()) {
      fail(Errc::invalid_argument, "give --prompt or --from-corpus");
    }
    const auto vocab = tokenizer::BpeVocab::load(o->vocab);
    const auto state = lm::load_checkpoint(o->model);
    std::vector<generator::GeneratedSample> samples;
    std::vector<corpus::Document> fakes;
    if (!o->prompts.empty()) {
      for (std::size_t i = 0; i < o->prompts.size(); ++i) {
        const auto s = o->g.settings(stage_seed("generate.prompt." + std::to_string(i)));
        samples.push_back(generator::generate(state.params, vocab, o->prompts[i], s));
        fakes.push_back(generator::to_document(samples.back(), "fake-prompt-" + std::to_string(i + 1),
                                               corpus::SourceCategory::news));
      }
    } else {
      const auto docs = corpus::load_corpus(o->from_corpus);
      for (const auto& d : docs) {
        if (o->limit > 0 && samples.size() >= o->limit) break;
        if (d.authenticity != corpus::Authenticity::true_cti) continue;
        try {
          const auto s = o->g.settings(stage_seed("generate." + d.id));
          samples.push_back(generator::make_fake_counterpart(state.params, vocab, d, s));
        } catch (const Error& e) {
          if (e.code() != Errc::insufficient_input && e.code() != Errc::context_overflow) throw;
          log("skipping " + d.id + ": " + e.what());
          continue;
        }
        fakes.push_back(generator::to_document(samples.back(), "fake-" + d.id, d.source_category));
      }
      if (samples.empty()) fail(Errc::insufficient_input, "no usable true documents in " + o->from_corpus);
    }
    auto m = meta("generate");
    m["settings"] = generator::to_json(o->g.settings(0));
    generator::write_samples(o->out, samples, m);
    if (!o->fakes_out.empty()) corpus::write_corpus(o->fakes_out, fakes, &m);
    log("generated " + std::to_string(samples.size()) + " samples (contained, local files only)");
  });
}

// ----------------------------------------------------------------- extract

void add_extract(CLI::App& app, Commands& cmds) {
  auto* ex = app.add_subcommand("extract", "Entity and relation extraction");
  ex->require_subcommand(1);

  auto* run = ex->add_subcommand("run", "Extract triples from corpora");
  struct RunOpts {
    std::vector<std::string> corpora;
    std::string out, entities_out;
    PipelineOptions p;
  };
  auto o = std::make_shared<RunOpts>();
  run->add_option("--corpus", o->corpora, "Corpus JSONL (repeatable)")->required()->check(CLI::ExistingFile);
  run->add_option("--out", o->out, "Output triples JSONL")->required();
  run->add_option("--entities-out", o->entities_out, "Also write recognised entities as JSONL");
  o->p.add_to(run);
  cmds.on(run, [o] {
    const auto docs = load_corpora(o->corpora);
    const auto lp = load_pipeline(o->p);
    std::vector<ckg::Triple> triples = extraction::extract_corpus(docs, lp->pipeline);
    write_triples(o->out, triples, "extract run");
    if (!o->entities_out.empty()) {
      std::string out = triples_jsonl_meta("extract run").dump() + "\n";
      for (const auto& d : docs) {
        for (const auto& e : extraction::extract_document(d, lp->pipeline).entities) {
          out += json{{"doc_id", d.id},
                      {"surface", e.surface},
                      {"class", extraction::to_string(e.cls)},
                      {"span", {e.span.begin, e.span.end}}}
                     .dump() +
                 "\n";
        }
      }
      text::write_file(o->entities_out, out);
    }
    log("extracted " + std::to_string(triples.size()) + " triples from " + std::to_string(docs.size()) +
        " documents");
  });

  auto* tr = ex->add_subcommand("train-relations", "Fit the relation classifier on labelled pairs");
  struct TrainOpts {
    std::string pairs, model, vocab, out;
    extraction::TrainOptions t;
  };
  auto t = std::make_shared<TrainOpts>();
  t->pairs = (kDataDir / "relations.jsonl").string();
  tr->add_option("--pairs", t->pairs, "Labelled pairs JSONL")->check(CLI::ExistingFile)->capture_default_str();
  tr->add_option("--model", t->model, "Checkpoint providing token embeddings")->required()->check(CLI::ExistingFile);
  tr->add_option("--vocab", t->vocab, "Vocabulary of the checkpoint")->required()->check(CLI::ExistingFile);
  tr->add_option("--epochs", t->t.epochs, "Gradient descent iterations")->capture_default_str();
  tr->add_option("--lr", t->t.lr, "Learning rate")->capture_default_str();
  tr->add_option("--l2", t->t.l2, "L2 penalty")->capture_default_str();
  tr->add_option("--out", t->out, "Output relation model JSON")->required();
  cmds.on(tr, [t] {
    const auto vocab = tokenizer::BpeVocab::load(t->vocab);
    const auto state = lm::load_checkpoint(t->model);
    const extraction::EmbeddingSource emb{&vocab, &state.params.token_embedding};
    const auto pairs = extraction::read_labeled_pairs(t->pairs);
    const auto model = extraction::train_relation_model(pairs, emb, t->t);
    auto j = model.to_json();
    j["_meta"] = meta("extract train-relations");
    write_json(t->out, j);
    log("trained relation model on " + std::to_string(pairs.size()) + " pairs");
  });
}

// --------------------------------------------------------------------- ckg

void add_ckg(CLI::App& app, Commands& cmds) {
  auto* ckg_cmd = app.add_subcommand("ckg", "Knowledge graph assertion, queries and diffs");
  ckg_cmd->require_subcommand(1);

  auto* as = ckg_cmd->add_subcommand("assert", "Assert triples into a graph");
  auto triples = std::make_shared<std::vector<std::string>>();
  auto base = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  auto strict = std::make_shared<bool>(false);
  as->add_option("--triples", *triples, "Triples JSONL (repeatable)")->required()->check(CLI::ExistingFile);
  as->add_option("--graph", *base, "Existing graph TSV to extend")->check(CLI::ExistingFile);
  as->add_option("--out", *out, "Output graph TSV")->required();
  as->add_flag("--strict", *strict, "Fail on any rejected triple");
  cmds.on(as, [=] {
    ckg::Ckg graph = base->empty() ? ckg::Ckg{} : ckg::import_tsv(*base);
    std::size_t added = 0;
    std::size_t rejected = 0;
    for (const auto& path : *triples) {
      const auto records = read_records(path);
      const auto report = graph.assert_records(records);
      added += report.added;
      rejected += report.rejected.size();
      for (const auto& r : report.rejected) log(path + ": " + r);
    }
    if (*strict && rejected > 0) fail(Errc::format, std::to_string(rejected) + " triples rejected");
    save_graph(graph, *out, "ckg assert");
    log("graph has " + std::to_string(graph.size()) + " triples (" + std::to_string(added) + " added, " +
        std::to_string(rejected) + " rejected)");
  });

  auto* q = ckg_cmd->add_subcommand("query", "Run SELECT queries against a graph");
  auto graph_path = std::make_shared<std::string>();
  auto query_files = std::make_shared<std::vector<std::string>>();
  auto query_text = std::make_shared<std::string>();
  auto q_out = std::make_shared<std::string>();
  q->add_option("--graph", *graph_path, "Graph TSV")->required()->check(CLI::ExistingFile);
  q->add_option("--query", *query_files, "Query file (repeatable)")->check(CLI::ExistingFile);
  q->add_option("--text", *query_text, "Inline query text");
  q->add_option("--out", *q_out, "Write results as JSON");
  cmds.on(q, [=] {
    if (query_files->empty() && query_text->empty()) fail(Errc::invalid_argument, "give --query or --text");
    const auto graph = ckg::import_tsv(*graph_path);
    std::vector<std::pair<std::string, std::string>> queries;
    for (const auto& f : *query_files) queries.emplace_back(fs::path(f).stem().string(), text::read_file(f));
    if (!query_text->empty()) queries.emplace_back("inline", *query_text);
    json results = json::object();
    for (const auto& [name, body] : queries) {
      std::vector<std::string> answer;
      try {
        answer = ckg::query(graph, body);
      } catch (const SyntaxError& e) {
        fail(Errc::syntax, name + ": " + e.what() + " (offset " + std::to_string(e.position()) + ")");
      }
      std::cout << "# " << name << " (" << answer.size() << ")\n";
      for (const auto& a : answer) std::cout << a << "\n";
      results[name] = answer;
    }
    if (!q_out->empty()) write_json(*q_out, {{"_meta", meta("ckg query")}, {"results", results}});
  });

  auto* d = ckg_cmd->add_subcommand("diff", "Triples added and removed between two graphs");
  auto before = std::make_shared<std::string>();
  auto after = std::make_shared<std::string>();
  auto d_out = std::make_shared<std::string>();
  d->add_option("--before", *before, "Graph TSV before")->required()->check(CLI::ExistingFile);
  d->add_option("--after", *after, "Graph TSV after")->required()->check(CLI::ExistingFile);
  d->add_option("--out", *d_out, "Output delta JSON")->required();
  cmds.on(d, [=] {
    const auto delta = ckg::diff(ckg::import_tsv(*before), ckg::import_tsv(*after));
    auto j = ckg::to_json(delta);
    j["_meta"] = meta("ckg diff");
    write_json(*d_out, j);
    log(std::to_string(delta.added.size()) + " added, " + std::to_string(delta.removed.size()) + " removed");
  });
}

// ------------------------------------------------------------------ poison

defense::DisfluencyReport score_text(const std::string& body, const defense::ReferenceModel& ref) {
  return defense::disfluency_score(body, ref);
}

void add_poison(CLI::App& app, Commands& cmds) {
  auto* poison_cmd = app.add_subcommand("poison", "Data-poisoning simulation");
  poison_cmd->require_subcommand(1);

  auto* run = poison_cmd->add_subcommand("run", "Contaminate a corpus and measure the graph impact");
  struct Opts {
    std::string plan, fakes, queries = (kDataDir / "queries").string(), out;
    std::vector<std::string> clean;
    std::string clean_graph_out, poisoned_graph_out, attacker_view_out, ground_truth_out;
    bool acknowledge = false;
    std::string detector_model, detector_vocab;
    double detector_threshold = 0.5;
    PipelineOptions p;
  };
  auto o = std::make_shared<Opts>();
  run->add_option("--plan", o->plan, "Attack plan JSON {fake_ratio, substitutions, seed}")
      ->required()
      ->check(CLI::ExistingFile);
  run->add_option("--clean", o->clean, "True corpus JSONL (repeatable)")->required()->check(CLI::ExistingFile);
  run->add_option("--fakes", o->fakes, "Fake-labelled corpus JSONL")->required()->check(CLI::ExistingFile);
  run->add_option("--queries", o->queries, "Directory of .rq queries")->capture_default_str();
  run->add_option("--out", o->out, "Output report JSON")->required();
  run->add_option("--clean-graph-out", o->clean_graph_out, "Write the clean graph TSV");
  run->add_option("--poisoned-graph-out", o->poisoned_graph_out, "Write the poisoned graph TSV");
  run->add_option("--attacker-view-out", o->attacker_view_out, "Write the label-stripped poisoned corpus");
  run->add_option("--ground-truth-out", o->ground_truth_out, "Write the authenticity sidecar JSON");
  run->add_flag("--acknowledge-containment", o->acknowledge,
                "Confirm that exported generated text stays on this machine");
  run->add_option("--detector-model", o->detector_model, "Checkpoint for a disfluency detector")
      ->check(CLI::ExistingFile);
  run->add_option("--detector-vocab", o->detector_vocab, "Vocabulary of the detector checkpoint")
      ->check(CLI::ExistingFile);
  run->add_option("--detector-threshold", o->detector_threshold, "Composite score above which a document is flagged")
      ->capture_default_str();
  o->p.add_to(run);
  cmds.on(run, [o] {
    const auto plan_json = read_json(o->plan);
    auto plan = poison::plan_from_json(plan_json);
    if (!plan_json.contains("seed")) plan.seed = stage_seed("poison");
    const auto clean = load_corpora(o->clean);
    auto fakes = corpus::load_corpus(o->fakes);
    if (!plan.substitutions.empty()) {
      for (auto& f : fakes) {
        auto r = poison::rewrite_text(f.body, plan.substitutions);
        if (r.warning) debug(f.id + ": " + *r.warning);
        f.body = std::move(r.text);
      }
    }
    const auto poisoned = poison::build_poisoned_corpus(clean, fakes, plan);
    const auto queries = poison::load_queries(o->queries);
    const auto lp = load_pipeline(o->p);

    poison::Detector detector;
    std::unique_ptr<tokenizer::BpeVocab> det_vocab;
    std::unique_ptr<lm::TrainState<float>> det_state;
    if (!o->detector_model.empty()) {
      if (o->detector_vocab.empty()) fail(Errc::invalid_argument, "--detector-model needs --detector-vocab");
      det_vocab = std::make_unique<tokenizer::BpeVocab>(tokenizer::BpeVocab::load(o->detector_vocab));
      det_state = std::make_unique<lm::TrainState<float>>(lm::load_checkpoint(o->detector_model));
      const defense::ReferenceModel ref{*det_vocab, det_state->params};
      const double threshold = o->detector_threshold;
      detector = [ref, threshold](const corpus::Document& d) {
        return score_text(d.body, ref).composite > threshold;
      };
    }

    const auto report = poison::run_attack(clean, poisoned, queries, lp->pipeline, detector);
    auto j = poison::to_json(report);
    j["_meta"] = meta("poison run");
    j["plan"] = poison::to_json(plan);
    j["documents"] = {{"clean", clean.size()},
                      {"poisoned", poisoned.documents.size()},
                      {"fake", poisoned.fake_count()}};
    write_json(o->out, j);
    if (!o->clean_graph_out.empty()) save_graph(poison::build_graph(clean, lp->pipeline), o->clean_graph_out, "poison run clean");
    if (!o->poisoned_graph_out.empty()) {
      save_graph(poison::build_graph(poisoned.documents, lp->pipeline), o->poisoned_graph_out, "poison run poisoned");
    }
    if (!o->attacker_view_out.empty()) {
      poison::export_attacker_view(o->attacker_view_out, poisoned, o->acknowledge, meta("poison run"));
    }
    if (!o->ground_truth_out.empty()) {
      write_json(o->ground_truth_out,
                 {{"_meta", meta("poison run")}, {"ground_truth", poison::ground_truth_to_json(poisoned.ground_truth)}});
    }
    log(std::to_string(report.poisoned_triples.size()) + " poisoned triples, " +
        std::to_string(report.corrupted_queries.size()) + " of " + std::to_string(queries.size()) +
        " queries changed");
  });

  auto* rw = poison_cmd->add_subcommand("rewrite", "Targeted entity replacement in generated samples");
  auto samples = std::make_shared<std::string>();
  auto plan_path = std::make_shared<std::string>();
  auto subs = std::make_shared<std::vector<std::string>>();
  auto rw_out = std::make_shared<std::string>();
  rw->add_option("--samples", *samples, "Samples JSONL from 'generate'")->required()->check(CLI::ExistingFile);
  auto* plan_opt = rw->add_option("--plan", *plan_path, "Attack plan with substitutions")->check(CLI::ExistingFile);
  rw->add_option("--sub", *subs, "FROM=TO substitution (repeatable)")->excludes(plan_opt);
  rw->add_option("--out", *rw_out, "Output samples JSONL")->required();
  cmds.on(rw, [=] {
    std::map<std::string, std::string> table;
    if (!plan_path->empty()) table = poison::plan_from_json(read_json(*plan_path)).substitutions;
    for (const auto& s : *subs) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) fail(Errc::invalid_argument, "--sub expects FROM=TO, got '" + s + "'");
      table[s.substr(0, eq)] = s.substr(eq + 1);
    }
    std::vector<generator::GeneratedSample> out;
    std::size_t applied = 0;
    for (const auto& sample : generator::read_samples(*samples)) {
      auto r = poison::targeted_rewrite(sample, table);
      if (r.warning) log("sample from " + sample.source_doc + ": " + *r.warning);
      applied += r.applied.size();
      out.push_back(std::move(r.sample));
    }
    generator::write_samples(*rw_out, out, meta("poison rewrite"));
    log(std::to_string(applied) + " substitutions in " + std::to_string(out.size()) + " samples");
  });
}

// ------------------------------------------------------------------ defend

void add_defend(CLI::App& app, Commands& cmds) {
  auto* defend = app.add_subcommand("defend", "Trust and disfluency scoring of incoming CTI");
  defend->require_subcommand(1);

  auto* score = defend->add_subcommand("score", "Score documents against a reference graph");
  struct Opts {
    std::string doc, registry = (kDataDir / "source_registry.json").string(), graph,
                     single_valued = (kDataDir / "single_valued.txt").string(), model, vocab, out;
    defense::TrustWeights trust;
    defense::DisfluencyWeights disfluency;
    PipelineOptions p;
  };
  auto o = std::make_shared<Opts>();
  score->add_option("--doc", o->doc, "Document JSON, JSON array or JSONL corpus")->required()->check(CLI::ExistingFile);
  score->add_option("--registry", o->registry, "Source registry JSON")->check(CLI::ExistingFile)->capture_default_str();
  score->add_option("--ckg", o->graph, "Reference graph TSV")->required()->check(CLI::ExistingFile);
  score->add_option("--single-valued", o->single_valued, "Single-valued predicate list")
      ->check(CLI::ExistingFile)
      ->capture_default_str();
  score->add_option("--model", o->model, "Reference checkpoint for disfluency scoring")->check(CLI::ExistingFile);
  score->add_option("--vocab", o->vocab, "Vocabulary of the reference checkpoint")->check(CLI::ExistingFile);
  score->add_option("--conflict-penalty", o->trust.conflict_penalty, "Trust lost per conflict")->capture_default_str();
  score->add_option("--novelty-penalty", o->trust.novelty_penalty, "Trust lost at full novelty")->capture_default_str();
  score->add_option("--w-perplexity", o->disfluency.perplexity, "Disfluency weight of perplexity")
      ->capture_default_str();
  score->add_option("--w-repetition", o->disfluency.repetition, "Disfluency weight of repetition")
      ->capture_default_str();
  score->add_option("--w-diversity", o->disfluency.low_diversity, "Disfluency weight of 1 - type/token ratio")
      ->capture_default_str();
  score->add_option("--out", o->out, "Output JSON")->required();
  o->p.add_to(score);
  cmds.on(score, [o] {
    if (o->model.empty() != o->vocab.empty()) fail(Errc::invalid_argument, "--model and --vocab go together");
    o->trust.validate();
    o->disfluency.validate();
    const auto docs = load_documents(o->doc);
    const auto registry = defense::SourceRegistry::load(o->registry);
    const auto reference = ckg::import_tsv(o->graph);
    const auto sv = defense::load_single_valued(o->single_valued);
    const auto lp = load_pipeline(o->p);
    std::optional<tokenizer::BpeVocab> vocab;
    std::optional<lm::TrainState<float>> state;
    if (!o->model.empty()) {
      vocab = tokenizer::BpeVocab::load(o->vocab);
      state = lm::load_checkpoint(o->model);
    }
    json results = json::array();
    for (const auto& d : docs) {
      const auto candidates = extraction::extract_document(d, lp->pipeline).triples;
      const auto t = defense::trust_score(d, registry, reference, candidates, sv, o->trust);
      json r = {{"id", d.id}, {"trust", defense::to_json(t)}};
      if (state) {
        const defense::ReferenceModel ref{*vocab, state->params};
        r["disfluency"] = defense::to_json(defense::disfluency_score(d.body, ref, o->disfluency));
      }
      log(d.id + ": trust " + text::format_double(t.composite));
      results.push_back(std::move(r));
    }
    write_json(o->out, {{"_meta", meta("defend score")}, {"documents", results}});
  });
}

// -------------------------------------------------------------------- eval

void add_eval(CLI::App& app, Commands& cmds) {
  auto* ev = app.add_subcommand("eval", "Assessment sets and annotation scoring");
  ev->require_subcommand(1);

  auto* build = ev->add_subcommand("build", "Build the two annotation tasks from a true-CTI pool");
  struct BuildOpts {
    std::string pool, model, vocab, out_dir;
    std::size_t pairs = eval::kPairsPerAssessment;
    GenOptions g;
  };
  auto b = std::make_shared<BuildOpts>();
  build->add_option("--pool", b->pool, "Pool corpus JSONL")->required()->check(CLI::ExistingFile);
  build->add_option("--model", b->model, "Checkpoint used for the fake counterparts")->required()->check(CLI::ExistingFile);
  build->add_option("--vocab", b->vocab, "Vocabulary of the checkpoint")->required()->check(CLI::ExistingFile);
  build->add_option("--pairs", b->pairs, "True documents used (half per task)")->capture_default_str();
  build->add_option("--out-dir", b->out_dir, "Directory for assessment.json and task views")->required();
  b->g.add_to(build);
  cmds.on(build, [b] {
    const auto pool = corpus::load_corpus(b->pool);
    const auto vocab = tokenizer::BpeVocab::load(b->vocab);
    const auto state = lm::load_checkpoint(b->model);
    const auto a = eval::build_assessment(pool, state.params, vocab, b->g.settings(0), stage_seed("eval"), b->pairs);
    fs::create_directories(b->out_dir);
    auto full = eval::to_json(a);
    full["_meta"] = meta("eval build");
    write_json(fs::path(b->out_dir) / "assessment.json", full);
    for (const auto* task : {&a.first, &a.second}) {
      auto view = eval::participant_view(*task);
      view["_meta"] = meta("eval build");
      write_json(fs::path(b->out_dir) / ("task_" + task->name + ".json"), view);
    }
    log("built tasks of " + std::to_string(a.first.items.size()) + " and " + std::to_string(a.second.items.size()) +
        " items");
  });

  auto* sc = ev->add_subcommand("score", "Score participant labels");
  auto assessment = std::make_shared<std::string>();
  auto labels = std::make_shared<std::string>();
  auto sc_out = std::make_shared<std::string>();
  sc->add_option("--assessment", *assessment, "assessment.json from 'eval build'")->required()->check(CLI::ExistingFile);
  sc->add_option("--labels", *labels, "CSV participant,item_id,label")->required()->check(CLI::ExistingFile);
  sc->add_option("--out", *sc_out, "Output report JSON");
  cmds.on(sc, [=] {
    const auto a = eval::assessment_from_json(read_json(*assessment));
    const std::vector<eval::AnnotationTask> tasks{a.first, a.second};
    const auto report = eval::score_annotations(tasks, eval::load_labels(*labels));
    auto j = eval::to_json(report);
    j["_meta"] = meta("eval score");
    if (!sc_out->empty()) write_json(*sc_out, j);
    std::cout << eval::to_json(report).dump(2) << "\n";
  });

  auto* mx = ev->add_subcommand("matrix", "Rates of a confusion matrix given as counts");
  auto m = std::make_shared<eval::ConfusionMatrix>();
  auto mx_out = std::make_shared<std::string>();
  mx->add_option("--tp", m->tp, "True items labelled true")->required();
  mx->add_option("--fn", m->fn, "True items labelled fake")->required();
  mx->add_option("--fp", m->fp, "Fake items labelled true")->required();
  mx->add_option("--tn", m->tn, "Fake items labelled fake")->required();
  mx->add_option("--out", *mx_out, "Output report JSON");
  cmds.on(mx, [=] {
    const auto report = eval::score_matrix(*m);
    auto j = eval::to_json(report);
    j["_meta"] = meta("eval matrix");
    if (!mx_out->empty()) write_json(*mx_out, j);
    std::cout << eval::to_json(report).dump(2) << "\n";
  });
}

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::runtime:
    case Errc::non_finite:
      return kExitRuntime;
    default:
      return kExitInput;
  }
}

const CLI::App* deepest(const CLI::App* app) {
  for (const auto* sub : app->get_subcommands()) return deepest(sub);
  return app;
}

std::string command_path(const CLI::App* leaf) {
  std::string out;
  for (const auto* a = leaf; a && a->get_parent(); a = a->get_parent()) {
    out = a->get_name() + (out.empty() ? "" : " " + out);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ctikg: fake CTI generation, knowledge-graph ingestion, poisoning and defense toolkit", "ctikg"};
  app.set_version_flag("--version", std::string("ctikg ") + CTIKG_VERSION);
  app.config_formatter(std::make_shared<CLI::ConfigINI>());
  app.set_config("--config", "", "INI config file; [section] names a subcommand, flags win");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.add_option("--seed", g_globals.seed, "Root seed (env CTIKG_SEED)")->envname("CTIKG_SEED")->capture_default_str();
  app.add_flag("-v,--verbose", g_globals.verbosity, "More log output");
  app.add_flag("-q,--quiet", g_globals.quiet, "No log output");
  app.require_subcommand(1);

  Commands cmds;
  add_corpus(app, cmds);
  add_tokenizer(app, cmds);
  add_train(app, cmds);
  add_generate(app, cmds);
  add_extract(app, cmds);
  add_ckg(app, cmds);
  add_poison(app, cmds);
  add_defend(app, cmds);
  add_eval(app, cmds);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code == 0) return kExitOk;
    std::string names;
    for (const auto* sub : app.get_subcommands({})) names += (names.empty() ? "" : ", ") + sub->get_name();
    std::cerr << "commands: " << names << "\n";
    return kExitUsage;
  }

  const auto* leaf = deepest(&app);
  const auto it = cmds.runners.find(leaf);
  if (it == cmds.runners.end()) {
    std::cerr << app.help() << "\n";
    return kExitUsage;
  }
  const auto command = command_path(leaf);
  log("command: " + command);
  log("seed: " + std::to_string(g_globals.seed));
  if (!g_globals.quiet) std::cerr << "ctikg: resolved options:\n" << leaf->config_to_str(true, false);

  try {
    it->second();
  } catch (const SyntaxError& e) {
    std::cerr << "ctikg: " << command << ": " << e.what() << "\n";
    return kExitInput;
  } catch (const Error& e) {
    std::cerr << "ctikg: " << command << ": " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const json::exception& e) {
    std::cerr << "ctikg: " << command << ": malformed JSON: " << e.what() << "\n";
    return kExitInput;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "ctikg: " << command << ": " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "ctikg: " << command << ": " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
