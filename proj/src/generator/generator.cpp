#include "ctikg/generator/generator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctikg/common/error.hpp"
#include "ctikg/common/rng.hpp"
#include "ctikg/common/text.hpp"
#include "ctikg/corpus/preprocess.hpp"
#include "ctikg/lm/model.hpp"

namespace ctikg::generator {

using nlohmann::json;

std::string_view to_string(Strategy s) { return s == Strategy::greedy ? "greedy" : "top_k"; }

Strategy parse_strategy(std::string_view s) {
  if (s == "greedy") return Strategy::greedy;
  if (s == "top_k" || s == "top-k") return Strategy::top_k;
  fail(Errc::invalid_argument, "unknown strategy '" + std::string(s) + "' (expected greedy or top_k)");
}

void GenSettings::validate() const {
  if (k < 1) fail(Errc::invalid_argument, "k must be at least 1");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    fail(Errc::invalid_argument, "temperature must be positive");
  }
  if (max_words < 1) fail(Errc::invalid_argument, "max_words must be at least 1");
}

json to_json(const GenSettings& s) {
  return {{"strategy", to_string(s.strategy)}, {"k", s.k},        {"temperature", s.temperature},
          {"max_words", s.max_words},          {"seed", s.seed}};
}

GenSettings settings_from_json(const json& j) {
  GenSettings s;
  try {
    s.strategy = parse_strategy(j.at("strategy").get<std::string>());
    s.k = j.at("k").get<std::size_t>();
    s.temperature = j.at("temperature").get<double>();
    s.max_words = j.at("max_words").get<std::size_t>();
    s.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    fail(Errc::format, std::string("malformed generation settings: ") + e.what());
  }
  s.validate();
  return s;
}

json to_json(const GeneratedSample& s) {
  return {{"prompt", s.prompt},
          {"continuation", s.continuation},
          {"source_doc", s.source_doc},
          {"settings", to_json(s.settings)},
          {"authenticity", corpus::to_string(s.authenticity)},
          {"contained", s.contained}};
}

GeneratedSample sample_from_json(const json& j) {
  GeneratedSample s;
  try {
    s.prompt = j.at("prompt").get<std::string>();
    s.continuation = j.at("continuation").get<std::string>();
    s.source_doc = j.at("source_doc").get<std::string>();
    s.settings = settings_from_json(j.at("settings"));
    s.authenticity = corpus::parse_authenticity(j.at("authenticity").get<std::string>());
    s.contained = j.value("contained", true);
  } catch (const json::exception& e) {
    fail(Errc::format, std::string("malformed generated sample: ") + e.what());
  }
  if (s.authenticity != corpus::Authenticity::fake_cti) {
    fail(Errc::format, "generated sample must be labelled fake_cti");
  }
  return s;
}

corpus::Document to_document(const GeneratedSample& s, std::string id,
                             corpus::SourceCategory category) {
  corpus::Document d;
  d.id = std::move(id);
  d.source_category = category;
  d.title = "generated from " + s.source_doc;
  d.body = s.full_text();
  d.provenance = "generated:" + s.source_doc;
  d.authenticity = corpus::Authenticity::fake_cti;
  return d;
}

void write_samples(const std::filesystem::path& path, std::span<const GeneratedSample> samples,
                   const json& meta) {
  std::string out = json{{"_meta", meta}}.dump() + "\n";
  for (const auto& s : samples) out += to_json(s).dump() + "\n";
  text::write_file(path, out);
}

std::vector<GeneratedSample> read_samples(const std::filesystem::path& path) {
  std::vector<GeneratedSample> out;
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
    out.push_back(sample_from_json(j));
  }
  return out;
}

// ---------------------------------------------------------------- perplexity

double perplexity_from_log_probs(std::span<const double> log_probs) {
  if (log_probs.empty()) fail(Errc::empty_input, "perplexity of an empty evaluation set");
  double sum = 0.0;
  for (double lp : log_probs) sum -= lp;
  return std::exp(sum / static_cast<double>(log_probs.size()));
}

double log_prob(std::span<const float> logits, TokenId target) {
  if (target < 0 || static_cast<std::size_t>(target) >= logits.size()) {
    fail(Errc::out_of_range, "target id outside the logits");
  }
  double max = logits[0];
  for (float v : logits) max = std::max(max, static_cast<double>(v));
  double z = 0.0;
  for (float v : logits) z += std::exp(static_cast<double>(v) - max);
  return static_cast<double>(logits[static_cast<std::size_t>(target)]) - max - std::log(z);
}

double perplexity(const lm::LmParams<float>& params, std::span<const TokenSeq> sequences) {
  const auto ctx = static_cast<std::size_t>(params.config.context_length);
  std::vector<TokenSeq> windows;
  for (const auto& seq : sequences) {
    for (std::size_t start = 0; start + 1 < seq.size(); start += ctx) {
      const std::size_t end = std::min(seq.size(), start + ctx + 1);
      windows.emplace_back(seq.begin() + static_cast<std::ptrdiff_t>(start),
                           seq.begin() + static_cast<std::ptrdiff_t>(end));
    }
  }
  if (windows.empty()) fail(Errc::empty_input, "no next-token positions to evaluate");
  return std::exp(lm::batch_loss(params, windows));
}

// --------------------------------------------------------------- fine-tuning

json to_json(const FineTuneSettings& s) {
  return {{"block_size", s.block_size}, {"batch_size", s.batch_size}, {"lr", s.lr},
          {"epochs", s.epochs},         {"seed", s.seed}};
}

TokenSeq encode_stream(const tokenizer::BpeVocab& vocab, std::span<const corpus::Document> docs) {
  TokenSeq stream;
  for (const auto& d : docs) {
    stream.push_back(vocab.begin_token());
    const auto ids = vocab.encode(d.body);
    stream.insert(stream.end(), ids.begin(), ids.end());
    stream.push_back(vocab.end_token());
  }
  return stream;
}

std::vector<TokenSeq> make_blocks(std::span<const TokenId> stream, std::size_t block_size) {
  if (block_size < 1) fail(Errc::invalid_argument, "block size must be positive");
  std::vector<TokenSeq> blocks;
  for (std::size_t start = 0; start + block_size + 1 <= stream.size(); start += block_size) {
    blocks.emplace_back(stream.begin() + static_cast<std::ptrdiff_t>(start),
                        stream.begin() + static_cast<std::ptrdiff_t>(start + block_size + 1));
  }
  return blocks;
}

std::vector<TokenSeq> make_eval_blocks(std::span<const TokenId> stream, std::size_t block_size) {
  auto blocks = make_blocks(stream, block_size);
  if (blocks.empty() && stream.size() >= 2) blocks.emplace_back(stream.begin(), stream.end());
  return blocks;
}

FineTuneResult fine_tune(lm::TrainState<float> state, const tokenizer::BpeVocab& vocab,
                         std::span<const corpus::Document> train,
                         std::span<const corpus::Document> heldout,
                         const FineTuneSettings& settings, const EpochCallback& on_epoch) {
  const auto& cfg = state.config();
  if (static_cast<std::size_t>(cfg.vocab_size) != vocab.size()) {
    fail(Errc::shape_mismatch, "tokenizer has " + std::to_string(vocab.size()) +
                                   " tokens but the model expects " +
                                   std::to_string(cfg.vocab_size));
  }
  if (settings.block_size > static_cast<std::size_t>(cfg.context_length)) {
    fail(Errc::invalid_argument, "block size " + std::to_string(settings.block_size) +
                                     " exceeds context length " +
                                     std::to_string(cfg.context_length));
  }
  if (settings.batch_size < 1) fail(Errc::invalid_argument, "batch size must be positive");

  FineTuneResult result;
  if (settings.epochs == 0) {
    result.best = std::move(state);
    return result;
  }

  const auto train_stream = encode_stream(vocab, train);
  auto blocks = make_blocks(train_stream, settings.block_size);
  if (blocks.empty()) {
    fail(Errc::insufficient_input, "training text has " + std::to_string(train_stream.size()) +
                                       " tokens, shorter than one block of " +
                                       std::to_string(settings.block_size + 1));
  }
  const auto eval_blocks = make_eval_blocks(encode_stream(vocab, heldout), settings.block_size);
  if (eval_blocks.empty()) fail(Errc::insufficient_input, "held-out text is too short to score");

  result.initial_heldout_perplexity = perplexity(state.params, eval_blocks);
  double best_ppl = result.initial_heldout_perplexity;
  result.best = state;

  Rng order_rng(settings.seed);
  for (std::size_t epoch = 1; epoch <= settings.epochs; ++epoch) {
    shuffle(blocks, order_rng);
    EpochStats stats;
    stats.epoch = epoch;
    double weighted = 0.0;
    std::size_t targets = 0;
    for (std::size_t start = 0; start < blocks.size(); start += settings.batch_size) {
      const std::size_t end = std::min(blocks.size(), start + settings.batch_size);
      const lm::Batch batch(blocks.data() + start, end - start);
      std::size_t n = 0;
      for (const auto& b : batch) n += b.size() - 1;
      weighted += lm::train_step(state, batch, settings.lr) * static_cast<double>(n);
      targets += n;
      ++stats.steps;
    }
    stats.train_loss = weighted / static_cast<double>(targets);
    stats.heldout_perplexity = perplexity(state.params, eval_blocks);
    if (stats.heldout_perplexity < best_ppl) {
      best_ppl = stats.heldout_perplexity;
      result.best = state;
      result.best_epoch = epoch;
    }
    result.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return result;
}

// ---------------------------------------------------------------- generation

namespace {

bool allowed(const tokenizer::BpeVocab& vocab, TokenId id, bool end_allowed) {
  if (id == vocab.begin_token() || id == vocab.pad_token()) return false;
  if (id == vocab.end_token()) return end_allowed;
  return true;
}

TokenId pick_greedy(std::span<const float> logits, const tokenizer::BpeVocab& vocab,
                    bool end_allowed) {
  TokenId best = -1;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const auto id = static_cast<TokenId>(i);
    if (!allowed(vocab, id, end_allowed)) continue;
    if (best < 0 || logits[i] > logits[static_cast<std::size_t>(best)]) best = id;
  }
  return best;
}

TokenId pick_top_k(std::span<const float> logits, const tokenizer::BpeVocab& vocab,
                   bool end_allowed, const GenSettings& s, Rng& rng) {
  std::vector<TokenId> ids;
  ids.reserve(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (allowed(vocab, static_cast<TokenId>(i), end_allowed)) ids.push_back(static_cast<TokenId>(i));
  }
  const std::size_t k = std::min(s.k, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                    [&](TokenId a, TokenId b) {
                      const float la = logits[static_cast<std::size_t>(a)];
                      const float lb = logits[static_cast<std::size_t>(b)];
                      return la != lb ? la > lb : a < b;
                    });
  std::vector<double> weights(k);
  const double top = logits[static_cast<std::size_t>(ids[0])];
  double z = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    weights[i] = std::exp((logits[static_cast<std::size_t>(ids[i])] - top) / s.temperature);
    z += weights[i];
  }
  double u = rng.uniform() * z;
  for (std::size_t i = 0; i < k; ++i) {
    u -= weights[i];
    if (u < 0.0) return ids[i];
  }
  return ids[k - 1];
}

}  // namespace

GeneratedSample generate(const lm::LmParams<float>& params, const tokenizer::BpeVocab& vocab,
                         std::string_view prompt, const GenSettings& settings,
                         std::string source_doc) {
  settings.validate();
  if (text::trim(prompt).empty()) fail(Errc::invalid_argument, "prompt is empty");
  if (static_cast<std::size_t>(params.config.vocab_size) != vocab.size()) {
    fail(Errc::shape_mismatch, "tokenizer and model vocabulary sizes differ");
  }
  const auto ctx = static_cast<std::size_t>(params.config.context_length);

  TokenSeq tokens{vocab.begin_token()};
  const auto prompt_ids = vocab.encode(prompt);
  tokens.insert(tokens.end(), prompt_ids.begin(), prompt_ids.end());
  if (tokens.size() > ctx) {
    fail(Errc::context_overflow, "prompt encodes to " + std::to_string(tokens.size()) +
                                     " tokens (including the begin marker); context length is " +
                                     std::to_string(ctx));
  }

  lm::Decoder<float> decoder(params);
  std::span<const float> logits;
  for (TokenId id : tokens) logits = decoder.push(id);

  Rng rng(settings.seed);
  std::string continuation;
  const std::size_t token_cap = settings.max_words * 16 + 64;
  for (std::size_t produced = 0; produced < token_cap; ++produced) {
    const bool end_allowed = text::word_count(continuation) > 0;
    const TokenId next = settings.strategy == Strategy::greedy
                             ? pick_greedy(logits, vocab, end_allowed)
                             : pick_top_k(logits, vocab, end_allowed, settings, rng);
    if (next == vocab.end_token()) break;
    continuation += vocab.token_bytes(next);
    const auto spans = text::words(continuation);
    if (spans.size() > settings.max_words) {
      continuation.resize(spans[settings.max_words - 1].end);
      break;
    }
    tokens.push_back(next);
    if (decoder.length() == decoder.capacity()) {
      // Slide: keep the most recent half of the context.
      decoder.reset();
      const std::size_t keep = std::max<std::size_t>(1, ctx / 2);
      for (std::size_t i = tokens.size() - keep; i < tokens.size(); ++i) logits = decoder.push(tokens[i]);
    } else {
      logits = decoder.push(next);
    }
  }

  GeneratedSample out;
  out.prompt = std::string(prompt);
  out.continuation = std::move(continuation);
  out.source_doc = std::move(source_doc);
  out.settings = settings;
  return out;
}

GeneratedSample make_fake_counterpart(const lm::LmParams<float>& params,
                                      const tokenizer::BpeVocab& vocab,
                                      const corpus::Document& true_doc, GenSettings settings) {
  if (true_doc.authenticity != corpus::Authenticity::true_cti) {
    fail(Errc::invalid_argument, "document " + true_doc.id + " is not labelled true_cti");
  }
  const auto sample = corpus::truncate_sample(true_doc);
  if (sample.flagged) {
    fail(Errc::insufficient_input, "document " + true_doc.id + " has no complete sentence");
  }
  settings.max_words = std::min(settings.max_words, corpus::kMaxSampleWords);
  return generate(params, vocab, corpus::first_sentence(sample.text), settings, true_doc.id);
}

}  // namespace ctikg::generator
