#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ctikg/common/types.hpp"
#include "ctikg/corpus/document.hpp"
#include "ctikg/lm/train.hpp"
#include "ctikg/tokenizer/bpe.hpp"

namespace ctikg::generator {

enum class Strategy { greedy, top_k };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view s);

struct GenSettings {
  Strategy strategy = Strategy::greedy;
  std::size_t k = 40;
  double temperature = 1.0;
  std::size_t max_words = 500;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const GenSettings&) const = default;
};

nlohmann::json to_json(const GenSettings& s);
GenSettings settings_from_json(const nlohmann::json& j);

/// Model output. Generated text is fake by construction and stays contained:
/// it can only leave the process through an explicitly acknowledged export.
struct GeneratedSample {
  std::string prompt;
  std::string continuation;
  std::string source_doc;
  GenSettings settings;
  corpus::Authenticity authenticity = corpus::Authenticity::fake_cti;
  bool contained = true;

  std::string full_text() const { return prompt + continuation; }
  bool operator==(const GeneratedSample&) const = default;
};

nlohmann::json to_json(const GeneratedSample& s);
GeneratedSample sample_from_json(const nlohmann::json& j);

/// Corpus view of a sample: body is the full text, authenticity fake_cti and
/// provenance "generated:<source doc>".
corpus::Document to_document(const GeneratedSample& s, std::string id,
                             corpus::SourceCategory category);

/// Samples written as JSONL (one sample per line, {"_meta": ...} first).
void write_samples(const std::filesystem::path& path, std::span<const GeneratedSample> samples,
                   const nlohmann::json& meta);
std::vector<GeneratedSample> read_samples(const std::filesystem::path& path);

// ---------------------------------------------------------------- perplexity

/// exp of the mean of -log p. Errc::empty_input when no values are given.
double perplexity_from_log_probs(std::span<const double> log_probs);

/// log softmax(logits)[target], computed stably.
double log_prob(std::span<const float> logits, TokenId target);

/// Perplexity over every next-token position. Sequences longer than the
/// context are scored in consecutive windows that do not repeat targets.
double perplexity(const lm::LmParams<float>& params, std::span<const TokenSeq> sequences);

// --------------------------------------------------------------- fine-tuning

struct FineTuneSettings {
  std::size_t block_size = 128;
  std::size_t batch_size = 64;
  double lr = lm::kDefaultLearningRate;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;  // block shuffling
};

nlohmann::json to_json(const FineTuneSettings& s);

struct EpochStats {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double train_loss = 0.0;
  double heldout_perplexity = 0.0;
};

struct FineTuneResult {
  lm::TrainState<float> best;
  std::size_t best_epoch = 0;  // 0: the starting state was never beaten
  double initial_heldout_perplexity = 0.0;
  std::vector<EpochStats> epochs;
};

/// Encodes documents as <begin> text <end> and concatenates them.
TokenSeq encode_stream(const tokenizer::BpeVocab& vocab, std::span<const corpus::Document> docs);

/// Windows of block_size + 1 tokens advancing by block_size, so every stream
/// position after the first is a target exactly once. The tail is dropped.
std::vector<TokenSeq> make_blocks(std::span<const TokenId> stream, std::size_t block_size);

/// Held-out blocks; a stream shorter than one block becomes a single sequence.
std::vector<TokenSeq> make_eval_blocks(std::span<const TokenId> stream, std::size_t block_size);

using EpochCallback = std::function<void(const EpochStats&)>;

/// Trains on shuffled blocks and keeps the state with the lowest held-out
/// perplexity (the starting state included).
/// Errors: vocab/model size disagreement (Errc::shape_mismatch), training
/// text shorter than one block (Errc::insufficient_input).
FineTuneResult fine_tune(lm::TrainState<float> state, const tokenizer::BpeVocab& vocab,
                         std::span<const corpus::Document> train,
                         std::span<const corpus::Document> heldout,
                         const FineTuneSettings& settings, const EpochCallback& on_epoch = {});

// ---------------------------------------------------------------- generation

/// Continues `prompt`. Greedy picks the arg max (lowest id on ties); top-k
/// samples from the k best tokens at the given temperature. Begin and pad are
/// never produced; end stops generation once at least one word exists.
/// Stops when the continuation would exceed max_words whitespace words.
/// Errors: empty prompt (Errc::invalid_argument), prompt longer than the
/// context (Errc::context_overflow, message carries the token count).
GeneratedSample generate(const lm::LmParams<float>& params, const tokenizer::BpeVocab& vocab,
                         std::string_view prompt, const GenSettings& settings,
                         std::string source_doc = {});

/// Prompt = first sentence of the truncated body; the continuation budget is
/// capped at the sample limit. Errors: document not true_cti
/// (Errc::invalid_argument), no usable sentence (Errc::insufficient_input).
GeneratedSample make_fake_counterpart(const lm::LmParams<float>& params,
                                      const tokenizer::BpeVocab& vocab,
                                      const corpus::Document& true_doc, GenSettings settings);

}  // namespace ctikg::generator
