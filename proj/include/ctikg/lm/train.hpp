#pragma once

#include <cstdint>
#include <span>

#include "ctikg/common/rng.hpp"
#include "ctikg/common/types.hpp"
#include "ctikg/lm/model.hpp"

namespace ctikg::lm {

inline constexpr double kDefaultLearningRate = 1e-4;

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Parameters plus Adam moments, step counter and the dropout stream.
template <typename T>
struct TrainState {
  LmParams<T> params;
  LmParams<T> first_moment;
  LmParams<T> second_moment;
  std::uint64_t step = 0;
  Rng rng;

  /// Initialises weights from config.seed.
  static TrainState fresh(const LmConfig& config);
  static TrainState from_params(LmParams<T> params, std::uint64_t rng_seed);

  const LmConfig& config() const { return params.config; }
  bool operator==(const TrainState&) const = default;
};

/// Each sequence supplies inputs ids[0..n-2] and next-token targets ids[1..n-1].
using Batch = std::span<const TokenSeq>;

template <typename T>
struct LossAndGrads {
  double loss = 0.0;          // mean next-token NLL over every target in the batch
  std::size_t targets = 0;
  LmParams<T> grads;
};

/// Reverse-mode pass. Dropout is applied only when `dropout_rng` is non-null
/// and config.dropout > 0.
template <typename T>
LossAndGrads<T> loss_and_grads(const LmParams<T>& params, Batch batch, Rng* dropout_rng = nullptr);

template <typename T>
LossAndGrads<T> loss_and_grads(TrainState<T>& state, Batch batch);

/// Mean NLL without gradients or dropout.
template <typename T>
double batch_loss(const LmParams<T>& params, Batch batch);

/// One Adam update. Returns the pre-update batch loss. Throws Errc::non_finite
/// naming the offending tensor if any gradient is NaN or infinite.
template <typename T>
double train_step(TrainState<T>& state, Batch batch, double lr, const AdamSettings& adam = {});

}  // namespace ctikg::lm
