#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>

#include "ctikg/common/error.hpp"
#include "ctikg/common/text.hpp"
#include "ctikg/lm/checkpoint.hpp"
#include "ctikg/lm/model.hpp"
#include "ctikg/lm/ops.hpp"
#include "ctikg/lm/train.hpp"

using namespace ctikg;
using namespace ctikg::lm;

namespace {

// Two-pass mean/variance, written independently of the kernels.
std::vector<double> layer_norm_oracle(const std::vector<double>& x) {
  double mean = 0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  std::vector<double> out;
  for (double v : x) out.push_back((v - mean) / std::sqrt(var + 1e-5));
  return out;
}

// softmax(q.k / sqrt(d)) v, one explicit row at a time.
std::vector<std::vector<double>> attention_oracle(const std::vector<std::vector<double>>& q,
                                                  const std::vector<std::vector<double>>& k,
                                                  const std::vector<std::vector<double>>& v,
                                                  bool causal) {
  const std::size_t n = q.size();
  const double scale = 1.0 / std::sqrt(static_cast<double>(q[0].size()));
  std::vector<std::vector<double>> out(n, std::vector<double>(v[0].size(), 0.0));
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t visible = causal ? t + 1 : n;
    std::vector<double> w(visible);
    double z = 0;
    for (std::size_t u = 0; u < visible; ++u) {
      double s = 0;
      for (std::size_t i = 0; i < q[t].size(); ++i) s += q[t][i] * k[u][i];
      w[u] = std::exp(s * scale);
      z += w[u];
    }
    for (std::size_t u = 0; u < visible; ++u) {
      for (std::size_t i = 0; i < v[u].size(); ++i) out[t][i] += w[u] / z * v[u][i];
    }
  }
  return out;
}

Tensor<double> to_tensor(const std::vector<std::vector<double>>& rows) {
  auto t = Tensor<double>::matrix(rows.size(), rows[0].size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) t(r, c) = rows[r][c];
  }
  return t;
}

LmConfig small_config(std::int64_t vocab = 11, std::int64_t d = 8, std::int64_t heads = 2) {
  LmConfig c;
  c.vocab_size = vocab;
  c.context_length = 16;
  c.n_layers = 1;
  c.d_model = d;
  c.n_heads = heads;
  c.d_ff = 4 * d;
  c.dropout = 0.0;
  c.seed = 7;
  return c;
}

template <typename T>
void scale_all(LmParams<T>& p, Rng& rng, double stddev) {
  for (auto& [name, t] : p.named_tensors()) {
    for (auto& v : t->data) v += static_cast<T>(rng.normal() * stddev);
  }
}

}  // namespace

TEST_CASE("config validation") {
  auto c = LmConfig::desk();
  CHECK_NOTHROW(c.validate());
  CHECK(c.head_dim() == 32);
  CHECK_NOTHROW(LmConfig::paper_117m().validate());
  CHECK(LmConfig::paper_117m().head_dim() == 64);

  LmConfig typo = LmConfig::paper_117m();
  typo.d_model = 786;
  typo.d_ff = 4 * 786;
  CHECK_THROWS_AS(typo.validate(), Error);

  c.d_ff = 100;
  CHECK_THROWS_AS(c.validate(), Error);
  c = LmConfig::desk();
  c.vocab_size = 1;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("layer_norm") {
  SUBCASE("constant input normalises to zero") {
    std::vector<double> x(5, 2.0), g(5, 1.0), b(5, 0.0);
    for (double v : layer_norm<double>(x, g, b)) CHECK(v == 0.0);
  }
  SUBCASE("standardised input is nearly unchanged") {
    std::vector<double> x{1, -1}, g{1, 1}, b{0, 0};
    const auto out = layer_norm<double>(x, g, b);
    CHECK(std::abs(out[0] - 1.0) < 1e-4);
    CHECK(std::abs(out[1] + 1.0) < 1e-4);
  }
  SUBCASE("matches two-pass oracle") {
    std::vector<double> x{1, 2, 3}, g{1, 1, 1}, b{0, 0, 0};
    const auto expected = layer_norm_oracle(x);
    const auto out = layer_norm<double>(x, g, b);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(out[i] - expected[i]) < 1e-12);
    // Frozen value from the oracle: (3 - 2) / sqrt(2/3 + 1e-5).
    CHECK(std::abs(out[2] - 1.2247356859) < 1e-9);
  }
  SUBCASE("dimension mismatch") {
    std::vector<double> x{1, 2, 3}, g{1, 1}, b{0, 0, 0};
    CHECK_THROWS_AS(layer_norm<double>(x, g, b), Error);
  }
}

TEST_CASE("gelu") {
  CHECK(gelu(0.0) == 0.0);
  CHECK(std::abs(gelu(10.0) - 10.0) < 1e-6);
  const double oracle =
      0.5 * 1.0 * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (1.0 + 0.044715 * 1.0)));
  CHECK(std::abs(gelu(1.0) - oracle) < 1e-15);
  CHECK(std::abs(gelu(1.0) - 0.8411919906) < 1e-9);

  // gelu(x) - gelu(-x) = x, because the gate is symmetric about one half.
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.uniform() * 20.0 - 10.0;
    CHECK(std::abs(gelu(x) - gelu(-x) - x) < 1e-9);
  }

  // Derivative against central differences.
  for (double x : {-3.0, -0.5, 0.0, 0.7, 2.5}) {
    const double h = 1e-6;
    const double fd = (gelu(x + h) - gelu(x - h)) / (2 * h);
    CHECK(std::abs(gelu_grad(x) - fd) < 1e-8);
  }
}

TEST_CASE("scaled_dot_attention") {
  SUBCASE("single key returns V") {
    auto q = Tensor<double>::matrix(1, 3, {0.3, -1.2, 4.0});
    auto k = Tensor<double>::matrix(1, 3, {2.0, 0.5, -0.1});
    auto v = Tensor<double>::matrix(1, 2, {1.25, -7.5});
    const auto out = scaled_dot_attention(q, k, v, true);
    CHECK(out.data == v.data);
  }
  SUBCASE("identical keys give the mean of visible values") {
    auto q = Tensor<double>::matrix(3, 2, {1, 2, -3, 0.5, 0, 4});
    auto k = Tensor<double>::matrix(3, 2, {0.7, -0.2, 0.7, -0.2, 0.7, -0.2});
    auto v = Tensor<double>::matrix(3, 1, {3, 6, 12});
    const auto causal = scaled_dot_attention(q, k, v, true);
    CHECK(causal(0, 0) == doctest::Approx(3.0));
    CHECK(causal(1, 0) == doctest::Approx(4.5));
    CHECK(causal(2, 0) == doctest::Approx(7.0));
    const auto full = scaled_dot_attention(q, k, v, false);
    for (std::size_t t = 0; t < 3; ++t) CHECK(full(t, 0) == doctest::Approx(7.0));
  }
  SUBCASE("T=2, d_k=2 against explicit softmax") {
    const std::vector<std::vector<double>> q{{1, 0}, {0, 1}}, k{{1, 2}, {3, -1}},
        v{{1, 2}, {3, 4}};
    for (bool causal : {false, true}) {
      const auto expected = attention_oracle(q, k, v, causal);
      const auto out = scaled_dot_attention(to_tensor(q), to_tensor(k), to_tensor(v), causal);
      for (std::size_t t = 0; t < 2; ++t) {
        for (std::size_t i = 0; i < 2; ++i) CHECK(std::abs(out(t, i) - expected[t][i]) < 1e-12);
      }
    }
    // Frozen: row 0 non-causal weights are softmax([1, 3] / sqrt 2).
    const auto out = scaled_dot_attention(to_tensor(q), to_tensor(k), to_tensor(v), false);
    CHECK(std::abs(out(0, 0) - 2.6088593650) < 1e-9);
  }
  SUBCASE("rows sum to one, masked entries zero") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t n = 1 + rng.below(9);
      auto q = Tensor<double>::matrix(n, 4), k = Tensor<double>::matrix(n, 4);
      for (auto& x : q.data) x = rng.normal() * 3;
      for (auto& x : k.data) x = rng.normal() * 3;
      const auto w = attention_weights(q, k, true);
      for (std::size_t t = 0; t < n; ++t) {
        double sum = 0;
        for (std::size_t u = 0; u < n; ++u) {
          CHECK(w(t, u) >= 0.0);
          CHECK(w(t, u) <= 1.0);
          if (u > t) CHECK(w(t, u) == 0.0);
          sum += w(t, u);
        }
        CHECK(std::abs(sum - 1.0) < 1e-6);
      }
    }
  }
  SUBCASE("empty sequence") {
    Tensor<double> empty = Tensor<double>::matrix(0, 2);
    CHECK_THROWS_AS(scaled_dot_attention(empty, empty, empty, true), Error);
  }
}

TEST_CASE("multi_head_attention") {
  Rng rng(5);
  auto config = small_config(11, 8, 2);
  auto params = LmParams<double>::initialized(config, rng);
  scale_all(params, rng, 0.3);
  const auto& layer = params.layers[0];
  auto x = Tensor<double>::matrix(3, 8);
  for (auto& v : x.data) v = rng.normal();

  SUBCASE("per-head oracle") {
    // qkv = x W + b, split into heads, attend independently, concatenate, project.
    const std::size_t d = 8, hd = 4;
    std::vector<std::vector<double>> qkv(3, std::vector<double>(3 * d));
    for (std::size_t t = 0; t < 3; ++t) {
      for (std::size_t j = 0; j < 3 * d; ++j) {
        double s = layer.qkv_bias.data[j];
        for (std::size_t i = 0; i < d; ++i) s += x(t, i) * layer.qkv_weight(i, j);
        qkv[t][j] = s;
      }
    }
    std::vector<std::vector<double>> concat(3, std::vector<double>(d));
    for (std::size_t h = 0; h < 2; ++h) {
      std::vector<std::vector<double>> q(3), k(3), v(3);
      for (std::size_t t = 0; t < 3; ++t) {
        for (std::size_t i = 0; i < hd; ++i) {
          q[t].push_back(qkv[t][h * hd + i]);
          k[t].push_back(qkv[t][d + h * hd + i]);
          v[t].push_back(qkv[t][2 * d + h * hd + i]);
        }
      }
      const auto head = attention_oracle(q, k, v, true);
      for (std::size_t t = 0; t < 3; ++t) {
        for (std::size_t i = 0; i < hd; ++i) concat[t][h * hd + i] = head[t][i];
      }
    }
    const auto out = multi_head_attention(config, layer, x);
    for (std::size_t t = 0; t < 3; ++t) {
      for (std::size_t j = 0; j < d; ++j) {
        double s = layer.proj_bias.data[j];
        for (std::size_t i = 0; i < d; ++i) s += concat[t][i] * layer.proj_weight(i, j);
        CHECK(std::abs(out(t, j) - s) < 1e-12);
      }
    }
  }

  SUBCASE("single head equals attention between projections") {
    auto c1 = small_config(11, 8, 1);
    LayerParams<double> l = layer;
    const auto out = multi_head_attention(c1, l, x);
    auto q = Tensor<double>::matrix(3, 8), k = Tensor<double>::matrix(3, 8),
         v = Tensor<double>::matrix(3, 8);
    for (std::size_t t = 0; t < 3; ++t) {
      for (std::size_t j = 0; j < 24; ++j) {
        double s = l.qkv_bias.data[j];
        for (std::size_t i = 0; i < 8; ++i) s += x(t, i) * l.qkv_weight(i, j);
        (j < 8 ? q : j < 16 ? k : v)(t, j % 8) = s;
      }
    }
    const auto attn = scaled_dot_attention(q, k, v, true);
    for (std::size_t t = 0; t < 3; ++t) {
      for (std::size_t j = 0; j < 8; ++j) {
        double s = l.proj_bias.data[j];
        for (std::size_t i = 0; i < 8; ++i) s += attn(t, i) * l.proj_weight(i, j);
        CHECK(std::abs(out(t, j) - s) < 1e-12);
      }
    }
  }

  SUBCASE("zeroed output projection annihilates") {
    LayerParams<double> l = layer;
    std::fill(l.proj_weight.data.begin(), l.proj_weight.data.end(), 0.0);
    std::fill(l.proj_bias.data.begin(), l.proj_bias.data.end(), 0.0);
    for (double v : multi_head_attention(config, l, x).data) CHECK(v == 0.0);
  }

  SUBCASE("context overflow") {
    auto long_x = Tensor<double>::matrix(17, 8);
    CHECK_THROWS_AS(multi_head_attention(config, layer, long_x), Error);
  }
}

TEST_CASE("forward") {
  auto config = small_config();
  Rng rng(1);
  auto params = LmParams<float>::initialized(config, rng);

  SUBCASE("shape and finiteness") {
    const TokenSeq ids{3};
    const auto logits = forward(params, ids);
    CHECK(logits.rows() == 1);
    CHECK(logits.cols() == 11);
    for (float v : logits.data) CHECK(std::isfinite(v));
  }
  SUBCASE("causality is bitwise") {
    TokenSeq ids{1, 4, 2, 9, 0, 7};
    const auto base = forward(params, ids);
    for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
      TokenSeq changed = ids;
      changed[t + 1] = (changed[t + 1] + 5) % 11;
      const auto other = forward(params, changed);
      CHECK(std::memcmp(base.data.data(), other.data.data(), (t + 1) * 11 * sizeof(float)) == 0);
    }
  }
  SUBCASE("determinism") {
    TokenSeq ids{1, 2, 3};
    auto rng_a = Rng(9), rng_b = Rng(9);
    auto a = LmParams<float>::initialized(config, rng_a);
    auto b = LmParams<float>::initialized(config, rng_b);
    CHECK(forward(a, ids) == forward(b, ids));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(forward(params, TokenSeq{}), Error);
    CHECK_THROWS_AS(forward(params, TokenSeq{11}), Error);
    CHECK_THROWS_AS(forward(params, TokenSeq(17, 1)), Error);
  }
  SUBCASE("training path agrees with the decoder") {
    // batch_loss must equal the NLL computed from forward() logits.
    TokenSeq seq{1, 4, 2, 9, 0};
    const auto logits = forward(params, std::span(seq).first(4));
    double nll = 0;
    for (std::size_t t = 0; t < 4; ++t) {
      double z = 0;
      for (std::size_t v = 0; v < 11; ++v) z += std::exp(static_cast<double>(logits(t, v)));
      nll += std::log(z) - logits(t, static_cast<std::size_t>(seq[t + 1]));
    }
    const std::vector<TokenSeq> batch{seq};
    CHECK(batch_loss(params, batch) == doctest::Approx(nll / 4).epsilon(1e-5));
  }
}

TEST_CASE("loss_and_grads") {
  SUBCASE("uniform logits give ln(vocab)") {
    auto config = small_config(37);
    auto params = LmParams<double>::zeros(config);  // zero embeddings: all logits zero
    const std::vector<TokenSeq> batch{{1, 2, 3, 4}, {5, 6}};
    CHECK(std::abs(batch_loss(params, batch) - std::log(37.0)) < 1e-6);
  }
  SUBCASE("central differences, 64-bit") {
    auto config = small_config(13, 8, 2);
    Rng rng(21);
    auto params = LmParams<double>::initialized(config, rng);
    scale_all(params, rng, 0.2);
    const std::vector<TokenSeq> batch{{1, 5, 2, 12, 7, 3}, {4, 4, 8, 0}};
    const auto analytic = loss_and_grads(params, batch);
    auto named = params.named_tensors();
    auto grads = analytic.grads.named_tensors();
    Rng pick(77);
    double worst = 0;
    for (int sample = 0; sample < 60; ++sample) {
      const std::size_t ti = pick.below(named.size());
      auto& tensor = *named[ti].second;
      const std::size_t i = pick.below(tensor.size());
      const double saved = tensor.data[i];
      const double h = 1e-5;
      tensor.data[i] = saved + h;
      const double up = batch_loss(params, batch);
      tensor.data[i] = saved - h;
      const double down = batch_loss(params, batch);
      tensor.data[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = grads[ti].second->data[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-7});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    CHECK(worst < 1e-4);
  }
  SUBCASE("duplicating batch items keeps the mean") {
    auto config = small_config();
    Rng rng(2);
    auto params = LmParams<double>::initialized(config, rng);
    const TokenSeq a{1, 2, 3, 4}, b{6, 5, 3};
    const std::vector<TokenSeq> single{a}, doubled{a, a};
    CHECK(std::abs(batch_loss(params, single) - batch_loss(params, doubled)) < 1e-6);
    const std::vector<TokenSeq> pair{a, b}, twice{a, b, a, b};
    CHECK(std::abs(batch_loss(params, pair) - batch_loss(params, twice)) < 1e-6);
  }
  SUBCASE("sequence too short") {
    auto config = small_config();
    auto params = LmParams<double>::zeros(config);
    const std::vector<TokenSeq> batch{{1}};
    CHECK_THROWS_AS(batch_loss(params, batch), Error);
  }
}

TEST_CASE("train_step") {
  auto config = small_config(17, 16, 2);
  const std::vector<TokenSeq> batch{{1, 5, 9, 3, 16, 2, 8}, {4, 4, 7, 11, 0}};

  SUBCASE("zero learning rate leaves parameters bitwise unchanged") {
    auto state = TrainState<float>::fresh(config);
    const auto before = state.params;
    train_step(state, batch, 0.0);
    CHECK(state.params == before);
    CHECK(state.step == 1);
  }
  SUBCASE("overfit batch loss is essentially monotone") {
    auto state = TrainState<float>::fresh(config);
    std::vector<double> losses;
    for (int i = 0; i < 51; ++i) losses.push_back(train_step(state, batch, 1e-3));
    int non_increasing = 0;
    for (std::size_t i = 1; i < losses.size(); ++i) non_increasing += losses[i] <= losses[i - 1];
    CHECK(non_increasing >= 45);
    for (const auto& [name, t] : state.params.named_tensors()) {
      for (float v : t->data) REQUIRE(std::isfinite(v));
    }
  }
  SUBCASE("determinism with dropout") {
    auto c = config;
    c.dropout = 0.1;
    auto a = TrainState<float>::fresh(c), b = TrainState<float>::fresh(c);
    for (int i = 0; i < 3; ++i) {
      train_step(a, batch, 1e-3);
      train_step(b, batch, 1e-3);
    }
    CHECK(a == b);
  }
  SUBCASE("non-finite gradients abort naming a tensor") {
    auto state = TrainState<float>::fresh(config);
    state.params.final_gain.data[0] = std::numeric_limits<float>::quiet_NaN();
    try {
      train_step(state, batch, 1e-3);
      FAIL("expected a non-finite error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::non_finite);
      CHECK(std::string(e.what()).find("'") != std::string::npos);
    }
  }
}

TEST_CASE("checkpoint") {
  auto config = small_config(19, 8, 2);
  const std::vector<TokenSeq> batch{{1, 5, 9, 3, 16, 2, 8}, {4, 4, 7, 11, 0}};
  const auto dir = std::filesystem::temp_directory_path() / "ctikg_test_lm";
  std::filesystem::create_directories(dir);

  SUBCASE("round trip") {
    auto state = TrainState<float>::fresh(config);
    save_checkpoint(state, dir / "fresh.ckpt");
    const auto loaded = load_checkpoint(dir / "fresh.ckpt");
    CHECK(loaded == state);
    CHECK(loaded.config() == config);
  }
  SUBCASE("corrupted header byte") {
    auto bytes = serialize_checkpoint(TrainState<float>::fresh(config));
    auto bad_magic = bytes;
    bad_magic[1] = 'X';
    try {
      deserialize_checkpoint(bad_magic);
      FAIL("expected failure");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::format);
    }
    auto bad_version = bytes;
    bad_version[6] = 9;
    try {
      deserialize_checkpoint(bad_version);
      FAIL("expected failure");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::version);
    }
  }
  SUBCASE("truncation and shape mismatch are distinct") {
    auto bytes = serialize_checkpoint(TrainState<float>::fresh(config));
    try {
      deserialize_checkpoint(bytes.substr(0, bytes.size() - 3));
      FAIL("expected failure");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::truncated);
    }
    // Swap the declared vocab size in the JSON header for another with the
    // same number of digits; the first tensor then disagrees with it.
    const auto pos = bytes.find("\"vocab_size\":19");
    REQUIRE(pos != std::string::npos);
    bytes.replace(pos, 15, "\"vocab_size\":23");
    try {
      deserialize_checkpoint(bytes);
      FAIL("expected failure");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::shape_mismatch);
    }
  }
  SUBCASE("continued training is equivalent after a round trip") {
    auto c = config;
    c.dropout = 0.1;
    auto state = TrainState<float>::fresh(c);
    for (int i = 0; i < 10; ++i) train_step(state, batch, 1e-3);
    auto resumed = deserialize_checkpoint(serialize_checkpoint(state));
    for (int i = 0; i < 5; ++i) {
      const double a = train_step(state, batch, 1e-3);
      const double b = train_step(resumed, batch, 1e-3);
      CHECK(a == b);
    }
    CHECK(serialize_checkpoint(state) == serialize_checkpoint(resumed));
  }
}
