#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "tcan/errors.hpp"
#include "tcan/model.hpp"
#include "tcan/ops.hpp"

using namespace tcan;

namespace {

const double kInf = std::numeric_limits<double>::infinity();

TCANConfig small_config(SoftmaxDirection dir, MaskMode mask, bool er, std::size_t k = 2, std::size_t levels = 2) {
  TCANConfig c;
  c.vocab_size = 7;
  c.d_embed = 5;
  c.d_attn = 3;
  c.kernel_size = k;
  c.num_levels = levels;
  c.softmax_direction = dir;
  c.mask_mode = mask;
  c.use_enhanced_residual = er;
  c.seed = 3;
  return c;
}

std::vector<int> random_ids(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::vector<int> ids(n);
  for (int& id : ids) id = static_cast<int>(gen() % vocab);
  return ids;
}

// Largest |logit[t] change| over positions <= t when every id after t is altered.
double max_prefix_change(const ModelParams& params, const TCANConfig& config, const std::vector<int>& ids) {
  NoGradGuard guard;
  const Tensor base = model_forward(ids, params, config).logits;
  const std::size_t vocab = config.vocab_size;
  double worst = 0.0;
  for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
    std::vector<int> pert = ids;
    for (std::size_t u = t + 1; u < ids.size(); ++u) pert[u] = static_cast<int>((pert[u] + 1 + u) % vocab);
    const Tensor other = model_forward(pert, params, config).logits;
    for (std::size_t r = 0; r <= t; ++r)
      for (std::size_t v = 0; v < vocab; ++v)
        worst = std::max(worst, std::abs(other.at(r, v) - base.at(r, v)));
  }
  return worst;
}

}  // namespace

TEST_CASE("attention_scores") {
  const Tensor s1 = Tensor::from_data({1, 1}, {1.0});
  const Tensor f = Tensor::from_data({1, 4}, {2, 2, 0, 0});
  const auto p = attention_scores(s1, f, f, f);
  CHECK(p.scores.shape() == Shape{1, 1});
  CHECK(p.scores[0] == 4.0);

  const Tensor s = Tensor::uniform({4, 3}, 1.0, 2);
  const Tensor fk = Tensor::uniform({3, 2}, 1.0, 3), fq = Tensor::uniform({3, 2}, 1.0, 4);
  const auto q = attention_scores(s, fk, fq, fk);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double dot = 0.0;
      for (std::size_t a = 0; a < 2; ++a) dot += q.keys.at(i, a) * q.queries.at(j, a);
      CHECK(std::abs(q.scores.at(i, j) - dot / std::sqrt(2.0)) < 1e-15);
    }

  const auto sym = attention_scores(s, fk, fk, fk);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(sym.scores.at(i, j) == doctest::Approx(sym.scores.at(j, i)));
}

TEST_CASE("apply_causal_mask") {
  const Tensor w = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  const Tensor z = apply_causal_mask(w, MaskMode::literal_zero);
  CHECK(std::vector<double>(z.data().begin(), z.data().end()) == std::vector<double>{1, 0, 3, 4});
  const Tensor n = apply_causal_mask(w, MaskMode::neg_inf);
  CHECK(n[0] == 1);
  CHECK(n[1] == -kInf);
  CHECK(n[2] == 3);
  CHECK(n[3] == 4);
  const Tensor one = apply_causal_mask(Tensor::from_data({1, 1}, {7.5}), MaskMode::neg_inf);
  CHECK(one[0] == 7.5);
  CHECK_THROWS_AS(apply_causal_mask(Tensor::zeros({2, 3}), MaskMode::literal_zero), ShapeError);
}

TEST_CASE("directional_softmax examples") {
  // Last column under neg_inf has one kept entry.
  const Tensor w = Tensor::uniform({3, 3}, 1.0, 5);
  const Tensor v = directional_softmax(apply_causal_mask(w, MaskMode::neg_inf), SoftmaxDirection::vertical);
  CHECK(v.at(2, 2) == 1.0);
  CHECK(v.at(0, 2) == 0.0);
  CHECK(v.at(1, 2) == 0.0);

  const Tensor lz = directional_softmax(apply_causal_mask(Tensor::zeros({2, 2}), MaskMode::literal_zero),
                                        SoftmaxDirection::vertical);
  CHECK(lz.at(0, 1) == 0.5);
  CHECK(lz.at(1, 1) == 0.5);

  const Tensor h = directional_softmax(apply_causal_mask(Tensor::constant({4, 4}, 0.3), MaskMode::neg_inf),
                                       SoftmaxDirection::horizontal);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(std::abs(h.at(t, j) - (j <= t ? 1.0 / static_cast<double>(t + 1) : 0.0)) < 1e-15);
}

TEST_CASE("directional_softmax normalization and mixed mean") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t n = 1 + seed % 9;
    const Tensor w = Tensor::uniform({n, n}, 3.0, seed + 100);
    for (MaskMode mode : {MaskMode::literal_zero, MaskMode::neg_inf}) {
      const Tensor masked = apply_causal_mask(w, mode);
      const Tensor v = directional_softmax(masked, SoftmaxDirection::vertical);
      const Tensor h = directional_softmax(masked, SoftmaxDirection::horizontal);
      const Tensor m = directional_softmax(masked, SoftmaxDirection::mixed);
      for (std::size_t a = 0; a < n; ++a) {
        double col = 0.0, row = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
          col += v.at(b, a);
          row += h.at(a, b);
          CHECK(std::abs(m.at(a, b) - 0.5 * (v.at(a, b) + h.at(a, b))) < 1e-15);
          if (mode == MaskMode::neg_inf && b > a) {
            CHECK(v.at(a, b) == 0.0);
            CHECK(h.at(a, b) == 0.0);
          }
        }
        CHECK(std::abs(col - 1.0) < 1e-9);
        CHECK(std::abs(row - 1.0) < 1e-9);
      }
    }
  }
}

TEST_CASE("attention_output") {
  const Tensor s = Tensor::uniform({3, 4}, 1.0, 8);
  const Tensor v = Tensor::uniform({3, 2}, 1.0, 9);
  const Tensor eye = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor out = attention_output(eye, s, v, false);
  CHECK(std::equal(out.data().begin(), out.data().end(), s.data().begin()));

  const Tensor s2 = Tensor::from_data({2, 2}, {1, 2, 3, 6});
  const Tensor wa = Tensor::from_data({2, 2}, {1, 0.9, 0.5, 0.5});
  const Tensor out2 = attention_output(wa, s2, Tensor::zeros({2, 1}), false);
  CHECK(out2.at(1, 0) == 2.0);
  CHECK(out2.at(1, 1) == 4.0);
  CHECK(out2.at(0, 0) == 1.0);  // the 0.9 above the diagonal is never read

  const Tensor with_values = attention_output(eye, s, v, true);
  CHECK(std::equal(with_values.data().begin(), with_values.data().end(), v.data().begin()));

  // Perturbing a later row of the source leaves earlier outputs untouched.
  const Tensor full = Tensor::uniform({3, 3}, 1.0, 10);
  std::vector<double> pert(s.data().begin(), s.data().end());
  for (std::size_t c = 0; c < 4; ++c) pert[2 * 4 + c] += 5.0;
  const Tensor a = attention_output(full, s, v, false);
  const Tensor b = attention_output(full, Tensor::from_data({3, 4}, pert), v, false);
  for (std::size_t i = 0; i < 8; ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("enhanced_residual") {
  const Tensor s = Tensor::uniform({3, 2}, 1.0, 12);
  Tensor rows = directional_softmax(apply_causal_mask(Tensor::uniform({3, 3}, 1.0, 13), MaskMode::neg_inf),
                                    SoftmaxDirection::horizontal);
  const Tensor same = enhanced_residual(rows, s);
  CHECK(oracle::compare(same.data(), s.data()).max_abs_diff < 1e-15);

  const Tensor zero = enhanced_residual(Tensor::zeros({3, 3}), s);
  for (double x : zero.data()) CHECK(x == 0.0);

  const Tensor s2 = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  const Tensor wa = Tensor::from_data({2, 2}, {0.5, 7.0, 1.5, 0.5});
  const Tensor sr = enhanced_residual(wa, s2);
  CHECK(std::vector<double>(sr.data().begin(), sr.data().end()) == std::vector<double>{0.5, 1.0, 6.0, 8.0});
}

TEST_CASE("tcan_block shape, records and ER-off form") {
  for (auto dir : {SoftmaxDirection::vertical, SoftmaxDirection::horizontal, SoftmaxDirection::mixed}) {
    for (auto mask : {MaskMode::literal_zero, MaskMode::neg_inf}) {
      TCANConfig c = small_config(dir, mask, true, 3);
      const ModelParams p = init_params(c);
      const Tensor s = Tensor::uniform({6, c.d_embed}, 1.0, 4);
      const BlockResult r = tcan_block(s, 2, p.layers[1], c);
      CHECK(r.output.shape() == s.shape());
      REQUIRE(r.record.has_value());
      const AttentionRecord& rec = *r.record;
      CHECK(rec.layer == 2);
      for (std::size_t i = 0; i < 6; ++i) {
        double m = 0.0;
        for (std::size_t j = 0; j <= i; ++j) m += rec.weights.at(i, j);
        CHECK(rec.importance[i] == doctest::Approx(m).epsilon(1e-14));
        CHECK(rec.importance[i] >= 0.0);
        for (std::size_t j = i + 1; j < 6; ++j)
          CHECK(rec.masked.at(i, j) == (mask == MaskMode::literal_zero ? 0.0 : -kInf));
      }
    }
  }

  TCANConfig c = small_config(SoftmaxDirection::vertical, MaskMode::literal_zero, false);
  const ModelParams p = init_params(c);
  const Tensor s = Tensor::uniform({5, c.d_embed}, 1.0, 6);
  const Tensor out = tcan_block(s, 1, p.layers[0], c).output;
  const auto proj = attention_scores(s, p.layers[0].key_map, p.layers[0].query_map, p.layers[0].value_map);
  const Tensor wa = directional_softmax(apply_causal_mask(proj.scores, c.mask_mode), c.softmax_direction);
  const Tensor sa = attention_output(wa, s, proj.values, false);
  const Tensor sc = transpose(causal_dilated_conv1d(transpose(sa), p.layers[0].conv_kernels[0], 1));
  const Tensor expect = relu(add(s, sc));
  CHECK(oracle::compare(out.data(), expect.data()).max_abs_diff < 1e-14);
}

TEST_CASE("tcan_block with T = 1 reduces to act(s + conv(s) + s)") {
  TCANConfig c = small_config(SoftmaxDirection::vertical, MaskMode::neg_inf, true);
  const ModelParams p = init_params(c);
  const Tensor s = Tensor::uniform({1, c.d_embed}, 1.0, 7);
  const BlockResult r = tcan_block(s, 1, p.layers[0], c);
  CHECK(r.record->weights[0] == 1.0);
  const Tensor sc = transpose(causal_dilated_conv1d(transpose(s), p.layers[0].conv_kernels[0], 1));
  const Tensor expect = relu(add(add(s, sc), s));
  CHECK(oracle::compare(r.output.data(), expect.data()).max_abs_diff < 1e-15);
}

TEST_CASE("model_forward contracts") {
  TCANConfig c = small_config(SoftmaxDirection::vertical, MaskMode::literal_zero, true);
  ModelParams p = init_params(c);
  const auto ids = random_ids(9, c.vocab_size, 1);
  const ForwardResult fwd = model_forward(ids, p, c);
  CHECK(fwd.logits.shape() == Shape{9, c.vocab_size});
  CHECK(fwd.records.size() == c.num_levels);

  for (double& w : p.decoder_weight.mutable_data()) w = 0.0;
  for (double& b : p.decoder_bias.mutable_data()) b = 0.0;
  const auto targets = random_ids(9, c.vocab_size, 2);
  const double loss = cross_entropy_logits(model_forward(ids, p, c).logits, targets).item();
  CHECK(loss == std::log(static_cast<double>(c.vocab_size)));

  const std::vector<int> bad{0, 7};
  CHECK_THROWS_AS(model_forward(bad, p, c), IndexError);
}

TEST_CASE("causality: horizontal softmax and attention-free stacks") {
  std::size_t configs = 0;
  for (std::size_t k : {2, 3, 7}) {
    for (std::size_t levels : {1, 2, 4}) {
      for (auto mask : {MaskMode::literal_zero, MaskMode::neg_inf}) {
        for (bool er : {false, true}) {
          TCANConfig c = small_config(SoftmaxDirection::horizontal, mask, er, k, levels);
          c.seed = 100 + configs;
          const ModelParams p = init_params(c);
          const auto ids = random_ids(12, c.vocab_size, configs);
          CHECK(max_prefix_change(p, c, ids) == 0.0);
          ++configs;
        }
      }
      TCANConfig conv = small_config(SoftmaxDirection::vertical, MaskMode::literal_zero, false, k, levels);
      conv.use_temporal_attention = false;
      CHECK(max_prefix_change(init_params(conv), conv, random_ids(12, conv.vocab_size, 77)) == 0.0);
    }
  }
  CHECK(configs == 36);
}

TEST_CASE("vertical normalization reads later rows of its column") {
  // Column j of a vertical softmax is normalized over every row i >= j, so the
  // weight at (t, j) moves when a row after t changes.
  for (auto dir : {SoftmaxDirection::vertical, SoftmaxDirection::mixed}) {
    for (auto mask : {MaskMode::literal_zero, MaskMode::neg_inf}) {
      TCANConfig c = small_config(dir, mask, true, 2, 1);
      const ModelParams p = init_params(c);
      const auto ids = random_ids(8, c.vocab_size, 5);
      CHECK(max_prefix_change(p, c, ids) > 0.0);
    }
  }
}

TEST_CASE("count_parameters") {
  TCANConfig tiny;
  tiny.vocab_size = 5;
  tiny.d_embed = 4;
  tiny.d_attn = 3;
  tiny.kernel_size = 2;
  tiny.num_levels = 1;
  // embedding 5*4 + f,g,h 3*(4*3) + conv 4*4*2 + decoder 4*5 + bias 5
  CHECK(count_parameters(tiny) == 113);
  CHECK(count_parameters(init_params(tiny)) == 113);
  const ModelParams p = init_params(tiny);
  CHECK(p.embedding.numel() == tiny.vocab_size * tiny.d_embed);

  std::mt19937_64 gen(99);
  for (int i = 0; i < 10; ++i) {
    TCANConfig c;
    c.vocab_size = 2 + gen() % 50;
    c.d_embed = 1 + gen() % 12;
    c.d_attn = 1 + gen() % 12;
    c.kernel_size = 1 + gen() % 5;
    c.num_levels = 1 + gen() % 4;
    c.blocks_per_level = 1 + gen() % 2;
    c.tie_decoder = gen() % 2;
    c.use_enhanced_residual = true;
    const std::size_t on = count_parameters(init_params(c));
    c.use_enhanced_residual = false;
    CHECK(count_parameters(init_params(c)) == on);
    CHECK(count_parameters(c) == on);
  }
}

TEST_CASE("gradient flow reaches the embedding") {
  TCANConfig c = small_config(SoftmaxDirection::vertical, MaskMode::literal_zero, true, 2, 2);
  ModelParams p = init_params(c);
  const auto ids = random_ids(10, c.vocab_size, 3), targets = random_ids(10, c.vocab_size, 4);
  backward(cross_entropy_logits(model_forward(ids, p, c).logits, targets));
  double norm = 0.0;
  for (double g : p.embedding.grad()) {
    REQUIRE(std::isfinite(g));
    norm += g * g;
  }
  CHECK(norm > 0.0);
}

TEST_CASE("tied decoder and values path run") {
  TCANConfig c = small_config(SoftmaxDirection::mixed, MaskMode::neg_inf, true, 3, 2);
  c.tie_decoder = true;
  c.use_values_for_output = true;
  const ModelParams p = init_params(c);
  CHECK_FALSE(p.decoder_weight.defined());
  CHECK(p.layers[0].value_out.shape() == Shape{c.d_attn, c.d_embed});
  const auto ids = random_ids(6, c.vocab_size, 8);
  CHECK(model_forward(ids, p, c).logits.shape() == Shape{6, c.vocab_size});
}

TEST_CASE("config validation") {
  TCANConfig c;
  c.vocab_size = 4;
  CHECK_NOTHROW(c.validate());
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.dropout = 0.0;
  c.use_temporal_attention = false;
  CHECK_THROWS_AS(c.validate(), ConfigError);  // ER needs attention weights
  c.use_enhanced_residual = false;
  CHECK_NOTHROW(c.validate());
  CHECK(TCANConfig::dilation_for_level(1) == 1);
  CHECK(TCANConfig::dilation_for_level(4) == 8);
  CHECK_THROWS_AS(parse_softmax_direction("diagonal"), ConfigError);
}
