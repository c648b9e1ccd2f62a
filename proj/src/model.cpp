#include "tcan/model.hpp"

#include <cmath>
#include <limits>

#include "tcan/errors.hpp"
#include "tcan/ops.hpp"
#include "tcan/random.hpp"

namespace tcan {

namespace {

void require_square(const Tensor& m, const char* op) {
  if (m.rank() != 2 || m.dim(0) != m.dim(1)) {
    throw ShapeError(std::string(op) + ": expected a square matrix, got " + shape_str(m.shape()));
  }
}

Tensor activate(const Tensor& x, Activation act) {
  return act == Activation::relu ? relu(x) : gelu(x);
}

std::size_t convs_per_level(const TCANConfig& config) {
  return config.blocks_per_level + (config.use_temporal_attention ? 0 : 1);
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> ModelParams::named_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("embedding", embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string prefix = "level" + std::to_string(l + 1) + ".";
    const LayerParams& lp = layers[l];
    if (lp.key_map.defined()) {
      out.emplace_back(prefix + "key_map", lp.key_map);
      out.emplace_back(prefix + "query_map", lp.query_map);
      out.emplace_back(prefix + "value_map", lp.value_map);
    }
    if (lp.value_out.defined()) out.emplace_back(prefix + "value_out", lp.value_out);
    for (std::size_t c = 0; c < lp.conv_kernels.size(); ++c) {
      out.emplace_back(prefix + "conv" + std::to_string(c + 1), lp.conv_kernels[c]);
    }
  }
  if (decoder_weight.defined()) out.emplace_back("decoder.weight", decoder_weight);
  out.emplace_back("decoder.bias", decoder_bias);
  return out;
}

std::vector<Tensor> ModelParams::tensors() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_tensors()) out.push_back(t);
  return out;
}

ModelParams ModelParams::clone() const {
  auto copy = [](const Tensor& t) {
    if (!t.defined()) return Tensor{};
    Tensor c = t.clone();
    c.set_requires_grad(t.requires_grad());
    return c;
  };
  ModelParams out;
  out.embedding = copy(embedding);
  for (const LayerParams& lp : layers) {
    LayerParams c;
    c.key_map = copy(lp.key_map);
    c.query_map = copy(lp.query_map);
    c.value_map = copy(lp.value_map);
    c.value_out = copy(lp.value_out);
    for (const Tensor& k : lp.conv_kernels) c.conv_kernels.push_back(copy(k));
    out.layers.push_back(std::move(c));
  }
  out.decoder_weight = copy(decoder_weight);
  out.decoder_bias = copy(decoder_bias);
  return out;
}

void ModelParams::zero_grad() {
  for (Tensor& t : tensors()) t.zero_grad();
}

ModelParams init_params(const TCANConfig& config) {
  config.validate();
  const std::size_t d = config.d_embed, da = config.d_attn, k = config.kernel_size;
  const std::size_t vocab = config.vocab_size;
  std::uint64_t counter = 0;
  auto param = [&](Shape shape, std::size_t fan_in) {
    Tensor t = Tensor::uniform(std::move(shape), 1.0 / std::sqrt(static_cast<double>(fan_in)),
                               mix_seed(config.seed, counter++));
    t.set_requires_grad(true);
    return t;
  };

  ModelParams p;
  p.embedding = param({vocab, d}, d);
  for (std::size_t l = 0; l < config.num_levels; ++l) {
    LayerParams lp;
    if (config.use_temporal_attention) {
      lp.key_map = param({d, da}, d);
      lp.query_map = param({d, da}, d);
      lp.value_map = param({d, da}, d);
      if (config.use_values_for_output) lp.value_out = param({da, d}, da);
    }
    for (std::size_t c = 0; c < convs_per_level(config); ++c) {
      lp.conv_kernels.push_back(param({d, d, k}, d * k));
    }
    p.layers.push_back(std::move(lp));
  }
  if (!config.tie_decoder) p.decoder_weight = param({d, vocab}, d);
  p.decoder_bias = Tensor::zeros({vocab});
  p.decoder_bias.set_requires_grad(true);
  return p;
}

AttentionProjections attention_scores(const Tensor& s, const Tensor& key_map, const Tensor& query_map,
                                      const Tensor& value_map) {
  if (s.rank() != 2) throw ShapeError("attention_scores: s must be [T, d_embed]");
  AttentionProjections out;
  out.keys = matmul(s, key_map);
  out.queries = matmul(s, query_map);
  out.values = matmul(s, value_map);
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(key_map.dim(1)));
  out.scores = scale(matmul(out.keys, transpose(out.queries)), inv_sqrt_dk);
  return out;
}

Tensor apply_causal_mask(const Tensor& scores, MaskMode mode) {
  require_square(scores, "apply_causal_mask");
  const std::size_t n = scores.dim(0);
  const double fill = mode == MaskMode::literal_zero ? 0.0 : -std::numeric_limits<double>::infinity();
  auto sd = scores.data();
  std::vector<double> out(sd.begin(), sd.end());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) out[i * n + j] = fill;
  Tensor result = make_result(scores.shape(), std::move(out), {scores}, "apply_causal_mask",
                              /*allow_non_finite=*/mode == MaskMode::neg_inf);
  record_backward(result, [scores, n](std::span<const double>, std::span<const double> g) mutable {
    auto gs = scores.grad_accumulator();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= i; ++j) gs[i * n + j] += g[i * n + j];
  });
  return result;
}

Tensor directional_softmax(const Tensor& masked, SoftmaxDirection direction) {
  require_square(masked, "directional_softmax");
  switch (direction) {
    case SoftmaxDirection::vertical: return softmax_over_axis(masked, 0);
    case SoftmaxDirection::horizontal: return softmax_over_axis(masked, 1);
    case SoftmaxDirection::mixed:
      return scale(add(softmax_over_axis(masked, 0), softmax_over_axis(masked, 1)), 0.5);
  }
  throw ConfigError("softmax_direction", "unknown direction");
}

Tensor causal_weighted_sum(const Tensor& weights, const Tensor& source) {
  require_square(weights, "causal_weighted_sum");
  if (source.rank() != 2 || source.dim(0) != weights.dim(0)) {
    throw ShapeError("causal_weighted_sum: weights " + shape_str(weights.shape()) + " vs source " +
                     shape_str(source.shape()));
  }
  const std::size_t n = weights.dim(0), width = source.dim(1);
  auto wd = weights.data();
  auto sd = source.data();
  std::vector<double> out(n * width, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    double* row = out.data() + t * width;
    for (std::size_t i = 0; i <= t; ++i) {
      const double w = wd[t * n + i];
      const double* src = sd.data() + i * width;
      for (std::size_t c = 0; c < width; ++c) row[c] += w * src[c];
    }
  }
  Tensor result = make_result({n, width}, std::move(out), {weights, source}, "causal_weighted_sum");
  record_backward(result, [weights, source, n, width](std::span<const double>,
                                                      std::span<const double> g) mutable {
    auto wd = weights.data();
    auto sd = source.data();
    if (weights.requires_grad()) {
      auto gw = weights.grad_accumulator();
      for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t i = 0; i <= t; ++i) {
          double acc = 0.0;
          for (std::size_t c = 0; c < width; ++c) acc += g[t * width + c] * sd[i * width + c];
          gw[t * n + i] += acc;
        }
      }
    }
    if (source.requires_grad()) {
      auto gs = source.grad_accumulator();
      for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t i = 0; i <= t; ++i) {
          const double w = wd[t * n + i];
          for (std::size_t c = 0; c < width; ++c) gs[i * width + c] += w * g[t * width + c];
        }
      }
    }
  });
  return result;
}

Tensor causal_row_sum(const Tensor& weights) {
  require_square(weights, "causal_row_sum");
  const std::size_t n = weights.dim(0);
  auto wd = weights.data();
  std::vector<double> out(n, 0.0);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j <= t; ++j) out[t] += wd[t * n + j];
  Tensor result = make_result({n}, std::move(out), {weights}, "causal_row_sum");
  record_backward(result, [weights, n](std::span<const double>, std::span<const double> g) mutable {
    auto gw = weights.grad_accumulator();
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t j = 0; j <= t; ++j) gw[t * n + j] += g[t];
  });
  return result;
}

Tensor scale_rows(const Tensor& x, const Tensor& factors) {
  if (x.rank() != 2 || factors.rank() != 1 || factors.dim(0) != x.dim(0)) {
    throw ShapeError("scale_rows: x " + shape_str(x.shape()) + " vs factors " +
                     shape_str(factors.shape()));
  }
  const std::size_t rows = x.dim(0), width = x.dim(1);
  auto xd = x.data();
  auto fd = factors.data();
  std::vector<double> out(xd.size());
  for (std::size_t t = 0; t < rows; ++t)
    for (std::size_t c = 0; c < width; ++c) out[t * width + c] = fd[t] * xd[t * width + c];
  Tensor result = make_result(x.shape(), std::move(out), {x, factors}, "scale_rows");
  record_backward(result, [x, factors, rows, width](std::span<const double>,
                                                    std::span<const double> g) mutable {
    auto xd = x.data();
    auto fd = factors.data();
    if (x.requires_grad()) {
      auto gx = x.grad_accumulator();
      for (std::size_t t = 0; t < rows; ++t)
        for (std::size_t c = 0; c < width; ++c) gx[t * width + c] += fd[t] * g[t * width + c];
    }
    if (factors.requires_grad()) {
      auto gf = factors.grad_accumulator();
      for (std::size_t t = 0; t < rows; ++t) {
        double acc = 0.0;
        for (std::size_t c = 0; c < width; ++c) acc += xd[t * width + c] * g[t * width + c];
        gf[t] += acc;
      }
    }
  });
  return result;
}

Tensor attention_output(const Tensor& weights, const Tensor& s, const Tensor& values, bool use_values) {
  return causal_weighted_sum(weights, use_values ? values : s);
}

Tensor enhanced_residual(const Tensor& weights, const Tensor& s) {
  return scale_rows(s, causal_row_sum(weights));
}

BlockResult tcan_block(const Tensor& s, std::size_t level, const LayerParams& params,
                       const TCANConfig& config, const ForwardOptions& options) {
  if (level < 1 || level > config.num_levels) {
    throw ContractError("tcan_block: level " + std::to_string(level) + " outside [1, " +
                        std::to_string(config.num_levels) + "]");
  }
  if (s.rank() != 2 || s.dim(1) != config.d_embed) {
    throw ShapeError("tcan_block: expected [T, " + std::to_string(config.d_embed) + "], got " +
                     shape_str(s.shape()));
  }
  BlockResult result;
  Tensor attended = s;
  Tensor weights;
  if (config.use_temporal_attention) {
    AttentionProjections proj = attention_scores(s, params.key_map, params.query_map, params.value_map);
    Tensor masked = apply_causal_mask(proj.scores, config.mask_mode);
    weights = directional_softmax(masked, config.softmax_direction);
    attended = attention_output(weights, s, proj.values, config.use_values_for_output);
    if (config.use_values_for_output) attended = matmul(attended, params.value_out);
    if (options.capture_attention) {
      result.record = AttentionRecord{level, proj.scores.detach(), masked.detach(), weights.detach(),
                                      causal_row_sum(weights).detach()};
    }
  }

  const std::size_t dilation = TCANConfig::dilation_for_level(level);
  Tensor channels = transpose(attended);  // [d_embed, T]
  for (std::size_t c = 0; c < params.conv_kernels.size(); ++c) {
    channels = causal_dilated_conv1d(channels, params.conv_kernels[c], dilation);
    if (c + 1 < params.conv_kernels.size()) channels = activate(channels, config.activation);
  }
  Tensor total = add(s, transpose(channels));
  if (config.use_enhanced_residual) total = add(total, enhanced_residual(weights, s));
  Tensor out = activate(total, config.activation);
  if (options.training && config.dropout > 0.0) {
    out = dropout(out, config.dropout, mix_seed(options.dropout_seed, level));
  }
  result.output = out;
  return result;
}

ForwardResult model_forward(std::span<const int> ids, const ModelParams& params,
                            const TCANConfig& config, const ForwardOptions& options) {
  if (ids.empty()) throw ShapeError("model_forward: empty input sequence");
  if (params.layers.size() != config.num_levels) {
    throw ContractError("model_forward: parameter levels do not match config.num_levels");
  }
  ForwardResult result;
  Tensor hidden = embedding_gather(params.embedding, ids);
  for (std::size_t l = 0; l < config.num_levels; ++l) {
    BlockResult block = tcan_block(hidden, l + 1, params.layers[l], config, options);
    hidden = block.output;
    if (block.record) result.records.push_back(std::move(*block.record));
  }
  Tensor projected = params.decoder_weight.defined()
                         ? matmul(hidden, params.decoder_weight)
                         : matmul(hidden, transpose(params.embedding));
  result.logits = add_row_bias(projected, params.decoder_bias);
  return result;
}

std::size_t count_parameters(const ModelParams& params) {
  std::size_t total = 0;
  for (const auto& [name, t] : params.named_tensors()) total += t.numel();
  return total;
}

std::size_t count_parameters(const TCANConfig& config) {
  const std::size_t d = config.d_embed, da = config.d_attn, vocab = config.vocab_size;
  std::size_t per_level = convs_per_level(config) * d * d * config.kernel_size;
  if (config.use_temporal_attention) {
    per_level += 3 * d * da;
    if (config.use_values_for_output) per_level += da * d;
  }
  return vocab * d + config.num_levels * per_level + (config.tie_decoder ? 0 : d * vocab) + vocab;
}

}  // namespace tcan
