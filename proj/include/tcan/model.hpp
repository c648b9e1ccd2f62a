#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tcan/config.hpp"
#include "tcan/tensor.hpp"

namespace tcan {

// Attention matrices of one level, captured for export and analysis.
struct AttentionRecord {
  std::size_t layer = 0;  // 1-indexed level
  Tensor scores;          // W  [T,T], full pre-mask matrix
  Tensor masked;          // Wl [T,T], strict upper triangle 0 or -inf
  Tensor weights;         // Wa [T,T], normalized
  Tensor importance;      // M  [T],   M[t] = sum_{j<=t} Wa[t][j]
};

struct LayerParams {
  Tensor key_map;    // f [d_embed, d_attn]
  Tensor query_map;  // g [d_embed, d_attn]
  Tensor value_map;  // h [d_embed, d_attn]
  Tensor value_out;  // [d_attn, d_embed], only with use_values_for_output
  std::vector<Tensor> conv_kernels;  // each [d_embed, d_embed, k]
};

struct ModelParams {
  Tensor embedding;  // [V, d_embed]
  std::vector<LayerParams> layers;
  Tensor decoder_weight;  // [d_embed, V]; undefined when tied to the embedding
  Tensor decoder_bias;    // [V]

  // Stable, ordered (name, tensor) listing of every trainable tensor.
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;
  std::vector<Tensor> tensors() const;
  ModelParams clone() const;  // deep copy, grads dropped
  void zero_grad();
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero decoder bias.
ModelParams init_params(const TCANConfig& config);

struct AttentionProjections {
  Tensor keys;     // [T, d_attn]
  Tensor queries;  // [T, d_attn]
  Tensor values;   // [T, d_attn]
  Tensor scores;   // [T, T], W[i][j] = k_i . q_j / sqrt(d_attn)
};

AttentionProjections attention_scores(const Tensor& s, const Tensor& key_map, const Tensor& query_map,
                                      const Tensor& value_map);

// Keeps i >= j. Cells above the diagonal become 0 (literal_zero) or -inf (neg_inf).
Tensor apply_causal_mask(const Tensor& scores, MaskMode mode);

// vertical: softmax down each column; horizontal: along each row; mixed: their mean.
Tensor directional_softmax(const Tensor& masked, SoftmaxDirection direction);

// out[t] = sum_{i<=t} weights[t][i] * source[i]; cells with i > t are never read.
Tensor causal_weighted_sum(const Tensor& weights, const Tensor& source);
// out[t] = sum_{j<=t} weights[t][j]
Tensor causal_row_sum(const Tensor& weights);
// x: [T,D], factors: [T]; row t scaled by factors[t].
Tensor scale_rows(const Tensor& x, const Tensor& factors);

// Weighted sum over the past of s, or of v when use_values is set.
Tensor attention_output(const Tensor& weights, const Tensor& s, const Tensor& values, bool use_values);

// sr_t = M_t * s_t with M_t the causal row sum of the weights.
Tensor enhanced_residual(const Tensor& weights, const Tensor& s);

struct ForwardOptions {
  bool capture_attention = true;
  bool training = false;  // enables dropout
  std::uint64_t dropout_seed = 0;
};

struct BlockResult {
  Tensor output;
  std::optional<AttentionRecord> record;  // empty without attention or capture
};

// One level: attention, causal dilated conv(s), identity + conv (+ enhanced
// residual) sum, activation. `level` is 1-indexed.
BlockResult tcan_block(const Tensor& s, std::size_t level, const LayerParams& params,
                       const TCANConfig& config, const ForwardOptions& options = {});

struct ForwardResult {
  Tensor logits;  // [T, V]
  std::vector<AttentionRecord> records;
};

ForwardResult model_forward(std::span<const int> ids, const ModelParams& params,
                            const TCANConfig& config, const ForwardOptions& options = {});

std::size_t count_parameters(const ModelParams& params);
std::size_t count_parameters(const TCANConfig& config);

}  // namespace tcan
