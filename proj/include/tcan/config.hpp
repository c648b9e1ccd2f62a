#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace tcan {

enum class SoftmaxDirection { vertical, horizontal, mixed };
enum class MaskMode { literal_zero, neg_inf };
enum class Activation { relu, gelu };

std::string_view to_string(SoftmaxDirection d);
std::string_view to_string(MaskMode m);
std::string_view to_string(Activation a);
SoftmaxDirection parse_softmax_direction(std::string_view s);  // throws ConfigError
MaskMode parse_mask_mode(std::string_view s);
Activation parse_activation(std::string_view s);

// Hyperparameters and ablation switches for one TCAN model.
struct TCANConfig {
  std::size_t vocab_size = 0;
  std::size_t d_embed = 32;
  std::size_t d_attn = 32;
  std::size_t kernel_size = 3;
  std::size_t num_levels = 3;
  // Convolutions per block. Values above 1 are experimental.
  std::size_t blocks_per_level = 1;
  SoftmaxDirection softmax_direction = SoftmaxDirection::vertical;
  MaskMode mask_mode = MaskMode::literal_zero;
  bool use_enhanced_residual = true;
  bool use_values_for_output = false;
  // false replaces the attention step of every block with one more convolution.
  bool use_temporal_attention = true;
  Activation activation = Activation::relu;
  double dropout = 0.0;
  bool tie_decoder = false;
  std::uint64_t seed = 1;

  // Throws ConfigError naming the first invalid field.
  void validate() const;

  // Dilation of 1-indexed level l is 2^(l-1).
  static std::size_t dilation_for_level(std::size_t level) { return std::size_t{1} << (level - 1); }

  bool operator==(const TCANConfig&) const = default;
};

}  // namespace tcan
