#include "tcan/config.hpp"

#include "tcan/errors.hpp"

namespace tcan {

std::string_view to_string(SoftmaxDirection d) {
  switch (d) {
    case SoftmaxDirection::vertical: return "vertical";
    case SoftmaxDirection::horizontal: return "horizontal";
    case SoftmaxDirection::mixed: return "mixed";
  }
  return "?";
}

std::string_view to_string(MaskMode m) {
  return m == MaskMode::literal_zero ? "literal_zero" : "neg_inf";
}

std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "gelu"; }

SoftmaxDirection parse_softmax_direction(std::string_view s) {
  if (s == "vertical") return SoftmaxDirection::vertical;
  if (s == "horizontal") return SoftmaxDirection::horizontal;
  if (s == "mixed") return SoftmaxDirection::mixed;
  throw ConfigError("softmax_direction",
                    "unknown direction '" + std::string(s) + "' (vertical|horizontal|mixed)");
}

MaskMode parse_mask_mode(std::string_view s) {
  if (s == "literal_zero") return MaskMode::literal_zero;
  if (s == "neg_inf") return MaskMode::neg_inf;
  throw ConfigError("mask_mode", "unknown mask mode '" + std::string(s) + "' (literal_zero|neg_inf)");
}

Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "gelu") return Activation::gelu;
  throw ConfigError("activation", "unknown activation '" + std::string(s) + "' (relu|gelu)");
}

void TCANConfig::validate() const {
  auto positive = [](std::size_t v, const char* field) {
    if (v == 0) throw ConfigError(field, "must be a positive integer");
  };
  positive(vocab_size, "vocab_size");
  positive(d_embed, "d_embed");
  positive(d_attn, "d_attn");
  positive(kernel_size, "kernel_size");
  positive(num_levels, "num_levels");
  positive(blocks_per_level, "blocks_per_level");
  if (num_levels > 30) throw ConfigError("num_levels", "dilation 2^(L-1) would overflow");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout", "must lie in [0, 1)");
  if (!use_temporal_attention && use_enhanced_residual) {
    throw ConfigError("use_enhanced_residual",
                      "enhanced residual needs attention weights; disable it when "
                      "use_temporal_attention is false");
  }
  if (!use_temporal_attention && use_values_for_output) {
    throw ConfigError("use_values_for_output", "has no effect without temporal attention");
  }
}

}  // namespace tcan
