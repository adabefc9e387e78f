#pragma once

#include <limits>
#include <span>
#include <vector>

#include "pnc/util.hpp"

namespace pnc::numerics {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Floor applied to log-values before they enter a weight network. Keeps
// gradients finite when a leaf carries an exact zero probability.
inline constexpr double kLogFloor = -100.0;

// log sum_i exp(terms[i]), max-shifted. All-(-inf) input yields -inf.
double log_sum_exp(std::span<const double> terms);

// log sum_i exp(log_weights[i] + log_values[i]).
double weighted_log_sum(std::span<const double> log_values,
                        std::span<const double> log_weights);

// out[i] = logits[i] - log_sum_exp(logits).
void log_softmax(std::span<const double> logits, std::span<double> out);

// d log_sum_exp / d terms[i] = softmax(terms)[i]; accumulates into grad_terms.
// `value` is the cached forward result.
void log_sum_exp_backward(std::span<const double> terms, double value,
                          double grad_out, std::span<double> grad_terms);

// Given cached log_weights (= forward output) and upstream grad_out,
// accumulates the gradient with respect to the logits.
void log_softmax_backward(std::span<const double> log_weights,
                          std::span<const double> grad_out,
                          std::span<double> grad_logits);

struct GridShape {
  int rows = 1;
  int cols = 1;
  int count() const { return rows * cols; }
};

// Relative partition offset; must be strictly earlier in raster order.
struct KernelTap {
  int drow = 0;
  int dcol = 0;
};

bool tap_is_causal(const KernelTap& t);

// Non-owning view of a masked convolution kernel. weights are laid out
// [tap][out_channel][in_channel], bias is [out_channel].
struct HalfKernelView {
  std::span<const KernelTap> taps;
  int in_channels = 0;
  int out_channels = 0;
  std::span<const double> weights;
  std::span<const double> bias;
};

// out[p*out_ch + j] = bias[j] + sum over in-grid taps of W * max(buffer, floor).
// Out-of-grid taps contribute nothing.
void masked_convolve(GridShape grid, std::span<const double> buffer,
                     const HalfKernelView& kernel, double floor,
                     std::span<double> out);

// Reverse pass; accumulates into grad_buffer / grad_weights / grad_bias.
// Entries at or below the floor receive no gradient.
void masked_convolve_backward(GridShape grid, std::span<const double> buffer,
                              const HalfKernelView& kernel, double floor,
                              std::span<const double> grad_out,
                              std::span<double> grad_buffer,
                              std::span<double> grad_weights,
                              std::span<double> grad_bias);

}  // namespace pnc::numerics
