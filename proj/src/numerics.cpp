#include "pnc/numerics.hpp"

#include <algorithm>
#include <cmath>

namespace pnc::numerics {

double log_sum_exp(std::span<const double> terms) {
  require(!terms.empty(), ErrorKind::internal, "log_sum_exp: empty input");
  double mx = kNegInf;
  for (double t : terms) mx = std::max(mx, t);
  if (mx == kNegInf) return kNegInf;
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - mx);
  return mx + std::log(acc);
}

double weighted_log_sum(std::span<const double> log_values,
                        std::span<const double> log_weights) {
  require(log_values.size() == log_weights.size(), ErrorKind::internal,
          "weighted_log_sum: length mismatch");
  double mx = kNegInf;
  for (size_t i = 0; i < log_values.size(); ++i)
    mx = std::max(mx, log_values[i] + log_weights[i]);
  if (mx == kNegInf) return kNegInf;
  double acc = 0.0;
  for (size_t i = 0; i < log_values.size(); ++i)
    acc += std::exp(log_values[i] + log_weights[i] - mx);
  // renormalize by the weight mass so a mixture of log 1 inputs is exactly
  // log 1; for softmax-produced weights this subtracts rounding noise only
  return mx + std::log(acc) - log_sum_exp(log_weights);
}

void log_softmax(std::span<const double> logits, std::span<double> out) {
  require(logits.size() == out.size() && !logits.empty(), ErrorKind::internal,
          "log_softmax: bad spans");
  double z = log_sum_exp(logits);
  for (size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - z;
}

void log_sum_exp_backward(std::span<const double> terms, double value,
                          double grad_out, std::span<double> grad_terms) {
  require(terms.size() == grad_terms.size(), ErrorKind::internal,
          "log_sum_exp_backward: length mismatch");
  if (value == kNegInf) return;
  for (size_t i = 0; i < terms.size(); ++i)
    grad_terms[i] += grad_out * std::exp(terms[i] - value);
}

void log_softmax_backward(std::span<const double> log_weights,
                          std::span<const double> grad_out,
                          std::span<double> grad_logits) {
  require(log_weights.size() == grad_out.size() &&
              grad_out.size() == grad_logits.size(),
          ErrorKind::internal, "log_softmax_backward: length mismatch");
  double gsum = 0.0;
  for (double g : grad_out) gsum += g;
  for (size_t i = 0; i < log_weights.size(); ++i)
    grad_logits[i] += grad_out[i] - std::exp(log_weights[i]) * gsum;
}

bool tap_is_causal(const KernelTap& t) {
  return t.drow < 0 || (t.drow == 0 && t.dcol < 0);
}

static void check_kernel(GridShape grid, std::span<const double> buffer,
                         const HalfKernelView& k) {
  require(static_cast<int>(buffer.size()) == grid.count() * k.in_channels,
          ErrorKind::internal, "masked_convolve: buffer shape mismatch");
  require(static_cast<int>(k.weights.size()) ==
                  static_cast<int>(k.taps.size()) * k.out_channels * k.in_channels &&
              static_cast<int>(k.bias.size()) == k.out_channels,
          ErrorKind::internal, "masked_convolve: kernel shape mismatch");
  for (const auto& t : k.taps)
    require(tap_is_causal(t), ErrorKind::internal,
            "masked_convolve: non-causal tap");
}

void masked_convolve(GridShape grid, std::span<const double> buffer,
                     const HalfKernelView& kernel, double floor,
                     std::span<double> out) {
  check_kernel(grid, buffer, kernel);
  const int cin = kernel.in_channels, cout = kernel.out_channels;
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      double* o = &out[(r * grid.cols + c) * cout];
      for (int j = 0; j < cout; ++j) o[j] = kernel.bias[j];
      for (size_t t = 0; t < kernel.taps.size(); ++t) {
        int qr = r + kernel.taps[t].drow, qc = c + kernel.taps[t].dcol;
        if (qr < 0 || qc < 0 || qr >= grid.rows || qc >= grid.cols) continue;
        const double* in = &buffer[(qr * grid.cols + qc) * cin];
        const double* w = &kernel.weights[t * cout * cin];
        for (int j = 0; j < cout; ++j)
          for (int i = 0; i < cin; ++i)
            o[j] += w[j * cin + i] * std::max(in[i], floor);
      }
    }
  }
}

void masked_convolve_backward(GridShape grid, std::span<const double> buffer,
                              const HalfKernelView& kernel, double floor,
                              std::span<const double> grad_out,
                              std::span<double> grad_buffer,
                              std::span<double> grad_weights,
                              std::span<double> grad_bias) {
  check_kernel(grid, buffer, kernel);
  const int cin = kernel.in_channels, cout = kernel.out_channels;
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      const double* g = &grad_out[(r * grid.cols + c) * cout];
      for (int j = 0; j < cout; ++j) grad_bias[j] += g[j];
      for (size_t t = 0; t < kernel.taps.size(); ++t) {
        int qr = r + kernel.taps[t].drow, qc = c + kernel.taps[t].dcol;
        if (qr < 0 || qc < 0 || qr >= grid.rows || qc >= grid.cols) continue;
        const int q = qr * grid.cols + qc;
        const double* in = &buffer[q * cin];
        const double* w = &kernel.weights[t * cout * cin];
        double* gw = &grad_weights[t * cout * cin];
        double* gb = &grad_buffer[q * cin];
        for (int j = 0; j < cout; ++j) {
          for (int i = 0; i < cin; ++i) {
            gw[j * cin + i] += g[j] * std::max(in[i], floor);
            if (in[i] > floor) gb[i] += g[j] * w[j * cin + i];
          }
        }
      }
    }
  }
}

}  // namespace pnc::numerics
