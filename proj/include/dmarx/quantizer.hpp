#pragma once

#include <cmath>
#include <stdexcept>

#include "dmarx/channel.hpp"
#include "dmarx/dma.hpp"
#include "dmarx/linalg.hpp"
#include "dmarx/rng.hpp"

namespace dmarx {

/// Uniform scalar quantizer: support gamma, b decision regions per real
/// dimension. The design formulas use the quantization noise energy
/// sigma_q^2 = 4 gamma^2 / (3 b^2).
struct QuantizerSpec {
  double support = 1.0;  // gamma
  int levels = 4;        // b
  double eta = 2.0;      // support multiplier used when gamma is derived

  double step() const { return 2.0 * support / levels; }
  double noise_energy() const { return 4.0 * support * support / (3.0 * levels * levels); }

  void validate() const {
    if (!(support > 0)) throw std::invalid_argument("QuantizerSpec: support must be > 0");
    if (levels < 2) throw std::invalid_argument("QuantizerSpec: need >= 2 decision regions");
  }
};

/// kappa = 4 eta^2 / (3 b^2), the support-normalized quantization noise
/// constant of the greedy weight objective.
inline double quantization_kappa(double eta, int levels) {
  return 4.0 * eta * eta / (3.0 * levels * levels);
}

/// Uniform quantization with overload clamping. Cells are left-closed and
/// x = gamma falls in the top granular cell, so outputs are deterministic
/// at cell boundaries.
inline double quantize_real(double x, const QuantizerSpec& spec) {
  const double g = spec.support;
  const double step = 2.0 * g / spec.levels;
  auto level = [&](long cell) { return -g + step * (static_cast<double>(cell) + 0.5); };
  if (x > g) return level(spec.levels - 1);  // sign(x)(gamma - gamma/b), computed
  if (x < -g) return level(0);               // through the granular-cell arithmetic
  auto cell = static_cast<long>(std::floor((x + g) / step));
  if (cell >= spec.levels) cell = spec.levels - 1;
  if (cell < 0) cell = 0;
  return level(cell);
}

inline Complex quantize_complex(Complex z, const QuantizerSpec& spec) {
  return {quantize_real(z.real(), spec), quantize_real(z.imag(), spec)};
}

/// ADC support rule: gamma = eta * max_i sqrt of the bin-averaged output
/// power of microstrip i, q_{m,i}^T E_i^T Upsilon_m E_i q_{m,i}^*.
/// Returns 0 for all-zero weights; callers must reject that before
/// quantizing.
inline double adc_support(const DmaWeights& w, const std::vector<CMatrix>& output_cov,
                          double eta) {
  if (static_cast<int>(output_cov.size()) != w.bins())
    throw std::invalid_argument("adc_support: covariance/bin mismatch");
  const int ne = w.strip_elements;
  double max_power = 0.0;
  for (int i = 0; i < w.microstrips; ++i) {
    double acc = 0.0;
    for (int m = 0; m < w.bins(); ++m) {
      const auto row = w.bin_rows[m].row(i);
      const auto block = output_cov[m].block(i * ne, i * ne, ne, ne);
      acc += (row * block * row.adjoint()).value().real();
    }
    max_power = std::max(max_power, acc / w.bins());
  }
  return eta * std::sqrt(std::max(max_power, 0.0));
}

/// Per-bin DMA output z_m = Q_m H_m y_m for raw channel output columns y_m.
/// Row m of the returned bins x microstrips matrix is z_m^T.
inline CMatrix dma_output_bins(const DmaWeights& w, const EquivalentChannel& eq,
                               const CMatrix& y) {
  const int ne = w.strip_elements;
  CMatrix z(w.bins(), w.microstrips);
  for (int m = 0; m < w.bins(); ++m) {
    const CVector filtered = eq.prop_diag[m].cwiseProduct(y.col(m));
    for (int i = 0; i < w.microstrips; ++i)
      z(m, i) = (w.bin_rows[m].row(i) * filtered.segment(i * ne, ne)).value();
  }
  return z;
}

/// Empirical overload rate: fraction of time-domain real/imaginary ADC
/// input samples whose magnitude exceeds the support.
inline double overload_probability(const DmaWeights& w, const ChannelRealization& ch,
                                   const EquivalentChannel& eq, const QuantizerSpec& spec,
                                   int trials, RngStream& rng,
                                   Constellation kind = Constellation::Qpsk) {
  if (trials < 1) throw std::invalid_argument("overload_probability: need >= 1 trial");
  const CMatrix idft = dft_matrix(w.bins()).adjoint();
  long hits = 0;
  long total = 0;
  for (int t = 0; t < trials; ++t) {
    OfdmBlock block;
    block.kind = kind;
    block.symbols.resize(ch.users(), ch.bins());
    for (int m = 0; m < ch.bins(); ++m)
      for (int k = 0; k < ch.users(); ++k)
        block.symbols(k, m) = (kind == Constellation::Qpsk) ? rng.qpsk() : rng.complex_normal();
    const CMatrix y = channel_output(ch, block, rng);
    const CMatrix z_time = idft * dma_output_bins(w, eq, y);
    for (Eigen::Index idx = 0; idx < z_time.size(); ++idx) {
      const Complex v = z_time(idx);
      hits += (std::abs(v.real()) > spec.support) + (std::abs(v.imag()) > spec.support);
      total += 2;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace dmarx
