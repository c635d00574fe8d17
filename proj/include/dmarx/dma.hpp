#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "dmarx/channel.hpp"
#include "dmarx/linalg.hpp"

namespace dmarx {

/// Tunable resonator parameters of one metamaterial element: oscillator
/// strength F >= 0, damping factor chi and angular resonance frequency
/// Omega_R (both rad/s).
struct LorentzianParams {
  double strength = 1.0;
  double damping = 0.0;
  double resonance = 0.0;
};

/// Element response F Omega^2 / (Omega_R^2 - Omega^2 - j Omega chi).
/// The imaginary part is nonnegative for F > 0, so the phase always lies
/// in [0, pi].
inline Complex lorentzian_response(const LorentzianParams& p, double angular) {
  if (!(angular > 0)) throw std::invalid_argument("lorentzian_response: need Omega > 0");
  const Complex den(p.resonance * p.resonance - angular * angular, -angular * p.damping);
  if (std::abs(den) <= 1e-30)
    throw std::domain_error("lorentzian_response: singular at resonance with zero damping");
  return p.strength * angular * angular / den;
}

/// Maps the M DFT bins to physical angular frequencies:
/// Omega_m = 2 pi f_c + omega_m f_s with omega_m the signed baseband
/// frequency (bins m >= M/2 wrap to negative omega).
struct FrequencyGrid {
  double carrier_hz = 0.0;      // f_c
  double sample_rate_hz = 0.0;  // f_s
  std::vector<double> baseband; // omega_m in (-pi, pi]
  std::vector<double> angular;  // Omega_m (rad/s)

  int bins() const { return static_cast<int>(angular.size()); }
};

inline FrequencyGrid build_frequency_grid(double carrier_hz, double sample_rate_hz, int bins) {
  if (!(sample_rate_hz > 0) || !(carrier_hz > sample_rate_hz / 2))
    throw std::invalid_argument("build_frequency_grid: need f_c > f_s/2 > 0");
  if (bins < 1) throw std::invalid_argument("build_frequency_grid: need >= 1 bin");
  FrequencyGrid grid;
  grid.carrier_hz = carrier_hz;
  grid.sample_rate_hz = sample_rate_hz;
  grid.baseband.resize(bins);
  grid.angular.resize(bins);
  for (int m = 0; m < bins; ++m) {
    double omega = 2.0 * std::numbers::pi * m / bins;
    if (2 * m >= bins) omega -= 2.0 * std::numbers::pi;
    grid.baseband[m] = omega;
    grid.angular[m] = 2.0 * std::numbers::pi * carrier_hz + omega * sample_rate_hz;
  }
  return grid;
}

/// Per-bin diagonal of the microstrip propagation H_m. Element l (1-based)
/// of every microstrip sees exp(-attenuation * l - j phase_slope * omega_m * l).
struct MicrostripPropagation {
  double attenuation = 0.0;  // alpha_h
  double phase_slope = 0.0;  // beta(omega) = phase_slope * omega
  std::vector<CVector> bin_gains;  // diag(H_m), length antennas

  int bins() const { return static_cast<int>(bin_gains.size()); }
};

inline MicrostripPropagation build_propagation(const ChannelConfig& cfg,
                                               const FrequencyGrid& grid, double attenuation,
                                               double phase_slope) {
  if (attenuation < 0) throw std::invalid_argument("build_propagation: negative attenuation");
  MicrostripPropagation prop;
  prop.attenuation = attenuation;
  prop.phase_slope = phase_slope;
  prop.bin_gains.reserve(grid.bins());
  for (int m = 0; m < grid.bins(); ++m) {
    CVector h(cfg.antennas());
    for (int i = 0; i < cfg.microstrips; ++i) {
      for (int l = 1; l <= cfg.strip_elements; ++l) {
        const double mag = std::exp(-attenuation * l);
        const double phase = -phase_slope * grid.baseband[m] * l;
        h((i * cfg.strip_elements) + l - 1) = mag * Complex(std::cos(phase), std::sin(phase));
      }
    }
    prop.bin_gains.push_back(std::move(h));
  }
  return prop;
}

/// Ideal (identity) propagation, used for phase-shifter baselines where the
/// analog network has no microstrip transfer characteristic.
inline MicrostripPropagation identity_propagation(const ChannelConfig& cfg,
                                                  const FrequencyGrid& grid) {
  return build_propagation(cfg, grid, 0.0, 0.0);
}

enum class WeightMode { Unconstrained, FrequencyFlat, Lorentzian };

struct FlatInterval {
  double lo = 0.001;
  double hi = 1.0;
};

/// DMA weight configuration. bin_rows[m] is microstrips x strip_elements
/// with row i holding q_{m,i}; the assembled Q_m places row i on the i-th
/// block of columns. FrequencyFlat stores the shared real weights;
/// Lorentzian stores the per-element resonator parameters the rows were
/// evaluated from.
struct DmaWeights {
  WeightMode mode = WeightMode::Unconstrained;
  int microstrips = 0;
  int strip_elements = 0;
  std::vector<CMatrix> bin_rows;
  RMatrix flat;                                        // FrequencyFlat only
  std::vector<std::vector<LorentzianParams>> lorentzian;  // [strip][element]
  FlatInterval flat_set;
  std::vector<double> quality_set;  // allowed resonance/damping ratios; empty = free

  int bins() const { return static_cast<int>(bin_rows.size()); }
};

inline DmaWeights make_unconstrained_weights(std::vector<CMatrix> bin_rows) {
  if (bin_rows.empty()) throw std::invalid_argument("make_unconstrained_weights: no bins");
  DmaWeights w;
  w.mode = WeightMode::Unconstrained;
  w.microstrips = static_cast<int>(bin_rows[0].rows());
  w.strip_elements = static_cast<int>(bin_rows[0].cols());
  w.bin_rows = std::move(bin_rows);
  return w;
}

inline DmaWeights make_flat_weights(const RMatrix& flat, const FlatInterval& set, int bins) {
  DmaWeights w;
  w.mode = WeightMode::FrequencyFlat;
  w.microstrips = static_cast<int>(flat.rows());
  w.strip_elements = static_cast<int>(flat.cols());
  w.flat = flat;
  w.flat_set = set;
  w.bin_rows.assign(bins, flat.cast<Complex>());
  return w;
}

inline DmaWeights make_lorentzian_weights(std::vector<std::vector<LorentzianParams>> params,
                                          const FrequencyGrid& grid,
                                          std::vector<double> quality_set = {}) {
  DmaWeights w;
  w.mode = WeightMode::Lorentzian;
  w.microstrips = static_cast<int>(params.size());
  w.strip_elements = w.microstrips ? static_cast<int>(params[0].size()) : 0;
  w.lorentzian = std::move(params);
  w.quality_set = std::move(quality_set);
  w.bin_rows.reserve(grid.bins());
  for (int m = 0; m < grid.bins(); ++m) {
    CMatrix rows(w.microstrips, w.strip_elements);
    for (int i = 0; i < w.microstrips; ++i)
      for (int l = 0; l < w.strip_elements; ++l)
        rows(i, l) = lorentzian_response(w.lorentzian[i][l], grid.angular[m]);
    w.bin_rows.push_back(std::move(rows));
  }
  return w;
}

/// Dense Q_m for bin m, no constraint validation.
inline CMatrix weight_matrix(const DmaWeights& w, int m) {
  const int n = w.microstrips * w.strip_elements;
  CMatrix q = CMatrix::Zero(w.microstrips, n);
  for (int i = 0; i < w.microstrips; ++i)
    q.block(i, i * w.strip_elements, 1, w.strip_elements) = w.bin_rows[m].row(i);
  return q;
}

/// Assembles the block-structured per-bin weight matrices Q_m
/// (microstrips x antennas): row i carries q_{m,i} on column block i and
/// zeros elsewhere. Validates the mode constraints before assembling.
inline std::vector<CMatrix> assemble_weights(const DmaWeights& w, const FrequencyGrid& grid) {
  if (w.bins() == 0) throw std::invalid_argument("assemble_weights: weights have no bins");
  if (grid.bins() != w.bins()) throw std::invalid_argument("assemble_weights: grid/bin mismatch");
  if (w.mode == WeightMode::FrequencyFlat) {
    for (int i = 0; i < w.microstrips; ++i)
      for (int l = 0; l < w.strip_elements; ++l)
        if (w.flat(i, l) < w.flat_set.lo || w.flat(i, l) > w.flat_set.hi)
          throw std::invalid_argument("assemble_weights: flat weight outside feasible interval");
  }
  if (w.mode == WeightMode::Lorentzian) {
    for (int i = 0; i < w.microstrips; ++i) {
      for (int l = 0; l < w.strip_elements; ++l) {
        const auto& p = w.lorentzian[i][l];
        if (p.strength < 0)
          throw std::invalid_argument("assemble_weights: negative oscillator strength");
        if (!w.quality_set.empty()) {
          const double qf = p.resonance / p.damping;
          bool ok = false;
          for (double allowed : w.quality_set)
            if (std::abs(qf - allowed) <= 1e-9 * std::max(1.0, std::abs(allowed))) ok = true;
          if (!ok)
            throw std::invalid_argument("assemble_weights: quality factor outside feasible set");
        }
      }
    }
  }
  std::vector<CMatrix> out;
  out.reserve(w.bins());
  for (int m = 0; m < w.bins(); ++m) out.push_back(weight_matrix(w, m));
  return out;
}

/// Channel as seen past the microstrips: per-bin equivalent gains
/// G_hat_m = H_m G_m and output covariance
/// Upsilon_m = G_hat_m G_hat_m^H + H_m C_W H_m^H.
struct EquivalentChannel {
  std::vector<CMatrix> gains;       // G_hat_m, antennas x users
  std::vector<CMatrix> output_cov;  // Upsilon_m, antennas x antennas
  std::vector<CVector> prop_diag;   // diag(H_m)
  int microstrips = 0;
  int strip_elements = 0;

  int bins() const { return static_cast<int>(gains.size()); }
  int antennas() const { return microstrips * strip_elements; }
  int users() const { return gains.empty() ? 0 : static_cast<int>(gains[0].cols()); }
};

inline EquivalentChannel equivalent_channel(const ChannelRealization& ch,
                                            const MicrostripPropagation& prop) {
  if (prop.bins() != ch.bins())
    throw std::invalid_argument("equivalent_channel: propagation/channel bin mismatch");
  if (prop.bin_gains[0].size() != ch.antennas())
    throw std::invalid_argument("equivalent_channel: propagation/channel size mismatch");
  EquivalentChannel eq;
  eq.strip_elements = static_cast<int>(ch.element_correlation.rows());
  eq.microstrips = ch.antennas() / eq.strip_elements;
  eq.gains.reserve(ch.bins());
  eq.output_cov.reserve(ch.bins());
  eq.prop_diag = prop.bin_gains;
  for (int m = 0; m < ch.bins(); ++m) {
    const CVector& h = prop.bin_gains[m];
    CMatrix ghat = h.asDiagonal() * ch.freq[m];
    CMatrix cov = ghat * ghat.adjoint();
    cov += h.asDiagonal() * ch.noise_cov * h.conjugate().asDiagonal();
    cov = 0.5 * (cov + cov.adjoint()).eval();
    eq.gains.push_back(std::move(ghat));
    eq.output_cov.push_back(std::move(cov));
  }
  return eq;
}

}  // namespace dmarx
