#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "dmarx/linalg.hpp"
#include "dmarx/rng.hpp"

namespace dmarx {

/// Uplink MU-MIMO-OFDM geometry and channel statistics. The receive array
/// has microstrips * strip_elements antennas; element correlation follows
/// Jakes' model within a microstrip and is zero across microstrips.
struct ChannelConfig {
  int microstrips = 10;      // N_d
  int strip_elements = 10;   // N_e
  int users = 8;             // K
  int subcarriers = 16;      // M
  int taps = 4;              // L_G
  double element_spacing = 0.2;  // wavelengths
  double noise_power = 1.0;      // sigma_z^2, linear
  double tap_decay = 1.0;        // tap amplitude profile exp(-tap_decay * tau)

  int antennas() const { return microstrips * strip_elements; }

  void validate() const {
    if (microstrips < 1 || strip_elements < 1 || users < 1 || subcarriers < 1 || taps < 1)
      throw std::invalid_argument("ChannelConfig: all counts must be >= 1");
    if (taps > subcarriers)
      throw std::invalid_argument("ChannelConfig: taps must not exceed subcarriers (CP assumption)");
    if (noise_power < 0.0) throw std::invalid_argument("ChannelConfig: negative noise power");
    if (element_spacing < 0.0) throw std::invalid_argument("ChannelConfig: negative spacing");
  }
};

/// One multipath channel draw: time-domain taps G[tau] (antennas x users),
/// their per-bin DFT G_m, and the noise statistics C_W = sigma_z^2 Sigma_R.
struct ChannelRealization {
  std::vector<CMatrix> taps;   // G[tau]
  std::vector<CMatrix> freq;   // G_m, m = 0..M-1
  CMatrix element_correlation; // Sigma_C (strip_elements x strip_elements)
  CMatrix rx_correlation;      // Sigma_R = I_{N_d} (x) Sigma_C
  CMatrix rx_sqrt;             // Sigma_R^{1/2}, kept for drawing correlated noise
  CMatrix noise_cov;           // C_W
  double noise_power = 1.0;    // sigma_z^2
  std::uint64_t seed = 0;

  int antennas() const { return static_cast<int>(rx_correlation.rows()); }
  int users() const { return taps.empty() ? 0 : static_cast<int>(taps[0].cols()); }
  int bins() const { return static_cast<int>(freq.size()); }
};

/// Jakes spatial correlation: entry (i, l) = J0(2 pi spacing |i - l|).
inline CMatrix jakes_correlation(int strip_elements, double spacing) {
  if (strip_elements < 1) throw std::invalid_argument("jakes_correlation: need >= 1 element");
  CMatrix c(strip_elements, strip_elements);
  for (int i = 0; i < strip_elements; ++i)
    for (int l = 0; l < strip_elements; ++l)
      c(i, l) = std::cyl_bessel_j(0.0, 2.0 * std::numbers::pi * spacing * std::abs(i - l));
  return c;
}

/// Reusable channel generator: precomputes Sigma_R and its square root once
/// so Monte Carlo loops only pay for the Gaussian draws.
class ChannelSampler {
 public:
  explicit ChannelSampler(const ChannelConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    element_corr_ = jakes_correlation(cfg.strip_elements, cfg.element_spacing);
    rx_corr_ = kron(CMatrix::Identity(cfg.microstrips, cfg.microstrips), element_corr_);
    rx_sqrt_ = hermitian_sqrt(rx_corr_);
  }

  const ChannelConfig& config() const { return cfg_; }

  ChannelRealization draw(RngStream& rng) const {
    const int n = cfg_.antennas();
    const int k = cfg_.users;
    ChannelRealization ch;
    ch.element_correlation = element_corr_;
    ch.rx_correlation = rx_corr_;
    ch.rx_sqrt = rx_sqrt_;
    ch.noise_power = cfg_.noise_power;
    ch.noise_cov = cfg_.noise_power * rx_corr_;
    ch.seed = rng.seed();
    ch.taps.reserve(cfg_.taps);
    for (int tau = 0; tau < cfg_.taps; ++tau) {
      CMatrix raw(n, k);
      for (int c = 0; c < k; ++c)
        for (int r = 0; r < n; ++r) raw(r, c) = rng.complex_normal();
      ch.taps.push_back(std::exp(-cfg_.tap_decay * tau) * (rx_sqrt_ * raw));
    }
    ch.freq = tap_dft(ch.taps, cfg_.subcarriers);
    return ch;
  }

  /// G_m = sum_tau G[tau] exp(-j 2 pi m tau / M).
  static std::vector<CMatrix> tap_dft(const std::vector<CMatrix>& taps, int bins) {
    std::vector<CMatrix> freq;
    freq.reserve(bins);
    for (int m = 0; m < bins; ++m) {
      CMatrix g = CMatrix::Zero(taps[0].rows(), taps[0].cols());
      for (std::size_t tau = 0; tau < taps.size(); ++tau) {
        const double phase = -2.0 * std::numbers::pi * m * static_cast<double>(tau) / bins;
        g += Complex(std::cos(phase), std::sin(phase)) * taps[tau];
      }
      freq.push_back(std::move(g));
    }
    return freq;
  }

 private:
  ChannelConfig cfg_;
  CMatrix element_corr_, rx_corr_, rx_sqrt_;
};

inline ChannelRealization generate_channel(const ChannelConfig& cfg, RngStream& rng) {
  return ChannelSampler(cfg).draw(rng);
}

enum class Constellation { Qpsk, Gaussian };

/// Per-bin transmitted symbols s_m, stored as columns of a users x bins
/// matrix. Unit average energy per symbol in both modes.
struct OfdmBlock {
  CMatrix symbols;
  Constellation kind = Constellation::Qpsk;

  int users() const { return static_cast<int>(symbols.rows()); }
  int bins() const { return static_cast<int>(symbols.cols()); }
};

inline OfdmBlock generate_ofdm_block(const ChannelConfig& cfg, Constellation kind,
                                     RngStream& rng) {
  cfg.validate();
  OfdmBlock block;
  block.kind = kind;
  block.symbols.resize(cfg.users, cfg.subcarriers);
  for (int m = 0; m < cfg.subcarriers; ++m)
    for (int k = 0; k < cfg.users; ++k)
      block.symbols(k, m) = (kind == Constellation::Qpsk) ? rng.qpsk() : rng.complex_normal();
  return block;
}

/// Channel output per bin: y_m = G_m s_m + w_m, w_m ~ CN(0, C_W) drawn
/// independently across bins. Columns of the result are the y_m.
inline CMatrix channel_output(const ChannelRealization& ch, const OfdmBlock& block,
                              RngStream& rng) {
  const int n = ch.antennas();
  const int bins = ch.bins();
  if (block.bins() != bins || block.users() != ch.users())
    throw std::invalid_argument("channel_output: block does not match channel");
  const double sigma = std::sqrt(ch.noise_power);
  CMatrix y(n, bins);
  CVector white(n);
  for (int m = 0; m < bins; ++m) {
    for (int r = 0; r < n; ++r) white(r) = rng.complex_normal();
    y.col(m) = ch.freq[m] * block.symbols.col(m) + sigma * (ch.rx_sqrt * white);
  }
  return y;
}

}  // namespace dmarx
