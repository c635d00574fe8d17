#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dmarx/channel.hpp"
#include "dmarx/dma.hpp"
#include "dmarx/quantizer.hpp"
#include "dmarx/rng.hpp"

using namespace dmarx;

namespace {

const QuantizerSpec kFour{1.0, 4, 2.0};  // gamma = 1, b = 4

}  // namespace

TEST_CASE("quantize_real reference table") {
  // levels are {-0.75, -0.25, 0.25, 0.75}
  REQUIRE(quantize_real(0.1, kFour) == 0.25);
  REQUIRE(quantize_real(5.0, kFour) == 0.75);
  REQUIRE(quantize_real(-0.6, kFour) == -0.75);
  REQUIRE(quantize_real(-5.0, kFour) == -0.75);
  // boundary conventions: 0 sits in the upper cell, gamma in the top cell
  REQUIRE(quantize_real(0.0, kFour) == 0.25);
  REQUIRE(quantize_real(1.0, kFour) == 0.75);
  REQUIRE(quantize_real(-1.0, kFour) == -0.75);
}

TEST_CASE("quantize_complex componentwise") {
  REQUIRE(quantize_complex({0.0, 0.0}, kFour) == Complex(0.25, 0.25));
  REQUIRE(quantize_complex({0.1, -0.6}, kFour) == Complex(0.25, -0.75));
  REQUIRE(quantize_complex({9.0, 9.0}, kFour) == Complex(0.75, 0.75));
}

TEST_CASE("quantizer invariants") {
  RngStream rng(41);
  const QuantizerSpec spec{1.7, 6, 2.0};

  // granular bound, idempotence, monotonicity
  double prev_in = -2 * spec.support;
  double prev_out = quantize_real(prev_in, spec);
  for (int i = 0; i < 100000; ++i) {
    const double x = (rng.uniform() * 2.0 - 1.0) * spec.support;
    const double q = quantize_real(x, spec);
    REQUIRE(std::abs(q - x) <= spec.support / spec.levels + 1e-12);
    REQUIRE(quantize_real(q, spec) == q);
    const double xs = -2 * spec.support + i * (4.0 * spec.support / 100000);
    const double qs = quantize_real(xs, spec);
    REQUIRE(qs >= prev_out);
    prev_in = xs;
    prev_out = qs;
  }

  // uniform input on [-gamma, gamma]: E|D(x)-x|^2 = gamma^2/(3 b^2), which is
  // a quarter of the design constant sigma_q^2 = 4 gamma^2 / (3 b^2)
  double err2 = 0.0;
  const int draws = 1000000;
  for (int i = 0; i < draws; ++i) {
    const double x = (rng.uniform() * 2.0 - 1.0) * spec.support;
    const double e = quantize_real(x, spec) - x;
    err2 += e * e;
  }
  err2 /= draws;
  const double expected = spec.support * spec.support / (3.0 * spec.levels * spec.levels);
  REQUIRE(err2 == Catch::Approx(expected).epsilon(0.02));
  REQUIRE(expected == Catch::Approx(spec.noise_energy() / 4.0).epsilon(1e-12));
}

TEST_CASE("adc_support closed forms") {
  // scalar case: one strip, one element, one bin, Upsilon = 4, q = 1
  DmaWeights w = make_unconstrained_weights({CMatrix::Ones(1, 1)});
  const std::vector<CMatrix> cov{4.0 * CMatrix::Ones(1, 1)};
  const double eta = 1.7;
  REQUIRE(adc_support(w, cov, eta) == Catch::Approx(2.0 * eta).epsilon(1e-12));

  // scaling one strip's weights by c scales its power by |c|^2
  RngStream rng(42);
  CMatrix rows(1, 3);
  for (int l = 0; l < 3; ++l) rows(0, l) = rng.complex_normal();
  CMatrix a(3, 3);
  for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = rng.complex_normal();
  const CMatrix ups = (a * a.adjoint() + 0.3 * CMatrix::Identity(3, 3)).eval();
  const DmaWeights w1 = make_unconstrained_weights({rows});
  const DmaWeights w2 = make_unconstrained_weights({Complex(0.0, 2.0) * rows});
  const double g1 = adc_support(w1, {ups}, eta);
  const double g2 = adc_support(w2, {ups}, eta);
  REQUIRE(g2 * g2 == Catch::Approx(4.0 * g1 * g1).epsilon(1e-10));
}

TEST_CASE("adc_support matches Monte Carlo microstrip power") {
  ChannelConfig cfg;
  cfg.microstrips = 2;
  cfg.strip_elements = 3;
  cfg.users = 2;
  cfg.subcarriers = 4;
  cfg.taps = 2;
  cfg.noise_power = 0.4;
  const FrequencyGrid grid = build_frequency_grid(1.9e9, 80e6, 4);
  RngStream rng(43);
  const ChannelRealization ch = generate_channel(cfg, rng);
  const MicrostripPropagation prop = build_propagation(cfg, grid, 0.006, 1.592);
  const EquivalentChannel eq = equivalent_channel(ch, prop);

  std::vector<CMatrix> rows;
  for (int m = 0; m < 4; ++m) {
    CMatrix r(2, 3);
    for (Eigen::Index i = 0; i < r.size(); ++i) r(i) = rng.complex_normal();
    rows.push_back(r);
  }
  const DmaWeights w = make_unconstrained_weights(rows);
  const double eta = 2.0;
  const double gamma = adc_support(w, eq.output_cov, eta);

  // estimate max_i (1/M) sum_m E|(z_m)_i|^2 from simulated outputs
  const int draws = 100000;
  RMatrix power = RMatrix::Zero(4, 2);
  for (int t = 0; t < draws; ++t) {
    RngStream trial = rng.derive(t);
    const OfdmBlock block = generate_ofdm_block(cfg, Constellation::Qpsk, trial);
    const CMatrix y = channel_output(ch, block, trial);
    power += dma_output_bins(w, eq, y).cwiseAbs2().real();
  }
  power /= draws;
  const double mc = power.colwise().mean().maxCoeff();
  REQUIRE(gamma * gamma == Catch::Approx(eta * eta * mc).epsilon(0.02));
}

TEST_CASE("overload probability extremes and Gaussian tail") {
  ChannelConfig cfg;
  cfg.microstrips = 1;
  cfg.strip_elements = 1;
  cfg.users = 1;
  cfg.subcarriers = 4;
  cfg.taps = 2;
  cfg.noise_power = 0.5;
  const FrequencyGrid grid = build_frequency_grid(1.9e9, 80e6, 4);
  RngStream rng(44);
  const ChannelRealization ch = generate_channel(cfg, rng);
  const EquivalentChannel eq = equivalent_channel(ch, identity_propagation(cfg, grid));
  const DmaWeights w = make_unconstrained_weights(
      std::vector<CMatrix>(4, CMatrix::Ones(1, 1)));

  RngStream r1(45), r2(46), r3(47);
  REQUIRE(overload_probability(w, ch, eq, {1e9, 4, 2.0}, 200, r1) == 0.0);
  REQUIRE(overload_probability(w, ch, eq, {1e-12, 4, 2.0}, 200, r2) ==
          Catch::Approx(1.0).epsilon(1e-3));

  // Gaussian symbols: every time-domain ADC input sample is exactly Gaussian
  // with per-real-dimension variance v/2; support at 2 standard deviations
  // overloads with probability 2 Q(2) ~ 4.55%
  double v = cfg.noise_power;
  for (int m = 0; m < 4; ++m) v += ch.freq[m].cwiseAbs2().sum() / 4.0;
  const QuantizerSpec two_sigma{2.0 * std::sqrt(v / 2.0), 4, 2.0};
  const double rate =
      overload_probability(w, ch, eq, two_sigma, 20000, r3, Constellation::Gaussian);
  REQUIRE(rate == Catch::Approx(0.04550026389635842).epsilon(0.10));
}
