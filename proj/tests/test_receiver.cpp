#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "dmarx/channel.hpp"
#include "dmarx/dma.hpp"
#include "dmarx/quantizer.hpp"
#include "dmarx/receiver.hpp"
#include "dmarx/rng.hpp"

using namespace dmarx;

namespace {

CMatrix random_cmatrix(int rows, int cols, RngStream& rng) {
  CMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.complex_normal();
  return m;
}

struct Instance {
  ChannelConfig cfg;
  FrequencyGrid grid;
  ChannelRealization ch;
  MicrostripPropagation prop;
  EquivalentChannel eq;
};

Instance make_instance(RngStream& rng, int strips = 3, int ne = 4, int users = 2, int bins = 4,
                       double noise_power = 0.1) {
  Instance inst;
  inst.cfg.microstrips = strips;
  inst.cfg.strip_elements = ne;
  inst.cfg.users = users;
  inst.cfg.subcarriers = bins;
  inst.cfg.taps = std::min(3, bins);
  inst.cfg.noise_power = noise_power;
  inst.grid = build_frequency_grid(1.9e9, bins * 20e6, bins);
  inst.ch = generate_channel(inst.cfg, rng);
  inst.prop = build_propagation(inst.cfg, inst.grid, 0.006, 1.592);
  inst.eq = equivalent_channel(inst.ch, inst.prop);
  return inst;
}

DmaWeights random_weights(const Instance& inst, RngStream& rng) {
  std::vector<CMatrix> rows;
  for (int m = 0; m < inst.eq.bins(); ++m) {
    CMatrix r = random_cmatrix(inst.cfg.microstrips, inst.cfg.strip_elements, rng);
    for (int i = 0; i < r.rows(); ++i) r.row(i).normalize();
    rows.push_back(std::move(r));
  }
  return make_unconstrained_weights(std::move(rows));
}

}  // namespace

TEST_CASE("optimal_digital_filter scalar case") {
  // M = K = N_d = N_e = 1, H = 1: A = g* / (sigma_q^2 + |g|^2 + sigma^2)
  const Complex g(0.7, -0.4);
  const double sigma2 = 0.3, sq2 = 0.2;
  EquivalentChannel eq;
  eq.microstrips = 1;
  eq.strip_elements = 1;
  eq.gains = {CMatrix::Constant(1, 1, g)};
  eq.output_cov = {CMatrix::Constant(1, 1, std::norm(g) + sigma2)};
  eq.prop_diag = {CVector::Ones(1)};
  const DmaWeights w = make_unconstrained_weights({CMatrix::Ones(1, 1)});
  const auto filt = optimal_digital_filter(w, eq, sq2);
  const Complex expect = std::conj(g) / (sq2 + std::norm(g) + sigma2);
  REQUIRE(std::abs(filt[0](0, 0) - expect) < 1e-14);

  // huge quantization noise drives the filter to zero
  const auto numb = optimal_digital_filter(w, eq, 1e12);
  REQUIRE(std::abs(numb[0](0, 0)) < 1e-11);
}

TEST_CASE("optimal_digital_filter equals the stacked LMMSE oracle") {
  RngStream rng(51);
  Instance inst = make_instance(rng, 2, 3, 2, 4, 0.2);
  const DmaWeights w = random_weights(inst, rng);
  const double sq2 = 0.15;
  const CMatrix full = assemble_filter_matrix(optimal_digital_filter(w, inst.eq, sq2));

  // oracle: generic LMMSE E{S r^H} E{r r^H}^-1 under r = V1 Qbar (Gbar S_f +
  // Hbar W) + e with e ~ (0, sigma_q^2 I), from explicitly stacked matrices
  std::vector<CMatrix> qs, gs, us;
  for (int m = 0; m < 4; ++m) {
    qs.push_back(weight_matrix(w, m));
    gs.push_back(inst.eq.gains[m]);
    us.push_back(inst.eq.output_cov[m]);
  }
  const CMatrix qbar = block_diag(qs), gbar = block_diag(gs), sigma = block_diag(us);
  const CMatrix f = dft_matrix(4);
  const int users = 2, strips = 2;
  const CMatrix v1 = kron(f.adjoint(), CMatrix::Identity(strips, strips));
  const CMatrix v2 = kron(f, CMatrix::Identity(users, users));
  // covariances of the time-domain quantizer input r and the time-domain S
  const CMatrix c_rr =
      v1 * (qbar * sigma * qbar.adjoint()) * v1.adjoint() +
      (4.0 * sq2 / 4.0) * CMatrix::Identity(4 * strips, 4 * strips);
  const CMatrix c_sr = v2.adjoint() * (qbar * gbar).adjoint() * v1.adjoint();
  const CMatrix oracle = c_sr * c_rr.inverse();
  REQUIRE((full - oracle).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("filter optimality under the quantization noise model") {
  RngStream rng(52);
  Instance inst = make_instance(rng, 2, 3, 2, 4, 0.3);
  const DmaWeights w = random_weights(inst, rng);
  const double sq2 = 0.2;
  const auto filt = optimal_digital_filter(w, inst.eq, sq2);

  auto model_mse = [&](const std::vector<CMatrix>& a) {
    double total = 0.0;
    for (int m = 0; m < 4; ++m) {
      const CMatrix q = weight_matrix(w, m);
      const CMatrix c_rs = q * inst.eq.gains[m];  // E{r s^H}
      CMatrix c_rr = q * inst.eq.output_cov[m] * q.adjoint();
      c_rr.diagonal().array() += sq2;
      total += inst.cfg.users - 2.0 * (a[m] * c_rs).trace().real() +
               (a[m] * c_rr * a[m].adjoint()).trace().real();
    }
    return total;
  };

  const double best = model_mse(filt);
  for (int trial = 0; trial < 20; ++trial) {
    auto perturbed = filt;
    for (auto& a : perturbed) {
      CMatrix d = random_cmatrix(static_cast<int>(a.rows()), static_cast<int>(a.cols()), rng);
      a += 1e-3 * d / d.norm();
    }
    REQUIRE(model_mse(perturbed) >= best - 1e-12);
  }
}

TEST_CASE("excess_mse closed form with zero weights") {
  RngStream rng(53);
  Instance inst = make_instance(rng);
  DmaWeights zero = random_weights(inst, rng);
  for (auto& r : zero.bin_rows) r.setZero();
  double expect = 0.0;
  for (int m = 0; m < inst.eq.bins(); ++m)
    expect += (inst.eq.gains[m].adjoint() *
               hermitian_solve(inst.eq.output_cov[m], inst.eq.gains[m]))
                  .trace()
                  .real();
  REQUIRE(excess_mse(zero, inst.eq, 0.5) == Catch::Approx(expect).epsilon(1e-10));
}

TEST_CASE("excess_mse equals the stacked form (Proposition 1 shape)") {
  RngStream rng(54);
  Instance inst = make_instance(rng);
  const DmaWeights w = random_weights(inst, rng);
  const double sq2 = 0.35;
  const double per_bin = excess_mse(w, inst.eq, sq2);

  std::vector<CMatrix> qs, gs, us;
  for (int m = 0; m < inst.eq.bins(); ++m) {
    qs.push_back(weight_matrix(w, m));
    gs.push_back(inst.eq.gains[m]);
    us.push_back(inst.eq.output_cov[m]);
  }
  const CMatrix qbar = block_diag(qs), gbar = block_diag(gs), sigma = block_diag(us);
  const CMatrix sinv = sigma.inverse();
  const CMatrix inner = (sinv + qbar.adjoint() * qbar / sq2).inverse();
  const double stacked = (gbar.adjoint() * sinv * inner * sinv.adjoint() * gbar).trace().real();
  REQUIRE(std::abs(per_bin - stacked) <= 1e-9 * std::abs(stacked));
}

TEST_CASE("excess_mse monotone in the quantization noise terms") {
  RngStream rng(55);
  Instance inst = make_instance(rng, 2, 3, 2, 2, 0.4);
  const DmaWeights w = random_weights(inst, rng);
  const double sq2 = 0.5;
  const int ne = inst.cfg.strip_elements;

  // doubling sigma_q^-2 on one rank-one term never increases the value
  for (int boosted = 0; boosted < 2; ++boosted) {
    double base = 0.0, boosted_val = 0.0;
    for (int m = 0; m < inst.eq.bins(); ++m) {
      const CMatrix r = hermitian_inverse(inst.eq.output_cov[m]);
      CMatrix inner_a = r, inner_b = r;
      for (int i = 0; i < 2; ++i) {
        const CVector qc = w.bin_rows[m].row(i).conjugate().transpose();
        const CMatrix term = (qc * qc.adjoint()) / sq2;
        inner_a.block(i * ne, i * ne, ne, ne) += term;
        inner_b.block(i * ne, i * ne, ne, ne) += (i == boosted ? 2.0 : 1.0) * term;
      }
      const CMatrix rg = r * inst.eq.gains[m];
      base += (rg.adjoint() * hermitian_solve(inner_a, rg)).trace().real();
      boosted_val += (rg.adjoint() * hermitian_solve(inner_b, rg)).trace().real();
    }
    REQUIRE(boosted_val <= base * (1 + 1e-12));
  }
}

TEST_CASE("greedy objective terms collapse at the first strip") {
  RngStream rng(56);
  Instance inst = make_instance(rng);
  GreedyState state = init_greedy(inst.eq);
  const int ne = inst.cfg.strip_elements;
  for (int m = 0; m < inst.eq.bins(); ++m) {
    const auto terms = greedy_objective_terms(state, inst.eq, 0, m);
    const CMatrix gg = inst.eq.gains[m] * inst.eq.gains[m].adjoint();
    REQUIRE((terms.xi - gg.block(0, 0, ne, ne)).cwiseAbs().maxCoeff() <
            1e-9 * gg.cwiseAbs().maxCoeff());
    REQUIRE((terms.psi - inst.eq.output_cov[m].block(0, 0, ne, ne)).cwiseAbs().maxCoeff() <
            1e-9 * inst.eq.output_cov[m].cwiseAbs().maxCoeff());
  }

  // dead channel: Xi vanishes
  Instance dead = inst;
  for (auto& g : dead.ch.freq) g.setZero();
  dead.eq = equivalent_channel(dead.ch, dead.prop);
  GreedyState dstate = init_greedy(dead.eq);
  const auto terms = greedy_objective_terms(dstate, dead.eq, 0, 0);
  REQUIRE(terms.xi.cwiseAbs().maxCoeff() < 1e-20);
}

TEST_CASE("Sherman-Morrison recursion consistency") {
  RngStream rng(57);
  Instance inst = make_instance(rng);
  const double kap = quantization_kappa(2.0, 8);
  const int ne = inst.cfg.strip_elements;
  GreedyState state = init_greedy(inst.eq);
  const int m = 1;

  for (int i = 0; i < inst.cfg.microstrips; ++i) {
    const auto terms = greedy_objective_terms(state, inst.eq, i, m);
    const CMatrix slice = inst.eq.output_cov[m].block(i * ne, i * ne, ne, ne);
    const CVector q = solve_microstrip_weights(terms.xi, terms.psi, slice, kap);
    const double power = (q.transpose() * slice * q.conjugate()).value().real();
    const double sq2_eff = kap * power;

    // Eq.-(15) value: leading trace minus the rank-one quotient
    const CMatrix uinv_t = hermitian_solve(state.u[m], state.whitened_gains[m]);
    const double lead = (state.whitened_gains[m].adjoint() * uinv_t).trace().real();
    const double num = (q.transpose() * terms.xi * q.conjugate()).value().real();
    const double den =
        sq2_eff + (q.transpose() * terms.psi * q.conjugate()).value().real();
    const double j_recursion = lead - num / den;

    // direct evaluation with the rank-one-updated inverse
    CMatrix updated = state.u[m];
    const CVector qc = q.conjugate();
    updated.block(i * ne, i * ne, ne, ne) += (qc * qc.adjoint()) / sq2_eff;
    const double j_direct = (state.whitened_gains[m].adjoint() *
                             hermitian_solve(updated, state.whitened_gains[m]))
                                .trace()
                                .real();
    REQUIRE(std::abs(j_recursion - j_direct) <= 1e-9 * std::abs(j_direct));

    state.u[m] = updated;
  }
}

TEST_CASE("solve_microstrip_weights closed forms and scale invariance") {
  CMatrix xi = CMatrix::Zero(2, 2);
  xi(0, 0) = 1.0;
  const CVector q = solve_microstrip_weights(xi, CMatrix::Identity(2, 2),
                                             CMatrix::Zero(2, 2), 1.0);
  REQUIRE(std::abs(q(0)) == Catch::Approx(1.0).epsilon(1e-12));
  REQUIRE(std::abs(q(1)) < 1e-12);

  // degenerate Xi falls back to the smallest-eigenvalue direction of Psi
  CMatrix psi = CMatrix::Identity(2, 2);
  psi(1, 1) = 3.0;
  bool degenerate = false;
  const CVector qd = solve_microstrip_weights(CMatrix::Zero(2, 2), psi,
                                              CMatrix::Identity(2, 2), 0.5, &degenerate);
  REQUIRE(degenerate);
  REQUIRE(std::abs(qd(0)) == Catch::Approx(1.0).epsilon(1e-12));

  // quotient is homogeneous of degree zero
  RngStream rng(58);
  const CMatrix raw = random_cmatrix(3, 2, rng);
  const CMatrix xi3 = raw * raw.adjoint();
  const CMatrix braw = random_cmatrix(3, 3, rng);
  const CMatrix b = (braw * braw.adjoint() + 0.2 * CMatrix::Identity(3, 3)).eval();
  auto quotient = [&](const CVector& v) {
    const double num = (v.transpose() * xi3 * v.conjugate()).value().real();
    const double den = (v.transpose() * b * v.conjugate()).value().real();
    return num / den;
  };
  const CVector v = random_cmatrix(3, 1, rng);
  for (const Complex c : {Complex(2.0, 0.0), Complex(0.0, -3.0), Complex(1.5, 2.5)})
    REQUIRE(quotient(c * v) == Catch::Approx(quotient(v)).epsilon(1e-10));
}

TEST_CASE("greedy_configure single strip matches the direct solution") {
  RngStream rng(59);
  Instance inst = make_instance(rng, 1, 4, 2, 3, 0.2);
  const double kap = quantization_kappa(2.0, 8);
  const DmaWeights w = greedy_configure(inst.eq, kap);
  for (int m = 0; m < inst.eq.bins(); ++m) {
    const CMatrix gg = inst.eq.gains[m] * inst.eq.gains[m].adjoint();
    const CVector direct = solve_microstrip_weights(
        gg, inst.eq.output_cov[m], inst.eq.output_cov[m], kap);
    // same direction; the returned representative has unit output power
    CVector row = w.bin_rows[m].row(0).transpose();
    const double power =
        (row.transpose() * inst.eq.output_cov[m] * row.conjugate()).value().real();
    REQUIRE(power == Catch::Approx(1.0).epsilon(1e-10));
    row.normalize();
    REQUIRE((row - direct).norm() < 1e-8);
  }
}

TEST_CASE("greedy_configure monotone objective and smoke scale") {
  RngStream rng(60);
  Instance inst = make_instance(rng);
  const double kap = quantization_kappa(2.0, 8);

  // recomputed per-bin objective trace never increases in the strip index
  GreedyState state = init_greedy(inst.eq);
  const int ne = inst.cfg.strip_elements;
  std::vector<double> prev(inst.eq.bins(), std::numeric_limits<double>::infinity());
  for (int i = 0; i < inst.cfg.microstrips; ++i) {
    for (int m = 0; m < inst.eq.bins(); ++m) {
      const auto terms = greedy_objective_terms(state, inst.eq, i, m);
      const CMatrix slice = inst.eq.output_cov[m].block(i * ne, i * ne, ne, ne);
      const CVector q = solve_microstrip_weights(terms.xi, terms.psi, slice, kap);
      const double power = (q.transpose() * slice * q.conjugate()).value().real();
      const CVector qc = q.conjugate();
      state.u[m].block(i * ne, i * ne, ne, ne) += (qc * qc.adjoint()) / (kap * power);
      const double j_now = (state.whitened_gains[m].adjoint() *
                            hermitian_solve(state.u[m], state.whitened_gains[m]))
                               .trace()
                               .real();
      REQUIRE(j_now <= prev[m] * (1 + 1e-10));
      prev[m] = j_now;
    }
  }

  // full paper scale completes with finite weights
  RngStream rng2(61);
  Instance paper = make_instance(rng2, 10, 10, 8, 16, 0.25);
  const DmaWeights w = greedy_configure(paper.eq, quantization_kappa(2.0, 16));
  for (const auto& rows : w.bin_rows) REQUIRE(rows.allFinite());
}

TEST_CASE("recover_symbols bypass equals per-bin LMMSE on the combined output") {
  RngStream rng(62);
  Instance inst = make_instance(rng, 2, 3, 2, 4, 0.2);
  const DmaWeights w = random_weights(inst, rng);

  ReceiverDesign design;
  design.mode = "test";
  design.weights = w;
  design.quantizer = {1.0, 4, 2.0};  // unused under bypass
  design.filter = optimal_digital_filter(w, inst.eq, 0.0);

  RngStream sym(63);
  const OfdmBlock block = generate_ofdm_block(inst.cfg, Constellation::Qpsk, sym);
  const CMatrix y = channel_output(inst.ch, block, sym);
  const RecoveredSymbols rec = recover_from_output(design, inst.eq, y, true);

  for (int m = 0; m < 4; ++m) {
    const CMatrix q = weight_matrix(w, m);
    const CVector z = q * inst.eq.prop_diag[m].cwiseProduct(y.col(m));
    const CMatrix cov = q * inst.eq.output_cov[m] * q.adjoint();
    const CVector oracle = inst.eq.gains[m].adjoint() * q.adjoint() *
                           hermitian_solve(cov, CMatrix(z));
    REQUIRE((rec.estimates.col(m) - oracle).norm() < 1e-8);
  }
}

TEST_CASE("recover_symbols near-perfect regime and energy bookkeeping") {
  RngStream rng(64);
  Instance inst = make_instance(rng, 2, 4, 1, 4, 1e-10);
  const double kap = quantization_kappa(2.0, 1 << 15);
  const DmaWeights w = greedy_configure(inst.eq, kap);
  ReceiverDesign design;
  design.mode = "R1";
  design.weights = w;
  design.quantizer = {adc_support(w, inst.eq.output_cov, 2.0), 1 << 15, 2.0};
  design.filter = optimal_digital_filter(w, inst.eq, design.quantizer.noise_energy());

  int errors = 0;
  for (int t = 0; t < 100; ++t) {
    RngStream trial = rng.derive(t);
    const OfdmBlock block = generate_ofdm_block(inst.cfg, Constellation::Qpsk, trial);
    const CMatrix y = channel_output(inst.ch, block, trial);
    const RecoveredSymbols rec = recover_from_output(design, inst.eq, y);
    for (Eigen::Index i = 0; i < block.symbols.size(); ++i) {
      errors += (rec.decisions(i).real() >= 0) != (block.symbols(i).real() >= 0);
      errors += (rec.decisions(i).imag() >= 0) != (block.symbols(i).imag() >= 0);
    }
  }
  REQUIRE(errors == 0);

  // quantized stream carries comparable energy to its input (eta = 2, b = 16)
  Instance loud = make_instance(rng, 2, 3, 2, 4, 0.3);
  const DmaWeights wl = greedy_configure(loud.eq, quantization_kappa(2.0, 16));
  const QuantizerSpec spec{adc_support(wl, loud.eq.output_cov, 2.0), 16, 2.0};
  const CMatrix idft = dft_matrix(4).adjoint();
  double in2 = 0.0, out2 = 0.0;
  for (int t = 0; t < 500; ++t) {
    RngStream trial = rng.derive(t, 5);
    const OfdmBlock block = generate_ofdm_block(loud.cfg, Constellation::Qpsk, trial);
    const CMatrix y = channel_output(loud.ch, block, trial);
    const CMatrix z = idft * dma_output_bins(wl, loud.eq, y);
    in2 += z.squaredNorm();
    for (Eigen::Index i = 0; i < z.size(); ++i) out2 += std::norm(quantize_complex(z(i), spec));
  }
  REQUIRE(out2 / in2 > 0.9);
  REQUIRE(out2 / in2 < 1.1);
}

TEST_CASE("unquantized LMMSE baseline") {
  // scalar noiseless: estimate equals the symbol
  ChannelRealization ch;
  ch.taps = {CMatrix::Constant(1, 1, Complex(1.5, 0.5))};
  ch.freq.assign(2, CMatrix::Constant(1, 1, Complex(1.5, 0.5)));
  ch.element_correlation = CMatrix::Identity(1, 1);
  ch.rx_correlation = CMatrix::Identity(1, 1);
  ch.rx_sqrt = CMatrix::Identity(1, 1);
  ch.noise_cov = CMatrix::Zero(1, 1);
  ch.noise_power = 0.0;
  OfdmBlock block;
  RngStream rng(65);
  block.symbols = random_cmatrix(1, 2, rng);
  const CMatrix shat = baseline_lmmse_unquantized(ch, block, rng);
  REQUIRE((shat - block.symbols).norm() < 1e-12);

  // analytic MMSE matches the Monte Carlo error of the estimator
  Instance inst = make_instance(rng, 2, 3, 2, 4, 0.5);
  const double analytic = unquantized_mmse(inst.ch);
  double mc = 0.0;
  const int draws = 4000;
  for (int t = 0; t < draws; ++t) {
    RngStream trial = rng.derive(t);
    const OfdmBlock b = generate_ofdm_block(inst.cfg, Constellation::Qpsk, trial);
    const CMatrix y = channel_output(inst.ch, b, trial);
    mc += (lmmse_estimate(inst.ch, y) - b.symbols).squaredNorm() /
          (inst.cfg.subcarriers * inst.cfg.users);
  }
  mc /= draws;
  REQUIRE(mc == Catch::Approx(analytic).epsilon(0.02));
}

TEST_CASE("R5 lower-bounds a quantized receiver on matched realizations") {
  RngStream rng(66);
  Instance inst = make_instance(rng, 2, 4, 2, 4, 0.5);
  const int levels = 8;
  const DmaWeights w = greedy_configure(inst.eq, quantization_kappa(2.0, levels));
  ReceiverDesign design;
  design.mode = "R1";
  design.weights = w;
  design.quantizer = {adc_support(w, inst.eq.output_cov, 2.0), levels, 2.0};
  design.filter = optimal_digital_filter(w, inst.eq, design.quantizer.noise_energy());

  double mse_r5 = 0.0, mse_r1 = 0.0;
  for (int t = 0; t < 200; ++t) {
    RngStream trial = rng.derive(t);
    const OfdmBlock block = generate_ofdm_block(inst.cfg, Constellation::Qpsk, trial);
    const CMatrix y = channel_output(inst.ch, block, trial);
    mse_r5 += (lmmse_estimate(inst.ch, y) - block.symbols).squaredNorm();
    mse_r1 += (recover_from_output(design, inst.eq, y).estimates - block.symbols).squaredNorm();
  }
  REQUIRE(mse_r5 <= mse_r1);
}

TEST_CASE("phase shifter baseline structure") {
  RngStream rng(67);
  Instance inst = make_instance(rng, 3, 4, 2, 4, 0.2);
  const EquivalentChannel eq_id =
      equivalent_channel(inst.ch, identity_propagation(inst.cfg, inst.grid));
  const ReceiverDesign r4 = baseline_phase_shifter(eq_id, 100.0, 8);

  for (int m = 0; m < 4; ++m) {
    for (int i = 0; i < 3; ++i)
      for (int l = 0; l < 4; ++l)
        REQUIRE(std::abs(r4.weights.bin_rows[m](i, l)) == Catch::Approx(1.0).epsilon(1e-12));
    REQUIRE((r4.weights.bin_rows[m] - r4.weights.bin_rows[0]).norm() == 0.0);
  }
  REQUIRE(r4.quantizer.support == 100.0);
}

TEST_CASE("weight Gram identity (appendix structure)") {
  RngStream rng(68);
  Instance inst = make_instance(rng, 3, 4, 2, 1, 0.2);
  const DmaWeights w = random_weights(inst, rng);
  const CMatrix q = weight_matrix(w, 0);
  CMatrix sum = CMatrix::Zero(12, 12);
  for (int i = 0; i < 3; ++i) {
    const CVector qc = w.bin_rows[0].row(i).conjugate().transpose();
    sum.block(i * 4, i * 4, 4, 4) = qc * qc.adjoint();
  }
  REQUIRE(((q.adjoint() * q) - sum).cwiseAbs().maxCoeff() <= 1e-12);
}
