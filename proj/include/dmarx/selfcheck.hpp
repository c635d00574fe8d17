#pragma once

#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "dmarx/channel.hpp"
#include "dmarx/dma.hpp"
#include "dmarx/experiment.hpp"
#include "dmarx/fitting.hpp"
#include "dmarx/quantizer.hpp"
#include "dmarx/receiver.hpp"

namespace dmarx {

namespace detail {

inline CMatrix random_cmatrix(int rows, int cols, RngStream& rng) {
  CMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.complex_normal();
  return m;
}

inline CMatrix random_hpd(int n, RngStream& rng, double ridge = 0.1) {
  CMatrix a = random_cmatrix(n, n, rng);
  CMatrix h = a * a.adjoint();
  h.diagonal().array() += ridge;
  return 0.5 * (h + h.adjoint()).eval();
}

/// Small random system (channel + equivalent channel) for invariant checks.
struct RandomInstance {
  ChannelRealization ch;
  EquivalentChannel eq;
  FrequencyGrid grid;
};

inline RandomInstance random_instance(RngStream& rng, int strips = 3, int ne = 4, int users = 2,
                                      int bins = 4, double noise_power = 0.1) {
  ChannelConfig cfg;
  cfg.microstrips = strips;
  cfg.strip_elements = ne;
  cfg.users = users;
  cfg.subcarriers = bins;
  cfg.taps = std::min(3, bins);
  cfg.noise_power = noise_power;
  RandomInstance inst;
  inst.grid = build_frequency_grid(1.9e9, bins * 20e6, bins);
  inst.ch = generate_channel(cfg, rng);
  inst.eq = equivalent_channel(inst.ch, build_propagation(cfg, inst.grid, 0.006, 1.592));
  return inst;
}

inline DmaWeights random_unconstrained(int strips, int ne, int bins, RngStream& rng) {
  std::vector<CMatrix> rows;
  rows.reserve(bins);
  for (int m = 0; m < bins; ++m) {
    CMatrix r = random_cmatrix(strips, ne, rng);
    for (int i = 0; i < strips; ++i) r.row(i).normalize();
    rows.push_back(std::move(r));
  }
  return make_unconstrained_weights(std::move(rows));
}

}  // namespace detail

/// Runs the library's cross-module invariant checks, printing one line per
/// check. Returns true when all pass. Backs the CLI `verify` subcommand.
inline bool run_selfchecks(std::ostream& out) {
  struct Check {
    std::string name;
    std::function<bool()> fn;
  };
  std::vector<Check> checks;

  checks.push_back({"dft unitarity (M in {1,2,8,16,64})", [] {
    for (int m : {1, 2, 8, 16, 64}) {
      const CMatrix f = dft_matrix(m);
      if ((f * f.adjoint() - CMatrix::Identity(m, m)).norm() > 1e-10) return false;
    }
    return true;
  }});

  checks.push_back({"kron mixed-product identity", [] {
    RngStream rng(11);
    const CMatrix a = detail::random_cmatrix(2, 2, rng), b = detail::random_cmatrix(2, 2, rng);
    const CMatrix c = detail::random_cmatrix(2, 2, rng), d = detail::random_cmatrix(2, 2, rng);
    return (kron(a, b) * kron(c, d) - kron(a * c, b * d)).norm() < 1e-12;
  }});

  checks.push_back({"hermitian_solve residual", [] {
    RngStream rng(12);
    const CMatrix a = detail::random_hpd(8, rng);
    const CMatrix b = detail::random_cmatrix(8, 3, rng);
    const CMatrix x = hermitian_solve(a, b);
    return (a * x - b).norm() / b.norm() <= 1e-10;
  }});

  checks.push_back({"generalized eigenpair residual", [] {
    RngStream rng(13);
    const CMatrix raw = detail::random_cmatrix(5, 3, rng);
    const CMatrix a = raw * raw.adjoint();
    const CMatrix b = detail::random_hpd(5, rng);
    const auto [v, lambda] = max_generalized_eigvec(a, b);
    return (a * v - lambda * (b * v)).norm() <= 1e-8 * (a * v).norm();
  }});

  checks.push_back({"lorentzian phase in upper half plane", [] {
    RngStream rng(14);
    for (int i = 0; i < 200; ++i) {
      const LorentzianParams p{rng.uniform() * 5.0, (0.01 + rng.uniform()) * 1e9,
                               rng.uniform() * 3e10};
      const double w = (0.5 + rng.uniform()) * 1.2e10;
      if (lorentzian_response(p, w).imag() < -1e-15) return false;
    }
    return true;
  }});

  checks.push_back({"weight matrix sparsity pattern", [] {
    RngStream rng(15);
    const DmaWeights w = detail::random_unconstrained(3, 4, 2, rng);
    const CMatrix q = weight_matrix(w, 0);
    for (int i = 0; i < 3; ++i)
      for (int c = 0; c < 12; ++c) {
        const bool in_block = c >= i * 4 && c < (i + 1) * 4;
        if (!in_block && std::abs(q(i, c)) != 0.0) return false;
      }
    return true;
  }});

  checks.push_back({"quantizer granular bound and monotonicity", [] {
    const QuantizerSpec spec{1.0, 4, 2.0};
    RngStream rng(16);
    double prev_x = -2.0, prev_q = quantize_real(prev_x, spec);
    for (int i = 0; i < 20000; ++i) {
      const double x = rng.uniform() * 2.0 - 1.0;
      if (std::abs(quantize_real(x, spec) - x) > spec.support / spec.levels + 1e-12) return false;
      const double xs = -2.0 + i * 2e-4;
      const double qs = quantize_real(xs, spec);
      if (xs >= prev_x && qs < prev_q) return false;
      prev_x = xs;
      prev_q = qs;
    }
    return true;
  }});

  checks.push_back({"Q^H Q equals sum of per-strip rank-one blocks", [] {
    RngStream rng(17);
    const DmaWeights w = detail::random_unconstrained(3, 4, 1, rng);
    const CMatrix q = weight_matrix(w, 0);
    CMatrix sum = CMatrix::Zero(12, 12);
    for (int i = 0; i < 3; ++i) {
      const CVector qc = w.bin_rows[0].row(i).conjugate().transpose();
      sum.block(i * 4, i * 4, 4, 4) = qc * qc.adjoint();
    }
    return ((q.adjoint() * q) - sum).cwiseAbs().maxCoeff() <= 1e-12;
  }});

  checks.push_back({"excess MSE: stacked form equals per-bin form", [] {
    RngStream rng(18);
    auto inst = detail::random_instance(rng);
    const DmaWeights w = detail::random_unconstrained(3, 4, 4, rng);
    const double sq = 0.3;
    const double fast = excess_mse(w, inst.eq, sq);
    // stacked evaluation
    std::vector<CMatrix> qs, gs, us;
    for (int m = 0; m < 4; ++m) {
      qs.push_back(weight_matrix(w, m));
      gs.push_back(inst.eq.gains[m]);
      us.push_back(inst.eq.output_cov[m]);
    }
    const CMatrix qbar = block_diag(qs), gbar = block_diag(gs), sigma = block_diag(us);
    const CMatrix sinv = hermitian_inverse(sigma);
    const CMatrix inner = sinv + qbar.adjoint() * qbar / sq;
    const CMatrix x = hermitian_solve(inner, sinv * gbar);
    const double slow = ((sinv * gbar).adjoint() * x).trace().real();
    return std::abs(fast - slow) <= 1e-9 * std::max(1.0, std::abs(slow));
  }});

  checks.push_back({"greedy per-bin objective non-increasing", [] {
    RngStream rng(19);
    auto inst = detail::random_instance(rng);
    GreedyState state = init_greedy(inst.eq);
    const double kap = quantization_kappa(2.0, 8);
    for (int m = 0; m < inst.eq.bins(); ++m) {
      double prev = std::numeric_limits<double>::infinity();
      GreedyState local = init_greedy(inst.eq);
      for (int i = 0; i < inst.eq.microstrips; ++i) {
        const auto terms = greedy_objective_terms(local, inst.eq, i, m);
        const CMatrix slice = inst.eq.output_cov[m].block(i * 4, i * 4, 4, 4);
        const CVector q = solve_microstrip_weights(terms.xi, terms.psi, slice, kap);
        const double power = (q.transpose() * slice * q.conjugate()).value().real();
        const CVector qc = q.conjugate();
        local.u[m].block(i * 4, i * 4, 4, 4) += (qc * qc.adjoint()) / (kap * power);
        const CMatrix uinv_t = hermitian_solve(local.u[m], local.whitened_gains[m]);
        const double j_now = (local.whitened_gains[m].adjoint() *
                              hermitian_solve(local.u[m], local.whitened_gains[m]))
                                 .trace()
                                 .real();
        (void)uinv_t;
        if (j_now > prev * (1 + 1e-10)) return false;
        prev = j_now;
      }
    }
    (void)state;
    return true;
  }});

  checks.push_back({"flat projection objective non-increasing", [] {
    RngStream rng(20);
    std::vector<CVector> targets;
    for (int m = 0; m < 8; ++m) targets.push_back(detail::random_cmatrix(5, 1, rng));
    std::vector<double> trace;
    project_flat(targets, {0.001, 1.0}, 12, &trace);
    for (std::size_t i = 1; i < trace.size(); ++i)
      if (trace[i] > trace[i - 1] * (1 + 1e-12) + 1e-15) return false;
    return true;
  }});

  checks.push_back({"receive correlation PSD and tap DFT round trip", [] {
    RngStream rng(21);
    ChannelConfig cfg;
    cfg.microstrips = 2;
    cfg.strip_elements = 5;
    cfg.users = 2;
    cfg.subcarriers = 8;
    cfg.taps = 4;
    const ChannelRealization ch = generate_channel(cfg, rng);
    Eigen::SelfAdjointEigenSolver<CMatrix> es(ch.rx_correlation);
    if (es.eigenvalues().minCoeff() < -1e-10) return false;
    // inverse DFT of the per-bin response recovers the (zero-padded) taps
    for (int tau = 0; tau < cfg.subcarriers; ++tau) {
      CMatrix rec = CMatrix::Zero(ch.antennas(), ch.users());
      for (int m = 0; m < cfg.subcarriers; ++m) {
        const double phase = 2.0 * std::numbers::pi * m * tau / cfg.subcarriers;
        rec += Complex(std::cos(phase), std::sin(phase)) * ch.freq[m];
      }
      rec /= cfg.subcarriers;
      const CMatrix expect =
          tau < cfg.taps ? ch.taps[tau] : CMatrix::Zero(ch.antennas(), ch.users());
      if ((rec - expect).cwiseAbs().maxCoeff() > 1e-9) return false;
    }
    return true;
  }});

  bool all_ok = true;
  for (const auto& check : checks) {
    bool ok = false;
    std::string note;
    try {
      ok = check.fn();
    } catch (const std::exception& e) {
      note = std::string(" (") + e.what() + ")";
    }
    out << (ok ? "[ ok ] " : "[fail] ") << check.name << note << '\n';
    all_ok &= ok;
  }
  return all_ok;
}

}  // namespace dmarx
