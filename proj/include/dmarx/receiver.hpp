#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dmarx/channel.hpp"
#include "dmarx/dma.hpp"
#include "dmarx/linalg.hpp"
#include "dmarx/quantizer.hpp"
#include "dmarx/rng.hpp"

namespace dmarx {

/// A fully configured receiver: DMA weights, ADC spec and the per-bin
/// digital filters A_m (users x microstrips). The full filter acting on the
/// time-domain ADC output is V_2^H blkdiag(A_m) V_1^H.
struct ReceiverDesign {
  DmaWeights weights;
  QuantizerSpec quantizer;
  std::vector<CMatrix> filter;
  std::string mode;
  std::uint64_t seed = 0;
  std::string channel_id;
};

/// MSE-minimizing digital filter for fixed weights and quantizer noise
/// energy: per bin, A_m = G_hat_m^H Q_m^H (sigma_q^2 I + Q_m Upsilon_m Q_m^H)^-1.
inline std::vector<CMatrix> optimal_digital_filter(const DmaWeights& w,
                                                   const EquivalentChannel& eq,
                                                   double sigma_q2) {
  if (sigma_q2 < 0) throw std::invalid_argument("optimal_digital_filter: negative noise energy");
  std::vector<CMatrix> filters;
  filters.reserve(eq.bins());
  for (int m = 0; m < eq.bins(); ++m) {
    const CMatrix q = weight_matrix(w, m);
    CMatrix inner = q * eq.output_cov[m] * q.adjoint();
    inner.diagonal().array() += sigma_q2;
    inner = 0.5 * (inner + inner.adjoint()).eval();
    CMatrix a = hermitian_solve(inner, q * eq.gains[m]).adjoint();
    require_finite(a, "optimal_digital_filter");
    filters.push_back(std::move(a));
  }
  return filters;
}

/// Full (M K) x (M N_d) digital filter matrix V_2^H blkdiag(A_m) V_1^H.
/// Test/serialization aid; the per-bin form is what runs.
inline CMatrix assemble_filter_matrix(const std::vector<CMatrix>& bin_filters) {
  const int bins = static_cast<int>(bin_filters.size());
  const int users = static_cast<int>(bin_filters[0].rows());
  const int strips = static_cast<int>(bin_filters[0].cols());
  const CMatrix f = dft_matrix(bins);
  const CMatrix v2h = kron(f.adjoint(), CMatrix::Identity(users, users));
  const CMatrix v1h = kron(f, CMatrix::Identity(strips, strips));
  return v2h * block_diag(bin_filters) * v1h;
}

/// Excess MSE of a weight configuration over the unquantized MMSE:
/// sum_m tr[G_hat^H U^-1 (U^-1 + sigma_q^-2 sum_i E_i q* q^T E_i^T)^-1 U^-H G_hat]
/// with U = Upsilon_m, evaluated bin by bin.
inline double excess_mse(const DmaWeights& w, const EquivalentChannel& eq, double sigma_q2) {
  if (!(sigma_q2 > 0)) throw std::invalid_argument("excess_mse: need sigma_q^2 > 0");
  if (w.bins() != eq.bins()) throw std::invalid_argument("excess_mse: bin mismatch");
  const int ne = w.strip_elements;
  double total = 0.0;
  for (int m = 0; m < eq.bins(); ++m) {
    require_hermitian(eq.output_cov[m], "excess_mse: Upsilon");
    const CMatrix r = hermitian_inverse(eq.output_cov[m]);
    CMatrix inner = r;
    for (int i = 0; i < w.microstrips; ++i) {
      const CVector qc = w.bin_rows[m].row(i).conjugate().transpose();
      inner.block(i * ne, i * ne, ne, ne) += (qc * qc.adjoint()) / sigma_q2;
    }
    inner = 0.5 * (inner + inner.adjoint()).eval();
    const CMatrix rg = r * eq.gains[m];
    const CMatrix x = hermitian_solve(inner, rg);
    total += (rg.adjoint() * x).trace().real();
  }
  return total;
}

/// State of the greedy configuration sweep: U_{m,i} accumulates
/// Upsilon_m^-1 plus the scaled rank-one terms of the strips set so far.
struct GreedyState {
  std::vector<CMatrix> u;               // U_{m,i}, Hermitian PD
  std::vector<CMatrix> whitened_gains;  // Upsilon_m^-1 G_hat_m, cached
  int strip = 0;                        // strips configured so far
};

inline GreedyState init_greedy(const EquivalentChannel& eq) {
  GreedyState state;
  state.u.reserve(eq.bins());
  state.whitened_gains.reserve(eq.bins());
  for (int m = 0; m < eq.bins(); ++m) {
    require_hermitian(eq.output_cov[m], "init_greedy: Upsilon");
    CMatrix inv = hermitian_inverse(eq.output_cov[m]);
    inv = 0.5 * (inv + inv.adjoint()).eval();
    state.whitened_gains.push_back(inv * eq.gains[m]);
    state.u.push_back(std::move(inv));
  }
  return state;
}

struct ObjectiveTerms {
  CMatrix xi;   // E_i^T U^-1 Ups^-1 G G^H Ups^-1 U^-1 E_i, PSD
  CMatrix psi;  // E_i^T U^-1 E_i, PD
};

/// Rank-one-update objective pieces for microstrip `strip` at bin `bin`,
/// given the state after `strip` previously configured strips.
inline ObjectiveTerms greedy_objective_terms(const GreedyState& state,
                                             const EquivalentChannel& eq, int strip, int bin) {
  const int ne = eq.strip_elements;
  const CMatrix& u = state.u[bin];
  Eigen::LLT<CMatrix> llt(u);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("greedy_objective_terms: U is not positive definite");
  const CMatrix uinv_t = llt.solve(state.whitened_gains[bin]);  // U^-1 Ups^-1 G_hat
  CMatrix selector = CMatrix::Zero(u.rows(), ne);
  selector.block(strip * ne, 0, ne, ne).setIdentity();
  const CMatrix uinv_e = llt.solve(selector);  // U^-1 E_i
  ObjectiveTerms terms;
  const CMatrix c = uinv_t.middleRows(strip * ne, ne);
  terms.xi = c * c.adjoint();
  terms.psi = uinv_e.middleRows(strip * ne, ne);
  terms.psi = 0.5 * (terms.psi + terms.psi.adjoint()).eval();
  return terms;
}

/// Microstrip weight maximizing the generalized Rayleigh quotient
/// q^T Xi q* / q^T (kappa Ups_slice + Psi) q*: the conjugate of the top
/// generalized eigenvector. Unit norm, deterministic phase. Degenerate
/// all-zero Xi (dead bin) falls back to the principal eigenvector of
/// Psi^-1; *degenerate is set when provided.
inline CVector solve_microstrip_weights(const CMatrix& xi, const CMatrix& psi,
                                        const CMatrix& cov_slice, double kappa,
                                        bool* degenerate = nullptr) {
  if (!(kappa > 0)) throw std::invalid_argument("solve_microstrip_weights: need kappa > 0");
  if (degenerate) *degenerate = false;
  CMatrix b = kappa * cov_slice + psi;
  b = 0.5 * (b + b.adjoint()).eval();
  if (xi.cwiseAbs().maxCoeff() <= 1e-30) {
    if (degenerate) *degenerate = true;
    Eigen::SelfAdjointEigenSolver<CMatrix> es(psi);
    if (es.info() != Eigen::Success)
      throw std::runtime_error("solve_microstrip_weights: eigensolver failed");
    CVector v = es.eigenvectors().col(0);
    fix_phase(v);
    return v.conjugate();
  }
  return max_generalized_eigvec(xi, b).vector.conjugate();
}

/// Called after each microstrip's unconstrained weights are set, before the
/// state update; may replace that strip's rows (interleaved projection).
using StripHook = std::function<void(int strip, std::vector<CMatrix>& bin_rows)>;

/// Greedy unconstrained DMA configuration: sweeps microstrips, solving the
/// per-bin generalized eigenproblem and pushing the chosen weight into the
/// U recursion with its own support-matched noise scaling.
///
/// Each weight is optimized as if its own microstrip output power dictated
/// the ADC support, so the returned rows are scaled to unit output power
/// (the solution is invariant to per-row scalars). That makes the final
/// globally-chosen support consistent with the per-strip one assumed during
/// the sweep; with raw unit-norm rows the output powers spread by an order
/// of magnitude and the loudest strip starves the others of resolution.
inline DmaWeights greedy_configure(const EquivalentChannel& eq, double kappa,
                                   const StripHook& hook = nullptr,
                                   int* degenerate_bins = nullptr) {
  const int ne = eq.strip_elements;
  GreedyState state = init_greedy(eq);
  std::vector<CMatrix> bin_rows(eq.bins(), CMatrix::Zero(eq.microstrips, ne));
  if (degenerate_bins) *degenerate_bins = 0;
  for (int i = 0; i < eq.microstrips; ++i) {
    for (int m = 0; m < eq.bins(); ++m) {
      const ObjectiveTerms terms = greedy_objective_terms(state, eq, i, m);
      const CMatrix slice = eq.output_cov[m].block(i * ne, i * ne, ne, ne);
      bool degenerate = false;
      CVector q = solve_microstrip_weights(terms.xi, terms.psi, slice, kappa, &degenerate);
      if (degenerate && degenerate_bins) ++*degenerate_bins;
      const double power = (q.transpose() * slice * q.conjugate()).value().real();
      if (power > 0) q /= std::sqrt(power);
      bin_rows[m].row(i) = q.transpose();
    }
    if (hook) hook(i, bin_rows);
    for (int m = 0; m < eq.bins(); ++m) {
      const CVector q = bin_rows[m].row(i).transpose();
      const CMatrix slice = eq.output_cov[m].block(i * ne, i * ne, ne, ne);
      const double power = (q.transpose() * slice * q.conjugate()).value().real();
      const double denom = kappa * power;
      if (denom < 1e-30)
        throw std::runtime_error("greedy_configure: zero microstrip output power");
      const CVector qc = q.conjugate();
      state.u[m].block(i * ne, i * ne, ne, ne) += (qc * qc.adjoint()) / denom;
    }
    state.strip = i + 1;
  }
  for (const auto& rows : bin_rows) require_finite(rows, "greedy_configure");
  return make_unconstrained_weights(std::move(bin_rows));
}

/// Rescales each microstrip's weights (uniformly over its bins) to unit
/// bin-averaged output power. Moves along the per-strip scale invariance;
/// keeps all ADCs equally loaded under the shared support. FrequencyFlat
/// weights are left alone: their feasible set pins the scale.
inline void balance_strip_power(DmaWeights& w, const std::vector<CMatrix>& output_cov) {
  if (w.mode == WeightMode::FrequencyFlat) return;
  const int ne = w.strip_elements;
  for (int i = 0; i < w.microstrips; ++i) {
    double acc = 0.0;
    for (int m = 0; m < w.bins(); ++m) {
      const auto row = w.bin_rows[m].row(i);
      acc += (row * output_cov[m].block(i * ne, i * ne, ne, ne) * row.adjoint()).value().real();
    }
    acc /= w.bins();
    if (!(acc > 0)) continue;
    const double scale = 1.0 / std::sqrt(acc);
    for (int m = 0; m < w.bins(); ++m) w.bin_rows[m].row(i) *= scale;
    if (w.mode == WeightMode::Lorentzian)
      for (auto& p : w.lorentzian[i]) p.strength *= scale;
  }
}

struct RecoveredSymbols {
  CMatrix estimates;  // users x bins, column m = s_hat_m
  CMatrix decisions;  // hard QPSK decisions, same layout
  long overloads = 0;
  long samples = 0;
};

inline CMatrix hard_qpsk(const CMatrix& estimates) {
  const double half = std::numbers::sqrt2 / 2.0;
  CMatrix d(estimates.rows(), estimates.cols());
  for (Eigen::Index i = 0; i < estimates.size(); ++i)
    d(i) = Complex(estimates(i).real() >= 0 ? half : -half,
                   estimates(i).imag() >= 0 ? half : -half);
  return d;
}

/// Runs the receive chain on raw channel output columns y_m: microstrip
/// combining, time-domain uniform quantization, per-bin digital filtering.
inline RecoveredSymbols recover_from_output(const ReceiverDesign& design,
                                            const EquivalentChannel& eq, const CMatrix& y,
                                            bool bypass_quantizer = false) {
  const int bins = eq.bins();
  const CMatrix f = dft_matrix(bins);
  CMatrix z = f.adjoint() * dma_output_bins(design.weights, eq, y);  // rows = time samples
  RecoveredSymbols out;
  out.samples = 2 * z.size();
  if (!bypass_quantizer) {
    design.quantizer.validate();
    const double g = design.quantizer.support;
    for (Eigen::Index idx = 0; idx < z.size(); ++idx) {
      const Complex v = z(idx);
      out.overloads += (std::abs(v.real()) > g) + (std::abs(v.imag()) > g);
      z(idx) = quantize_complex(v, design.quantizer);
    }
  }
  const CMatrix z_freq = f * z;  // back to per-bin rows
  out.estimates.resize(design.filter[0].rows(), bins);
  for (int m = 0; m < bins; ++m)
    out.estimates.col(m) = design.filter[m] * z_freq.row(m).transpose();
  out.decisions = hard_qpsk(out.estimates);
  return out;
}

/// Convenience wrapper drawing the channel noise internally.
inline RecoveredSymbols recover_symbols(const ReceiverDesign& design,
                                        const ChannelRealization& ch,
                                        const EquivalentChannel& eq, const OfdmBlock& block,
                                        RngStream& rng, bool bypass_quantizer = false) {
  return recover_from_output(design, eq, channel_output(ch, block, rng), bypass_quantizer);
}

/// Per-bin LMMSE estimate from the raw (unquantized) antenna outputs:
/// s_hat_m = G_m^H (G_m G_m^H + C_W)^-1 y_m.
inline CMatrix lmmse_estimate(const ChannelRealization& ch, const CMatrix& y) {
  CMatrix shat(ch.users(), ch.bins());
  for (int m = 0; m < ch.bins(); ++m) {
    CMatrix cov = ch.freq[m] * ch.freq[m].adjoint() + ch.noise_cov;
    cov = 0.5 * (cov + cov.adjoint()).eval();
    shat.col(m) = ch.freq[m].adjoint() * hermitian_solve(cov, y.col(m));
  }
  return shat;
}

inline CMatrix baseline_lmmse_unquantized(const ChannelRealization& ch, const OfdmBlock& block,
                                          RngStream& rng) {
  return lmmse_estimate(ch, channel_output(ch, block, rng));
}

/// Analytic per-symbol MMSE of the unquantized LMMSE receiver:
/// (1 / M K) sum_m tr[I - G^H (G G^H + C_W)^-1 G].
inline double unquantized_mmse(const ChannelRealization& ch) {
  double total = 0.0;
  for (int m = 0; m < ch.bins(); ++m) {
    CMatrix cov = ch.freq[m] * ch.freq[m].adjoint() + ch.noise_cov;
    cov = 0.5 * (cov + cov.adjoint()).eval();
    const CMatrix x = hermitian_solve(cov, ch.freq[m]);
    total += ch.users() - (ch.freq[m].adjoint() * x).trace().real();
  }
  return total / (ch.bins() * ch.users());
}

/// Phase-shifter-network baseline: frequency-flat unit-modulus weights per
/// microstrip taken from the phases of the conjugate top eigenvector of the
/// bin-averaged output Gram block, a fixed ADC support, and the matching
/// MSE-optimal digital filter. Pass an identity-propagation equivalent
/// channel; phase shifter networks have no microstrip transfer function.
inline ReceiverDesign baseline_phase_shifter(const EquivalentChannel& eq_identity,
                                             double gamma_fixed, int levels) {
  if (!(gamma_fixed > 0)) throw std::invalid_argument("baseline_phase_shifter: need gamma > 0");
  const int ne = eq_identity.strip_elements;
  const int bins = eq_identity.bins();
  CMatrix avg = CMatrix::Zero(eq_identity.antennas(), eq_identity.antennas());
  for (int m = 0; m < bins; ++m) avg += eq_identity.gains[m] * eq_identity.gains[m].adjoint();
  avg /= static_cast<double>(bins);
  CMatrix rows(eq_identity.microstrips, ne);
  for (int i = 0; i < eq_identity.microstrips; ++i) {
    CMatrix block = avg.block(i * ne, i * ne, ne, ne);
    block = 0.5 * (block + block.adjoint()).eval();
    Eigen::SelfAdjointEigenSolver<CMatrix> es(block);
    if (es.info() != Eigen::Success)
      throw std::runtime_error("baseline_phase_shifter: eigensolver failed");
    CVector top = es.eigenvectors().col(ne - 1);
    fix_phase(top);
    for (int l = 0; l < ne; ++l) {
      const Complex c = std::conj(top(l));
      const double mag = std::abs(c);
      rows(i, l) = (mag > 0) ? c / mag : Complex(1.0, 0.0);
    }
  }
  ReceiverDesign design;
  design.mode = "R4";
  design.weights = make_unconstrained_weights(std::vector<CMatrix>(bins, rows));
  design.quantizer = {gamma_fixed, levels, 0.0};
  design.filter =
      optimal_digital_filter(design.weights, eq_identity, design.quantizer.noise_energy());
  return design;
}

}  // namespace dmarx
