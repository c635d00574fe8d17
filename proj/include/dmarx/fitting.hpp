#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "dmarx/dma.hpp"
#include "dmarx/linalg.hpp"

namespace dmarx {

/// Scalar minimizing ||fixed - alpha * target||^2 over complex alpha:
/// alpha = fixed^T target^* / ||target||^2.
inline Complex optimal_alpha(const CVector& fixed, const CVector& target) {
  const double norm2 = target.squaredNorm();
  if (!(norm2 > 0)) throw std::invalid_argument("optimal_alpha: zero target vector");
  return (fixed.transpose() * target.conjugate()).value() / norm2;
}

/// Frequency-flat projection of one microstrip's per-bin unconstrained
/// weights onto the real interval set: alternates the entrywise clamped
/// mean update with the optimal per-bin scale factors, starting from
/// alpha = 1. The distance objective is non-increasing across iterations;
/// pass `trace` to record it.
inline RVector project_flat(const std::vector<CVector>& targets, const FlatInterval& set,
                            int iters, std::vector<double>* trace = nullptr) {
  if (iters < 1) throw std::invalid_argument("project_flat: need >= 1 iteration");
  if (targets.empty()) throw std::invalid_argument("project_flat: no bins");
  const int bins = static_cast<int>(targets.size());
  const int ne = static_cast<int>(targets[0].size());
  std::vector<Complex> alpha(bins, Complex(1.0, 0.0));
  RVector q = RVector::Zero(ne);
  if (trace) trace->clear();
  for (int it = 0; it < iters; ++it) {
    for (int l = 0; l < ne; ++l) {
      Complex mean = 0.0;
      for (int m = 0; m < bins; ++m) mean += alpha[m] * targets[m](l);
      mean /= static_cast<double>(bins);
      q(l) = std::clamp(mean.real(), set.lo, set.hi);
    }
    const CVector qc = q.cast<Complex>();
    for (int m = 0; m < bins; ++m)
      if (targets[m].squaredNorm() > 0) alpha[m] = optimal_alpha(qc, targets[m]);
    if (trace) {
      double obj = 0.0;
      for (int m = 0; m < bins; ++m) obj += (qc - alpha[m] * targets[m]).squaredNorm();
      trace->push_back(obj);
    }
  }
  return q;
}

/// Closed-form nonnegative oscillator strength minimizing the Lorentzian
/// least-squares residual for fixed damping and resonance:
/// F = Re(sum_m Omega_m^2 t_m^* / D_m)^+ / sum_m Omega_m^4 / |D_m|^2.
inline double oscillator_strength(double damping, double resonance,
                                  const std::vector<Complex>& targets,
                                  const FrequencyGrid& grid) {
  if (static_cast<int>(targets.size()) != grid.bins())
    throw std::invalid_argument("oscillator_strength: target/grid mismatch");
  double num = 0.0, den = 0.0;
  for (int m = 0; m < grid.bins(); ++m) {
    const double w = grid.angular[m];
    const Complex d(resonance * resonance - w * w, -w * damping);
    const double d2 = std::norm(d);
    if (!(d2 > 0)) throw std::domain_error("oscillator_strength: singular denominator term");
    num += (w * w * std::conj(targets[m]) / d).real();
    den += w * w * w * w / d2;
  }
  if (!(den > 0) || !std::isfinite(den))
    throw std::domain_error("oscillator_strength: degenerate frequency grid");
  return std::max(num, 0.0) / den;
}

enum class FitStart { BelowBand, AboveBand, InBandPeak, Incumbent };

struct FitProblem {
  std::vector<Complex> targets;  // alpha_m (q_hat_m)_l per bin
  const FrequencyGrid* grid = nullptr;
};

struct FitResult {
  LorentzianParams params;
  double residual = 0.0;
  FitStart start = FitStart::BelowBand;
};

namespace detail {

inline double lorentzian_residual(const FitProblem& p, const LorentzianParams& params) {
  double ssr = 0.0;
  for (int m = 0; m < p.grid->bins(); ++m)
    ssr += std::norm(lorentzian_response(params, p.grid->angular[m]) - p.targets[m]);
  return ssr;
}

/// Residual with the oscillator strength refit in closed form.
inline LorentzianParams refit_strength(const FitProblem& p, double damping, double resonance,
                                       double* ssr) {
  LorentzianParams out{oscillator_strength(damping, resonance, p.targets, *p.grid), damping,
                       resonance};
  if (ssr) *ssr = lorentzian_residual(p, out);
  return out;
}

}  // namespace detail

/// Damped Gauss-Newton fit of the Lorentzian parameters to the per-bin
/// targets. With a quality-factor constraint the resonance is the only free
/// parameter (damping = resonance / qf); otherwise resonance and damping
/// move jointly. The strength is refit in closed form at every step, and
/// steps that do not reduce the residual are rejected with increased
/// damping, so the residual never exceeds the one at the start point.
inline FitResult curve_fit_lorentzian(const FitProblem& problem, const LorentzianParams& start,
                                      std::optional<double> quality_factor = std::nullopt) {
  if (!problem.grid) throw std::invalid_argument("curve_fit_lorentzian: missing grid");
  if (static_cast<int>(problem.targets.size()) != problem.grid->bins())
    throw std::invalid_argument("curve_fit_lorentzian: target/grid mismatch");
  const int bins = problem.grid->bins();
  const bool constrained = quality_factor.has_value();
  const double qf = constrained ? *quality_factor : 0.0;

  double resonance = start.resonance;
  double damping = constrained ? resonance / qf : start.damping;
  double ssr = 0.0;
  LorentzianParams params = detail::refit_strength(problem, damping, resonance, &ssr);
  if (!std::isfinite(ssr)) throw std::runtime_error("curve_fit_lorentzian: non-finite residual");

  double lm_lambda = 1e-3;
  const int max_iters = 200;
  for (int it = 0; it < max_iters; ++it) {
    // Normal equations with the strength frozen at its current optimum.
    double jtj[3] = {0.0, 0.0, 0.0};  // [d_res^2, d_res*d_damp, d_damp^2]
    double jtr[2] = {0.0, 0.0};
    for (int m = 0; m < bins; ++m) {
      const double w = problem.grid->angular[m];
      const Complex den(params.resonance * params.resonance - w * w, -w * params.damping);
      const Complex model = params.strength * w * w / den;
      const Complex resid = model - problem.targets[m];
      // d model / d resonance (with damping tied to resonance when constrained)
      Complex dden_dres(2.0 * params.resonance, constrained ? -w / qf : 0.0);
      const Complex dres = -model / den * dden_dres;
      jtj[0] += std::norm(dres);
      jtr[0] += (std::conj(dres) * resid).real();
      if (!constrained) {
        const Complex ddmp = -model / den * Complex(0.0, -w);
        jtj[1] += (std::conj(dres) * ddmp).real();
        jtj[2] += std::norm(ddmp);
        jtr[1] += (std::conj(ddmp) * resid).real();
      }
    }
    bool accepted = false;
    for (int attempt = 0; attempt < 12 && !accepted; ++attempt) {
      double step_res = 0.0, step_damp = 0.0;
      if (constrained) {
        const double denom = jtj[0] * (1.0 + lm_lambda);
        if (!(denom > 0)) break;
        step_res = -jtr[0] / denom;
      } else {
        const double a = jtj[0] * (1.0 + lm_lambda);
        const double c = jtj[2] * (1.0 + lm_lambda);
        const double det = a * c - jtj[1] * jtj[1];
        if (!(std::abs(det) > 0)) break;
        step_res = (-jtr[0] * c + jtr[1] * jtj[1]) / det;
        step_damp = (-jtr[1] * a + jtr[0] * jtj[1]) / det;
      }
      const double try_res = std::max(params.resonance + step_res, 0.0);
      const double try_damp =
          constrained ? try_res / qf : std::max(params.damping + step_damp, 0.0);
      double try_ssr = std::numeric_limits<double>::infinity();
      LorentzianParams try_params;
      bool evaluable = true;
      try {
        try_params = detail::refit_strength(problem, try_damp, try_res, &try_ssr);
      } catch (const std::domain_error&) {
        evaluable = false;
      }
      if (evaluable && std::isfinite(try_ssr) && try_ssr <= ssr) {
        const double drop = ssr - try_ssr;
        params = try_params;
        ssr = try_ssr;
        lm_lambda = std::max(lm_lambda / 3.0, 1e-12);
        accepted = true;
        if (drop <= 1e-8 * std::max(ssr, 1e-300)) it = max_iters;  // converged
      } else {
        lm_lambda *= 4.0;
      }
    }
    if (!accepted) break;  // damping exhausted, stationary point
  }
  FitResult result;
  result.params = params;
  result.residual = detail::lorentzian_residual(problem, params);
  if (!std::isfinite(result.residual))
    throw std::runtime_error("curve_fit_lorentzian: non-finite residual");
  return result;
}

namespace detail {

struct StripFit {
  std::vector<LorentzianParams> params;
  std::vector<double> trace;
  double objective = std::numeric_limits<double>::infinity();
};

/// One run of the per-strip alternation: three-start (x quality set) curve
/// fits per element, then the closed-form per-bin scale refresh; the
/// incumbent parameters stay in the candidate set from the second pass on,
/// so the recorded objective never increases.
inline StripFit fit_strip(const std::vector<CVector>& rows, const FrequencyGrid& grid,
                          double delta, const std::vector<double>& quality_set, int iters) {
  const int bins = grid.bins();
  const int ne = static_cast<int>(rows[0].size());
  const double band_lo = 2.0 * std::numbers::pi * (grid.carrier_hz - grid.sample_rate_hz / 2);
  const double band_hi = 2.0 * std::numbers::pi * (grid.carrier_hz + grid.sample_rate_hz / 2);

  StripFit out;
  out.params.resize(ne);
  std::vector<Complex> alpha(bins, Complex(1.0, 0.0));
  std::vector<bool> have_incumbent(ne, false);
  FitProblem problem;
  problem.grid = &grid;
  problem.targets.resize(bins);

  for (int it = 0; it < iters; ++it) {
    for (int l = 0; l < ne; ++l) {
      int peak = 0;
      double peak_mag = -1.0;
      for (int m = 0; m < bins; ++m) {
        problem.targets[m] = alpha[m] * rows[m](l);
        const double mag = std::abs(problem.targets[m]);
        if (mag > peak_mag) {
          peak_mag = mag;
          peak = m;
        }
      }
      struct Candidate {
        double resonance;
        FitStart start;
      };
      const Candidate starts[3] = {{band_lo - delta, FitStart::BelowBand},
                                   {band_hi + delta, FitStart::AboveBand},
                                   {grid.angular[peak], FitStart::InBandPeak}};
      FitResult best;
      best.residual = std::numeric_limits<double>::infinity();
      auto consider = [&](const FitResult& r) {
        if (r.residual < best.residual) best = r;
      };
      if (have_incumbent[l]) {
        try {
          consider({out.params[l], lorentzian_residual(problem, out.params[l]),
                    FitStart::Incumbent});
        } catch (const std::exception&) {
        }
      }
      if (quality_set.empty()) {
        for (const auto& s : starts) {
          LorentzianParams p0{1.0, s.resonance / 10.0, s.resonance};
          FitResult r = curve_fit_lorentzian(problem, p0);
          r.start = s.start;
          consider(r);
        }
        if (have_incumbent[l]) {
          try {
            FitResult r = curve_fit_lorentzian(problem, out.params[l]);
            r.start = FitStart::Incumbent;
            consider(r);
          } catch (const std::exception&) {
          }
        }
      } else {
        for (double qf : quality_set) {
          for (const auto& s : starts) {
            LorentzianParams p0{1.0, s.resonance / qf, s.resonance};
            FitResult r = curve_fit_lorentzian(problem, p0, qf);
            r.start = s.start;
            consider(r);
          }
        }
        if (have_incumbent[l] && out.params[l].damping > 0) {
          try {
            const double qf = out.params[l].resonance / out.params[l].damping;
            FitResult r = curve_fit_lorentzian(problem, out.params[l], qf);
            r.start = FitStart::Incumbent;
            consider(r);
          } catch (const std::exception&) {
          }
        }
      }
      out.params[l] = best.params;
      have_incumbent[l] = true;
    }
    // Scale refresh (closed-form per-bin factors) against the fitted responses.
    CMatrix responses(bins, ne);
    for (int m = 0; m < bins; ++m)
      for (int l = 0; l < ne; ++l)
        responses(m, l) = lorentzian_response(out.params[l], grid.angular[m]);
    for (int m = 0; m < bins; ++m) {
      if (rows[m].squaredNorm() > 0)
        alpha[m] = optimal_alpha(responses.row(m).transpose(), rows[m]);
    }
    double obj = 0.0;
    for (int m = 0; m < bins; ++m)
      obj += (responses.row(m).transpose() - alpha[m] * rows[m]).squaredNorm();
    out.trace.push_back(obj);
  }
  out.objective = out.trace.back();
  return out;
}

}  // namespace detail

/// Rotates each bin's row onto its lower-frequency neighbor, returning the
/// phase-coherent gauge of a microstrip's per-bin weights. Unconstrained
/// weights are defined up to a per-bin complex scalar; eigensolver output
/// carries an arbitrary phase per bin, which makes cross-bin averages
/// meaningless until a coherent representative is chosen.
inline std::vector<CVector> smooth_phase_gauge(std::vector<CVector> rows,
                                               const FrequencyGrid& grid) {
  std::vector<int> order(grid.bins());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return grid.angular[a] < grid.angular[b]; });
  for (std::size_t k = 1; k < order.size(); ++k) {
    const CVector& prev = rows[order[k - 1]];
    CVector& cur = rows[order[k]];
    const Complex ip = (prev.transpose() * cur.conjugate()).value();
    if (std::abs(ip) > 0) cur *= ip / std::abs(ip);
  }
  return rows;
}

/// Lorentzian projection of unconstrained per-bin weights: per element,
/// curve fits from the three spectral-profile start points (below band,
/// above band, at the in-band peak bin) for each allowed quality factor,
/// keeps the best, then refreshes the per-bin scale factors; repeated
/// `iters` times per microstrip. `traces`, when given, records the
/// per-strip objective after every pass.
///
/// The alternation's objective is degenerate in scale (shrinking the scale
/// factors and the strengths together always reduces it), so the fitted
/// strip is rescaled afterwards to restore the input's aggregate row norm.
/// That scale moves along the invariance direction of the greedy objective
/// and keeps the ADCs comparably loaded across microstrips.
inline DmaWeights project_lorentzian(const DmaWeights& unconstrained, const FrequencyGrid& grid,
                                     double delta, const std::vector<double>& quality_set,
                                     int iters,
                                     std::vector<std::vector<double>>* traces = nullptr) {
  if (!(delta > 0)) throw std::invalid_argument("project_lorentzian: need delta > 0");
  if (iters < 1) throw std::invalid_argument("project_lorentzian: need >= 1 iteration");
  if (unconstrained.bins() != grid.bins())
    throw std::invalid_argument("project_lorentzian: grid/bin mismatch");
  const int bins = grid.bins();
  const int strips = unconstrained.microstrips;
  const int ne = unconstrained.strip_elements;

  std::vector<std::vector<LorentzianParams>> fitted(strips);
  if (traces) traces->assign(strips, {});

  for (int i = 0; i < strips; ++i) {
    std::vector<CVector> rows(bins);
    for (int m = 0; m < bins; ++m) rows[m] = unconstrained.bin_rows[m].row(i).transpose();
    detail::StripFit fit = detail::fit_strip(rows, grid, delta, quality_set, iters);

    // restore the strip's output scale (the alternation contracts it)
    double norm2 = 0.0, input2 = 0.0;
    for (int m = 0; m < bins; ++m) {
      input2 += rows[m].squaredNorm();
      for (int l = 0; l < ne; ++l)
        norm2 += std::norm(lorentzian_response(fit.params[l], grid.angular[m]));
    }
    if (norm2 > 0 && input2 > 0) {
      const double s = std::sqrt(input2 / norm2);
      for (int l = 0; l < ne; ++l) fit.params[l].strength *= s;
    }
    fitted[i] = std::move(fit.params);
    if (traces) (*traces)[i] = std::move(fit.trace);
  }
  return make_lorentzian_weights(std::move(fitted), grid, quality_set);
}

}  // namespace dmarx
