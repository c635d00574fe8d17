#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <iostream>
#include <mutex>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "dmarx/channel.hpp"
#include "dmarx/dma.hpp"
#include "dmarx/fitting.hpp"
#include "dmarx/quantizer.hpp"
#include "dmarx/receiver.hpp"
#include "dmarx/rng.hpp"

namespace dmarx {

/// SNR convention used on all sweep axes, printed with every run.
inline constexpr const char* kSnrDefinition =
    "snr_db = -10*log10(sigma_z^2): unit-energy symbols vs per-element noise power "
    "sigma_z^2 (element correlation has unit diagonal)";

inline double snr_to_noise_power(double snr_db) { return std::pow(10.0, -snr_db / 10.0); }

struct ExperimentConfig {
  ChannelConfig channel;
  double carrier_hz = 1.9e9;              // f_c
  double subcarrier_spacing_hz = 20e6;    // f_s = subcarriers * spacing
  double attenuation = 0.006;             // alpha
  double phase_slope = 1.592;             // beta(omega) = phase_slope * omega
  FlatInterval flat_set;                  // amplitude-only feasible interval
  double eta = 2.0;                       // ADC support multiplier
  std::vector<double> quality_set = {0.1, 5.0, 30.0};
  std::vector<double> snr_db = {-4, -2, 0, 2, 4, 6, 8, 10, 12, 14, 16};
  std::vector<int> bit_budget = {80};     // b_overall values
  int trials = 1000;
  std::uint64_t seed = 1;
  std::vector<std::string> receivers = {"R1", "R2", "R3", "R4", "R5"};
  Constellation constellation = Constellation::Qpsk;
  bool interleaved_projection = false;
  double gamma_phase_shifter = 100.0;
  int fit_iterations = 10;   // outer passes of the Lorentzian projection
  int flat_iterations = 1;   // outer passes of the flat projection
  double fit_delta_hz = 20e6;  // curve-fit start offset, one subcarrier spacing
  int threads = 0;             // 0 = hardware concurrency

  double sample_rate_hz() const { return channel.subcarriers * subcarrier_spacing_hz; }
  double fit_delta_angular() const { return 2.0 * std::numbers::pi * fit_delta_hz; }

  /// Decision regions per real quantizer for a total bit budget:
  /// b = floor(2^(b_overall / (2 N_d))).
  int levels_for_budget(int b_overall) const {
    return static_cast<int>(
        std::floor(std::pow(2.0, b_overall / (2.0 * channel.microstrips))));
  }

  void validate() const {
    channel.validate();
    if (trials < 1) throw std::invalid_argument("ExperimentConfig: trials must be >= 1");
    if (snr_db.empty()) throw std::invalid_argument("ExperimentConfig: empty SNR list");
    if (bit_budget.empty()) throw std::invalid_argument("ExperimentConfig: empty budget list");
    for (int b : bit_budget)
      if (levels_for_budget(b) < 2)
        throw std::invalid_argument("ExperimentConfig: budget too small for 2 decision regions");
    if (!(eta > 0)) throw std::invalid_argument("ExperimentConfig: eta must be > 0");
    for (const auto& r : receivers)
      if (r != "R1" && r != "R2" && r != "R3" && r != "R4" && r != "R5")
        throw std::invalid_argument("ExperimentConfig: unknown receiver " + r);
  }
};

struct ResultRecord {
  std::string receiver;
  double snr_db = 0.0;
  int b_overall = 0;
  double mse = 0.0;
  double ber = 0.0;
  double overload = 0.0;
  double e_o = 0.0;
  double wall_time_s = 0.0;
  std::uint64_t seed = 0;
};

namespace detail {

/// Frequency-flat projection of all strips. The flat approximation averages
/// rows across bins, so each strip is first moved to its phase-coherent
/// gauge (the unconstrained solution is defined up to a per-bin scalar).
inline DmaWeights project_flat_all(const DmaWeights& unconstrained, const FrequencyGrid& grid,
                                   const FlatInterval& set, int iters) {
  RMatrix flat(unconstrained.microstrips, unconstrained.strip_elements);
  std::vector<CVector> targets(unconstrained.bins());
  for (int i = 0; i < unconstrained.microstrips; ++i) {
    for (int m = 0; m < unconstrained.bins(); ++m)
      targets[m] = unconstrained.bin_rows[m].row(i).transpose();
    flat.row(i) = project_flat(smooth_phase_gauge(targets, grid), set, iters).transpose();
  }
  return make_flat_weights(flat, set, unconstrained.bins());
}

}  // namespace detail

/// Builds one of the task-based receivers R1-R3 for a channel realization.
/// `greedy` may carry a precomputed unconstrained configuration (shared
/// between the three in non-interleaved mode).
inline ReceiverDesign design_dma_receiver(const std::string& id, const EquivalentChannel& eq,
                                          const FrequencyGrid& grid,
                                          const ExperimentConfig& cfg, int levels,
                                          const DmaWeights* greedy = nullptr) {
  const double kap = quantization_kappa(cfg.eta, levels);
  DmaWeights weights;
  if (id == "R1") {
    weights = greedy ? *greedy : greedy_configure(eq, kap);
  } else if (id == "R2" && cfg.interleaved_projection) {
    // Each projected strip replaces its unconstrained weights before the
    // remaining strips are configured.
    std::vector<std::vector<LorentzianParams>> params(eq.microstrips);
    greedy_configure(eq, kap, [&](int strip, std::vector<CMatrix>& bin_rows) {
      const int bins = static_cast<int>(bin_rows.size());
      std::vector<CMatrix> one(bins);
      for (int m = 0; m < bins; ++m) one[m] = bin_rows[m].row(strip);
      const DmaWeights projected =
          project_lorentzian(make_unconstrained_weights(std::move(one)), grid,
                             cfg.fit_delta_angular(), cfg.quality_set, cfg.fit_iterations);
      params[strip] = projected.lorentzian[0];
      for (int m = 0; m < bins; ++m) bin_rows[m].row(strip) = projected.bin_rows[m].row(0);
    });
    weights = make_lorentzian_weights(std::move(params), grid, cfg.quality_set);
  } else if (id == "R3" && cfg.interleaved_projection) {
    RMatrix flat(eq.microstrips, eq.strip_elements);
    greedy_configure(eq, kap, [&](int strip, std::vector<CMatrix>& bin_rows) {
      const int bins = static_cast<int>(bin_rows.size());
      std::vector<CVector> targets(bins);
      for (int m = 0; m < bins; ++m) targets[m] = bin_rows[m].row(strip).transpose();
      flat.row(strip) =
          project_flat(smooth_phase_gauge(targets, grid), cfg.flat_set, cfg.flat_iterations)
              .transpose();
      for (int m = 0; m < bins; ++m)
        bin_rows[m].row(strip) = flat.row(strip).cast<Complex>();
    });
    weights = make_flat_weights(flat, cfg.flat_set, eq.bins());
  } else if (id == "R2" || id == "R3") {
    const DmaWeights base = greedy ? *greedy : greedy_configure(eq, kap);
    weights = (id == "R2")
                  ? project_lorentzian(base, grid, cfg.fit_delta_angular(), cfg.quality_set,
                                       cfg.fit_iterations)
                  : detail::project_flat_all(base, grid, cfg.flat_set, cfg.flat_iterations);
  } else {
    throw std::invalid_argument("design_dma_receiver: not a task-based DMA receiver: " + id);
  }
  ReceiverDesign design;
  design.mode = id;
  design.weights = std::move(weights);
  const double gamma = adc_support(design.weights, eq.output_cov, cfg.eta);
  if (!(gamma > 0)) throw std::runtime_error("design_dma_receiver: all-zero weights");
  design.quantizer = {gamma, levels, cfg.eta};
  design.filter = optimal_digital_filter(design.weights, eq, design.quantizer.noise_energy());
  return design;
}

namespace detail {

struct ReceiverAccum {
  double mse_sum = 0.0;
  long bit_errors = 0;
  long bits = 0;
  long overloads = 0;
  long samples = 0;
  double wall_s = 0.0;
};

struct TrialAccum {
  std::vector<ReceiverAccum> per_receiver;
  double e_o = 0.0;
};

inline long count_bit_errors(const CMatrix& decisions, const CMatrix& sent) {
  long errors = 0;
  for (Eigen::Index idx = 0; idx < sent.size(); ++idx) {
    errors += (decisions(idx).real() >= 0) != (sent(idx).real() >= 0);
    errors += (decisions(idx).imag() >= 0) != (sent(idx).imag() >= 0);
  }
  return errors;
}

}  // namespace detail

/// Monte Carlo sweep over (receiver, SNR, bit budget). Per trial the channel,
/// symbols and noise are drawn from streams derived from (seed, trial), so
/// every receiver and every sweep point sees matched realizations and the
/// output is reproducible for a fixed (seed, config) regardless of thread
/// count. Failed trials are resampled up to 3 times, then the run aborts.
inline std::vector<ResultRecord> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const FrequencyGrid grid =
      build_frequency_grid(cfg.carrier_hz, cfg.sample_rate_hz(), cfg.channel.subcarriers);
  const int symbols_per_block = cfg.channel.subcarriers * cfg.channel.users;
  const RngStream root(cfg.seed);

  bool want_greedy = false, want_r4 = false;
  for (const auto& r : cfg.receivers) {
    want_greedy |= (r == "R1" || r == "R2" || r == "R3");
    want_r4 |= (r == "R4");
  }

  std::vector<ResultRecord> records;
  for (int budget : cfg.bit_budget) {
    const int levels = cfg.levels_for_budget(budget);
    for (double snr : cfg.snr_db) {
      ChannelConfig chan = cfg.channel;
      chan.noise_power = snr_to_noise_power(snr);
      const ChannelSampler sampler(chan);
      const MicrostripPropagation prop =
          build_propagation(chan, grid, cfg.attenuation, cfg.phase_slope);
      const MicrostripPropagation prop_id = identity_propagation(chan, grid);

      auto run_trial = [&](int trial) {
        std::exception_ptr last_error;
        for (int attempt = 0; attempt < 4; ++attempt) {
          try {
            RngStream ch_rng = root.derive(trial, attempt * 8 + 0);
            RngStream sym_rng = root.derive(trial, attempt * 8 + 1);
            RngStream noise_rng = root.derive(trial, attempt * 8 + 2);
            const ChannelRealization ch = sampler.draw(ch_rng);
            const EquivalentChannel eq = equivalent_channel(ch, prop);
            const OfdmBlock block = generate_ofdm_block(chan, cfg.constellation, sym_rng);
            const CMatrix y = channel_output(ch, block, noise_rng);

            detail::TrialAccum acc;
            acc.per_receiver.resize(cfg.receivers.size());
            acc.e_o = unquantized_mmse(ch);

            DmaWeights greedy;
            if (want_greedy && !cfg.interleaved_projection)
              greedy = greedy_configure(eq, quantization_kappa(cfg.eta, levels));
            EquivalentChannel eq_id;
            if (want_r4) eq_id = equivalent_channel(ch, prop_id);

            for (std::size_t ri = 0; ri < cfg.receivers.size(); ++ri) {
              const std::string& id = cfg.receivers[ri];
              auto& slot = acc.per_receiver[ri];
              const auto t0 = std::chrono::steady_clock::now();
              CMatrix estimates, decisions;
              if (id == "R5") {
                estimates = lmmse_estimate(ch, y);
                decisions = hard_qpsk(estimates);
              } else if (id == "R4") {
                const ReceiverDesign design =
                    baseline_phase_shifter(eq_id, cfg.gamma_phase_shifter, levels);
                const RecoveredSymbols rec = recover_from_output(design, eq_id, y);
                estimates = rec.estimates;
                decisions = rec.decisions;
                slot.overloads += rec.overloads;
                slot.samples += rec.samples;
              } else {
                const ReceiverDesign design =
                    design_dma_receiver(id, eq, grid, cfg, levels,
                                        cfg.interleaved_projection ? nullptr : &greedy);
                const RecoveredSymbols rec = recover_from_output(design, eq, y);
                estimates = rec.estimates;
                decisions = rec.decisions;
                slot.overloads += rec.overloads;
                slot.samples += rec.samples;
              }
              slot.wall_s +=
                  std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
              slot.mse_sum += (estimates - block.symbols).squaredNorm() / symbols_per_block;
              slot.bit_errors += detail::count_bit_errors(decisions, block.symbols);
              slot.bits += 2L * symbols_per_block;
            }
            return acc;
          } catch (const std::exception& e) {
            last_error = std::current_exception();
            std::cerr << "[dmarx] trial " << trial << " attempt " << attempt
                      << " failed: " << e.what() << " (resampling)\n";
          }
        }
        std::ostringstream msg;
        msg << "run_experiment: trial " << trial << " failed after 3 retries at snr=" << snr
            << " dB, b_overall=" << budget;
        try {
          if (last_error) std::rethrow_exception(last_error);
        } catch (const std::exception& e) {
          msg << ": " << e.what();
        }
        throw std::runtime_error(msg.str());
      };

      std::vector<detail::TrialAccum> slots(cfg.trials);
      std::vector<std::exception_ptr> errors;
      std::mutex error_mutex;
      unsigned workers = cfg.threads > 0 ? static_cast<unsigned>(cfg.threads)
                                         : std::max(1u, std::thread::hardware_concurrency());
      workers = std::min<unsigned>(workers, static_cast<unsigned>(cfg.trials));
      std::atomic<int> next{0};
      auto worker = [&]() {
        while (true) {
          const int t = next.fetch_add(1);
          if (t >= cfg.trials) break;
          try {
            slots[t] = run_trial(t);
          } catch (...) {
            std::scoped_lock lock(error_mutex);
            errors.push_back(std::current_exception());
            return;
          }
        }
      };
      std::vector<std::thread> pool;
      for (unsigned i = 0; i < workers; ++i) pool.emplace_back(worker);
      for (auto& th : pool) th.join();
      if (!errors.empty()) std::rethrow_exception(errors.front());

      for (std::size_t ri = 0; ri < cfg.receivers.size(); ++ri) {
        ResultRecord rec;
        rec.receiver = cfg.receivers[ri];
        rec.snr_db = snr;
        rec.b_overall = budget;
        rec.seed = cfg.seed;
        double e_o = 0.0;
        detail::ReceiverAccum total;
        for (const auto& s : slots) {
          const auto& a = s.per_receiver[ri];
          total.mse_sum += a.mse_sum;
          total.bit_errors += a.bit_errors;
          total.bits += a.bits;
          total.overloads += a.overloads;
          total.samples += a.samples;
          total.wall_s += a.wall_s;
          e_o += s.e_o;
        }
        rec.mse = total.mse_sum / cfg.trials;
        rec.ber = total.bits ? static_cast<double>(total.bit_errors) / total.bits : 0.0;
        rec.overload =
            total.samples ? static_cast<double>(total.overloads) / total.samples : 0.0;
        rec.e_o = e_o / cfg.trials;
        rec.wall_time_s = total.wall_s;
        records.push_back(std::move(rec));
      }
    }
  }
  return records;
}

}  // namespace dmarx
