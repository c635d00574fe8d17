// Command-line simulator for DMA-based bit-constrained MIMO-OFDM receivers.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dmarx/config.hpp"
#include "dmarx/experiment.hpp"
#include "dmarx/io.hpp"
#include "dmarx/selfcheck.hpp"

namespace {

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

struct CommonOpts {
  std::string config_path;
  std::string out_path = "results.csv";
  std::string format = "csv";
  std::string receivers;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int trials = 0;
  int threads = 0;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "Experiment config (.json or .toml)");
  cmd->add_option("--seed", opts.seed, "Base RNG seed")->each([&](const std::string&) {
    opts.seed_set = true;
  });
  cmd->add_option("--trials", opts.trials, "Monte Carlo trials per sweep point");
  cmd->add_option("--out", opts.out_path, "Output file path");
  cmd->add_option("--format", opts.format, "Output format: csv or json")
      ->check(CLI::IsMember({"csv", "json"}));
  cmd->add_option("--receivers", opts.receivers, "Comma-separated subset of R1..R5");
  cmd->add_option("--threads", opts.threads, "Worker threads (0 = hardware)");
}

dmarx::ExperimentConfig resolve_config(const CommonOpts& opts) {
  dmarx::ExperimentConfig cfg;
  if (!opts.config_path.empty()) cfg = dmarx::load_experiment_config(opts.config_path);
  if (opts.seed_set) cfg.seed = opts.seed;
  if (opts.trials > 0) cfg.trials = opts.trials;
  if (opts.threads > 0) cfg.threads = opts.threads;
  if (!opts.receivers.empty()) cfg.receivers = split_list(opts.receivers);
  return cfg;
}

void print_run_header(const dmarx::ExperimentConfig& cfg) {
  std::cout << "# " << dmarx::kSnrDefinition << "\n"
            << "# seed=" << cfg.seed << " trials=" << cfg.trials
            << " receivers=";
  for (std::size_t i = 0; i < cfg.receivers.size(); ++i)
    std::cout << (i ? "," : "") << cfg.receivers[i];
  std::cout << "\n";
}

int run_and_emit(const dmarx::ExperimentConfig& cfg, const CommonOpts& opts) {
  print_run_header(cfg);
  const auto records = dmarx::run_experiment(cfg);
  dmarx::emit_results(records, dmarx::parse_format(opts.format), opts.out_path);
  std::cout << records.size() << " records -> " << opts.out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DMA receiver design and MIMO-OFDM Monte Carlo simulator"};
  app.require_subcommand(1);

  CommonOpts sweep_snr_opts;
  double sweep_snr_bits = 0;
  auto* sweep_snr = app.add_subcommand("sweep-snr", "MSE/BER vs SNR at a fixed bit budget");
  add_common(sweep_snr, sweep_snr_opts);
  sweep_snr->add_option("--bits", sweep_snr_bits, "Overall bit budget (overrides config)");

  CommonOpts sweep_bits_opts;
  double sweep_bits_snr = std::numeric_limits<double>::quiet_NaN();
  auto* sweep_bits = app.add_subcommand("sweep-bits", "MSE/BER vs bit budget at a fixed SNR");
  add_common(sweep_bits, sweep_bits_opts);
  sweep_bits->add_option("--snr", sweep_bits_snr, "SNR in dB (overrides config list)");

  CommonOpts dump_opts;
  std::string dump_receiver = "R2";
  double dump_snr = 8.0;
  int dump_bits = 80;
  auto* dump = app.add_subcommand("design-dump", "Design one receiver and serialize it to JSON");
  add_common(dump, dump_opts);
  dump->add_option("--receiver", dump_receiver, "One of R1, R2, R3, R4");
  dump->add_option("--snr", dump_snr, "SNR in dB");
  dump->add_option("--bits", dump_bits, "Overall bit budget");

  auto* verify = app.add_subcommand("verify", "Run the library invariant checks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sweep_snr->parsed()) {
      auto cfg = resolve_config(sweep_snr_opts);
      if (sweep_snr_bits > 0) cfg.bit_budget = {static_cast<int>(sweep_snr_bits)};
      if (cfg.bit_budget.size() > 1) cfg.bit_budget = {cfg.bit_budget.front()};
      return run_and_emit(cfg, sweep_snr_opts);
    }
    if (sweep_bits->parsed()) {
      auto cfg = resolve_config(sweep_bits_opts);
      if (!std::isnan(sweep_bits_snr))
        cfg.snr_db = {sweep_bits_snr};
      else if (cfg.snr_db.size() > 1)
        cfg.snr_db = {8.0};
      return run_and_emit(cfg, sweep_bits_opts);
    }
    if (dump->parsed()) {
      auto cfg = resolve_config(dump_opts);
      cfg.validate();
      print_run_header(cfg);
      const auto grid = dmarx::build_frequency_grid(cfg.carrier_hz, cfg.sample_rate_hz(),
                                                    cfg.channel.subcarriers);
      dmarx::ChannelConfig chan = cfg.channel;
      chan.noise_power = dmarx::snr_to_noise_power(dump_snr);
      dmarx::RngStream rng(cfg.seed);
      dmarx::RngStream ch_rng = rng.derive(0, 0);
      const auto ch = dmarx::generate_channel(chan, ch_rng);
      const int levels = cfg.levels_for_budget(dump_bits);
      dmarx::ReceiverDesign design;
      if (dump_receiver == "R4") {
        const auto eq_id =
            dmarx::equivalent_channel(ch, dmarx::identity_propagation(chan, grid));
        design = dmarx::baseline_phase_shifter(eq_id, cfg.gamma_phase_shifter, levels);
      } else {
        const auto prop =
            dmarx::build_propagation(chan, grid, cfg.attenuation, cfg.phase_slope);
        const auto eq = dmarx::equivalent_channel(ch, prop);
        design = dmarx::design_dma_receiver(dump_receiver, eq, grid, cfg, levels);
      }
      design.seed = cfg.seed;
      std::ostringstream id;
      id << "snr" << dump_snr << "_bits" << dump_bits << "_seed" << cfg.seed;
      design.channel_id = id.str();
      std::ofstream out(dump_opts.out_path);
      if (!out) throw std::runtime_error("cannot open " + dump_opts.out_path);
      out << dmarx::design_to_json(design).dump(2) << "\n";
      std::cout << dump_receiver << " design (gamma=" << design.quantizer.support
                << ", b=" << design.quantizer.levels << ") -> " << dump_opts.out_path << "\n";
      return 0;
    }
    if (verify->parsed()) {
      const bool ok = dmarx::run_selfchecks(std::cout);
      std::cout << (ok ? "all checks passed\n" : "CHECKS FAILED\n");
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
