#pragma once

#include <cctype>
#include <filesystem>
#include <fstream>
#include <istream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "dmarx/experiment.hpp"

namespace dmarx {

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

inline nlohmann::json parse_toml_scalar(const std::string& text) {
  const std::string t = trim(text);
  if (t.empty()) throw std::invalid_argument("toml: empty value");
  if (t.front() == '"') {
    if (t.size() < 2 || t.back() != '"') throw std::invalid_argument("toml: unterminated string");
    return t.substr(1, t.size() - 2);
  }
  if (t == "true") return true;
  if (t == "false") return false;
  if (t.find_first_of(".eE") != std::string::npos &&
      t.find_first_not_of("+-0123456789.eE") == std::string::npos)
    return std::stod(t);
  if (t.find_first_not_of("+-0123456789") == std::string::npos) return std::stoll(t);
  throw std::invalid_argument("toml: cannot parse value: " + t);
}

}  // namespace detail

/// Minimal TOML reader covering the config schema: `key = value` lines,
/// one level of `[table]` headers, scalar values (string, integer, float,
/// boolean) and flat arrays of scalars. Full TOML is out of scope.
inline nlohmann::json parse_toml_subset(std::istream& in) {
  nlohmann::json root = nlohmann::json::object();
  nlohmann::json* table = &root;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string text = detail::trim(detail::strip_comment(line));
    if (text.empty()) continue;
    if (text.front() == '[') {
      if (text.back() != ']')
        throw std::invalid_argument("toml line " + std::to_string(lineno) + ": bad table header");
      const std::string name = detail::trim(text.substr(1, text.size() - 2));
      root[name] = nlohmann::json::object();
      table = &root[name];
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("toml line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(text.substr(0, eq));
    const std::string value = detail::trim(text.substr(eq + 1));
    if (key.empty() || value.empty())
      throw std::invalid_argument("toml line " + std::to_string(lineno) + ": empty key or value");
    if (value.front() == '[') {
      if (value.back() != ']')
        throw std::invalid_argument("toml line " + std::to_string(lineno) +
                                    ": arrays must close on the same line");
      nlohmann::json arr = nlohmann::json::array();
      std::string body = value.substr(1, value.size() - 2);
      std::size_t start = 0;
      while (start < body.size()) {
        auto comma = body.find(',', start);
        if (comma == std::string::npos) comma = body.size();
        const std::string item = detail::trim(body.substr(start, comma - start));
        if (!item.empty()) arr.push_back(detail::parse_toml_scalar(item));
        start = comma + 1;
      }
      (*table)[key] = std::move(arr);
    } else {
      (*table)[key] = detail::parse_toml_scalar(value);
    }
  }
  return root;
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  return {
      {"seed", cfg.seed},
      {"trials", cfg.trials},
      {"receivers", cfg.receivers},
      {"constellation", cfg.constellation == Constellation::Qpsk ? "qpsk" : "gaussian"},
      {"snr_db", cfg.snr_db},
      {"bit_budget", cfg.bit_budget},
      {"eta", cfg.eta},
      {"quality_factors", cfg.quality_set},
      {"flat_min", cfg.flat_set.lo},
      {"flat_max", cfg.flat_set.hi},
      {"gamma_phase_shifter", cfg.gamma_phase_shifter},
      {"fit_iterations", cfg.fit_iterations},
      {"fit_delta_hz", cfg.fit_delta_hz},
      {"interleaved_projection", cfg.interleaved_projection},
      {"carrier_hz", cfg.carrier_hz},
      {"subcarrier_spacing_hz", cfg.subcarrier_spacing_hz},
      {"attenuation", cfg.attenuation},
      {"phase_slope", cfg.phase_slope},
      {"threads", cfg.threads},
      {"channel",
       {{"microstrips", cfg.channel.microstrips},
        {"strip_elements", cfg.channel.strip_elements},
        {"users", cfg.channel.users},
        {"subcarriers", cfg.channel.subcarriers},
        {"taps", cfg.channel.taps},
        {"element_spacing", cfg.channel.element_spacing},
        {"tap_decay", cfg.channel.tap_decay}}},
  };
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("seed", cfg.seed);
  get("trials", cfg.trials);
  get("receivers", cfg.receivers);
  get("snr_db", cfg.snr_db);
  get("bit_budget", cfg.bit_budget);
  get("eta", cfg.eta);
  get("quality_factors", cfg.quality_set);
  get("flat_min", cfg.flat_set.lo);
  get("flat_max", cfg.flat_set.hi);
  get("gamma_phase_shifter", cfg.gamma_phase_shifter);
  get("fit_iterations", cfg.fit_iterations);
  get("fit_delta_hz", cfg.fit_delta_hz);
  get("interleaved_projection", cfg.interleaved_projection);
  get("carrier_hz", cfg.carrier_hz);
  get("subcarrier_spacing_hz", cfg.subcarrier_spacing_hz);
  get("attenuation", cfg.attenuation);
  get("phase_slope", cfg.phase_slope);
  get("threads", cfg.threads);
  if (j.contains("constellation")) {
    const auto name = j.at("constellation").get<std::string>();
    if (name == "qpsk")
      cfg.constellation = Constellation::Qpsk;
    else if (name == "gaussian")
      cfg.constellation = Constellation::Gaussian;
    else
      throw std::invalid_argument("config: unknown constellation " + name);
  }
  if (j.contains("channel")) {
    const auto& c = j.at("channel");
    auto getc = [&](const char* key, auto& field) {
      if (c.contains(key)) field = c.at(key).get<std::decay_t<decltype(field)>>();
    };
    getc("microstrips", cfg.channel.microstrips);
    getc("strip_elements", cfg.channel.strip_elements);
    getc("users", cfg.channel.users);
    getc("subcarriers", cfg.channel.subcarriers);
    getc("taps", cfg.channel.taps);
    getc("element_spacing", cfg.channel.element_spacing);
    getc("tap_decay", cfg.channel.tap_decay);
  }
  return cfg;
}

/// Loads an experiment config from .json or .toml.
inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_experiment_config: cannot open " + path.string());
  nlohmann::json j;
  if (path.extension() == ".toml") {
    j = parse_toml_subset(in);
  } else {
    in >> j;
  }
  return config_from_json(j);
}

}  // namespace dmarx
