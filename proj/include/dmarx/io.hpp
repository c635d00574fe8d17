#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmarx/channel.hpp"
#include "dmarx/dma.hpp"
#include "dmarx/experiment.hpp"
#include "dmarx/receiver.hpp"

namespace dmarx {

enum class OutputFormat { Csv, Json };

inline OutputFormat parse_format(const std::string& name) {
  if (name == "csv") return OutputFormat::Csv;
  if (name == "json") return OutputFormat::Json;
  throw std::invalid_argument("unknown output format: " + name);
}

/// Shortest decimal form that parses back to the identical double.
inline std::string format_double(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw std::invalid_argument("bad numeric field: " + s);
  return v;
}

inline constexpr const char* kResultsCsvHeader =
    "receiver,snr_db,b_overall,mse,ber,overload,e_o,seed";

inline nlohmann::json record_to_json(const ResultRecord& r) {
  return {{"receiver", r.receiver}, {"snr_db", r.snr_db},     {"b_overall", r.b_overall},
          {"mse", r.mse},           {"ber", r.ber},           {"overload", r.overload},
          {"e_o", r.e_o},           {"seed", r.seed}};
}

inline ResultRecord record_from_json(const nlohmann::json& j) {
  ResultRecord r;
  r.receiver = j.at("receiver").get<std::string>();
  r.snr_db = j.at("snr_db").get<double>();
  r.b_overall = j.at("b_overall").get<int>();
  r.mse = j.at("mse").get<double>();
  r.ber = j.at("ber").get<double>();
  r.overload = j.at("overload").get<double>();
  r.e_o = j.at("e_o").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  return r;
}

inline void emit_results(const std::vector<ResultRecord>& records, OutputFormat format,
                         const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("emit_results: cannot open " + path.string());
  if (format == OutputFormat::Csv) {
    out << kResultsCsvHeader << '\n';
    for (const auto& r : records) {
      out << r.receiver << ',' << format_double(r.snr_db) << ',' << r.b_overall << ','
          << format_double(r.mse) << ',' << format_double(r.ber) << ','
          << format_double(r.overload) << ',' << format_double(r.e_o) << ',' << r.seed << '\n';
    }
  } else {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : records) j.push_back(record_to_json(r));
    out << j.dump(2) << '\n';
  }
  if (!out.good()) throw std::runtime_error("emit_results: write failed for " + path.string());
}

inline std::vector<ResultRecord> read_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_results_csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kResultsCsvHeader)
    throw std::runtime_error("read_results_csv: bad header in " + path.string());
  std::vector<ResultRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 8)
      throw std::runtime_error("read_results_csv: bad row in " + path.string());
    ResultRecord r;
    r.receiver = fields[0];
    r.snr_db = parse_double(fields[1]);
    r.b_overall = static_cast<int>(parse_double(fields[2]));
    r.mse = parse_double(fields[3]);
    r.ber = parse_double(fields[4]);
    r.overload = parse_double(fields[5]);
    r.e_o = parse_double(fields[6]);
    r.seed = std::stoull(fields[7]);
    records.push_back(std::move(r));
  }
  return records;
}

inline std::vector<ResultRecord> read_results_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_results_json: cannot open " + path.string());
  nlohmann::json j;
  in >> j;
  std::vector<ResultRecord> records;
  for (const auto& item : j) records.push_back(record_from_json(item));
  return records;
}

// --- complex / matrix JSON helpers -------------------------------------

inline nlohmann::json to_json(const Complex& z) {
  return nlohmann::json::array({z.real(), z.imag()});
}

inline Complex complex_from_json(const nlohmann::json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>()};
}

inline nlohmann::json to_json(const CMatrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(to_json(m(r, c)));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline CMatrix cmatrix_from_json(const nlohmann::json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
  CMatrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = complex_from_json(j.at(r).at(c));
  return m;
}

// --- channel snapshot ----------------------------------------------------

/// Regression fixture for a channel draw: taps, element correlation, noise
/// power and seed. Derived quantities are rebuilt on load.
inline nlohmann::json channel_to_json(const ChannelRealization& ch) {
  nlohmann::json taps = nlohmann::json::array();
  for (const auto& t : ch.taps) taps.push_back(to_json(t));
  return {{"taps", std::move(taps)},
          {"element_correlation", to_json(ch.element_correlation)},
          {"noise_power", ch.noise_power},
          {"seed", ch.seed},
          {"bins", ch.bins()}};
}

inline ChannelRealization channel_from_json(const nlohmann::json& j) {
  ChannelRealization ch;
  for (const auto& t : j.at("taps")) ch.taps.push_back(cmatrix_from_json(t));
  ch.element_correlation = cmatrix_from_json(j.at("element_correlation"));
  ch.noise_power = j.at("noise_power").get<double>();
  ch.seed = j.at("seed").get<std::uint64_t>();
  const int n = static_cast<int>(ch.taps.at(0).rows());
  const int ne = static_cast<int>(ch.element_correlation.rows());
  const int strips = n / ne;
  ch.rx_correlation = kron(CMatrix::Identity(strips, strips), ch.element_correlation);
  ch.rx_sqrt = hermitian_sqrt(ch.rx_correlation);
  ch.noise_cov = ch.noise_power * ch.rx_correlation;
  ch.freq = ChannelSampler::tap_dft(ch.taps, j.at("bins").get<int>());
  return ch;
}

// --- DMA weights ---------------------------------------------------------

inline nlohmann::json weights_to_json(const DmaWeights& w) {
  nlohmann::json j;
  j["microstrips"] = w.microstrips;
  j["strip_elements"] = w.strip_elements;
  j["bins"] = w.bins();
  switch (w.mode) {
    case WeightMode::Unconstrained: {
      j["mode"] = "unconstrained";
      nlohmann::json bins = nlohmann::json::array();
      for (const auto& rows : w.bin_rows) bins.push_back(to_json(rows));
      j["bin_rows"] = std::move(bins);
      break;
    }
    case WeightMode::FrequencyFlat: {
      j["mode"] = "frequency_flat";
      nlohmann::json flat = nlohmann::json::array();
      for (Eigen::Index r = 0; r < w.flat.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < w.flat.cols(); ++c) row.push_back(w.flat(r, c));
        flat.push_back(std::move(row));
      }
      j["flat"] = std::move(flat);
      j["flat_lo"] = w.flat_set.lo;
      j["flat_hi"] = w.flat_set.hi;
      break;
    }
    case WeightMode::Lorentzian: {
      j["mode"] = "lorentzian";
      nlohmann::json grid = nlohmann::json::array();
      for (const auto& strip : w.lorentzian) {
        nlohmann::json row = nlohmann::json::array();
        for (const auto& p : strip)
          row.push_back({{"strength", p.strength},
                         {"damping", p.damping},
                         {"resonance", p.resonance}});
        grid.push_back(std::move(row));
      }
      j["elements"] = std::move(grid);
      j["quality_set"] = w.quality_set;
      break;
    }
  }
  return j;
}

inline DmaWeights weights_from_json(const nlohmann::json& j, const FrequencyGrid& grid) {
  const std::string mode = j.at("mode").get<std::string>();
  if (mode == "unconstrained") {
    std::vector<CMatrix> bins;
    for (const auto& rows : j.at("bin_rows")) bins.push_back(cmatrix_from_json(rows));
    return make_unconstrained_weights(std::move(bins));
  }
  if (mode == "frequency_flat") {
    const auto& flat_json = j.at("flat");
    RMatrix flat(flat_json.size(), flat_json.at(0).size());
    for (Eigen::Index r = 0; r < flat.rows(); ++r)
      for (Eigen::Index c = 0; c < flat.cols(); ++c)
        flat(r, c) = flat_json.at(r).at(c).get<double>();
    return make_flat_weights(
        flat, {j.at("flat_lo").get<double>(), j.at("flat_hi").get<double>()},
        j.at("bins").get<int>());
  }
  if (mode == "lorentzian") {
    std::vector<std::vector<LorentzianParams>> params;
    for (const auto& row : j.at("elements")) {
      std::vector<LorentzianParams> strip;
      for (const auto& p : row)
        strip.push_back({p.at("strength").get<double>(), p.at("damping").get<double>(),
                         p.at("resonance").get<double>()});
      params.push_back(std::move(strip));
    }
    return make_lorentzian_weights(std::move(params), grid,
                                   j.at("quality_set").get<std::vector<double>>());
  }
  throw std::invalid_argument("weights_from_json: unknown mode " + mode);
}

// --- receiver design -----------------------------------------------------

inline constexpr char kBase64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string base64_encode(const unsigned char* data, std::size_t len) {
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  for (std::size_t i = 0; i < len; i += 3) {
    unsigned int chunk = data[i] << 16;
    if (i + 1 < len) chunk |= data[i + 1] << 8;
    if (i + 2 < len) chunk |= data[i + 2];
    out.push_back(kBase64Alphabet[(chunk >> 18) & 0x3f]);
    out.push_back(kBase64Alphabet[(chunk >> 12) & 0x3f]);
    out.push_back(i + 1 < len ? kBase64Alphabet[(chunk >> 6) & 0x3f] : '=');
    out.push_back(i + 2 < len ? kBase64Alphabet[chunk & 0x3f] : '=');
  }
  return out;
}

inline std::vector<unsigned char> base64_decode(const std::string& text) {
  auto value_of = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    if (c == '=') return -1;
    throw std::invalid_argument("base64_decode: bad character");
  };
  std::vector<unsigned char> out;
  unsigned int chunk = 0;
  int have = 0;
  for (char c : text) {
    const int v = value_of(c);
    if (v < 0) break;
    chunk = (chunk << 6) | static_cast<unsigned int>(v);
    if (++have == 4) {
      out.push_back((chunk >> 16) & 0xff);
      out.push_back((chunk >> 8) & 0xff);
      out.push_back(chunk & 0xff);
      have = 0;
      chunk = 0;
    }
  }
  if (have == 3) {
    out.push_back((chunk >> 10) & 0xff);
    out.push_back((chunk >> 2) & 0xff);
  } else if (have == 2) {
    out.push_back((chunk >> 4) & 0xff);
  }
  return out;
}

inline nlohmann::json design_to_json(const ReceiverDesign& d) {
  nlohmann::json j;
  j["mode"] = d.mode;
  j["seed"] = d.seed;
  j["channel_id"] = d.channel_id;
  j["weights"] = weights_to_json(d.weights);
  j["quantizer"] = {
      {"support", d.quantizer.support}, {"levels", d.quantizer.levels}, {"eta", d.quantizer.eta}};
  const int bins = static_cast<int>(d.filter.size());
  const int rows = bins ? static_cast<int>(d.filter[0].rows()) : 0;
  const int cols = bins ? static_cast<int>(d.filter[0].cols()) : 0;
  std::vector<double> blob;
  blob.reserve(static_cast<std::size_t>(bins) * rows * cols * 2);
  for (const auto& a : d.filter)
    for (Eigen::Index c = 0; c < a.cols(); ++c)
      for (Eigen::Index r = 0; r < a.rows(); ++r) {
        blob.push_back(a(r, c).real());
        blob.push_back(a(r, c).imag());
      }
  j["filter"] = {{"bins", bins},
                 {"rows", rows},
                 {"cols", cols},
                 {"data_base64",
                  base64_encode(reinterpret_cast<const unsigned char*>(blob.data()),
                                blob.size() * sizeof(double))}};
  return j;
}

inline ReceiverDesign design_from_json(const nlohmann::json& j, const FrequencyGrid& grid) {
  ReceiverDesign d;
  d.mode = j.at("mode").get<std::string>();
  d.seed = j.at("seed").get<std::uint64_t>();
  d.channel_id = j.at("channel_id").get<std::string>();
  d.weights = weights_from_json(j.at("weights"), grid);
  d.quantizer = {j.at("quantizer").at("support").get<double>(),
                 j.at("quantizer").at("levels").get<int>(),
                 j.at("quantizer").at("eta").get<double>()};
  const auto& f = j.at("filter");
  const int bins = f.at("bins").get<int>();
  const int rows = f.at("rows").get<int>();
  const int cols = f.at("cols").get<int>();
  const auto raw = base64_decode(f.at("data_base64").get<std::string>());
  const std::size_t expected = static_cast<std::size_t>(bins) * rows * cols * 2 * sizeof(double);
  if (raw.size() != expected) throw std::runtime_error("design_from_json: corrupt filter blob");
  const double* p = reinterpret_cast<const double*>(raw.data());
  for (int m = 0; m < bins; ++m) {
    CMatrix a(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
      for (Eigen::Index r = 0; r < rows; ++r) {
        a(r, c) = Complex(p[0], p[1]);
        p += 2;
      }
    d.filter.push_back(std::move(a));
  }
  return d;
}

}  // namespace dmarx
