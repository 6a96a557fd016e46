#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bci/common.hpp"

namespace bci {

// Stimulus protocol timing: each bulb flashes for 100 ms, the next one
// lights 150 ms later (SOA 250 ms); a new round starts 1000 ms after the
// last flash of the previous round ends.
inline constexpr double kFlashSec = 0.100;
inline constexpr double kGapSec = 0.150;
inline constexpr double kSoaSec = kFlashSec + kGapSec;
inline constexpr double kInterRoundSec = 1.000;
inline constexpr double kRoundPeriodSec = 4.0 * kSoaSec + kInterRoundSec;
inline constexpr int kNumBulbs = 4;

// Multichannel recording: channel rows in microvolts, a per-sample trigger
// code (0 = none, 1..4 = bulb lighting at that sample) and timestamps in
// seconds. Mirrors the device's channels+trigger+runtime column layout.
struct RawRecording {
  double sample_rate = 0.0;
  Eigen::MatrixXd channels;    // n_channels x n_samples, microvolts
  Eigen::VectorXi trigger;     // n_samples
  Eigen::VectorXd timestamps;  // n_samples, seconds, strictly increasing

  Eigen::Index n_channels() const { return channels.rows(); }
  Eigen::Index n_samples() const { return channels.cols(); }

  void validate() const {
    if (sample_rate <= 0.0) throw DataFormatError("sample_rate must be positive");
    const Eigen::Index n = n_samples();
    if (trigger.size() != n || timestamps.size() != n)
      throw DataFormatError("channels, trigger and timestamps disagree on sample count");
    for (Eigen::Index i = 0; i < n; ++i) {
      if (trigger[i] < 0 || trigger[i] > kNumBulbs)
        throw DataFormatError("unknown trigger code " + std::to_string(trigger[i]) +
                              " at sample " + std::to_string(i));
    }
    const double dt_nominal = 1.0 / sample_rate;
    for (Eigen::Index i = 0; i + 1 < n; ++i) {
      const double dt = timestamps[i + 1] - timestamps[i];
      if (dt <= 0.0)
        throw DataFormatError("timestamps not strictly increasing at sample " + std::to_string(i + 1));
      if (std::abs(dt - dt_nominal) > 0.01 * dt_nominal)
        throw DataFormatError("timestamp spacing deviates >1% from 1/sample_rate at sample " +
                              std::to_string(i + 1));
    }
  }
};

struct StimulusEvent {
  Eigen::Index onset_sample = 0;
  int bulb = 0;         // 1..4
  int round_index = 0;  // increments once per completed round
};

enum class NoiseColor { White, Pink };

// Parametric stand-in for a human subject: every flash of the intended bulb
// elicits a Gaussian P300 deflection on the responsive channels.
struct SyntheticSubjectConfig {
  double p300_amplitude = 5.0;   // microvolts
  double p300_latency_ms = 300;  // center of the deflection after onset
  double p300_width_ms = 80;     // FWHM of the deflection
  double noise_std = 2.0;        // microvolts
  NoiseColor noise_color = NoiseColor::Pink;
  std::vector<int> responsive_channels = {0, 1, 2, 3, 4, 5};
  std::uint64_t rng_seed = 1;
  std::vector<int> intended_bulbs;  // one per decision, values 1..4
  int rounds_per_decision = 5;
  int n_channels = 8;

  void validate() const {
    if (intended_bulbs.empty()) throw ConfigError("intended_bulbs must be non-empty");
    for (int b : intended_bulbs)
      if (b < 1 || b > kNumBulbs) throw ConfigError("intended bulb out of range 1..4");
    if (rounds_per_decision < 1) throw ConfigError("rounds_per_decision must be >= 1");
    if (p300_latency_ms < 250.0 || p300_latency_ms > 500.0)
      throw ConfigError("p300_latency_ms outside the 250..500 ms range");
    if (p300_width_ms <= 0.0) throw ConfigError("p300_width_ms must be positive");
    if (noise_std < 0.0) throw ConfigError("noise_std must be >= 0");
    if (n_channels < 1) throw ConfigError("n_channels must be >= 1");
    for (int c : responsive_channels)
      if (c < 0 || c >= n_channels) throw ConfigError("responsive channel index out of range");
  }
};

struct SynthSession {
  RawRecording recording;
  std::vector<int> intended_bulbs;    // ground truth, one per decision
  std::vector<StimulusEvent> events;  // generator's own event log
};

namespace detail {

// Unit-variance colored noise, seeded. Pink = white spectrally shaped by
// 1/sqrt(f) via forward/inverse DFT.
inline Eigen::VectorXd colored_noise(Eigen::Index n, NoiseColor color, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd w(n);
  for (Eigen::Index i = 0; i < n; ++i) w[i] = gauss(rng);
  if (color == NoiseColor::White || n < 4) return w;

  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spec;
  std::vector<double> in(w.data(), w.data() + n);
  fft.fwd(spec, in);
  spec[0] = 0.0;  // no DC component
  for (std::size_t k = 1; k < spec.size(); ++k) {
    const std::size_t f = std::min(k, static_cast<std::size_t>(n) - k);
    spec[k] /= std::sqrt(static_cast<double>(f));
  }
  std::vector<double> out;
  fft.inv(out, spec);
  Eigen::VectorXd p = Eigen::Map<Eigen::VectorXd>(out.data(), n);
  const double sd = std::sqrt(p.squaredNorm() / static_cast<double>(n));
  if (sd > 0.0) p /= sd;
  return p;
}

}  // namespace detail

// Generates a full flashing-protocol session with ground-truth intent.
// Deterministic given the config seed.
inline SynthSession synth_session(const SyntheticSubjectConfig& cfg, double sample_rate) {
  cfg.validate();
  if (sample_rate < 60.0)
    throw ConfigError("sample_rate below 60 Hz cannot represent the 15 Hz band of interest");

  const int n_decisions = static_cast<int>(cfg.intended_bulbs.size());
  const int n_rounds = n_decisions * cfg.rounds_per_decision;
  const double lead_in = 0.5;
  const double tail = 1.0;
  const double total_sec = lead_in + n_rounds * kRoundPeriodSec + tail;
  const Eigen::Index n = static_cast<Eigen::Index>(std::llround(total_sec * sample_rate));

  std::mt19937_64 rng(cfg.rng_seed);

  SynthSession out;
  out.intended_bulbs = cfg.intended_bulbs;
  RawRecording& rec = out.recording;
  rec.sample_rate = sample_rate;
  rec.channels.resize(cfg.n_channels, n);
  for (int ch = 0; ch < cfg.n_channels; ++ch)
    rec.channels.row(ch) = cfg.noise_std * detail::colored_noise(n, cfg.noise_color, rng).transpose();
  rec.trigger = Eigen::VectorXi::Zero(n);
  rec.timestamps = Eigen::VectorXd::LinSpaced(n, 0.0, static_cast<double>(n - 1) / sample_rate);

  const double latency = cfg.p300_latency_ms / 1000.0;
  const double sigma = cfg.p300_width_ms / 1000.0 / 2.355;  // FWHM -> std

  std::array<int, kNumBulbs> order{};
  for (int r = 0; r < n_rounds; ++r) {
    for (int i = 0; i < kNumBulbs; ++i) order[static_cast<std::size_t>(i)] = i + 1;
    std::shuffle(order.begin(), order.end(), rng);
    const int intended = cfg.intended_bulbs[static_cast<std::size_t>(r / cfg.rounds_per_decision)];
    const double round_start = lead_in + r * kRoundPeriodSec;
    for (int j = 0; j < kNumBulbs; ++j) {
      const double onset_t = round_start + j * kSoaSec;
      const Eigen::Index onset = static_cast<Eigen::Index>(std::llround(onset_t * sample_rate));
      const int bulb = order[static_cast<std::size_t>(j)];
      rec.trigger[onset] = bulb;
      out.events.push_back({onset, bulb, r});
      if (bulb != intended) continue;
      // P300 bump on responsive channels, truncated at +-4 sigma.
      const double center = onset_t + latency;
      const Eigen::Index lo = static_cast<Eigen::Index>(std::floor((center - 4 * sigma) * sample_rate));
      const Eigen::Index hi = static_cast<Eigen::Index>(std::ceil((center + 4 * sigma) * sample_rate));
      for (Eigen::Index s = std::max<Eigen::Index>(lo, 0); s <= std::min(hi, n - 1); ++s) {
        const double t = static_cast<double>(s) / sample_rate - center;
        const double bump = cfg.p300_amplitude * std::exp(-0.5 * t * t / (sigma * sigma));
        for (int ch : cfg.responsive_channels) rec.channels(ch, s) += bump;
      }
    }
  }
  return out;
}

// CSV layout: header "ch1,...,chN,trigger,t", one row per sample.
// Doubles are written with 17 significant digits so save/load round-trips
// bit-exactly.
inline void save_recording(const RawRecording& rec, const std::string& path) {
  rec.validate();
  std::ofstream f(path);
  if (!f) throw DataFormatError("cannot open for writing: " + path);
  for (Eigen::Index ch = 0; ch < rec.n_channels(); ++ch) f << "ch" << (ch + 1) << ",";
  f << "trigger,t\n";
  char buf[32];
  for (Eigen::Index i = 0; i < rec.n_samples(); ++i) {
    for (Eigen::Index ch = 0; ch < rec.n_channels(); ++ch) {
      std::snprintf(buf, sizeof buf, "%.17g", rec.channels(ch, i));
      f << buf << ',';
    }
    std::snprintf(buf, sizeof buf, "%.17g", rec.timestamps[i]);
    f << rec.trigger[i] << ',' << buf << '\n';
  }
  if (!f) throw DataFormatError("write failed: " + path);
}

inline RawRecording load_recording(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataFormatError("cannot open: " + path);
  std::string line;
  if (!std::getline(f, line)) throw DataFormatError("empty file: " + path);

  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!s.empty() && s.back() == ',') out.emplace_back();
    return out;
  };

  const auto header = split(line);
  if (header.size() < 3 || header[header.size() - 2] != "trigger" || header.back() != "t")
    throw DataFormatError("bad header, expected ch1,...,chN,trigger,t: " + path);
  const std::size_t n_ch = header.size() - 2;

  std::vector<std::vector<double>> cols(n_ch);
  std::vector<int> trig;
  std::vector<double> ts;
  std::size_t row = 0;
  while (std::getline(f, line)) {
    ++row;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != n_ch + 2)
      throw DataFormatError("row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                            " columns, expected " + std::to_string(n_ch + 2));
    try {
      for (std::size_t c = 0; c < n_ch; ++c) cols[c].push_back(std::stod(cells[c]));
      trig.push_back(std::stoi(cells[n_ch]));
      ts.push_back(std::stod(cells[n_ch + 1]));
    } catch (const std::exception&) {
      throw DataFormatError("row " + std::to_string(row) + " is not numeric");
    }
  }
  const Eigen::Index n = static_cast<Eigen::Index>(ts.size());
  if (n < 2) throw DataFormatError("need at least 2 samples: " + path);

  RawRecording rec;
  rec.channels.resize(static_cast<Eigen::Index>(n_ch), n);
  for (std::size_t c = 0; c < n_ch; ++c)
    rec.channels.row(static_cast<Eigen::Index>(c)) =
        Eigen::Map<Eigen::VectorXd>(cols[c].data(), n).transpose();
  rec.trigger = Eigen::Map<Eigen::VectorXi>(trig.data(), n);
  rec.timestamps = Eigen::Map<Eigen::VectorXd>(ts.data(), n);
  rec.sample_rate = static_cast<double>(n - 1) / (rec.timestamps[n - 1] - rec.timestamps[0]);
  rec.validate();
  return rec;
}

// Recovers the stimulus events from the trigger column and groups them into
// rounds: each round must contain every bulb exactly once.
inline std::vector<StimulusEvent> segment_rounds(const RawRecording& rec) {
  std::vector<StimulusEvent> events;
  int round = 0;
  std::set<int> seen;
  for (Eigen::Index i = 0; i < rec.n_samples(); ++i) {
    const int b = rec.trigger[i];
    if (b == 0) continue;
    if (!seen.insert(b).second)
      throw ProtocolError("bulb " + std::to_string(b) + " repeated within round " +
                          std::to_string(round));
    events.push_back({i, b, round});
    if (seen.size() == kNumBulbs) {
      seen.clear();
      ++round;
    }
  }
  if (!seen.empty())
    throw ProtocolError("round " + std::to_string(round) + " is missing " +
                        std::to_string(kNumBulbs - seen.size()) + " bulb(s)");
  return events;
}

}  // namespace bci
