#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "bci/common.hpp"
#include "bci/eeg_io.hpp"

namespace bci {

enum class Label { Target, NonTarget, Unknown };

// One 600 ms window time-locked to a stimulus onset.
struct Epoch {
  Eigen::MatrixXd samples;  // n_channels x n_epoch_samples
  int bulb = 0;
  int round_index = 0;
  Label label = Label::Unknown;
};

struct AveragedEpoch {
  Eigen::MatrixXd samples;
  int bulb = 0;
  int n_averaged = 0;
  Label label = Label::Unknown;
};

struct FilterSpec {
  double low_cut = 1.0;
  double high_cut = 15.0;
  int order = 4;  // analog prototype order

  void validate(double fs) const {
    if (!(0.0 < low_cut && low_cut < high_cut))
      throw ConfigError("need 0 < low_cut < high_cut");
    if (high_cut >= fs / 2.0)
      throw ConfigError("high_cut must be below the Nyquist frequency");
    if (order < 1) throw ConfigError("filter order must be >= 1");
  }
};

// Removes the least-squares line (offset + drift) from a channel.
inline Eigen::VectorXd detrend(const Eigen::VectorXd& x) {
  const Eigen::Index n = x.size();
  if (n < 2) throw SizeError("detrend needs at least 2 samples");
  const Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(n, 0.0, static_cast<double>(n - 1));
  const double tm = t.mean();
  const double xm = x.mean();
  const double denom = (t.array() - tm).square().sum();
  const double slope = ((t.array() - tm) * (x.array() - xm)).sum() / denom;
  return x.array() - xm - slope * (t.array() - tm);
}

namespace detail {

// One second-order section: (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2).
struct Sos {
  double b0, b1, b2, a1, a2;
};

// Butterworth band-pass as cascaded biquads: analog prototype, low-pass to
// band-pass transform, bilinear map with frequency pre-warping. Each section
// carries one conjugate pole pair (or two real poles) plus one zero at z=1
// and one at z=-1.
inline std::vector<Sos> butter_bandpass(int order, double low_cut, double high_cut, double fs) {
  using cd = std::complex<double>;
  const double fs2 = 2.0 * fs;
  // Pre-warped analog band edges.
  const double w1 = fs2 * std::tan(M_PI * low_cut / fs);
  const double w2 = fs2 * std::tan(M_PI * high_cut / fs);
  const double bw = w2 - w1;
  const double w0sq = w1 * w2;

  // lp -> bp on the prototype poles: each maps to a pair; order zeros at s=0.
  std::vector<cd> analog_poles;
  for (int k = 1; k <= order; ++k) {
    const double theta = M_PI * (2.0 * k + order - 1.0) / (2.0 * order);
    const cd a = cd(std::cos(theta), std::sin(theta)) * (bw / 2.0);
    const cd d = std::sqrt(a * a - w0sq);
    analog_poles.push_back(a + d);
    analog_poles.push_back(a - d);
  }

  // Bilinear transform. Zeros: `order` at z=1 (from s=0) and `order` at z=-1.
  cd gain = std::pow(cd(bw, 0.0), order);
  std::vector<cd> poles;
  for (const cd& p : analog_poles) {
    poles.push_back((fs2 + p) / (fs2 - p));
    gain *= cd(1.0, 0.0) / (fs2 - p);
  }
  for (int k = 0; k < order; ++k) gain *= fs2;  // zeros at s=0 contribute (fs2 - 0)
  const double k_total = gain.real();

  // Group poles into sections: conjugate pairs first, then real poles in pairs.
  std::vector<cd> upper;
  std::vector<double> real_poles;
  for (const cd& p : poles) {
    if (std::abs(p.imag()) < 1e-12) real_poles.push_back(p.real());
    else if (p.imag() > 0.0) upper.push_back(p);
  }
  std::sort(real_poles.begin(), real_poles.end());

  std::vector<Sos> sections;
  const double g = std::pow(std::abs(k_total), 1.0 / order);
  const double sign = k_total < 0.0 ? -1.0 : 1.0;
  for (const cd& p : upper)
    sections.push_back({g, 0.0, -g, -2.0 * p.real(), std::norm(p)});
  for (std::size_t i = 0; i + 1 < real_poles.size(); i += 2)
    sections.push_back({g, 0.0, -g, -(real_poles[i] + real_poles[i + 1]),
                        real_poles[i] * real_poles[i + 1]});
  if (!sections.empty()) {
    sections.front().b0 *= sign;
    sections.front().b2 *= sign;
  }
  return sections;
}

inline void sos_filter_inplace(const std::vector<Sos>& sections, Eigen::VectorXd& x) {
  for (const Sos& s : sections) {
    double z1 = 0.0, z2 = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double xi = x[i];
      const double yi = s.b0 * xi + z1;
      z1 = s.b1 * xi + z2 - s.a1 * yi;
      z2 = s.b2 * xi - s.a2 * yi;
      x[i] = yi;
    }
  }
}

}  // namespace detail

// Magnitude of the effective zero-phase (forward-backward) transfer function
// at frequency f, i.e. |H(e^{jw})|^2 of the single-pass design.
inline double bandpass_gain(double f, double fs, const FilterSpec& spec) {
  spec.validate(fs);
  const auto sections = detail::butter_bandpass(spec.order, spec.low_cut, spec.high_cut, fs);
  const std::complex<double> z1 = std::exp(std::complex<double>(0.0, -2.0 * M_PI * f / fs));
  const std::complex<double> z2 = z1 * z1;
  double mag = 1.0;
  for (const auto& s : sections)
    mag *= std::abs((s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2));
  return mag * mag;
}

// Zero-phase Butterworth band-pass: forward-backward filtering with odd
// reflection padding of roughly three low-frequency periods at each end.
inline Eigen::VectorXd bandpass(const Eigen::VectorXd& x, double fs, const FilterSpec& spec) {
  spec.validate(fs);
  const auto sections = detail::butter_bandpass(spec.order, spec.low_cut, spec.high_cut, fs);
  const Eigen::Index n = x.size();
  const Eigen::Index padlen =
      std::min<Eigen::Index>(n - 1, static_cast<Eigen::Index>(std::ceil(3.0 * fs / spec.low_cut)));
  if (padlen < 1) throw SizeError("signal too short to band-pass");

  Eigen::VectorXd ext(n + 2 * padlen);
  for (Eigen::Index i = 0; i < padlen; ++i) ext[i] = 2.0 * x[0] - x[padlen - i];
  ext.segment(padlen, n) = x;
  for (Eigen::Index i = 0; i < padlen; ++i) ext[n + padlen + i] = 2.0 * x[n - 1] - x[n - 2 - i];

  detail::sos_filter_inplace(sections, ext);
  ext.reverseInPlace();
  detail::sos_filter_inplace(sections, ext);
  ext.reverseInPlace();
  return ext.segment(padlen, n);
}

// Detrend + band-pass every channel of a recording.
inline RawRecording preprocess_recording(const RawRecording& rec, const FilterSpec& spec) {
  RawRecording out = rec;
  for (Eigen::Index ch = 0; ch < rec.n_channels(); ++ch) {
    const Eigen::VectorXd d = detrend(rec.channels.row(ch).transpose());
    out.channels.row(ch) = bandpass(d, rec.sample_rate, spec).transpose();
  }
  return out;
}

inline std::vector<Epoch> extract_epochs(const RawRecording& rec,
                                         const std::vector<StimulusEvent>& events,
                                         double window_ms = 600.0) {
  const Eigen::Index len =
      static_cast<Eigen::Index>(std::lround(window_ms / 1000.0 * rec.sample_rate));
  std::vector<Epoch> out;
  out.reserve(events.size());
  for (const auto& ev : events) {
    if (ev.onset_sample + len > rec.n_samples())
      throw SizeError("epoch for bulb " + std::to_string(ev.bulb) + " in round " +
                      std::to_string(ev.round_index) + " extends past the recording end");
    Epoch e;
    e.samples = rec.channels.middleCols(ev.onset_sample, len);
    e.bulb = ev.bulb;
    e.round_index = ev.round_index;
    out.push_back(std::move(e));
  }
  return out;
}

// Drops every epoch in which any sample exceeds the amplitude threshold.
inline std::pair<std::vector<Epoch>, std::vector<std::size_t>> reject_artifacts(
    const std::vector<Epoch>& epochs, double amp_threshold) {
  if (amp_threshold <= 0.0) throw ConfigError("amp_threshold must be positive");
  std::vector<Epoch> kept;
  std::vector<std::size_t> rejected;
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    if (epochs[i].samples.cwiseAbs().maxCoeff() > amp_threshold)
      rejected.push_back(i);
    else
      kept.push_back(epochs[i]);
  }
  return {std::move(kept), std::move(rejected)};
}

// Sample-wise mean per bulb over one decision block. Every bulb must have at
// least one surviving epoch.
inline std::vector<AveragedEpoch> average_epochs(const std::vector<Epoch>& epochs) {
  std::map<int, AveragedEpoch> by_bulb;
  for (const auto& e : epochs) {
    auto it = by_bulb.find(e.bulb);
    if (it == by_bulb.end()) {
      AveragedEpoch a;
      a.samples = e.samples;
      a.bulb = e.bulb;
      a.n_averaged = 1;
      a.label = e.label;
      by_bulb.emplace(e.bulb, std::move(a));
    } else {
      it->second.samples += e.samples;
      it->second.n_averaged += 1;
    }
  }
  for (int b = 1; b <= kNumBulbs; ++b)
    if (!by_bulb.count(b))
      throw ProtocolError("no surviving epochs for bulb " + std::to_string(b) +
                          " in this decision block");
  std::vector<AveragedEpoch> out;
  for (auto& [b, avg] : by_bulb) {
    avg.samples /= static_cast<double>(avg.n_averaged);
    out.push_back(std::move(avg));
  }
  return out;
}

namespace detail {

inline double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::ArrayXd ca = a.array() - a.mean();
  const Eigen::ArrayXd cb = b.array() - b.mean();
  const double denom = std::sqrt(ca.square().sum() * cb.square().sum());
  if (denom == 0.0) return 0.0;
  return (ca * cb).sum() / denom;
}

}  // namespace detail

// Keeps the keep_k channels whose waveforms correlate best with the rest,
// scored as the mean pairwise Pearson correlation over target averages.
// Ties break toward the lower channel index.
inline std::vector<bool> select_channels(const std::vector<AveragedEpoch>& target_avgs,
                                         int keep_k) {
  if (target_avgs.size() < 2) throw ConfigError("channel selection needs >= 2 target averages");
  const Eigen::Index n_ch = target_avgs.front().samples.rows();
  if (keep_k < 1 || keep_k > n_ch) throw ConfigError("keep_k out of range 1..n_channels");

  Eigen::VectorXd score = Eigen::VectorXd::Zero(n_ch);
  for (const auto& avg : target_avgs) {
    for (Eigen::Index i = 0; i < n_ch; ++i) {
      double s = 0.0;
      for (Eigen::Index j = 0; j < n_ch; ++j) {
        if (i == j) continue;
        s += detail::pearson(avg.samples.row(i).transpose(), avg.samples.row(j).transpose());
      }
      score[i] += s / static_cast<double>(n_ch - 1);
    }
  }

  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n_ch));
  for (Eigen::Index i = 0; i < n_ch; ++i) idx[static_cast<std::size_t>(i)] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (score[a] != score[b]) return score[a] > score[b];
    return a < b;
  });
  std::vector<bool> mask(static_cast<std::size_t>(n_ch), false);
  for (int k = 0; k < keep_k; ++k) mask[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])] = true;
  return mask;
}

}  // namespace bci
