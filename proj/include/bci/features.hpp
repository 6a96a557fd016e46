#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bci/common.hpp"
#include "bci/preprocess.hpp"

namespace bci {

struct ImfDecomposition {
  std::vector<Eigen::VectorXd> imfs;  // first = highest frequency
  Eigen::VectorXd residual;
};

struct FeatureVector {
  Eigen::VectorXd values;
  std::vector<std::pair<std::string, int>> layout;  // block name, span
};

struct PcaModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;  // k x d, orthonormal rows
  Eigen::VectorXd eigenvalues;  // k, descending
};

namespace detail {

// Natural cubic spline through (xs, ys), evaluated at 0..n-1.
inline Eigen::VectorXd cubic_spline_eval(const std::vector<double>& xs,
                                         const std::vector<double>& ys, Eigen::Index n) {
  const std::size_t m = xs.size();
  if (m == 2) {
    Eigen::VectorXd out(n);
    const double slope = (ys[1] - ys[0]) / (xs[1] - xs[0]);
    for (Eigen::Index i = 0; i < n; ++i) out[i] = ys[0] + slope * (i - xs[0]);
    return out;
  }
  // Second derivatives via the standard tridiagonal system.
  std::vector<double> h(m - 1);
  for (std::size_t i = 0; i + 1 < m; ++i) h[i] = xs[i + 1] - xs[i];
  std::vector<double> diag(m, 2.0), rhs(m, 0.0), sub(m, 0.0), sup(m, 0.0);
  for (std::size_t i = 1; i + 1 < m; ++i) {
    diag[i] = 2.0 * (h[i - 1] + h[i]);
    sub[i] = h[i - 1];
    sup[i] = h[i];
    rhs[i] = 6.0 * ((ys[i + 1] - ys[i]) / h[i] - (ys[i] - ys[i - 1]) / h[i - 1]);
  }
  // Natural boundary: M0 = Mm-1 = 0.
  std::vector<double> M(m, 0.0), cp(m, 0.0), dp(m, 0.0);
  cp[1] = sup[1] / diag[1];
  dp[1] = rhs[1] / diag[1];
  for (std::size_t i = 2; i + 1 < m; ++i) {
    const double w = diag[i] - sub[i] * cp[i - 1];
    cp[i] = sup[i] / w;
    dp[i] = (rhs[i] - sub[i] * dp[i - 1]) / w;
  }
  for (std::size_t i = m - 2; i >= 1; --i) {
    M[i] = dp[i] - cp[i] * M[i + 1];
    if (i == 1) break;
  }

  Eigen::VectorXd out(n);
  std::size_t seg = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = static_cast<double>(i);
    while (seg + 2 < m && x > xs[seg + 1]) ++seg;
    const double hl = h[seg];
    const double a = (xs[seg + 1] - x) / hl;
    const double b = (x - xs[seg]) / hl;
    out[i] = a * ys[seg] + b * ys[seg + 1] +
             ((a * a * a - a) * M[seg] + (b * b * b - b) * M[seg + 1]) * hl * hl / 6.0;
  }
  return out;
}

inline void find_extrema(const Eigen::VectorXd& x, std::vector<Eigen::Index>& maxima,
                         std::vector<Eigen::Index>& minima) {
  maxima.clear();
  minima.clear();
  for (Eigen::Index i = 1; i + 1 < x.size(); ++i) {
    if (x[i] > x[i - 1] && x[i] >= x[i + 1]) maxima.push_back(i);
    if (x[i] < x[i - 1] && x[i] <= x[i + 1]) minima.push_back(i);
  }
}

inline int zero_crossings(const Eigen::VectorXd& x) {
  int zc = 0;
  double prev = 0.0;
  bool have_prev = false;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (x[i] == 0.0) continue;
    if (have_prev && ((prev > 0) != (x[i] > 0))) ++zc;
    prev = x[i];
    have_prev = true;
  }
  return zc;
}

// Envelope through the given extrema with the first/last extremum mirrored
// past the signal ends to suppress spline end swings.
inline Eigen::VectorXd envelope(const Eigen::VectorXd& x, const std::vector<Eigen::Index>& ext) {
  const Eigen::Index n = x.size();
  std::vector<double> xs, ys;
  xs.push_back(-static_cast<double>(ext.front()));
  ys.push_back(x[ext.front()]);
  for (Eigen::Index i : ext) {
    xs.push_back(static_cast<double>(i));
    ys.push_back(x[i]);
  }
  xs.push_back(2.0 * (n - 1) - static_cast<double>(ext.back()));
  ys.push_back(x[ext.back()]);
  return cubic_spline_eval(xs, ys, n);
}

struct ImfCheck {
  int n_extrema = 0;
  int n_zero_crossings = 0;
  double envelope_mean_max = 0.0;  // max |(upper+lower)/2|
  double peak = 0.0;
  bool counts_ok = false;
  bool envelope_ok = false;  // mean envelope <= 5% of peak
};

inline ImfCheck check_imf(const Eigen::VectorXd& x) {
  ImfCheck c;
  std::vector<Eigen::Index> maxima, minima;
  find_extrema(x, maxima, minima);
  c.n_extrema = static_cast<int>(maxima.size() + minima.size());
  c.n_zero_crossings = zero_crossings(x);
  c.counts_ok = std::abs(c.n_extrema - c.n_zero_crossings) <= 1;
  c.peak = x.cwiseAbs().maxCoeff();
  if (maxima.size() >= 2 && minima.size() >= 2) {
    const Eigen::VectorXd upper = envelope(x, maxima);
    const Eigen::VectorXd lower = envelope(x, minima);
    c.envelope_mean_max = (0.5 * (upper + lower)).cwiseAbs().maxCoeff();
    c.envelope_ok = c.envelope_mean_max <= 0.05 * c.peak;
  }
  return c;
}

}  // namespace detail

// Empirical mode decomposition by sifting with cubic-spline envelopes.
// A sift ends once the normalized change between candidates falls below
// sift_sd_threshold and the candidate satisfies both IMF conditions
// (balanced extrema/zero-crossing counts, near-zero envelope mean).
// Decomposition ends when the residual has too few extrema or max_imfs is
// reached; input = sum(imfs) + residual holds by construction.
inline ImfDecomposition emd(const Eigen::VectorXd& signal, int max_imfs = 6,
                            double sift_sd_threshold = 0.25) {
  if (max_imfs < 1) throw ConfigError("max_imfs must be >= 1");
  ImfDecomposition out;
  Eigen::VectorXd residual = signal;
  if (signal.size() < 8) {
    out.residual = residual;
    return out;
  }
  constexpr int kMaxSift = 200;

  for (int k = 0; k < max_imfs; ++k) {
    std::vector<Eigen::Index> maxima, minima;
    detail::find_extrema(residual, maxima, minima);
    if (maxima.size() < 2 || minima.size() < 2) break;

    Eigen::VectorXd h = residual;
    bool degenerate = false;
    for (int it = 0; it < kMaxSift; ++it) {
      detail::find_extrema(h, maxima, minima);
      if (maxima.size() < 2 || minima.size() < 2) {
        // Too few extrema to define envelopes: this is residual material,
        // not a mode.
        degenerate = true;
        break;
      }
      const Eigen::VectorXd upper = detail::envelope(h, maxima);
      const Eigen::VectorXd lower = detail::envelope(h, minima);
      const Eigen::VectorXd mean = 0.5 * (upper + lower);
      const double denom = h.squaredNorm();
      const double sd = denom > 0.0 ? mean.squaredNorm() / denom : 0.0;
      h -= mean;
      if (sd < sift_sd_threshold) {
        const auto c = detail::check_imf(h);
        if (c.counts_ok && c.envelope_ok) break;
      }
    }
    if (degenerate) break;
    residual -= h;
    out.imfs.push_back(std::move(h));
  }
  out.residual = residual;
  return out;
}

// Analytic signal via the frequency-domain construction: positive
// frequencies doubled, negative zeroed. Real part equals the input.
inline Eigen::VectorXcd analytic_signal(const Eigen::VectorXd& x) {
  const Eigen::Index n = x.size();
  if (n < 4) throw SizeError("analytic_signal needs at least 4 samples");
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spec;
  std::vector<double> in(x.data(), x.data() + n);
  fft.fwd(spec, in);
  // DC (and Nyquist, for even n) kept as-is; positive frequencies doubled;
  // negative frequencies zeroed.
  const Eigen::Index last_pos = (n % 2 == 0) ? n / 2 - 1 : (n - 1) / 2;
  for (Eigen::Index k = 1; k <= last_pos; ++k) spec[static_cast<std::size_t>(k)] *= 2.0;
  for (Eigen::Index k = (n % 2 == 0) ? n / 2 + 1 : last_pos + 1; k < n; ++k)
    spec[static_cast<std::size_t>(k)] = 0.0;
  std::vector<std::complex<double>> outv;
  fft.inv(outv, spec);
  Eigen::VectorXcd out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    // Force the construction's exact-real-part property against FFT rounding.
    out[i] = std::complex<double>(x[i], outv[static_cast<std::size_t>(i)].imag());
  }
  return out;
}

// Instantaneous amplitude/frequency summary of IMF1: [mean amp, std amp,
// max amp, mean freq, std freq], statistics over the interior 80% of
// samples to avoid Hilbert edge artifacts.
inline Eigen::VectorXd hht_features(const Eigen::VectorXd& imf1, double fs) {
  if (imf1.size() < 8) throw SizeError("hht_features needs at least 8 samples");
  if (imf1.cwiseAbs().maxCoeff() == 0.0) return Eigen::VectorXd::Zero(5);

  const Eigen::VectorXcd z = analytic_signal(imf1);
  const Eigen::Index n = z.size();
  Eigen::VectorXd amp(n), phase(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    amp[i] = std::abs(z[i]);
    phase[i] = std::arg(z[i]);
  }
  // Unwrap phase.
  for (Eigen::Index i = 1; i < n; ++i) {
    double d = phase[i] - phase[i - 1];
    while (d > M_PI) d -= 2 * M_PI;
    while (d < -M_PI) d += 2 * M_PI;
    phase[i] = phase[i - 1] + d;
  }
  Eigen::VectorXd freq(n);
  for (Eigen::Index i = 1; i + 1 < n; ++i) freq[i] = (phase[i + 1] - phase[i - 1]) * fs / (4 * M_PI);
  freq[0] = freq[1];
  freq[n - 1] = freq[n - 2];

  const Eigen::Index lo = n / 10;
  const Eigen::Index len = n - 2 * lo;
  const Eigen::VectorXd a = amp.segment(lo, len);
  const Eigen::VectorXd f = freq.segment(lo, len);
  auto sd = [](const Eigen::VectorXd& v) {
    return std::sqrt((v.array() - v.mean()).square().sum() / static_cast<double>(v.size()));
  };
  Eigen::VectorXd out(5);
  out << a.mean(), sd(a), a.maxCoeff(), f.mean(), sd(f);
  return out;
}

namespace detail {

// Quadratic-spline biorthogonal analysis pair. The synthesis low-pass is the
// B-spline [1, 2, 1]/4 (times sqrt 2); the analysis low-pass below is its
// 13-tap spline dual with six dual vanishing moments, which keeps the
// quadratic-spline family while giving a transition band sharp enough to
// separate dyadic neighbours by an order of magnitude in energy.
inline const std::vector<double>& bspline_dec_lo() {
  static const std::vector<double> h = {
      -0.0069053396600248784, 0.013810679320049757,  0.046956309688169176,
      -0.10772329869638811,   -0.16987135563661201,  0.44746600996961173,
      0.96674755240348298,    0.44746600996961173,   -0.16987135563661201,
      -0.10772329869638811,   0.046956309688169176,  0.013810679320049757,
      -0.0069053396600248784};
  return h;
}

inline const std::vector<double>& bspline_dec_hi() {
  static const std::vector<double> g = {0.35355339059327379, -0.70710678118654757,
                                        0.35355339059327379};
  return g;
}

// One analysis step: full zero-padded convolution, keep odd indices.
inline Eigen::VectorXd dwt_step(const Eigen::VectorXd& x, const std::vector<double>& h) {
  const Eigen::Index n = x.size();
  const Eigen::Index m = static_cast<Eigen::Index>(h.size());
  const Eigen::Index full = n + m - 1;
  std::vector<double> y(static_cast<std::size_t>(full), 0.0);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < m; ++k) y[static_cast<std::size_t>(i + k)] += x[i] * h[static_cast<std::size_t>(k)];
  std::vector<double> dec;
  for (Eigen::Index i = 1; i < full; i += 2) dec.push_back(y[static_cast<std::size_t>(i)]);
  return Eigen::Map<Eigen::VectorXd>(dec.data(), static_cast<Eigen::Index>(dec.size()));
}

}  // namespace detail

inline int wavelet_levels(double fs) {
  if (fs < 32.0) throw ConfigError("sample rate below 32 Hz cannot resolve delta and theta bands");
  // Deepest level whose approximation band [0, fs/2^(L+1)] is closest to [0, 4] Hz.
  return static_cast<int>(std::lround(std::log2(fs / 8.0)));
}

// Dyadic B-spline wavelet analysis: returns the level-L approximation
// coefficients (band ~[0, 4] Hz, delta) and the level-L detail coefficients
// (band ~[4, 8] Hz, theta). The signal is zero-padded to a multiple of 2^L.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> wavelet_bands(const Eigen::VectorXd& signal,
                                                                 double fs) {
  const int levels = wavelet_levels(fs);
  const Eigen::Index block = Eigen::Index{1} << levels;
  const Eigen::Index padded = ((signal.size() + block - 1) / block) * block;
  if (signal.size() < 2) throw SizeError("wavelet_bands needs at least 2 samples");
  Eigen::VectorXd x = Eigen::VectorXd::Zero(padded);
  x.head(signal.size()) = signal;

  Eigen::VectorXd approx = x, theta;
  for (int l = 0; l < levels; ++l) {
    const Eigen::VectorXd detail_coeffs = detail::dwt_step(approx, detail::bspline_dec_hi());
    approx = detail::dwt_step(approx, detail::bspline_dec_lo());
    if (l == levels - 1) theta = detail_coeffs;
  }
  return {approx, theta};
}

// Per selected channel: decimated amplitude block (20 Hz effective rate),
// IMF1 Hilbert-Huang summary, delta and theta wavelet blocks, concatenated
// in ascending channel order.
inline FeatureVector assemble_features(const AveragedEpoch& avg, const std::vector<bool>& mask,
                                       double fs) {
  if (static_cast<Eigen::Index>(mask.size()) != avg.samples.rows())
    throw SizeError("mask length does not match channel count");
  if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; }))
    throw ConfigError("channel mask selects no channels");

  const Eigen::Index stride = std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::lround(fs / 20.0)));
  FeatureVector fv;
  std::vector<double> vals;
  for (Eigen::Index ch = 0; ch < avg.samples.rows(); ++ch) {
    if (!mask[static_cast<std::size_t>(ch)]) continue;
    const Eigen::VectorXd sig = avg.samples.row(ch).transpose();
    const std::string tag = "ch" + std::to_string(ch + 1) + ".";

    int span = 0;
    for (Eigen::Index i = 0; i < sig.size(); i += stride, ++span) vals.push_back(sig[i]);
    fv.layout.emplace_back(tag + "amplitude", span);

    const ImfDecomposition dec = emd(sig);
    const Eigen::VectorXd hht =
        dec.imfs.empty() ? Eigen::VectorXd::Zero(5) : hht_features(dec.imfs.front(), fs);
    for (Eigen::Index i = 0; i < hht.size(); ++i) vals.push_back(hht[i]);
    fv.layout.emplace_back(tag + "hht", static_cast<int>(hht.size()));

    const auto [delta, theta] = wavelet_bands(sig, fs);
    for (Eigen::Index i = 0; i < delta.size(); ++i) vals.push_back(delta[i]);
    fv.layout.emplace_back(tag + "delta", static_cast<int>(delta.size()));
    for (Eigen::Index i = 0; i < theta.size(); ++i) vals.push_back(theta[i]);
    fv.layout.emplace_back(tag + "theta", static_cast<int>(theta.size()));
  }
  fv.values = Eigen::Map<Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
  if (!fv.values.allFinite()) throw DataFormatError("non-finite feature value");
  return fv;
}

struct PcaRetain {
  std::optional<int> k;
  std::optional<double> fraction;

  static PcaRetain components(int k) { return {k, std::nullopt}; }
  static PcaRetain variance(double fraction) { return {std::nullopt, fraction}; }
};

// Mean-centered covariance eigendecomposition; keeps the top eigenvectors
// either by count or by smallest count reaching the variance fraction.
inline PcaModel pca_fit(const Eigen::MatrixXd& data, const PcaRetain& retain) {
  const Eigen::Index n = data.rows(), d = data.cols();
  if (n < 2) throw ConfigError("pca_fit needs at least 2 samples");

  PcaModel model;
  model.mean = data.colwise().mean();
  const Eigen::MatrixXd centered = data.rowwise() - model.mean.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw ConvergenceError("eigendecomposition failed");

  const Eigen::Index max_k = std::min<Eigen::Index>(n - 1, d);
  Eigen::VectorXd evals = solver.eigenvalues().reverse().cwiseMax(0.0);  // descending
  Eigen::MatrixXd evecs = solver.eigenvectors().rowwise().reverse();

  Eigen::Index k;
  if (retain.k) {
    k = *retain.k;
    if (k < 1 || k > max_k) throw ConfigError("retain k out of range 1..min(n-1, d)");
  } else if (retain.fraction) {
    if (*retain.fraction <= 0.0 || *retain.fraction > 1.0)
      throw ConfigError("variance fraction must be in (0, 1]");
    const double total = evals.sum();
    double acc = 0.0;
    k = max_k;
    for (Eigen::Index i = 0; i < max_k; ++i) {
      acc += evals[i];
      if (acc >= *retain.fraction * total) {
        k = i + 1;
        break;
      }
    }
  } else {
    throw ConfigError("retain must specify k or a variance fraction");
  }

  model.eigenvalues = evals.head(k);
  model.components = evecs.leftCols(k).transpose();
  return model;
}

inline Eigen::VectorXd pca_project(const PcaModel& model, const Eigen::VectorXd& v) {
  if (v.size() != model.mean.size())
    throw SizeError("vector length " + std::to_string(v.size()) + " != model dimension " +
                    std::to_string(model.mean.size()));
  return model.components * (v - model.mean);
}

}  // namespace bci
