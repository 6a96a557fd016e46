#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "bci/pipeline.hpp"

using namespace bci;

namespace {

void report(int criterion, const char* name, bool ok) {
  std::printf("CRITERION %2d  %-38s %s\n", criterion, name, ok ? "PASS" : "FAIL");
  std::fflush(stdout);
  CHECK(ok);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Train on one synthetic session, decode a second session from the same
// subject, and report the decoded-direction accuracy.
double end_to_end_accuracy(double noise, int n_decisions, int train_seed, int eval_seed) {
  json jt = {{"synth", {{"rng_seed", train_seed}, {"n_decisions", n_decisions}}}};
  PipelineConfig tc = config_from_json(jt);
  tc.synth.noise_std = noise;
  const SynthSession train = synth_session(tc.synth, tc.sample_rate);
  const TrainedPipeline tp = train_pipeline(train.recording, tc.synth.intended_bulbs, tc);

  json je = {{"synth", {{"rng_seed", eval_seed}, {"n_decisions", n_decisions}}}};
  PipelineConfig ec = config_from_json(je);
  ec.synth.noise_std = noise;
  const SynthSession eval = synth_session(ec.synth, ec.sample_rate);
  const SessionResult r = run_session(eval.recording, tp, ec, /*simulate_arm=*/false);
  return decoded_accuracy(r, ec.synth.intended_bulbs, ec.decision);
}

}  // namespace

TEST_CASE("criterion 1: pipeline accuracy on the synthetic benchmark") {
  const auto t0 = std::chrono::steady_clock::now();
  const double noisy = end_to_end_accuracy(2.0, 40, 1, 2);   // default 5 uV P300, 2 uV pink
  const double clean = end_to_end_accuracy(0.0, 40, 1, 2);
  const double elapsed = seconds_since(t0);
  report(1, "synthetic pipeline accuracy", noisy >= 0.90 && clean == 1.0 && elapsed < 60.0);
  INFO("noisy=" << noisy << " clean=" << clean << " elapsed=" << elapsed << "s");
  CHECK(noisy >= 0.90);
  CHECK(clean == 1.0);
  CHECK(elapsed < 60.0);
}

TEST_CASE("criterion 2: five-epoch averaging follows the sigma/sqrt(5) law") {
  const double sigma = 2.0;
  const Eigen::Index len = 300;
  double mean_resid = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::mt19937_64 rng(1000 + trial);
    std::normal_distribution<double> g(0.0, sigma);
    std::vector<Epoch> epochs;
    for (int round = 0; round < 5; ++round) {
      for (int bulb = 1; bulb <= 4; ++bulb) {
        Epoch e;
        e.samples.resize(1, len);
        for (Eigen::Index i = 0; i < len; ++i) e.samples(0, i) = g(rng);
        e.bulb = bulb;
        e.round_index = round;
        epochs.push_back(std::move(e));
      }
    }
    const std::vector<AveragedEpoch> avgs = average_epochs(epochs);
    const Eigen::VectorXd r = avgs.front().samples.row(0);
    mean_resid += std::sqrt((r.array() - r.mean()).square().sum() / static_cast<double>(len - 1));
  }
  mean_resid /= 1000.0;
  const double expected = sigma / std::sqrt(5.0);
  const bool ok = std::abs(mean_resid - expected) <= 0.2 * expected;
  report(2, "averaging SNR law sigma/sqrt(5)", ok);
  INFO("measured " << mean_resid << " expected " << expected);
  CHECK(ok);
}

TEST_CASE("criterion 3: band-pass filter contract") {
  const double fs = 500.0;
  const FilterSpec spec;  // 1-15 Hz, order 4, applied forward-backward

  const double g8_db = 20.0 * std::log10(bandpass_gain(8.0, fs, spec));
  const double g_dc = bandpass_gain(0.0, fs, spec);
  const double g50 = bandpass_gain(50.0, fs, spec);
  const bool mag_ok = std::abs(g8_db) <= 1.0 && 20.0 * std::log10(std::max(g_dc, 1e-300)) < -20.0 &&
                      20.0 * std::log10(g50) < -20.0;

  // Zero phase: a band-interior tone burst keeps its peak index.
  const Eigen::Index n = 2000;
  Eigen::VectorXd burst(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    const double w = (t - 2.0) / 0.25;
    burst[i] = std::exp(-0.5 * w * w) * std::cos(2.0 * M_PI * 8.0 * (t - 2.0));
  }
  Eigen::Index in_peak, out_peak;
  burst.maxCoeff(&in_peak);
  bandpass(burst, fs, spec).maxCoeff(&out_peak);
  const bool phase_ok = std::abs(in_peak - out_peak) <= 1;

  report(3, "filter passband/stopband/zero-phase", mag_ok && phase_ok);
  CHECK(mag_ok);
  CHECK(phase_ok);
}

TEST_CASE("criterion 4: EMD reconstruction, IMF conditions, tone separation") {
  bool recon_ok = true, imf_ok = true;
  const double fs = 500.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::mt19937_64 rng(trial);
    std::normal_distribution<double> g;
    std::uniform_real_distribution<double> freq(1.0, 30.0);
    const Eigen::Index n = 400;
    Eigen::VectorXd x(n);
    const double f1 = freq(rng), f2 = freq(rng);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / fs;
      x[i] = std::sin(2.0 * M_PI * f1 * t) + 0.6 * std::sin(2.0 * M_PI * f2 * t) + 0.3 * g(rng);
    }
    const ImfDecomposition dec = emd(x);
    Eigen::VectorXd sum = dec.residual;
    for (const auto& imf : dec.imfs) sum += imf;
    if ((sum - x).norm() > 1e-8 * x.norm()) recon_ok = false;
    for (const auto& imf : dec.imfs) {
      const detail::ImfCheck c = detail::check_imf(imf);
      if (!c.counts_ok || !c.envelope_ok) imf_ok = false;
    }
  }

  // Two-tone example: IMF1 carries the 20 Hz component.
  const Eigen::Index n = 1000;
  Eigen::VectorXd two(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    two[i] = std::sin(2.0 * M_PI * 2.0 * t) + 0.5 * std::sin(2.0 * M_PI * 20.0 * t);
  }
  const ImfDecomposition dec = emd(two);
  REQUIRE(!dec.imfs.empty());
  const Eigen::VectorXd& imf1 = dec.imfs.front();
  double best_mag = -1.0;
  Eigen::Index best_bin = 0;
  for (Eigen::Index k = 1; k <= n / 2; ++k) {
    double re = 0.0, im = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double ph = -2.0 * M_PI * static_cast<double>(k * i) / static_cast<double>(n);
      re += imf1[i] * std::cos(ph);
      im += imf1[i] * std::sin(ph);
    }
    const double mag = re * re + im * im;
    if (mag > best_mag) {
      best_mag = mag;
      best_bin = k;
    }
  }
  const double peak_hz = static_cast<double>(best_bin) * fs / static_cast<double>(n);
  const bool tone_ok = std::abs(peak_hz - 20.0) <= 1.0;

  report(4, "EMD suite", recon_ok && imf_ok && tone_ok);
  CHECK(recon_ok);
  CHECK(imf_ok);
  CHECK(tone_ok);
}

TEST_CASE("criterion 5: PCA suite") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g;
  const Eigen::Index n = 120, d = 20;
  Eigen::MatrixXd data(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) data(i, j) = g(rng) * (1.0 + static_cast<double>(j % 5));

  const PcaModel full = pca_fit(data, PcaRetain::components(static_cast<int>(d)));
  const Eigen::MatrixXd gram = full.components * full.components.transpose();
  const bool ortho_ok =
      (gram - Eigen::MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff() <= 1e-10;

  bool recon_ok = true;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd v = data.row(i).transpose();
    const Eigen::VectorXd back = full.components.transpose() * pca_project(full, v) + full.mean;
    if ((back - v).cwiseAbs().maxCoeff() > 1e-9) recon_ok = false;
  }

  // Retained-k matches an independent eigensolver oracle.
  const double fraction = 0.9;
  const PcaModel part = pca_fit(data, PcaRetain::variance(fraction));
  const Eigen::MatrixXd centered = data.rowwise() - data.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
  Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(cov).eigenvalues();
  std::sort(ev.data(), ev.data() + ev.size(), std::greater<double>());
  const double total = ev.sum();
  Eigen::Index k_oracle = 0;
  double acc = 0.0;
  while (acc < fraction * total && k_oracle < ev.size()) acc += ev[k_oracle++];
  const bool k_ok = part.components.rows() == k_oracle;

  report(5, "PCA suite", ortho_ok && recon_ok && k_ok);
  CHECK(ortho_ok);
  CHECK(recon_ok);
  CHECK(k_ok);
}

TEST_CASE("criterion 6: classifier suite with calibrated k-NN ordering") {
  // KKT residuals within tol for trained SVMs.
  bool kkt_ok = true;
  for (std::uint64_t seed : {1ull, 2ull}) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 0.6);
    LabeledSet data;
    data.vectors.resize(60, 2);
    for (Eigen::Index i = 0; i < 60; ++i) {
      const int y = i < 30 ? 1 : -1;
      data.vectors.row(i) << y * 0.7 + g(rng), g(rng);
      data.labels.push_back(y);
    }
    const double tol = 1e-3;
    const SvmModel m = svm_train(data, {Kernel::Type::Gaussian, 0.5}, 1.0, tol, seed);
    if (svm_kkt_residual(m, data, tol) > tol + 1e-9) kkt_ok = false;
  }

  // k-NN equals a brute-force oracle at n = 500.
  bool knn_ok = true;
  {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    const Eigen::Index n = 500, d = 3;
    LabeledSet train;
    train.vectors.resize(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < d; ++j) train.vectors(i, j) = g(rng);
      train.labels.push_back(rng() % 2 ? 1 : -1);
    }
    const KnnModel model{train, 3};
    for (int q = 0; q < 30; ++q) {
      Eigen::VectorXd v(d);
      for (Eigen::Index j = 0; j < d; ++j) v[j] = g(rng);
      std::vector<std::pair<double, Eigen::Index>> dist;
      for (Eigen::Index i = 0; i < n; ++i)
        dist.emplace_back((train.vectors.row(i).transpose() - v).norm(), i);
      std::sort(dist.begin(), dist.end());
      int votes = 0;
      for (int i = 0; i < model.k; ++i)
        if (train.labels[static_cast<std::size_t>(dist[static_cast<std::size_t>(i)].second)] == 1)
          ++votes;
      const int expect = 2 * votes > model.k ? 1 : -1;
      if (knn_predict(model, v).label != expect) knn_ok = false;
    }
  }

  // Calibrated benchmark (8 uV pink noise, seeded): k = 3 strictly beats
  // k = 1 and k = 5 in cross validation.
  json j = {{"synth", {{"rng_seed", 3}, {"n_decisions", 40}}}};
  PipelineConfig cfg = config_from_json(j);
  cfg.synth.noise_std = 8.0;
  const SynthSession s = synth_session(cfg.synth, cfg.sample_rate);
  const TrainedPipeline tp = train_pipeline(s.recording, cfg.synth.intended_bulbs, cfg);
  auto knn_cv = [&](int k) {
    ClassifierConfig c;
    c.type = ClassifierConfig::Type::Knn;
    c.k = k;
    return cross_validate(tp.knn.train, c, 5, 0).accuracy;
  };
  const double a1 = knn_cv(1), a3 = knn_cv(3), a5 = knn_cv(5);
  const bool order_ok = a3 > a1 && a3 > a5;

  const std::string report_path = "/tmp/bci_acceptance_knn_report.json";
  write_json_file(json{{"k1_accuracy", a1}, {"k3_accuracy", a3}, {"k5_accuracy", a5}},
                  report_path);
  const bool report_ok = read_json_file(report_path).contains("k3_accuracy");
  std::remove(report_path.c_str());

  report(6, "classifier suite (KKT, k-NN, k=3 best)", kkt_ok && knn_ok && order_ok && report_ok);
  CHECK(kkt_ok);
  CHECK(knn_ok);
  INFO("k1=" << a1 << " k3=" << a3 << " k5=" << a5);
  CHECK(order_ok);
  CHECK(report_ok);
}

TEST_CASE("criterion 7: dynamics suite") {
  const RobotParams p;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> ang(-M_PI, M_PI);
  std::uniform_real_distribution<double> vel(-3.0, 3.0);
  std::normal_distribution<double> g;

  bool spd_ok = true, skew_ok = true;
  const double eps = 1e-5;
  for (int trial = 0; trial < 1000; ++trial) {
    RobotState s;
    s.theta = {ang(rng), ang(rng)};
    s.theta_dot = {vel(rng), vel(rng)};
    const auto d = dynamics_matrices(p, s);
    if (d.M(0, 1) != d.M(1, 0)) spd_ok = false;
    if (Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(d.M).eigenvalues().minCoeff() <= 0.0)
      spd_ok = false;
    RobotState hi = s, lo = s;
    hi.theta += eps * s.theta_dot;
    lo.theta -= eps * s.theta_dot;
    const Eigen::Matrix2d Mdot =
        (dynamics_matrices(p, hi).M - dynamics_matrices(p, lo).M) / (2.0 * eps);
    const Eigen::Matrix2d N = Mdot - 2.0 * d.C;
    const Eigen::Vector2d x(g(rng), g(rng));
    if (std::abs(x.dot(N * x)) > 1e-9 * (1.0 + x.squaredNorm())) skew_ok = false;
  }

  RobotState swing;
  swing.theta = {0.3, 0.5};
  const double e0 = total_energy(p, swing);
  for (int i = 0; i < 10000; ++i) swing = step(swing, Eigen::Vector2d::Zero(), 1e-3, p);
  const bool energy_ok = std::abs(total_energy(p, swing) - e0) / std::abs(e0) < 1e-5;

  auto integrate = [&](double dt) {
    RobotState s;
    s.theta = {-M_PI / 2.0 + 0.2, 0.3};
    const int n = static_cast<int>(std::lround(1.0 / dt));
    for (int i = 0; i < n; ++i) s = step(s, Eigen::Vector2d::Zero(), dt, p);
    return s;
  };
  const RobotState ref = integrate(1.0 / 8192.0);
  const double ratio = (integrate(1.0 / 512.0).theta - ref.theta).norm() /
                       (integrate(1.0 / 1024.0).theta - ref.theta).norm();
  const bool order_ok = ratio >= 12.0 && ratio <= 20.0;

  report(7, "dynamics suite (SPD, skew, energy, RK4)", spd_ok && skew_ok && energy_ok && order_ok);
  CHECK(spd_ok);
  CHECK(skew_ok);
  CHECK(energy_ok);
  INFO("Richardson ratio " << ratio);
  CHECK(order_ok);
}

TEST_CASE("criterion 8: control suite") {
  const RobotParams p;
  const ControllerGains gains;  // critically damped: kp = 100, kd = 20

  // Closed-loop error against the analytic solution of the error dynamics.
  const double omega = 10.0;
  RobotState s;
  {
    // Place the end-effector at (0.45, 0.35) with the elbow-down solution.
    const double x = 0.45, z = 0.35;
    const double c2 = (x * x + z * z - p.l1 * p.l1 - p.l2 * p.l2) / (2.0 * p.l1 * p.l2);
    const double th2 = -std::acos(std::clamp(c2, -1.0, 1.0));
    s.theta = {std::atan2(z, x) - std::atan2(p.l2 * std::sin(th2), p.l1 + p.l2 * std::cos(th2)),
               th2};
  }
  const Eigen::Vector2d target(0.48, 0.39);
  const Eigen::Vector2d e0 = target - forward_kinematics(p, s.theta);
  ReferenceSignal ref;
  ref.target = target;
  const double dt = 1e-5;
  double t = 0.0, worst = 0.0;
  for (int i = 0; i < 50000; ++i) {
    s = step(s, inverse_dynamics_control(s, ref.at(t), gains, p), dt, p);
    t += dt;
    const Eigen::Vector2d e = target - forward_kinematics(p, s.theta);
    const Eigen::Vector2d analytic = e0 * (1.0 + omega * t) * std::exp(-omega * t);
    worst = std::max(worst, (e - analytic).norm() / e0.norm());
  }
  const bool eq8_ok = worst < 1e-4;

  // Gravity hold over 1 s.
  RobotState hold;
  hold.theta = {0.8, -0.6};
  const Eigen::Vector2d theta0 = hold.theta;
  for (int i = 0; i < 1000; ++i) hold = step(hold, dynamics_matrices(p, hold).g, 1e-3, p);
  const bool hold_ok = (hold.theta - theta0).cwiseAbs().maxCoeff() <= 1e-8;

  // Jacobian against central finite differences.
  bool jac_ok = true;
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> ang(-M_PI, M_PI);
  const double eps = 1e-6;
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Vector2d th(ang(rng), ang(rng));
    const Eigen::Matrix2d J = jacobian(p, th, Eigen::Vector2d::Zero()).J;
    for (int j = 0; j < 2; ++j) {
      Eigen::Vector2d hi = th, lo = th;
      hi[j] += eps;
      lo[j] -= eps;
      const Eigen::Vector2d col =
          (forward_kinematics(p, hi) - forward_kinematics(p, lo)) / (2.0 * eps);
      if ((J.col(j) - col).cwiseAbs().maxCoeff() > 1e-6) jac_ok = false;
    }
  }

  report(8, "control suite (Eq.8, gravity hold, Jacobian)", eq8_ok && hold_ok && jac_ok);
  INFO("worst Eq.8 deviation " << worst);
  CHECK(eq8_ok);
  CHECK(hold_ok);
  CHECK(jac_ok);
}

TEST_CASE("criterion 9: letter-G end-to-end") {
  const auto t0 = std::chrono::steady_clock::now();
  // Scripted intents: up, left, down, right, up, left.
  PipelineConfig cfg;
  cfg.synth.intended_bulbs = {1, 3, 2, 4, 1, 3};
  cfg.synth.noise_std = 0.5;
  cfg.synth.rng_seed = 9;

  auto run_once = [&]() {
    const SynthSession s = synth_session(cfg.synth, cfg.sample_rate);
    const TrainedPipeline tp = train_pipeline(s.recording, cfg.synth.intended_bulbs, cfg);
    return run_session(s.recording, tp, cfg, /*simulate_arm=*/true);
  };
  const SessionResult a = run_once();
  const SessionResult b = run_once();

  // Corner sequence: the start plus one step per decoded direction.
  const Eigen::Vector2d p0 = forward_kinematics(cfg.robot, cfg.initial_theta);
  std::vector<Point2> corners{{p0[0], p0[1]}};
  corners.insert(corners.end(), a.waypoints.begin(), a.waypoints.end());
  const bool decoded_all = a.waypoints.size() == cfg.synth.intended_bulbs.size();

  std::size_t next = 0;
  for (const auto& rec : a.trajectory.samples) {
    if (next >= corners.size()) break;
    const Eigen::Vector2d c(corners[next].x, corners[next].z);
    if ((rec.p - c).norm() < 2.0 * cfg.run.settle_tolerance) ++next;
  }
  const bool corners_ok = decoded_all && next == corners.size();

  const std::string svg = "/tmp/bci_acceptance_letter_g.svg";
  save_trajectory_svg(a.trajectory, a.waypoints, svg);
  const bool svg_ok = std::filesystem::file_size(svg) > 0;
  std::remove(svg.c_str());

  bool deterministic = a.trajectory.samples.size() == b.trajectory.samples.size();
  if (deterministic) {
    for (std::size_t i = 0; i < a.trajectory.samples.size(); ++i) {
      if (a.trajectory.samples[i].theta != b.trajectory.samples[i].theta ||
          a.trajectory.samples[i].u != b.trajectory.samples[i].u) {
        deterministic = false;
        break;
      }
    }
  }
  const double elapsed = seconds_since(t0);
  const bool time_ok = elapsed < 120.0;

  report(9, "letter-G end-to-end", corners_ok && svg_ok && deterministic && time_ok);
  CHECK(decoded_all);
  CHECK(corners_ok);
  CHECK(svg_ok);
  CHECK(deterministic);
  INFO("elapsed " << elapsed << "s");
  CHECK(time_ok);
}

TEST_CASE("criterion 10: optional BCI Competition II dataset") {
  // The bci2 loader is dataset-gated; without the externally supplied corpus
  // there is nothing to run, which the criterion explicitly allows.
  const bool dataset_present = std::filesystem::exists("data/bci_competition_ii");
  if (!dataset_present) {
    report(10, "bci2 dataset run (skipped: no dataset)", true);
    SUCCEED("dataset not supplied");
    return;
  }
  report(10, "bci2 dataset run", false);  // loader stub: supply-and-implement
  FAIL("dataset present but the bci2 loader is a stub");
}
