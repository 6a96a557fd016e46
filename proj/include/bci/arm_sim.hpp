#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "bci/common.hpp"
#include "bci/decoder.hpp"

namespace bci {

// 2-link planar arm in the vertical x-z plane.
struct RobotParams {
  double l1 = 0.5, l2 = 0.5;      // link lengths, m
  double lc1 = 0.25, lc2 = 0.25;  // center-of-mass distances, m
  double m1 = 1.0, m2 = 1.0;      // masses, kg
  double I1 = 1.0 / 48.0, I2 = 1.0 / 48.0;  // inertias about COM, kg m^2 (m l^2/12)
  double gravity = 9.81;

  void validate() const {
    if (l1 <= 0 || l2 <= 0 || m1 <= 0 || m2 <= 0) throw ConfigError("lengths and masses must be positive");
    if (lc1 <= 0 || lc2 <= 0 || lc1 > l1 || lc2 > l2) throw ConfigError("need 0 < lc_i <= l_i");
    if (I1 < 0 || I2 < 0) throw ConfigError("inertias must be >= 0");
  }
};

struct RobotState {
  Eigen::Vector2d theta = Eigen::Vector2d::Zero();
  Eigen::Vector2d theta_dot = Eigen::Vector2d::Zero();
};

struct ControllerGains {
  Eigen::Vector2d kp = {100.0, 100.0};  // diagonal of K_P
  Eigen::Vector2d kd = {20.0, 20.0};    // diagonal of K_D (critical damping at w=10)
  double singularity_damping = 0.01;
  double det_threshold = 1e-4;

  void validate() const {
    if (kp.minCoeff() <= 0 || kd.minCoeff() <= 0) throw ConfigError("gains must be positive");
    if (singularity_damping < 0 || det_threshold <= 0)
      throw ConfigError("bad singularity handling parameters");
  }
};

// Task-space reference with velocity and acceleration feedforward. The step
// mode holds a constant target; min-jerk interpolates with zero boundary
// velocity and acceleration.
struct ReferenceSignal {
  enum class Mode { Step, MinJerk };
  Mode mode = Mode::Step;
  Eigen::Vector2d start = Eigen::Vector2d::Zero();  // min-jerk only
  Eigen::Vector2d target = Eigen::Vector2d::Zero();
  double duration = 1.0;  // min-jerk only

  struct Sample {
    Eigen::Vector2d p, v, a;
  };

  Sample at(double t) const {
    if (mode == Mode::Step) return {target, Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero()};
    const double tau = std::clamp(t / duration, 0.0, 1.0);
    const double s = tau * tau * tau * (10.0 - 15.0 * tau + 6.0 * tau * tau);
    const double sd = 30.0 * tau * tau * (1.0 - tau) * (1.0 - tau) / duration;
    const double sdd = (60.0 * tau - 180.0 * tau * tau + 120.0 * tau * tau * tau) / (duration * duration);
    const Eigen::Vector2d d = target - start;
    return {start + s * d, sd * d, sdd * d};
  }
};

struct TrajectorySample {
  double t = 0.0;
  Eigen::Vector2d theta, theta_dot, p, u;
};

struct Trajectory {
  std::vector<TrajectorySample> samples;
  double dt = 0.0;
};

inline Eigen::Vector2d forward_kinematics(const RobotParams& params, const Eigen::Vector2d& theta) {
  const double c1 = std::cos(theta[0]), s1 = std::sin(theta[0]);
  const double c12 = std::cos(theta[0] + theta[1]), s12 = std::sin(theta[0] + theta[1]);
  return {params.l1 * c1 + params.l2 * c12, params.l1 * s1 + params.l2 * s12};
}

struct JacobianResult {
  Eigen::Matrix2d J;            // analytical Jacobian dp/dtheta
  Eigen::Vector2d Jdot_thetadot;  // drift term Jdot * theta_dot
};

inline JacobianResult jacobian(const RobotParams& params, const Eigen::Vector2d& theta,
                               const Eigen::Vector2d& theta_dot) {
  const double c1 = std::cos(theta[0]), s1 = std::sin(theta[0]);
  const double c12 = std::cos(theta[0] + theta[1]), s12 = std::sin(theta[0] + theta[1]);
  const double td1 = theta_dot[0], td12 = theta_dot[0] + theta_dot[1];
  JacobianResult r;
  r.J << -params.l1 * s1 - params.l2 * s12, -params.l2 * s12,
         params.l1 * c1 + params.l2 * c12, params.l2 * c12;
  Eigen::Matrix2d Jdot;
  Jdot << -params.l1 * c1 * td1 - params.l2 * c12 * td12, -params.l2 * c12 * td12,
          -params.l1 * s1 * td1 - params.l2 * s12 * td12, -params.l2 * s12 * td12;
  r.Jdot_thetadot = Jdot * theta_dot;
  return r;
}

struct DynamicsMatrices {
  Eigen::Matrix2d M;  // inertia
  Eigen::Matrix2d C;  // Coriolis/centrifugal (Christoffel form)
  Eigen::Vector2d g;  // gravity torque
};

// Standard 2R closed forms; C is built from Christoffel symbols so that
// Mdot - 2C stays skew-symmetric.
inline DynamicsMatrices dynamics_matrices(const RobotParams& p, const RobotState& s) {
  const double c2 = std::cos(s.theta[1]), s2 = std::sin(s.theta[1]);
  DynamicsMatrices d;
  const double m11 = p.m1 * p.lc1 * p.lc1 + p.I1 +
                     p.m2 * (p.l1 * p.l1 + p.lc2 * p.lc2 + 2.0 * p.l1 * p.lc2 * c2) + p.I2;
  const double m12 = p.m2 * (p.lc2 * p.lc2 + p.l1 * p.lc2 * c2) + p.I2;
  const double m22 = p.m2 * p.lc2 * p.lc2 + p.I2;
  d.M << m11, m12, m12, m22;

  const double h = p.m2 * p.l1 * p.lc2 * s2;
  d.C << -h * s.theta_dot[1], -h * (s.theta_dot[0] + s.theta_dot[1]),
         h * s.theta_dot[0], 0.0;

  const double c1 = std::cos(s.theta[0]);
  const double c12 = std::cos(s.theta[0] + s.theta[1]);
  d.g << (p.m1 * p.lc1 + p.m2 * p.l1) * p.gravity * c1 + p.m2 * p.lc2 * p.gravity * c12,
         p.m2 * p.lc2 * p.gravity * c12;
  return d;
}

// Feedback-linearizing task-space control: v drives the end-effector error
// dynamics, u = M v + C theta_dot + g. Near Jacobian singularities the
// inverse is replaced by the damped least-squares inverse.
inline Eigen::Vector2d inverse_dynamics_control(const RobotState& state,
                                                const ReferenceSignal::Sample& ref,
                                                const ControllerGains& gains,
                                                const RobotParams& params) {
  gains.validate();
  params.validate();
  const auto [J, drift] = jacobian(params, state.theta, state.theta_dot);
  const Eigen::Vector2d p = forward_kinematics(params, state.theta);
  const Eigen::Vector2d e = ref.p - p;
  const Eigen::Vector2d e_dot = ref.v - J * state.theta_dot;
  const Eigen::Vector2d rhs =
      ref.a + gains.kd.asDiagonal() * e_dot + gains.kp.asDiagonal() * e - drift;

  Eigen::Vector2d v;
  if (std::abs(J.determinant()) < gains.det_threshold) {
    const double lambda2 = gains.singularity_damping * gains.singularity_damping;
    v = J.transpose() * (J * J.transpose() + lambda2 * Eigen::Matrix2d::Identity()).inverse() * rhs;
  } else {
    v = J.inverse() * rhs;
  }
  const auto dyn = dynamics_matrices(params, state);
  return dyn.M * v + dyn.C * state.theta_dot + dyn.g;
}

// Classical RK4 on theta_ddot = M^{-1}(u - C theta_dot - g) with the torque
// held constant over the step.
inline RobotState step(const RobotState& state, const Eigen::Vector2d& u, double dt,
                       const RobotParams& params) {
  if (dt <= 0.0) throw ConfigError("dt must be positive");
  auto accel = [&](const RobotState& s) -> Eigen::Vector2d {
    const auto d = dynamics_matrices(params, s);
    return d.M.ldlt().solve(u - d.C * s.theta_dot - d.g);
  };
  auto deriv = [&](const RobotState& s) {
    return std::pair<Eigen::Vector2d, Eigen::Vector2d>{s.theta_dot, accel(s)};
  };
  const auto k1 = deriv(state);
  const auto k2 = deriv({state.theta + 0.5 * dt * k1.first, state.theta_dot + 0.5 * dt * k1.second});
  const auto k3 = deriv({state.theta + 0.5 * dt * k2.first, state.theta_dot + 0.5 * dt * k2.second});
  const auto k4 = deriv({state.theta + dt * k3.first, state.theta_dot + dt * k3.second});
  RobotState next;
  next.theta = state.theta + dt / 6.0 * (k1.first + 2.0 * k2.first + 2.0 * k3.first + k4.first);
  next.theta_dot =
      state.theta_dot + dt / 6.0 * (k1.second + 2.0 * k2.second + 2.0 * k3.second + k4.second);
  if (!next.theta.allFinite() || !next.theta_dot.allFinite())
    throw ConvergenceError("non-finite state after integration step");
  return next;
}

// Total mechanical energy, used by the free-swing conservation checks.
inline double total_energy(const RobotParams& p, const RobotState& s) {
  const auto d = dynamics_matrices(p, s);
  const double kinetic = 0.5 * s.theta_dot.dot(d.M * s.theta_dot);
  const double potential = p.m1 * p.gravity * p.lc1 * std::sin(s.theta[0]) +
                           p.m2 * p.gravity *
                               (p.l1 * std::sin(s.theta[0]) + p.lc2 * std::sin(s.theta[0] + s.theta[1]));
  return kinetic + potential;
}

struct RunOptions {
  double dt = 1e-3;
  double settle_tolerance = 1e-3;  // m
  int settle_steps = 50;           // consecutive steps inside tolerance
  int max_steps_per_waypoint = 200000;
};

inline Workspace workspace_of(const RobotParams& p, double margin = 0.05) {
  return {std::abs(p.l1 - p.l2), p.l1 + p.l2, margin};
}

// Closed-loop point-to-point session: each waypoint becomes a step reference
// tracked until the error and error rate stay small for settle_steps
// consecutive steps.
inline Trajectory run_point_to_point(const RobotParams& params, const ControllerGains& gains,
                                     const RobotState& initial,
                                     const std::vector<Point2>& waypoints,
                                     const RunOptions& opts = {}) {
  params.validate();
  gains.validate();
  const Workspace ws = workspace_of(params);
  for (const auto& w : waypoints)
    if (!ws.contains(w))
      throw WorkspaceError("waypoint (" + std::to_string(w.x) + ", " + std::to_string(w.z) +
                           ") outside the reachable workspace");

  Trajectory traj;
  traj.dt = opts.dt;
  RobotState state = initial;
  double t = 0.0;
  traj.samples.push_back(
      {t, state.theta, state.theta_dot, forward_kinematics(params, state.theta), Eigen::Vector2d::Zero()});

  for (const auto& w : waypoints) {
    ReferenceSignal ref;
    ref.mode = ReferenceSignal::Mode::Step;
    ref.target = {w.x, w.z};
    int settled = 0;
    int steps = 0;
    while (settled < opts.settle_steps) {
      if (++steps > opts.max_steps_per_waypoint)
        throw ConvergenceError("no convergence to waypoint (" + std::to_string(w.x) + ", " +
                               std::to_string(w.z) + ") within the step budget");
      const auto r = ref.at(t);
      const Eigen::Vector2d u = inverse_dynamics_control(state, r, gains, params);
      state = step(state, u, opts.dt, params);
      t += opts.dt;
      const Eigen::Vector2d p = forward_kinematics(params, state.theta);
      traj.samples.push_back({t, state.theta, state.theta_dot, p, u});
      const Eigen::Vector2d e = r.p - p;
      const Eigen::Vector2d e_dot = -jacobian(params, state.theta, state.theta_dot).J * state.theta_dot;
      if (e.norm() < opts.settle_tolerance && e_dot.norm() < 10.0 * opts.settle_tolerance)
        ++settled;
      else
        settled = 0;
    }
  }
  return traj;
}

// CSV export: t,theta1,theta2,dtheta1,dtheta2,x,z,u1,u2.
inline void save_trajectory_csv(const Trajectory& traj, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw DataFormatError("cannot open for writing: " + path);
  f << "t,theta1,theta2,dtheta1,dtheta2,x,z,u1,u2\n";
  char buf[256];
  for (const auto& s : traj.samples) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", s.t,
                  s.theta[0], s.theta[1], s.theta_dot[0], s.theta_dot[1], s.p[0], s.p[1], s.u[0],
                  s.u[1]);
    f << buf;
  }
}

inline Trajectory load_trajectory_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataFormatError("cannot open: " + path);
  std::string line;
  if (!std::getline(f, line) || line != "t,theta1,theta2,dtheta1,dtheta2,x,z,u1,u2")
    throw DataFormatError("bad trajectory header: " + path);
  Trajectory traj;
  std::size_t row = 1;
  while (std::getline(f, line)) {
    ++row;
    if (line.empty()) continue;
    TrajectorySample s;
    if (std::sscanf(line.c_str(), "%lg,%lg,%lg,%lg,%lg,%lg,%lg,%lg,%lg", &s.t, &s.theta[0],
                    &s.theta[1], &s.theta_dot[0], &s.theta_dot[1], &s.p[0], &s.p[1], &s.u[0],
                    &s.u[1]) != 9)
      throw DataFormatError("bad trajectory row " + std::to_string(row));
    traj.samples.push_back(s);
  }
  if (traj.samples.size() >= 2) traj.dt = traj.samples[1].t - traj.samples[0].t;
  return traj;
}

// SVG polyline of the end-effector path with circular waypoint markers.
inline void save_trajectory_svg(const Trajectory& traj, const std::vector<Point2>& waypoints,
                                const std::string& path) {
  if (traj.samples.empty()) throw DataFormatError("empty trajectory");
  double xmin = 1e300, xmax = -1e300, zmin = 1e300, zmax = -1e300;
  auto grow = [&](double x, double z) {
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
    zmin = std::min(zmin, z);
    zmax = std::max(zmax, z);
  };
  for (const auto& s : traj.samples) grow(s.p[0], s.p[1]);
  for (const auto& w : waypoints) grow(w.x, w.z);
  const double span = std::max({xmax - xmin, zmax - zmin, 1e-6});
  const double pad = 0.1 * span;
  const double scale = 500.0 / (span + 2 * pad);
  auto px = [&](double x) { return (x - xmin + pad) * scale; };
  auto pz = [&](double z) { return 500.0 - (z - zmin + pad) * scale; };  // z up

  std::ofstream f(path);
  if (!f) throw DataFormatError("cannot open for writing: " + path);
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"500\" height=\"500\" "
       "viewBox=\"0 0 500 500\">\n";
  f << "<rect width=\"500\" height=\"500\" fill=\"white\"/>\n<polyline fill=\"none\" "
       "stroke=\"black\" stroke-width=\"1.5\" points=\"";
  for (const auto& s : traj.samples) f << px(s.p[0]) << ',' << pz(s.p[1]) << ' ';
  f << "\"/>\n";
  for (const auto& w : waypoints)
    f << "<circle cx=\"" << px(w.x) << "\" cy=\"" << pz(w.z)
      << "\" r=\"4\" fill=\"none\" stroke=\"red\" stroke-width=\"1.5\"/>\n";
  f << "</svg>\n";
}

}  // namespace bci
