#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>

#include "bci/common.hpp"

namespace bci {

enum class Direction { Up, Down, Left, Right };

inline std::string to_string(Direction d) {
  switch (d) {
    case Direction::Up: return "up";
    case Direction::Down: return "down";
    case Direction::Left: return "left";
    case Direction::Right: return "right";
  }
  return "?";
}

struct Point2 {
  double x = 0.0;
  double z = 0.0;
};

struct DecisionConfig {
  double step_resolution = 0.1;  // h, meters per decoded command
  double min_score_margin = 0.0;
  // Bulb -> direction assignment; the default is 1=up, 2=down, 3=left, 4=right.
  std::map<int, Direction> bulb_direction_map = {{1, Direction::Up},
                                                 {2, Direction::Down},
                                                 {3, Direction::Left},
                                                 {4, Direction::Right}};

  void validate() const {
    if (step_resolution <= 0.0) throw ConfigError("step_resolution must be positive");
    if (min_score_margin < 0.0) throw ConfigError("min_score_margin must be >= 0");
    if (bulb_direction_map.size() != 4) throw ConfigError("bulb_direction_map must cover bulbs 1..4");
    std::array<bool, 4> seen{};
    for (const auto& [bulb, dir] : bulb_direction_map) {
      if (bulb < 1 || bulb > 4) throw ConfigError("bulb id out of range in direction map");
      auto& s = seen[static_cast<std::size_t>(dir)];
      if (s) throw ConfigError("bulb_direction_map is not a bijection");
      s = true;
    }
  }
};

// Reachable annulus of the arm, shrunk by a safety margin.
struct Workspace {
  double r_min = 0.0;
  double r_max = 1.0;
  double margin = 0.05;  // fraction of r_max

  bool contains(const Point2& p) const {
    const double r = std::hypot(p.x, p.z);
    return r >= r_min + margin * r_max && r <= r_max * (1.0 - margin);
  }
};

// Argmax over the four per-bulb scores; no decision unless the winner leads
// the runner-up by at least min_score_margin. Exact ties go to the lower
// bulb id.
inline std::optional<Direction> decide_direction(const std::map<int, double>& scores,
                                                 const DecisionConfig& cfg) {
  cfg.validate();
  if (scores.size() != 4) throw ConfigError("expected exactly 4 per-bulb scores");
  int best_bulb = 0;
  double best = 0.0;
  for (const auto& [bulb, score] : scores) {
    if (bulb < 1 || bulb > 4) throw ConfigError("score keyed by unknown bulb " + std::to_string(bulb));
    if (best_bulb == 0 || score > best) {  // ties keep the lower bulb id
      best = score;
      best_bulb = bulb;
    }
  }
  double second = -std::numeric_limits<double>::infinity();
  for (const auto& [bulb, score] : scores)
    if (bulb != best_bulb) second = std::max(second, score);
  if (best - second < cfg.min_score_margin) return std::nullopt;
  return cfg.bulb_direction_map.at(best_bulb);
}

// One step of length h in the decoded direction; refused if the target
// leaves the safe part of the reachable annulus.
inline Point2 reference_from_direction(const Point2& current, Direction dir,
                                       const DecisionConfig& cfg, const Workspace& ws) {
  cfg.validate();
  const double h = cfg.step_resolution;
  Point2 p = current;
  switch (dir) {
    case Direction::Up: p.z += h; break;
    case Direction::Down: p.z -= h; break;
    case Direction::Right: p.x += h; break;
    case Direction::Left: p.x -= h; break;
  }
  if (!ws.contains(p))
    throw WorkspaceError("reference (" + std::to_string(p.x) + ", " + std::to_string(p.z) +
                         ") leaves the reachable workspace");
  return p;
}

}  // namespace bci
