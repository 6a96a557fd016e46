#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bci/arm_sim.hpp"
#include "bci/classify.hpp"
#include "bci/common.hpp"
#include "bci/decoder.hpp"
#include "bci/eeg_io.hpp"
#include "bci/features.hpp"
#include "bci/preprocess.hpp"
#include "bci/serialize.hpp"

namespace bci {

// Every tunable of the pipeline, one section per module.
struct PipelineConfig {
  double sample_rate = 500.0;
  SyntheticSubjectConfig synth;
  FilterSpec filter;
  double artifact_threshold = 100.0;
  int keep_k = 6;
  PcaRetain retain = PcaRetain::variance(0.95);
  ClassifierConfig classifier;
  int cv_folds = 5;

  PipelineConfig() {
    // gamma <= 0 means "set from the data scale at training time".
    classifier.kernel.gamma = 0.0;
  }
  DecisionConfig decision;
  RobotParams robot;
  ControllerGains gains;
  RunOptions run;
  Eigen::Vector2d initial_theta = {1.9, -1.9};
};

namespace detail {

inline void reject_unknown_keys(const json& j, const std::vector<std::string>& allowed,
                                const std::string& section) {
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError("unknown key '" + key + "' in config section '" + section + "'");
  }
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline PipelineConfig config_from_json(const json& j) {
  PipelineConfig cfg;
  detail::reject_unknown_keys(j,
                              {"sample_rate", "synth", "preprocess", "features", "classifier",
                               "decoder", "robot", "control", "run"},
                              "<root>");
  detail::maybe(j, "sample_rate", cfg.sample_rate);

  if (j.contains("synth")) {
    const json& s = j.at("synth");
    detail::reject_unknown_keys(s,
                                {"p300_amplitude", "p300_latency_ms", "p300_width_ms", "noise_std",
                                 "noise_color", "responsive_channels", "rng_seed", "intended_bulbs",
                                 "rounds_per_decision", "n_channels", "n_decisions"},
                                "synth");
    detail::maybe(s, "p300_amplitude", cfg.synth.p300_amplitude);
    detail::maybe(s, "p300_latency_ms", cfg.synth.p300_latency_ms);
    detail::maybe(s, "p300_width_ms", cfg.synth.p300_width_ms);
    detail::maybe(s, "noise_std", cfg.synth.noise_std);
    detail::maybe(s, "responsive_channels", cfg.synth.responsive_channels);
    detail::maybe(s, "rng_seed", cfg.synth.rng_seed);
    detail::maybe(s, "intended_bulbs", cfg.synth.intended_bulbs);
    detail::maybe(s, "rounds_per_decision", cfg.synth.rounds_per_decision);
    detail::maybe(s, "n_channels", cfg.synth.n_channels);
    if (s.contains("noise_color")) {
      const std::string c = s.at("noise_color").get<std::string>();
      if (c == "white") cfg.synth.noise_color = NoiseColor::White;
      else if (c == "pink") cfg.synth.noise_color = NoiseColor::Pink;
      else throw ConfigError("noise_color must be 'white' or 'pink'");
    }
    if (s.contains("n_decisions") && cfg.synth.intended_bulbs.empty()) {
      // Convenience: a seeded uniform-random intent sequence.
      const int n = s.at("n_decisions").get<int>();
      if (n < 1) throw ConfigError("n_decisions must be >= 1");
      std::mt19937_64 rng(cfg.synth.rng_seed ^ 0x9e3779b97f4a7c15ull);
      std::uniform_int_distribution<int> bulb(1, 4);
      for (int i = 0; i < n; ++i) cfg.synth.intended_bulbs.push_back(bulb(rng));
    }
  }

  if (j.contains("preprocess")) {
    const json& p = j.at("preprocess");
    detail::reject_unknown_keys(p, {"low_cut", "high_cut", "order", "artifact_threshold", "keep_k"},
                                "preprocess");
    detail::maybe(p, "low_cut", cfg.filter.low_cut);
    detail::maybe(p, "high_cut", cfg.filter.high_cut);
    detail::maybe(p, "order", cfg.filter.order);
    detail::maybe(p, "artifact_threshold", cfg.artifact_threshold);
    detail::maybe(p, "keep_k", cfg.keep_k);
  }

  if (j.contains("features")) {
    const json& f = j.at("features");
    detail::reject_unknown_keys(f, {"retain_components", "retain_variance"}, "features");
    if (f.contains("retain_components") && f.contains("retain_variance"))
      throw ConfigError("specify either retain_components or retain_variance, not both");
    if (f.contains("retain_components"))
      cfg.retain = PcaRetain::components(f.at("retain_components").get<int>());
    if (f.contains("retain_variance"))
      cfg.retain = PcaRetain::variance(f.at("retain_variance").get<double>());
  }

  if (j.contains("classifier")) {
    const json& c = j.at("classifier");
    detail::reject_unknown_keys(c, {"type", "kernel", "gamma", "C", "tol", "seed", "k", "cv_folds"},
                                "classifier");
    if (c.contains("type")) {
      const std::string t = c.at("type").get<std::string>();
      if (t == "svm") cfg.classifier.type = ClassifierConfig::Type::Svm;
      else if (t == "knn") cfg.classifier.type = ClassifierConfig::Type::Knn;
      else throw ConfigError("classifier type must be 'svm' or 'knn'");
    }
    if (c.contains("kernel")) {
      const std::string k = c.at("kernel").get<std::string>();
      if (k == "linear") cfg.classifier.kernel.type = Kernel::Type::Linear;
      else if (k == "gaussian") cfg.classifier.kernel.type = Kernel::Type::Gaussian;
      else throw ConfigError("kernel must be 'linear' or 'gaussian'");
    }
    detail::maybe(c, "gamma", cfg.classifier.kernel.gamma);
    detail::maybe(c, "C", cfg.classifier.C);
    detail::maybe(c, "tol", cfg.classifier.tol);
    detail::maybe(c, "seed", cfg.classifier.seed);
    detail::maybe(c, "k", cfg.classifier.k);
    detail::maybe(c, "cv_folds", cfg.cv_folds);
  }

  if (j.contains("decoder")) {
    const json& d = j.at("decoder");
    detail::reject_unknown_keys(d, {"step_resolution", "min_score_margin", "bulb_direction_map"},
                                "decoder");
    detail::maybe(d, "step_resolution", cfg.decision.step_resolution);
    detail::maybe(d, "min_score_margin", cfg.decision.min_score_margin);
    if (d.contains("bulb_direction_map")) {
      cfg.decision.bulb_direction_map.clear();
      for (const auto& [key, value] : d.at("bulb_direction_map").items()) {
        const std::string v = value.get<std::string>();
        Direction dir;
        if (v == "up") dir = Direction::Up;
        else if (v == "down") dir = Direction::Down;
        else if (v == "left") dir = Direction::Left;
        else if (v == "right") dir = Direction::Right;
        else throw ConfigError("unknown direction '" + v + "' in bulb_direction_map");
        cfg.decision.bulb_direction_map[std::stoi(key)] = dir;
      }
    }
  }

  if (j.contains("robot")) {
    const json& r = j.at("robot");
    detail::reject_unknown_keys(r, {"l1", "l2", "lc1", "lc2", "m1", "m2", "I1", "I2", "gravity"},
                                "robot");
    detail::maybe(r, "l1", cfg.robot.l1);
    detail::maybe(r, "l2", cfg.robot.l2);
    detail::maybe(r, "lc1", cfg.robot.lc1);
    detail::maybe(r, "lc2", cfg.robot.lc2);
    detail::maybe(r, "m1", cfg.robot.m1);
    detail::maybe(r, "m2", cfg.robot.m2);
    detail::maybe(r, "I1", cfg.robot.I1);
    detail::maybe(r, "I2", cfg.robot.I2);
    detail::maybe(r, "gravity", cfg.robot.gravity);
  }

  if (j.contains("control")) {
    const json& c = j.at("control");
    detail::reject_unknown_keys(c, {"kp", "kd", "singularity_damping", "det_threshold"}, "control");
    auto vec2 = [](const json& v) -> Eigen::Vector2d {
      if (v.is_number()) return {v.get<double>(), v.get<double>()};
      if (v.is_array() && v.size() == 2) return {v[0].get<double>(), v[1].get<double>()};
      throw ConfigError("gain must be a scalar or a 2-element array");
    };
    if (c.contains("kp")) cfg.gains.kp = vec2(c.at("kp"));
    if (c.contains("kd")) cfg.gains.kd = vec2(c.at("kd"));
    detail::maybe(c, "singularity_damping", cfg.gains.singularity_damping);
    detail::maybe(c, "det_threshold", cfg.gains.det_threshold);
  }

  if (j.contains("run")) {
    const json& r = j.at("run");
    detail::reject_unknown_keys(
        r, {"dt", "settle_tolerance", "settle_steps", "max_steps_per_waypoint", "initial_theta"},
        "run");
    detail::maybe(r, "dt", cfg.run.dt);
    detail::maybe(r, "settle_tolerance", cfg.run.settle_tolerance);
    detail::maybe(r, "settle_steps", cfg.run.settle_steps);
    detail::maybe(r, "max_steps_per_waypoint", cfg.run.max_steps_per_waypoint);
    if (r.contains("initial_theta")) {
      const json& t = r.at("initial_theta");
      if (!t.is_array() || t.size() != 2) throw ConfigError("initial_theta must be a 2-element array");
      cfg.initial_theta = {t[0].get<double>(), t[1].get<double>()};
    }
  }
  return cfg;
}

// Applies "a.b=value" overrides onto the raw config JSON; values parse as
// JSON where possible, otherwise as strings.
inline void apply_overrides(json& j, const std::vector<std::string>& overrides) {
  for (const std::string& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos) throw ConfigError("override must look like section.key=value: " + ov);
    std::string path = ov.substr(0, eq);
    const std::string raw = ov.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::parse_error&) {
      value = raw;
    }
    json* node = &j;
    std::stringstream ss(path);
    std::string part, last;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    if (parts.empty()) throw ConfigError("empty override path");
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &((*node)[parts[i]]);
    (*node)[parts.back()] = value;
  }
}

struct DecisionBlock {
  int index = 0;
  std::vector<AveragedEpoch> averages;  // one per bulb, ascending bulb id
  double end_time = 0.0;                // recording time of the block's last epoch
};

// Preprocess a session and collapse it into per-decision averaged epochs:
// detrend + band-pass, epoch, artifact-reject, average per bulb.
inline std::vector<DecisionBlock> preprocess_session(const RawRecording& rec,
                                                     const PipelineConfig& cfg,
                                                     int rounds_per_decision) {
  const std::vector<StimulusEvent> events = segment_rounds(rec);
  const RawRecording filtered = preprocess_recording(rec, cfg.filter);
  const std::vector<Epoch> epochs = extract_epochs(filtered, events);
  auto [kept, rejected] = reject_artifacts(epochs, cfg.artifact_threshold);
  (void)rejected;

  std::map<int, std::vector<Epoch>> blocks;
  std::map<int, Eigen::Index> last_sample;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const int di = kept[i].round_index / rounds_per_decision;
    blocks[di].push_back(kept[i]);
  }
  for (const auto& ev : events)
    last_sample[ev.round_index / rounds_per_decision] =
        std::max(last_sample[ev.round_index / rounds_per_decision], ev.onset_sample);

  std::vector<DecisionBlock> out;
  for (auto& [di, eps] : blocks) {
    DecisionBlock b;
    b.index = di;
    try {
      b.averages = average_epochs(eps);
    } catch (const ProtocolError& e) {
      throw ProtocolError("decision block " + std::to_string(di) + ": " + e.what());
    }
    b.end_time = rec.timestamps[last_sample[di]];
    out.push_back(std::move(b));
  }
  return out;
}

struct TrainedPipeline {
  std::vector<bool> channel_mask;
  PcaModel pca;
  SvmModel svm;
  KnnModel knn;
  CvMetrics svm_cv;
  CvMetrics knn_cv;
};

// Full training chain on a labeled session: preprocess, channel-select on
// target averages, assemble features, fit PCA, train and cross-validate
// both classifiers.
inline TrainedPipeline train_pipeline(const RawRecording& rec, const std::vector<int>& intents,
                                      const PipelineConfig& cfg) {
  std::vector<DecisionBlock> blocks = preprocess_session(rec, cfg, cfg.synth.rounds_per_decision);
  if (blocks.size() != intents.size())
    throw ProtocolError("ground truth lists " + std::to_string(intents.size()) +
                        " decisions but the recording has " + std::to_string(blocks.size()));

  std::vector<AveragedEpoch> targets;
  for (auto& b : blocks) {
    for (auto& avg : b.averages) {
      avg.label = avg.bulb == intents[static_cast<std::size_t>(b.index)] ? Label::Target
                                                                        : Label::NonTarget;
      if (avg.label == Label::Target) targets.push_back(avg);
    }
  }

  TrainedPipeline tp;
  tp.channel_mask = select_channels(targets, cfg.keep_k);

  std::vector<FeatureVector> features;
  std::vector<int> labels;
  for (const auto& b : blocks) {
    for (const auto& avg : b.averages) {
      features.push_back(assemble_features(avg, tp.channel_mask, rec.sample_rate));
      labels.push_back(avg.label == Label::Target ? 1 : -1);
    }
  }
  Eigen::MatrixXd raw(static_cast<Eigen::Index>(features.size()), features.front().values.size());
  for (std::size_t i = 0; i < features.size(); ++i)
    raw.row(static_cast<Eigen::Index>(i)) = features[i].values.transpose();

  tp.pca = pca_fit(raw, cfg.retain);
  LabeledSet reduced;
  reduced.vectors.resize(raw.rows(), tp.pca.components.rows());
  for (Eigen::Index i = 0; i < raw.rows(); ++i)
    reduced.vectors.row(i) = pca_project(tp.pca, raw.row(i).transpose()).transpose();
  reduced.labels = labels;

  Kernel kernel = cfg.classifier.kernel;
  if (kernel.type == Kernel::Type::Gaussian && kernel.gamma <= 0.0) {
    // Data-scale heuristic: 1 / mean pairwise squared distance.
    double sum = 0.0;
    Eigen::Index pairs = 0;
    for (Eigen::Index i = 0; i < reduced.vectors.rows(); ++i)
      for (Eigen::Index j = i + 1; j < reduced.vectors.rows(); ++j) {
        sum += (reduced.vectors.row(i) - reduced.vectors.row(j)).squaredNorm();
        ++pairs;
      }
    kernel.gamma = sum > 0.0 ? static_cast<double>(pairs) / sum : 1.0;
  }

  tp.svm = svm_train(reduced, kernel, cfg.classifier.C, cfg.classifier.tol, cfg.classifier.seed);
  tp.knn = KnnModel{reduced, cfg.classifier.k};

  ClassifierConfig svm_cfg = cfg.classifier;
  svm_cfg.type = ClassifierConfig::Type::Svm;
  svm_cfg.kernel = kernel;
  ClassifierConfig knn_cfg = cfg.classifier;
  knn_cfg.type = ClassifierConfig::Type::Knn;
  tp.svm_cv = cross_validate(reduced, svm_cfg, cfg.cv_folds, cfg.classifier.seed);
  tp.knn_cv = cross_validate(reduced, knn_cfg, cfg.cv_folds, cfg.classifier.seed);
  return tp;
}

struct DecisionRecord {
  int block = 0;
  std::map<int, double> scores;  // per bulb
  std::optional<Direction> direction;
  std::optional<Point2> reference;
  double timestamp = 0.0;  // recording time of the block end
};

struct SessionResult {
  std::vector<DecisionRecord> decisions;
  std::vector<Point2> waypoints;
  Trajectory trajectory;
};

// Inference chain: per decision block, score each bulb's averaged epoch,
// pick a direction, advance the task-space reference, then track the
// waypoint sequence with the closed-loop arm.
inline SessionResult run_session(const RawRecording& rec, const TrainedPipeline& tp,
                                 const PipelineConfig& cfg, bool simulate_arm = true) {
  std::vector<DecisionBlock> blocks = preprocess_session(rec, cfg, cfg.synth.rounds_per_decision);

  SessionResult out;
  const Workspace ws = workspace_of(cfg.robot);
  RobotState init;
  init.theta = cfg.initial_theta;
  const Eigen::Vector2d p0 = forward_kinematics(cfg.robot, init.theta);
  Point2 current{p0[0], p0[1]};
  if (!ws.contains(current))
    throw WorkspaceError("initial end-effector position is outside the safe workspace");

  for (const auto& b : blocks) {
    DecisionRecord recd;
    recd.block = b.index;
    recd.timestamp = b.end_time;
    for (const auto& avg : b.averages) {
      const FeatureVector fv = assemble_features(avg, tp.channel_mask, rec.sample_rate);
      const Eigen::VectorXd v = pca_project(tp.pca, fv.values);
      recd.scores[avg.bulb] = cfg.classifier.type == ClassifierConfig::Type::Svm
                                  ? svm_predict(tp.svm, v).score
                                  : knn_decision_score(tp.knn, v);
    }
    recd.direction = decide_direction(recd.scores, cfg.decision);
    if (recd.direction) {
      // A step refused by the workspace check is logged without a reference;
      // the arm holds position, as for a no-decision block.
      try {
        current = reference_from_direction(current, *recd.direction, cfg.decision, ws);
        recd.reference = current;
        out.waypoints.push_back(current);
      } catch (const WorkspaceError&) {
      }
    }
    out.decisions.push_back(std::move(recd));
  }

  if (simulate_arm)
    out.trajectory = run_point_to_point(cfg.robot, cfg.gains, init, out.waypoints, cfg.run);
  return out;
}

// Fraction of decisions whose decoded direction matches the intent.
inline double decoded_accuracy(const SessionResult& result, const std::vector<int>& intents,
                               const DecisionConfig& decision) {
  if (result.decisions.empty()) return 0.0;
  int correct = 0;
  for (const auto& d : result.decisions) {
    const Direction expected =
        decision.bulb_direction_map.at(intents[static_cast<std::size_t>(d.block)]);
    if (d.direction && *d.direction == expected) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(result.decisions.size());
}

// JSON-lines decision log, one line per decision block.
inline void save_decision_log(const SessionResult& result, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw DataFormatError("cannot open for writing: " + path);
  for (const auto& d : result.decisions) {
    json line;
    line["block"] = d.block;
    line["timestamp"] = d.timestamp;
    json scores = json::object();
    for (const auto& [bulb, s] : d.scores) scores[std::to_string(bulb)] = s;
    line["scores"] = scores;
    line["direction"] = d.direction ? json(to_string(*d.direction)) : json(nullptr);
    line["reference"] = d.reference ? json({d.reference->x, d.reference->z}) : json(nullptr);
    f << line.dump() << '\n';
  }
}

}  // namespace bci
