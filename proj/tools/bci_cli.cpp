// Command-line front end for the P300 BCI -> robotic arm pipeline.
//
// Subcommands:
//   synth  generate a synthetic session (recording CSV + ground-truth JSON)
//   train  preprocess + features + PCA + classifiers, write models and CV report
//   run    decode a session and drive the simulated arm (decision log, CSV, SVG)
//   eval   decode only and report direction accuracy against ground truth
//   plot   re-render a trajectory CSV as SVG

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "bci/pipeline.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
};

bci::json load_config_json(const CommonOpts& opts) {
  bci::json j = bci::json::object();
  std::string path = opts.config_path;
  if (path.empty()) {
    if (const char* env = std::getenv("BCI_CONFIG")) path = env;
  }
  if (!path.empty()) j = bci::read_json_file(path);
  bci::apply_overrides(j, opts.overrides);
  return j;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "Pipeline config JSON (default: $BCI_CONFIG)");
  cmd->add_option("--set", opts.overrides, "Override a dotted config key, e.g. --set classifier.k=5");
}

bci::RawRecording load_session(const std::string& path, const std::string& format) {
  if (format == "csv") return bci::load_recording(path);
  if (format == "bci2")
    throw bci::DataFormatError(
        "BCI Competition II loader: dataset not supplied locally; place the competition files "
        "next to the recording and convert them to the documented CSV layout, or run with "
        "--format=csv");
  throw bci::ConfigError("unknown recording format: " + format);
}

std::vector<int> load_truth(const std::string& path) {
  const bci::json j = bci::read_json_file(path);
  if (!j.is_array()) throw bci::DataFormatError("ground-truth sidecar must be a JSON array");
  return j.get<std::vector<int>>();
}

bci::TrainedPipeline load_models(const std::string& dir) {
  bci::TrainedPipeline tp;
  tp.pca = bci::pca_from_json(bci::read_json_file(dir + "/pca.json"));
  tp.svm = bci::svm_from_json(bci::read_json_file(dir + "/svm.json"));
  tp.knn = bci::knn_from_json(bci::read_json_file(dir + "/knn.json"));
  const bci::json mask = bci::read_json_file(dir + "/channel_mask.json");
  tp.channel_mask = mask.get<std::vector<bool>>();
  return tp;
}

void save_models(const bci::TrainedPipeline& tp, const std::string& dir) {
  bci::write_json_file(bci::pca_to_json(tp.pca), dir + "/pca.json");
  bci::write_json_file(bci::svm_to_json(tp.svm), dir + "/svm.json");
  bci::write_json_file(bci::knn_to_json(tp.knn), dir + "/knn.json");
  bci::write_json_file(bci::json(tp.channel_mask), dir + "/channel_mask.json");
  bci::json report;
  report["svm"] = bci::metrics_to_json(tp.svm_cv);
  report["knn"] = bci::metrics_to_json(tp.knn_cv);
  bci::write_json_file(report, dir + "/cv_report.json");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"P300 brain-computer interface driving a simulated 2-DoF arm"};
  app.require_subcommand(1);

  CommonOpts synth_opts, train_opts, run_opts, eval_opts;
  std::string synth_out = "recording.csv", synth_truth = "truth.json";
  auto* synth = app.add_subcommand("synth", "Generate a synthetic session");
  add_common(synth, synth_opts);
  synth->add_option("--out", synth_out, "Recording CSV output path");
  synth->add_option("--truth", synth_truth, "Ground-truth JSON output path");

  std::string train_rec, train_truth, train_dir = ".", train_format = "csv";
  bool train_grid = false;
  auto* train = app.add_subcommand("train", "Train PCA + classifiers from a labeled session");
  add_common(train, train_opts);
  train->add_option("--recording", train_rec, "Recording CSV")->required();
  train->add_option("--truth", train_truth, "Ground-truth JSON sidecar")->required();
  train->add_option("--out-dir", train_dir, "Directory for model and report files");
  train->add_option("--format", train_format, "Recording format: csv or bci2");
  train->add_flag("--grid-search", train_grid, "Sweep SVM C and gamma before training");

  std::string run_rec, run_truth, run_models = ".", run_dir = ".", run_format = "csv";
  auto* run = app.add_subcommand("run", "Decode a session and drive the simulated arm");
  add_common(run, run_opts);
  run->add_option("--recording", run_rec, "Recording CSV")->required();
  run->add_option("--models", run_models, "Directory holding pca/svm/knn/channel_mask JSON");
  run->add_option("--truth", run_truth, "Optional ground truth for an accuracy report");
  run->add_option("--out-dir", run_dir, "Directory for decision log, trajectory CSV and SVG");
  run->add_option("--format", run_format, "Recording format: csv or bci2");

  std::string eval_rec, eval_truth, eval_models = ".", eval_format = "csv";
  auto* eval = app.add_subcommand("eval", "Decode only and report direction accuracy");
  add_common(eval, eval_opts);
  eval->add_option("--recording", eval_rec, "Recording CSV")->required();
  eval->add_option("--truth", eval_truth, "Ground-truth JSON sidecar")->required();
  eval->add_option("--models", eval_models, "Directory holding model JSON files");
  eval->add_option("--format", eval_format, "Recording format: csv or bci2");

  std::string plot_traj, plot_out = "trajectory.svg", plot_decisions;
  auto* plot = app.add_subcommand("plot", "Render a trajectory CSV as SVG");
  plot->add_option("--trajectory", plot_traj, "Trajectory CSV")->required();
  plot->add_option("--out", plot_out, "SVG output path");
  plot->add_option("--decisions", plot_decisions, "Decision log (JSON lines) for waypoint markers");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      const bci::PipelineConfig cfg = bci::config_from_json(load_config_json(synth_opts));
      const bci::SynthSession session = bci::synth_session(cfg.synth, cfg.sample_rate);
      bci::save_recording(session.recording, synth_out);
      bci::write_json_file(bci::json(session.intended_bulbs), synth_truth);
      std::cout << "wrote " << synth_out << " (" << session.recording.n_samples() << " samples, "
                << session.events.size() << " stimulus events) and " << synth_truth << "\n";
    } else if (*train) {
      bci::PipelineConfig cfg = bci::config_from_json(load_config_json(train_opts));
      const bci::RawRecording rec = load_session(train_rec, train_format);
      const std::vector<int> truth = load_truth(train_truth);
      if (train_grid) {
        // Quick sweep on a first pass of the feature chain.
        bci::PipelineConfig probe = cfg;
        const bci::TrainedPipeline tp0 = bci::train_pipeline(rec, truth, probe);
        bci::LabeledSet reduced;
        reduced = tp0.knn.train;
        const bci::ClassifierConfig best = bci::svm_grid_search(reduced, cfg.cv_folds);
        cfg.classifier.kernel = best.kernel;
        cfg.classifier.C = best.C;
        std::cout << "grid search: C=" << best.C << " gamma=" << best.kernel.gamma << "\n";
      }
      const bci::TrainedPipeline tp = bci::train_pipeline(rec, truth, cfg);
      save_models(tp, train_dir);
      std::cout << "CV accuracy: svm=" << tp.svm_cv.accuracy << " knn=" << tp.knn_cv.accuracy
                << "; models written to " << train_dir << "\n";
    } else if (*run) {
      const bci::PipelineConfig cfg = bci::config_from_json(load_config_json(run_opts));
      const bci::RawRecording rec = load_session(run_rec, run_format);
      const bci::TrainedPipeline tp = load_models(run_models);
      const bci::SessionResult result = bci::run_session(rec, tp, cfg, true);
      bci::save_decision_log(result, run_dir + "/decisions.jsonl");
      bci::save_trajectory_csv(result.trajectory, run_dir + "/trajectory.csv");
      bci::save_trajectory_svg(result.trajectory, result.waypoints, run_dir + "/trajectory.svg");
      std::cout << result.decisions.size() << " decisions, " << result.waypoints.size()
                << " movements; artifacts written to " << run_dir << "\n";
      if (!run_truth.empty()) {
        const double acc = bci::decoded_accuracy(result, load_truth(run_truth), cfg.decision);
        std::cout << "decoded-direction accuracy: " << acc << "\n";
      }
    } else if (*eval) {
      const bci::PipelineConfig cfg = bci::config_from_json(load_config_json(eval_opts));
      const bci::RawRecording rec = load_session(eval_rec, eval_format);
      const bci::TrainedPipeline tp = load_models(eval_models);
      const bci::SessionResult result = bci::run_session(rec, tp, cfg, false);
      const double acc = bci::decoded_accuracy(result, load_truth(eval_truth), cfg.decision);
      bci::json report;
      report["n_decisions"] = result.decisions.size();
      report["accuracy"] = acc;
      std::cout << report.dump(2) << "\n";
    } else if (*plot) {
      const bci::Trajectory traj = bci::load_trajectory_csv(plot_traj);
      std::vector<bci::Point2> waypoints;
      if (!plot_decisions.empty()) {
        std::ifstream f(plot_decisions);
        if (!f) throw bci::DataFormatError("cannot open: " + plot_decisions);
        std::string line;
        while (std::getline(f, line)) {
          if (line.empty()) continue;
          const bci::json j = bci::json::parse(line);
          if (!j.at("reference").is_null())
            waypoints.push_back({j["reference"][0].get<double>(), j["reference"][1].get<double>()});
        }
      }
      bci::save_trajectory_svg(traj, waypoints, plot_out);
      std::cout << "wrote " << plot_out << "\n";
    }
  } catch (const bci::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const bci::DataFormatError& e) {
    std::cerr << "data format error: " << e.what() << "\n";
    return 3;
  } catch (const bci::SizeError& e) {
    std::cerr << "data format error: " << e.what() << "\n";
    return 3;
  } catch (const bci::ProtocolError& e) {
    std::cerr << "protocol error: " << e.what() << "\n";
    return 4;
  } catch (const bci::ConvergenceError& e) {
    std::cerr << "convergence error: " << e.what() << "\n";
    return 4;
  } catch (const bci::WorkspaceError& e) {
    std::cerr << "workspace error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
