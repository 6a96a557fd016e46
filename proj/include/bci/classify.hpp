#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "bci/common.hpp"

namespace bci {

// Binary labels: +1 = target, -1 = non-target.
struct LabeledSet {
  Eigen::MatrixXd vectors;  // n x d
  std::vector<int> labels;  // +1 / -1

  Eigen::Index size() const { return vectors.rows(); }

  void validate_for_training() const {
    if (size() < 2 || static_cast<Eigen::Index>(labels.size()) != size())
      throw ConfigError("labeled set needs >= 2 rows with matching labels");
    bool pos = false, neg = false;
    for (int y : labels) {
      if (y == 1) pos = true;
      else if (y == -1) neg = true;
      else throw ConfigError("labels must be +1 or -1");
    }
    if (!pos || !neg) throw ConfigError("training set must contain both classes");
  }
};

struct Kernel {
  enum class Type { Linear, Gaussian };
  Type type = Type::Gaussian;
  double gamma = 1.0;  // Gaussian only

  double operator()(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
    if (type == Type::Linear) return a.dot(b);
    return std::exp(-gamma * (a - b).squaredNorm());
  }
};

struct SvmModel {
  Kernel kernel;
  Eigen::MatrixXd support_vectors;  // m x d
  Eigen::VectorXd alphas;           // m, label-folded (alpha_i * y_i)
  double bias = 0.0;
  double C = 1.0;
};

struct Prediction {
  int label = 0;
  double score = 0.0;
};

inline Prediction svm_predict(const SvmModel& model, const Eigen::VectorXd& v) {
  if (v.size() != model.support_vectors.cols())
    throw SizeError("feature dimension " + std::to_string(v.size()) + " != model dimension " +
                    std::to_string(model.support_vectors.cols()));
  double score = model.bias;
  for (Eigen::Index i = 0; i < model.support_vectors.rows(); ++i)
    score += model.alphas[i] * model.kernel(model.support_vectors.row(i).transpose(), v);
  return {score >= 0.0 ? 1 : -1, score};
}

namespace detail {

// Platt-style SMO working state.
struct SmoState {
  const Eigen::MatrixXd& x;
  const std::vector<int>& y;
  Kernel kernel;
  double C, tol;
  Eigen::VectorXd alpha;  // unsigned multipliers
  Eigen::VectorXd error;  // f(x_i) - y_i cache
  double b = 0.0;
  Eigen::MatrixXd gram;
  std::mt19937_64 rng;

  SmoState(const Eigen::MatrixXd& x_, const std::vector<int>& y_, Kernel k_, double C_,
           double tol_, std::uint64_t seed)
      : x(x_), y(y_), kernel(k_), C(C_), tol(tol_), rng(seed) {
    const Eigen::Index n = x.rows();
    alpha = Eigen::VectorXd::Zero(n);
    gram.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j <= i; ++j)
        gram(i, j) = gram(j, i) = kernel(x.row(i).transpose(), x.row(j).transpose());
    error = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) error[i] = -y[static_cast<std::size_t>(i)];
  }

  double f(Eigen::Index i) const {
    double s = b;
    for (Eigen::Index j = 0; j < x.rows(); ++j)
      s += alpha[j] * y[static_cast<std::size_t>(j)] * gram(j, i);
    return s;
  }

  bool take_step(Eigen::Index i1, Eigen::Index i2) {
    if (i1 == i2) return false;
    const double a1 = alpha[i1], a2 = alpha[i2];
    const int y1 = y[static_cast<std::size_t>(i1)], y2 = y[static_cast<std::size_t>(i2)];
    const double e1 = error[i1], e2 = error[i2];
    const double s = y1 * y2;
    double lo, hi;
    if (y1 != y2) {
      lo = std::max(0.0, a2 - a1);
      hi = std::min(C, C + a2 - a1);
    } else {
      lo = std::max(0.0, a1 + a2 - C);
      hi = std::min(C, a1 + a2);
    }
    if (lo >= hi) return false;
    const double k11 = gram(i1, i1), k12 = gram(i1, i2), k22 = gram(i2, i2);
    const double eta = k11 + k22 - 2.0 * k12;
    double a2new;
    if (eta > 0.0) {
      a2new = std::clamp(a2 + y2 * (e1 - e2) / eta, lo, hi);
    } else {
      // Flat objective along the constraint; evaluate at both box ends.
      const double f1 = y1 * (e1 + b) - a1 * k11 - s * a2 * k12;
      const double f2 = y2 * (e2 + b) - s * a1 * k12 - a2 * k22;
      const double l1 = a1 + s * (a2 - lo);
      const double h1 = a1 + s * (a2 - hi);
      const double obj_lo = l1 * f1 + lo * f2 + 0.5 * l1 * l1 * k11 + 0.5 * lo * lo * k22 + s * lo * l1 * k12;
      const double obj_hi = h1 * f1 + hi * f2 + 0.5 * h1 * h1 * k11 + 0.5 * hi * hi * k22 + s * hi * h1 * k12;
      if (obj_lo < obj_hi - 1e-12) a2new = lo;
      else if (obj_lo > obj_hi + 1e-12) a2new = hi;
      else a2new = a2;
    }
    if (std::abs(a2new - a2) < 1e-12 * (a2new + a2 + 1e-12)) return false;
    const double a1new = a1 + s * (a2 - a2new);

    const double b1 = b - e1 - y1 * (a1new - a1) * k11 - y2 * (a2new - a2) * k12;
    const double b2 = b - e2 - y1 * (a1new - a1) * k12 - y2 * (a2new - a2) * k22;
    double bnew;
    if (a1new > 0.0 && a1new < C) bnew = b1;
    else if (a2new > 0.0 && a2new < C) bnew = b2;
    else bnew = 0.5 * (b1 + b2);

    const double db = bnew - b;
    for (Eigen::Index j = 0; j < x.rows(); ++j)
      error[j] += y1 * (a1new - a1) * gram(i1, j) + y2 * (a2new - a2) * gram(i2, j) + db;
    alpha[i1] = a1new;
    alpha[i2] = a2new;
    b = bnew;
    return true;
  }

  bool examine(Eigen::Index i2) {
    const int y2 = y[static_cast<std::size_t>(i2)];
    const double a2 = alpha[i2];
    const double r2 = error[i2] * y2;
    if (!((r2 < -tol && a2 < C) || (r2 > tol && a2 > 0.0))) return false;

    const Eigen::Index n = x.rows();
    // Second-choice heuristic: largest |E1 - E2| over non-bound points.
    Eigen::Index best = -1;
    double best_gap = -1.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (alpha[i] <= 0.0 || alpha[i] >= C) continue;
      const double gap = std::abs(error[i] - error[i2]);
      if (gap > best_gap) {
        best_gap = gap;
        best = i;
      }
    }
    if (best >= 0 && take_step(best, i2)) return true;

    const Eigen::Index start = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n));
    for (Eigen::Index off = 0; off < n; ++off) {
      const Eigen::Index i = (start + off) % n;
      if (alpha[i] > 0.0 && alpha[i] < C && take_step(i, i2)) return true;
    }
    for (Eigen::Index off = 0; off < n; ++off) {
      const Eigen::Index i = (start + off) % n;
      if (take_step(i, i2)) return true;
    }
    return false;
  }
};

}  // namespace detail

// Soft-margin dual via sequential minimal optimization, run until no KKT
// violation larger than tol remains.
inline SvmModel svm_train(const LabeledSet& data, const Kernel& kernel, double C = 1.0,
                          double tol = 1e-3, std::uint64_t seed = 0) {
  data.validate_for_training();
  if (C <= 0.0) throw ConfigError("C must be positive");

  detail::SmoState smo(data.vectors, data.labels, kernel, C, tol, seed);
  const Eigen::Index n = data.size();
  // Alternate full sweeps with non-bound sweeps; converged only once a full
  // sweep changes nothing.
  bool examine_all = true;
  while (true) {
    int changed = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!examine_all && (smo.alpha[i] <= 0.0 || smo.alpha[i] >= C)) continue;
      changed += smo.examine(i) ? 1 : 0;
    }
    if (examine_all) {
      if (changed == 0) break;
      examine_all = false;
    } else if (changed == 0) {
      examine_all = true;
    }
  }

  SvmModel model;
  model.kernel = kernel;
  model.C = C;
  model.bias = smo.b;
  std::vector<Eigen::Index> sv;
  for (Eigen::Index i = 0; i < n; ++i)
    if (smo.alpha[i] > 1e-12) sv.push_back(i);
  model.support_vectors.resize(static_cast<Eigen::Index>(sv.size()), data.vectors.cols());
  model.alphas.resize(static_cast<Eigen::Index>(sv.size()));
  for (std::size_t k = 0; k < sv.size(); ++k) {
    model.support_vectors.row(static_cast<Eigen::Index>(k)) = data.vectors.row(sv[k]);
    model.alphas[static_cast<Eigen::Index>(k)] =
        smo.alpha[sv[k]] * data.labels[static_cast<std::size_t>(sv[k])];
  }
  return model;
}

// Largest KKT violation of the trained model over the training set; zero
// means every point satisfies its complementarity condition within tol.
inline double svm_kkt_residual(const SvmModel& model, const LabeledSet& data, double tol) {
  double worst = 0.0;
  // Recover unsigned alphas per training point (0 for non-SVs).
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const double yf = data.labels[static_cast<std::size_t>(i)] *
                      svm_predict(model, data.vectors.row(i).transpose()).score;
    double a = 0.0;
    for (Eigen::Index s = 0; s < model.support_vectors.rows(); ++s) {
      if ((model.support_vectors.row(s) - data.vectors.row(i)).squaredNorm() == 0.0 &&
          model.alphas[s] * data.labels[static_cast<std::size_t>(i)] > 0.0) {
        a = model.alphas[s] * data.labels[static_cast<std::size_t>(i)];
        break;
      }
    }
    double viol = 0.0;
    if (a <= 1e-12) viol = std::max(0.0, 1.0 - tol - yf);               // alpha = 0: yf >= 1
    else if (a >= model.C - 1e-9) viol = std::max(0.0, yf - 1.0 - tol); // alpha = C: yf <= 1
    else viol = std::max(0.0, std::abs(yf - 1.0) - tol);                // free: yf = 1
    worst = std::max(worst, viol);
  }
  return worst;
}

struct KnnModel {
  LabeledSet train;
  int k = 3;

  void validate() const {
    train.validate_for_training();
    if (k < 1 || k > train.size()) throw ConfigError("k out of range 1..n");
    if (k % 2 == 0) throw ConfigError("k must be odd");
  }
};

// Majority vote of the k Euclidean-nearest training points; distance ties
// break toward the lower training index. Score = vote fraction for the
// returned label.
inline Prediction knn_predict(const KnnModel& model, const Eigen::VectorXd& v) {
  model.validate();
  if (v.size() != model.train.vectors.cols()) throw SizeError("feature dimension mismatch");
  const Eigen::Index n = model.train.size();
  std::vector<std::pair<double, Eigen::Index>> dist;
  dist.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    dist.emplace_back((model.train.vectors.row(i).transpose() - v).norm(), i);
  std::sort(dist.begin(), dist.end());
  int votes_pos = 0;
  for (int i = 0; i < model.k; ++i)
    if (model.train.labels[static_cast<std::size_t>(dist[static_cast<std::size_t>(i)].second)] == 1)
      ++votes_pos;
  const int label = 2 * votes_pos > model.k ? 1 : -1;
  const int votes_win = label == 1 ? votes_pos : model.k - votes_pos;
  return {label, static_cast<double>(votes_win) / model.k};
}

// Signed confidence used for direction decoding: target-vote fraction
// centered at zero.
inline double knn_decision_score(const KnnModel& model, const Eigen::VectorXd& v) {
  const Prediction p = knn_predict(model, v);
  const double frac_target = p.label == 1 ? p.score : 1.0 - p.score;
  return frac_target - 0.5;
}

struct ClassifierConfig {
  enum class Type { Svm, Knn };
  Type type = Type::Svm;
  Kernel kernel;  // SVM
  double C = 1.0;
  double tol = 1e-3;
  std::uint64_t seed = 0;
  int k = 3;  // k-NN
};

struct CvMetrics {
  double accuracy = 0.0;
  double recall_target = 0.0;
  double recall_nontarget = 0.0;
  // confusion[actual][predicted], index 0 = target, 1 = non-target.
  std::array<std::array<int, 2>, 2> confusion{};
  std::vector<double> per_fold_accuracy;
};

// Stratified k-fold cross validation with a seeded shuffle.
inline CvMetrics cross_validate(const LabeledSet& data, const ClassifierConfig& cfg, int folds,
                                std::uint64_t seed) {
  data.validate_for_training();
  if (folds < 2) throw ConfigError("folds must be >= 2");
  std::vector<Eigen::Index> pos, neg;
  for (Eigen::Index i = 0; i < data.size(); ++i)
    (data.labels[static_cast<std::size_t>(i)] == 1 ? pos : neg).push_back(i);
  if (static_cast<int>(pos.size()) < folds || static_cast<int>(neg.size()) < folds)
    throw ConfigError("a class is too small to stratify into " + std::to_string(folds) + " folds");

  std::mt19937_64 rng(seed);
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  std::vector<std::vector<Eigen::Index>> fold_idx(static_cast<std::size_t>(folds));
  for (std::size_t i = 0; i < pos.size(); ++i) fold_idx[i % static_cast<std::size_t>(folds)].push_back(pos[i]);
  for (std::size_t i = 0; i < neg.size(); ++i) fold_idx[i % static_cast<std::size_t>(folds)].push_back(neg[i]);

  CvMetrics m;
  int correct_total = 0, total = 0;
  for (int f = 0; f < folds; ++f) {
    const auto& held = fold_idx[static_cast<std::size_t>(f)];
    LabeledSet train;
    std::vector<Eigen::Index> train_rows;
    for (int g = 0; g < folds; ++g)
      if (g != f)
        train_rows.insert(train_rows.end(), fold_idx[static_cast<std::size_t>(g)].begin(),
                          fold_idx[static_cast<std::size_t>(g)].end());
    std::sort(train_rows.begin(), train_rows.end());
    train.vectors.resize(static_cast<Eigen::Index>(train_rows.size()), data.vectors.cols());
    for (std::size_t r = 0; r < train_rows.size(); ++r) {
      train.vectors.row(static_cast<Eigen::Index>(r)) = data.vectors.row(train_rows[r]);
      train.labels.push_back(data.labels[static_cast<std::size_t>(train_rows[r])]);
    }

    SvmModel svm;
    KnnModel knn;
    if (cfg.type == ClassifierConfig::Type::Svm)
      svm = svm_train(train, cfg.kernel, cfg.C, cfg.tol, cfg.seed);
    else
      knn = KnnModel{std::move(train), cfg.k};

    int correct = 0;
    for (Eigen::Index i : held) {
      const Eigen::VectorXd v = data.vectors.row(i).transpose();
      const int pred = cfg.type == ClassifierConfig::Type::Svm ? svm_predict(svm, v).label
                                                               : knn_predict(knn, v).label;
      const int actual = data.labels[static_cast<std::size_t>(i)];
      m.confusion[actual == 1 ? 0 : 1][pred == 1 ? 0 : 1] += 1;
      if (pred == actual) ++correct;
    }
    m.per_fold_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(held.size()));
    correct_total += correct;
    total += static_cast<int>(held.size());
  }
  m.accuracy = static_cast<double>(correct_total) / total;
  const int tp = m.confusion[0][0], fn = m.confusion[0][1];
  const int tn = m.confusion[1][1], fp = m.confusion[1][0];
  m.recall_target = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  m.recall_nontarget = tn + fp > 0 ? static_cast<double>(tn) / (tn + fp) : 0.0;
  return m;
}

// Small hyperparameter sweep around the 1/d gamma heuristic; returns the
// config with the best CV accuracy (ties keep the earlier grid point).
inline ClassifierConfig svm_grid_search(const LabeledSet& data, int folds = 5,
                                        std::uint64_t seed = 0) {
  const double gamma0 = 1.0 / static_cast<double>(data.vectors.cols());
  ClassifierConfig best;
  double best_acc = -1.0;
  for (double C : {0.1, 1.0, 10.0}) {
    for (double g : {gamma0 / 10.0, gamma0, 10.0 * gamma0}) {
      ClassifierConfig cfg;
      cfg.type = ClassifierConfig::Type::Svm;
      cfg.kernel = {Kernel::Type::Gaussian, g};
      cfg.C = C;
      const CvMetrics m = cross_validate(data, cfg, folds, seed);
      if (m.accuracy > best_acc) {
        best_acc = m.accuracy;
        best = cfg;
      }
    }
  }
  return best;
}

}  // namespace bci
