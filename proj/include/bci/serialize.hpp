#pragma once

#include <json.hpp>

#include <fstream>
#include <string>
#include <vector>

#include "bci/classify.hpp"
#include "bci/common.hpp"
#include "bci/features.hpp"

namespace bci {

using json = nlohmann::json;

inline json to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline json to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(to_json(Eigen::VectorXd(m.row(r))));
  return rows;
}

inline Eigen::VectorXd vector_from_json(const json& a) {
  Eigen::VectorXd v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}

inline Eigen::MatrixXd matrix_from_json(const json& rows) {
  if (rows.empty()) return {};
  Eigen::MatrixXd m(rows.size(), rows[0].size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    m.row(static_cast<Eigen::Index>(r)) = vector_from_json(rows[r]).transpose();
  return m;
}

inline json pca_to_json(const PcaModel& model) {
  return {{"mean", to_json(model.mean)},
          {"components", to_json(model.components)},
          {"eigenvalues", to_json(model.eigenvalues)}};
}

inline PcaModel pca_from_json(const json& j) {
  PcaModel m;
  m.mean = vector_from_json(j.at("mean"));
  m.components = matrix_from_json(j.at("components"));
  m.eigenvalues = vector_from_json(j.at("eigenvalues"));
  return m;
}

inline json kernel_to_json(const Kernel& k) {
  json j;
  j["type"] = k.type == Kernel::Type::Linear ? "linear" : "gaussian";
  if (k.type == Kernel::Type::Gaussian) j["gamma"] = k.gamma;
  return j;
}

inline Kernel kernel_from_json(const json& j) {
  Kernel k;
  const std::string type = j.at("type").get<std::string>();
  if (type == "linear") {
    k.type = Kernel::Type::Linear;
  } else if (type == "gaussian") {
    k.type = Kernel::Type::Gaussian;
    k.gamma = j.at("gamma").get<double>();
  } else {
    throw DataFormatError("unknown kernel type: " + type);
  }
  return k;
}

inline json svm_to_json(const SvmModel& m) {
  return {{"type", "svm"},
          {"kernel", kernel_to_json(m.kernel)},
          {"C", m.C},
          {"support_vectors", to_json(m.support_vectors)},
          {"alphas", to_json(m.alphas)},
          {"bias", m.bias}};
}

inline SvmModel svm_from_json(const json& j) {
  SvmModel m;
  m.kernel = kernel_from_json(j.at("kernel"));
  m.C = j.at("C").get<double>();
  m.support_vectors = matrix_from_json(j.at("support_vectors"));
  m.alphas = vector_from_json(j.at("alphas"));
  m.bias = j.at("bias").get<double>();
  return m;
}

inline json knn_to_json(const KnnModel& m) {
  return {{"type", "knn"},
          {"k", m.k},
          {"vectors", to_json(m.train.vectors)},
          {"labels", m.train.labels}};
}

inline KnnModel knn_from_json(const json& j) {
  KnnModel m;
  m.k = j.at("k").get<int>();
  m.train.vectors = matrix_from_json(j.at("vectors"));
  m.train.labels = j.at("labels").get<std::vector<int>>();
  return m;
}

inline json metrics_to_json(const CvMetrics& m) {
  return {{"accuracy", m.accuracy},
          {"recall_target", m.recall_target},
          {"recall_nontarget", m.recall_nontarget},
          {"confusion", {{m.confusion[0][0], m.confusion[0][1]}, {m.confusion[1][0], m.confusion[1][1]}}},
          {"per_fold_accuracy", m.per_fold_accuracy}};
}

inline void write_json_file(const json& j, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw DataFormatError("cannot open for writing: " + path);
  f << j.dump(2) << '\n';
}

inline json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataFormatError("cannot open: " + path);
  json j;
  try {
    f >> j;
  } catch (const json::parse_error& e) {
    throw DataFormatError("invalid JSON in " + path + ": " + e.what());
  }
  return j;
}

}  // namespace bci
