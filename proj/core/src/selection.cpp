#include "tce/selection.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "tce/errors.hpp"

namespace tce::selection {

VectorXd nn_distances(const MatrixXd& src_s, const MatrixXd& src_next,
                      const MatrixXd& tgt_s, const MatrixXd& tgt_next) {
  check(tgt_s.rows() > 0, "nn_distances: empty target set");
  check(src_s.rows() == src_next.rows() && tgt_s.rows() == tgt_next.rows(),
        "nn_distances: paired rows required");
  check(src_s.cols() == tgt_s.cols() && src_next.cols() == tgt_next.cols(),
        "nn_distances: dimension mismatch");
  const Eigen::Index n = src_s.rows(), m = tgt_s.rows();
  VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < m; ++j) {
      const double d = (src_s.row(i) - tgt_s.row(j)).norm() +
                       (src_next.row(i) - tgt_next.row(j)).norm();
      if (d < best) best = d;
    }
    out[i] = best;
  }
  return out;
}

SelectionResult select(const datasets::TransitionDataset& src,
                       const datasets::TransitionDataset& tgt, double lambda,
                       bool normalize) {
  check(lambda >= 0.0 && lambda <= 1.0, "select: lambda outside [0, 1]");
  check(src.size() > 0, "select: empty source set");
  check(tgt.size() > 0, "select: empty target set");

  MatrixXd src_s = src.states(), src_next = src.next_states();
  MatrixXd tgt_s = tgt.states(), tgt_next = tgt.next_states();
  if (normalize) {
    const datasets::Scaler sc = datasets::fit_scaler(tgt);
    src_s = sc.transform_rows(src_s);
    src_next = sc.transform_rows(src_next);
    tgt_s = sc.transform_rows(tgt_s);
    tgt_next = sc.transform_rows(tgt_next);
  }

  SelectionResult r;
  r.lambda = lambda;
  r.source_size = src.size();
  r.distances = nn_distances(src_s, src_next, tgt_s, tgt_next);

  std::vector<double> sorted(r.distances.begin(), r.distances.end());
  std::sort(sorted.begin(), sorted.end());
  const int n = src.size();
  r.summary.min = sorted.front();
  r.summary.max = sorted.back();
  r.summary.mean = r.distances.mean();
  r.summary.median =
      n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);

  const int k = static_cast<int>(std::ceil(lambda * n));
  if (k == 0) {
    r.threshold = -std::numeric_limits<double>::infinity();
    return r;
  }
  r.threshold = sorted[k - 1];  // nearest-rank quantile

  int quota = k;
  int tie_budget = k;  // k minus the rows strictly below the threshold
  for (int i = 0; i < n; ++i)
    if (r.distances[i] < r.threshold) --tie_budget;
  for (int i = 0; i < n && quota > 0; ++i) {
    const double d = r.distances[i];
    if (d < r.threshold) {
      r.indices.push_back(i);
      --quota;
    } else if (d == r.threshold && tie_budget > 0) {
      r.indices.push_back(i);
      --quota;
      --tie_budget;
    }
  }
  return r;
}

std::string selection_to_json(const SelectionResult& r) {
  nlohmann::json j;
  j["lambda"] = r.lambda;
  j["source_size"] = r.source_size;
  j["selected"] = r.indices.size();
  j["threshold"] = std::isfinite(r.threshold) ? nlohmann::json(r.threshold)
                                              : nlohmann::json(nullptr);
  j["indices"] = r.indices;
  j["distance_summary"] = {{"min", r.summary.min},
                           {"max", r.summary.max},
                           {"mean", r.summary.mean},
                           {"median", r.summary.median}};
  return j.dump(2);
}

}  // namespace tce::selection
