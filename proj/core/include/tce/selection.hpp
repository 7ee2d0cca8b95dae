#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "tce/datasets.hpp"

namespace tce::selection {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct SelectionResult {
  std::vector<int> indices;  // into the source dataset, strictly increasing
  double lambda = 0.0;
  double threshold = 0.0;  // nearest-rank lambda-quantile of the distances
  int source_size = 0;
  VectorXd distances;  // per source row

  struct Summary {
    double min = 0.0, max = 0.0, mean = 0.0, median = 0.0;
  } summary;
};

// d(i) = min over target rows of ||s_i - s_tgt|| + ||s'_i - s'_tgt||.
VectorXd nn_distances(const MatrixXd& src_s, const MatrixXd& src_next,
                      const MatrixXd& tgt_s, const MatrixXd& tgt_next);

// Keeps the ceil(lambda * |src|) source transitions closest to the target
// set; ties at the threshold are admitted in dataset order. lambda = 0 gives
// the empty selection, lambda = 1 the full source set. With normalize set,
// distances are computed on states standardized by the target scaler.
SelectionResult select(const datasets::TransitionDataset& src,
                       const datasets::TransitionDataset& tgt, double lambda,
                       bool normalize = true);

std::string selection_to_json(const SelectionResult& r);

}  // namespace tce::selection
