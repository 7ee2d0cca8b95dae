#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "tce/errors.hpp"
#include "tce/rng.hpp"
#include "tce/selection.hpp"

using namespace tce;
using namespace tce::selection;
using datasets::DatasetMeta;
using datasets::Origin;
using datasets::TransitionDataset;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

TransitionDataset make_ds(const MatrixXd& s, const MatrixXd& s_next, Origin origin) {
  const int n = static_cast<int>(s.rows());
  return TransitionDataset(s, MatrixXd::Zero(n, 1), VectorXd::Zero(n), s_next,
                           VectorXd::Zero(n), std::vector<Origin>(n, origin),
                           DatasetMeta{});
}

TransitionDataset random_ds(int n, int dim, Rng& rng, Origin origin) {
  return make_ds(rng.normal_matrix(n, dim), rng.normal_matrix(n, dim), origin);
}

// independent reference: stable sort by (distance, index), take ceil(l * n)
std::vector<int> brute_select(const VectorXd& d, double lambda) {
  const int n = static_cast<int>(d.size());
  const int k = static_cast<int>(std::ceil(lambda * n));
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return d[a] < d[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

}  // namespace

TEST_CASE("distance of a transition present verbatim in the target is zero") {
  Rng rng(4);
  MatrixXd s = rng.normal_matrix(5, 3), sn = rng.normal_matrix(5, 3);
  VectorXd d = nn_distances(s.topRows(2), sn.topRows(2), s, sn);
  CHECK(d.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("single-target hand example in one dimension") {
  MatrixXd src_s(1, 1), src_n(1, 1), tgt_s(1, 1), tgt_n(1, 1);
  src_s << 1.0;
  src_n << 1.0;
  tgt_s << 3.0;
  tgt_n << 0.0;
  VectorXd d = nn_distances(src_s, src_n, tgt_s, tgt_n);
  CHECK(d[0] == doctest::Approx(3.0).epsilon(1e-15));  // |1-3| + |1-0|
}

TEST_CASE("distances scale linearly with the data") {
  Rng rng(8);
  MatrixXd src_s = rng.normal_matrix(12, 2), src_n = rng.normal_matrix(12, 2);
  MatrixXd tgt_s = rng.normal_matrix(6, 2), tgt_n = rng.normal_matrix(6, 2);
  VectorXd d1 = nn_distances(src_s, src_n, tgt_s, tgt_n);
  VectorXd d3 = nn_distances(3.0 * src_s, 3.0 * src_n, 3.0 * tgt_s, 3.0 * tgt_n);
  CHECK((d3 - 3.0 * d1).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("lambda endpoints give the empty and the full source set") {
  Rng rng(15);
  TransitionDataset src = random_ds(20, 3, rng, Origin::Source);
  TransitionDataset tgt = random_ds(7, 3, rng, Origin::Target);
  SelectionResult none = select(src, tgt, 0.0, false);
  CHECK(none.indices.empty());
  SelectionResult all = select(src, tgt, 1.0, false);
  CHECK(static_cast<int>(all.indices.size()) == 20);
  for (int i = 0; i < 20; ++i) CHECK(all.indices[i] == i);
}

TEST_CASE("selection matches the sort-based reference and respects the size law") {
  Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_int(200));
    TransitionDataset src = random_ds(n, 2, rng, Origin::Source);
    TransitionDataset tgt = random_ds(5, 2, rng, Origin::Target);
    const double lambda = rng.uniform();
    SelectionResult r = select(src, tgt, lambda, false);
    CHECK(static_cast<int>(r.indices.size()) ==
          static_cast<int>(std::ceil(lambda * n)));
    CHECK(r.indices == brute_select(r.distances, lambda));
    for (size_t i = 0; i < r.indices.size(); ++i) {
      CHECK(r.distances[r.indices[i]] <= r.threshold);
      if (i > 0) CHECK(r.indices[i] > r.indices[i - 1]);
    }
  }
}

TEST_CASE("ties at the threshold are broken in dataset order") {
  // all distances equal: the first ceil(l n) rows must be kept
  MatrixXd s = MatrixXd::Zero(10, 1), sn = MatrixXd::Zero(10, 1);
  MatrixXd ts = MatrixXd::Constant(1, 1, 1.0), tn = MatrixXd::Zero(1, 1);
  TransitionDataset src = make_ds(s, sn, Origin::Source);
  TransitionDataset tgt = make_ds(ts, tn, Origin::Target);
  SelectionResult r = select(src, tgt, 0.45, false);
  REQUIRE(r.indices.size() == 5);
  for (int i = 0; i < 5; ++i) CHECK(r.indices[i] == i);
}

TEST_CASE("selections are nested in lambda") {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    TransitionDataset src = random_ds(60, 3, rng, Origin::Source);
    TransitionDataset tgt = random_ds(9, 3, rng, Origin::Target);
    const double l1 = rng.uniform(), l2 = rng.uniform();
    const double lo = std::min(l1, l2), hi = std::max(l1, l2);
    SelectionResult a = select(src, tgt, lo, true);
    SelectionResult b = select(src, tgt, hi, true);
    CHECK(std::includes(b.indices.begin(), b.indices.end(), a.indices.begin(),
                        a.indices.end()));
  }
}

TEST_CASE("repeated scans produce identical results") {
  Rng rng(44);
  TransitionDataset src = random_ds(40, 3, rng, Origin::Source);
  TransitionDataset tgt = random_ds(6, 3, rng, Origin::Target);
  SelectionResult a = select(src, tgt, 0.3, true);
  SelectionResult b = select(src, tgt, 0.3, true);
  CHECK(a.indices == b.indices);
  CHECK(a.threshold == b.threshold);
  CHECK((a.distances - b.distances).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("normalization changes the metric in the intended way") {
  // one state dimension is scaled up 100x; without normalization it
  // dominates, with normalization it does not
  MatrixXd src_s(2, 2), src_n(2, 2);
  src_s << 0.0, 100.0, 1.0, 0.0;
  src_n = src_s;
  MatrixXd tgt_s(2, 2), tgt_n(2, 2);
  tgt_s << 0.0, 0.0, 0.0, 200.0;
  tgt_n = tgt_s;
  TransitionDataset src = make_ds(src_s, src_n, Origin::Source);
  TransitionDataset tgt = make_ds(tgt_s, tgt_n, Origin::Target);
  SelectionResult raw = select(src, tgt, 0.5, false);
  SelectionResult scaled = select(src, tgt, 0.5, true);
  CHECK(raw.indices != scaled.indices);
}

TEST_CASE("empty target set is rejected") {
  Rng rng(3);
  TransitionDataset src = random_ds(4, 2, rng, Origin::Source);
  MatrixXd empty_s(0, 2), empty_n(0, 2);
  CHECK_THROWS_AS(nn_distances(src.states(), src.next_states(), empty_s, empty_n),
                  ContractViolation);
}
