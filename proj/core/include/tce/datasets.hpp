#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tce::selection {
struct SelectionResult;
}

namespace tce::datasets {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Origin : std::uint8_t { Source = 0, Target = 1, Generated = 2 };

std::string origin_name(Origin o);

struct Transition {
  VectorXd s;
  VectorXd a;
  double r = 0.0;
  VectorXd s_next;
  bool done = false;
  Origin origin = Origin::Source;
};

// Per-dimension standardization of state vectors.
struct Scaler {
  VectorXd mean;
  VectorXd std;  // clamped to 1 where the data dimension has zero variance

  VectorXd transform(const VectorXd& s) const;
  VectorXd inverse(const VectorXd& s) const;
  MatrixXd transform_rows(const MatrixXd& rows) const;
  MatrixXd inverse_rows(const MatrixXd& rows) const;
};

struct DatasetMeta {
  std::string domain;
  std::string tier;
  std::uint64_t seed = 0;
  std::string config_hash;
  double lambda_cov = -1.0;  // < 0 means not applicable
  double lambda_mix = -1.0;
  bool normalized = false;
  std::map<std::string, std::string> extra;

  bool operator==(const DatasetMeta&) const = default;
};

// Immutable rowwise container. Rows keep the order they were assembled in.
class TransitionDataset {
 public:
  TransitionDataset(int state_dim, int action_dim, DatasetMeta meta);
  TransitionDataset(MatrixXd s, MatrixXd a, VectorXd r, MatrixXd s_next, VectorXd done,
                    std::vector<Origin> origins, DatasetMeta meta,
                    std::optional<Scaler> scaler = std::nullopt);

  int size() const { return static_cast<int>(s_.rows()); }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }

  const MatrixXd& states() const { return s_; }
  const MatrixXd& actions() const { return a_; }
  const VectorXd& rewards() const { return r_; }
  const MatrixXd& next_states() const { return s_next_; }
  const VectorXd& dones() const { return done_; }
  const std::vector<Origin>& origins() const { return origins_; }
  const DatasetMeta& meta() const { return meta_; }
  const std::optional<Scaler>& scaler() const { return scaler_; }

  Transition row(int i) const;
  TransitionDataset take(const std::vector<int>& indices, DatasetMeta meta) const;
  std::vector<int> rows_with_origin(Origin o) const;

  static TransitionDataset concat(const std::vector<const TransitionDataset*>& parts,
                                  DatasetMeta meta);

 private:
  int state_dim_ = 0, action_dim_ = 0;
  MatrixXd s_, a_, s_next_;
  VectorXd r_, done_;
  std::vector<Origin> origins_;
  DatasetMeta meta_;
  std::optional<Scaler> scaler_;
};

// Fits on the s rows of the dataset. Zero-variance dimensions get std 1 and
// a warning on stderr.
Scaler fit_scaler(const TransitionDataset& ds);

// Returns a copy with s and s_next standardized; records the scaler so the
// transform can be inverted later.
TransitionDataset apply_scaler(const TransitionDataset& ds, const Scaler& scaler);

enum class Variant { SimpleAug, Og, Sm };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct VariantSpec {
  Variant kind = Variant::SimpleAug;
  double lambda_cov = 0.0;
  double lambda_mix = 0.0;

  void validate() const;
};

// Assembles the policy training set: selected source rows (Sm only), then
// generated rows, then target rows. The generated dataset must carry the
// matching lambda_cov in its metadata.
TransitionDataset build_training_set(const VariantSpec& spec, const TransitionDataset& src,
                                     const TransitionDataset& tgt,
                                     const TransitionDataset& gen,
                                     const selection::SelectionResult* mix_selection);

// Binary container: "TCED" magic, u16 version, length-prefixed JSON metadata,
// row payload of little-endian float64 (s, a, r, s_next, done as 0/1), then a
// CRC-32 of the payload.
void write_tced(const std::filesystem::path& path, const TransitionDataset& ds);
TransitionDataset read_tced(const std::filesystem::path& path);

// Metadata and summary statistics as a JSON string (the `inspect` command).
std::string describe_tced(const std::filesystem::path& path);

}  // namespace tce::datasets
