#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "tce/datasets.hpp"
#include "tce/errors.hpp"
#include "tce/rng.hpp"
#include "tce/selection.hpp"

using namespace tce;
using namespace tce::datasets;
using Eigen::MatrixXd;
using Eigen::VectorXd;
namespace fs = std::filesystem;

namespace {

TransitionDataset random_ds(int n, int ds_dim, int da, Rng& rng, Origin origin,
                            DatasetMeta meta = {}) {
  VectorXd done = VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) done[i] = rng.uniform() < 0.1 ? 1.0 : 0.0;
  return TransitionDataset(rng.normal_matrix(n, ds_dim), rng.normal_matrix(n, da),
                           rng.normal_vector(n), rng.normal_matrix(n, ds_dim), done,
                           std::vector<Origin>(n, origin), std::move(meta));
}

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / name;
}

bool same_rows(const TransitionDataset& a, const TransitionDataset& b) {
  if (a.size() != b.size()) return false;
  return (a.states() - b.states()).cwiseAbs().maxCoeff() == 0.0 &&
         (a.actions() - b.actions()).cwiseAbs().maxCoeff() == 0.0 &&
         (a.rewards() - b.rewards()).cwiseAbs().maxCoeff() == 0.0 &&
         (a.next_states() - b.next_states()).cwiseAbs().maxCoeff() == 0.0 &&
         (a.dones() - b.dones()).cwiseAbs().maxCoeff() == 0.0 &&
         a.origins() == b.origins();
}

}  // namespace

TEST_CASE("scaler statistics match a hand computation on three rows") {
  MatrixXd s(3, 2);
  s << 1.0, 10.0, 2.0, 10.0, 3.0, 10.0;
  TransitionDataset ds(s, MatrixXd::Zero(3, 1), VectorXd::Zero(3), s, VectorXd::Zero(3),
                       std::vector<Origin>(3, Origin::Target), DatasetMeta{});
  Scaler sc = fit_scaler(ds);
  CHECK(sc.mean[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(sc.mean[1] == doctest::Approx(10.0).epsilon(1e-15));
  // population std of {1,2,3} is sqrt(2/3)
  CHECK(sc.std[0] == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-15));
  CHECK(sc.std[1] == 1.0);  // zero variance clamps to 1
  VectorXd z = sc.transform(s.row(0));
  CHECK(z[0] == doctest::Approx(-std::sqrt(1.5)).epsilon(1e-12));
  CHECK(z[1] == 0.0);
}

TEST_CASE("scaler transform and inverse round-trip") {
  Rng rng(5);
  TransitionDataset ds = random_ds(40, 4, 2, rng, Origin::Source);
  Scaler sc = fit_scaler(ds);
  MatrixXd probe = rng.normal_matrix(10, 4);
  MatrixXd back = sc.inverse_rows(sc.transform_rows(probe));
  CHECK((back - probe).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("apply_scaler standardizes states and records the transform") {
  Rng rng(6);
  TransitionDataset ds = random_ds(200, 3, 2, rng, Origin::Target);
  TransitionDataset norm = apply_scaler(ds, fit_scaler(ds));
  CHECK(norm.meta().normalized);
  REQUIRE(norm.scaler().has_value());
  CHECK(norm.states().colwise().mean().cwiseAbs().maxCoeff() < 1e-12);
  VectorXd col_std =
      (norm.states().rowwise() - norm.states().colwise().mean()).array().square().colwise().mean().sqrt();
  CHECK((col_std.array() - 1.0).abs().maxCoeff() < 1e-12);
  // actions and rewards untouched
  CHECK((norm.actions() - ds.actions()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((norm.rewards() - ds.rewards()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("done flags outside 0/1 are rejected") {
  MatrixXd s = MatrixXd::Zero(1, 2);
  VectorXd bad_done(1);
  bad_done << 0.5;
  CHECK_THROWS_AS(TransitionDataset(s, MatrixXd::Zero(1, 1), VectorXd::Zero(1), s, bad_done,
                                    {Origin::Source}, DatasetMeta{}),
                  ContractViolation);
}

TEST_CASE("container round-trips bit-exactly") {
  Rng rng(11);
  DatasetMeta meta;
  meta.domain = "pair-small-drift";
  meta.tier = "medium";
  meta.seed = 99;
  meta.config_hash = "abc123";
  meta.lambda_cov = 0.25;
  meta.extra["note"] = "round trip";

  SUBCASE("typical dataset") {
    TransitionDataset ds = random_ds(257, 4, 2, rng, Origin::Source, meta);
    fs::path p = temp_file("tce_roundtrip.tced");
    write_tced(p, ds);
    TransitionDataset back = read_tced(p);
    CHECK(same_rows(ds, back));
    CHECK(back.meta() == ds.meta());
    fs::remove(p);
  }

  SUBCASE("empty dataset") {
    TransitionDataset ds(3, 2, meta);
    fs::path p = temp_file("tce_empty.tced");
    write_tced(p, ds);
    TransitionDataset back = read_tced(p);
    CHECK(back.size() == 0);
    CHECK(back.state_dim() == 3);
    CHECK(back.action_dim() == 2);
    CHECK(back.meta() == meta);
    fs::remove(p);
  }

  SUBCASE("single row") {
    TransitionDataset ds = random_ds(1, 2, 1, rng, Origin::Generated, meta);
    fs::path p = temp_file("tce_onerow.tced");
    write_tced(p, ds);
    CHECK(same_rows(ds, read_tced(p)));
    fs::remove(p);
  }

  SUBCASE("large dataset") {
    TransitionDataset ds = random_ds(100000, 4, 2, rng, Origin::Source, meta);
    fs::path p = temp_file("tce_large.tced");
    write_tced(p, ds);
    CHECK(same_rows(ds, read_tced(p)));
    fs::remove(p);
  }

  SUBCASE("scaler is preserved") {
    TransitionDataset ds = random_ds(50, 3, 1, rng, Origin::Target, meta);
    TransitionDataset norm = apply_scaler(ds, fit_scaler(ds));
    fs::path p = temp_file("tce_scaler.tced");
    write_tced(p, norm);
    TransitionDataset back = read_tced(p);
    REQUIRE(back.scaler().has_value());
    CHECK((back.scaler()->mean - norm.scaler()->mean).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.scaler()->std - norm.scaler()->std).cwiseAbs().maxCoeff() == 0.0);
    fs::remove(p);
  }

  SUBCASE("mixed origins survive run-length coding") {
    std::vector<Origin> origins = {Origin::Source, Origin::Source, Origin::Generated,
                                   Origin::Target, Origin::Target, Origin::Target};
    const int n = static_cast<int>(origins.size());
    TransitionDataset ds(rng.normal_matrix(n, 2), rng.normal_matrix(n, 1),
                         rng.normal_vector(n), rng.normal_matrix(n, 2), VectorXd::Zero(n),
                         origins, meta);
    fs::path p = temp_file("tce_origins.tced");
    write_tced(p, ds);
    CHECK(read_tced(p).origins() == origins);
    fs::remove(p);
  }
}

TEST_CASE("corrupted payload fails the checksum") {
  Rng rng(13);
  TransitionDataset ds = random_ds(20, 3, 2, rng, Origin::Source);
  fs::path p = temp_file("tce_corrupt.tced");
  write_tced(p, ds);
  // flip one byte in the middle of the row payload
  std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
  f.seekg(0, std::ios::end);
  const auto size = static_cast<std::int64_t>(f.tellg());
  f.seekp(size - 40);
  char byte = 0;
  f.seekg(size - 40);
  f.read(&byte, 1);
  byte ^= 0x10;
  f.seekp(size - 40);
  f.write(&byte, 1);
  f.close();
  CHECK_THROWS_WITH_AS(read_tced(p), doctest::Contains("checksum"), ContractViolation);
  fs::remove(p);
}

TEST_CASE("wrong magic and wrong version are rejected") {
  Rng rng(14);
  TransitionDataset ds = random_ds(4, 2, 1, rng, Origin::Source);
  fs::path p = temp_file("tce_header.tced");
  write_tced(p, ds);

  SUBCASE("magic") {
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
    f.close();
    CHECK_THROWS_WITH_AS(read_tced(p), doctest::Contains("magic"), ContractViolation);
  }

  SUBCASE("version") {
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    const std::uint16_t bad = 7;
    f.seekp(4);
    f.write(reinterpret_cast<const char*>(&bad), sizeof(bad));
    f.close();
    CHECK_THROWS_WITH_AS(read_tced(p), doctest::Contains("version"), ContractViolation);
  }

  SUBCASE("truncation") {
    fs::resize_file(p, fs::file_size(p) - 7);
    CHECK_THROWS_AS(read_tced(p), ContractViolation);
  }
  fs::remove(p);
}

TEST_CASE("describe reports counts and summary statistics") {
  Rng rng(21);
  std::vector<Origin> origins(10, Origin::Target);
  origins[0] = Origin::Generated;
  origins[1] = Origin::Generated;
  origins[2] = Origin::Source;
  TransitionDataset ds(rng.normal_matrix(10, 2), rng.normal_matrix(10, 1),
                       rng.normal_vector(10), rng.normal_matrix(10, 2), VectorXd::Zero(10),
                       origins, DatasetMeta{});
  fs::path p = temp_file("tce_describe.tced");
  write_tced(p, ds);
  auto j = nlohmann::json::parse(describe_tced(p));
  CHECK(j["rows"] == 10);
  CHECK(j["origin_counts"]["generated"] == 2);
  CHECK(j["origin_counts"]["source"] == 1);
  CHECK(j["origin_counts"]["target"] == 7);
  CHECK(j["reward"]["mean"].get<double>() == doctest::Approx(ds.rewards().mean()));
  fs::remove(p);
}

TEST_CASE("variant constraints are enforced") {
  VariantSpec sa{Variant::SimpleAug, 0.0, 0.0};
  CHECK_NOTHROW(sa.validate());
  VariantSpec bad_sa{Variant::SimpleAug, 0.2, 0.0};
  CHECK_THROWS_AS(bad_sa.validate(), ContractViolation);
  VariantSpec og{Variant::Og, 0.3, 0.0};
  CHECK_NOTHROW(og.validate());
  VariantSpec bad_og{Variant::Og, 0.3, 0.1};
  CHECK_THROWS_AS(bad_og.validate(), ContractViolation);
  VariantSpec sm{Variant::Sm, 0.3, 0.2};
  CHECK_NOTHROW(sm.validate());
  VariantSpec bad_sm{Variant::Sm, 0.3, 0.0};  // mixing share of zero is not Sm
  CHECK_THROWS_AS(bad_sm.validate(), ContractViolation);
  CHECK(variant_from_name(variant_name(Variant::Og)) == Variant::Og);
  CHECK_THROWS_AS(variant_from_name("nope"), ContractViolation);
}

TEST_CASE("training set assembly orders parts and checks provenance") {
  Rng rng(33);
  TransitionDataset src = random_ds(30, 2, 1, rng, Origin::Source);
  TransitionDataset tgt = random_ds(8, 2, 1, rng, Origin::Target);
  DatasetMeta gen_meta;
  gen_meta.lambda_cov = 0.4;
  TransitionDataset gen = random_ds(12, 2, 1, rng, Origin::Generated, gen_meta);

  SUBCASE("coverage-only variant: generated rows then target rows") {
    VariantSpec spec{Variant::Og, 0.4, 0.0};
    TransitionDataset train = build_training_set(spec, src, tgt, gen, nullptr);
    REQUIRE(train.size() == 20);
    for (int i = 0; i < 12; ++i) CHECK(train.origins()[i] == Origin::Generated);
    for (int i = 12; i < 20; ++i) CHECK(train.origins()[i] == Origin::Target);
    CHECK((train.states().topRows(12) - gen.states()).cwiseAbs().maxCoeff() == 0.0);
    CHECK((train.states().bottomRows(8) - tgt.states()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(train.meta().extra.at("variant") == "og");
    CHECK(train.meta().extra.at("n_generated") == "12");
  }

  SUBCASE("mixing variant: selected source first") {
    selection::SelectionResult sel = selection::select(src, tgt, 0.5, false);
    VariantSpec spec{Variant::Sm, 0.4, 0.5};
    TransitionDataset train = build_training_set(spec, src, tgt, gen, &sel);
    const int n_sel = static_cast<int>(sel.indices.size());
    REQUIRE(n_sel == 15);
    REQUIRE(train.size() == n_sel + 20);
    for (int i = 0; i < n_sel; ++i) CHECK(train.origins()[i] == Origin::Source);
    CHECK((train.states().row(0) - src.states().row(sel.indices[0])).cwiseAbs().maxCoeff() ==
          0.0);
    CHECK(train.meta().extra.at("n_source_selected") == "15");
  }

  SUBCASE("mixing variant requires a selection") {
    VariantSpec spec{Variant::Sm, 0.4, 0.5};
    CHECK_THROWS_AS(build_training_set(spec, src, tgt, gen, nullptr), ContractViolation);
  }

  SUBCASE("selection lambda must match the mixing share") {
    selection::SelectionResult sel = selection::select(src, tgt, 0.25, false);
    VariantSpec spec{Variant::Sm, 0.4, 0.5};
    CHECK_THROWS_AS(build_training_set(spec, src, tgt, gen, &sel), ContractViolation);
  }

  SUBCASE("generated set built under a different coverage share is rejected") {
    VariantSpec spec{Variant::Og, 0.6, 0.0};
    CHECK_THROWS_AS(build_training_set(spec, src, tgt, gen, nullptr), ContractViolation);
  }
}

TEST_CASE("take and rows_with_origin agree") {
  Rng rng(41);
  std::vector<Origin> origins;
  for (int i = 0; i < 12; ++i)
    origins.push_back(i % 3 == 0 ? Origin::Generated : Origin::Target);
  TransitionDataset ds(rng.normal_matrix(12, 2), rng.normal_matrix(12, 1),
                       rng.normal_vector(12), rng.normal_matrix(12, 2), VectorXd::Zero(12),
                       origins, DatasetMeta{});
  auto idx = ds.rows_with_origin(Origin::Generated);
  CHECK(idx == std::vector<int>{0, 3, 6, 9});
  TransitionDataset sub = ds.take(idx, ds.meta());
  REQUIRE(sub.size() == 4);
  for (int k = 0; k < 4; ++k) {
    CHECK((sub.states().row(k) - ds.states().row(idx[k])).cwiseAbs().maxCoeff() == 0.0);
    CHECK(sub.origins()[k] == Origin::Generated);
  }
}
