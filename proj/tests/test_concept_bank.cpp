#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "test_support.hpp"
#include "valc/concept_bank.hpp"
#include "valc/error.hpp"

using namespace valc;

TEST_CASE("log densities match the straight-line formula") {
  std::mt19937_64 rng(21);
  for (auto mode : {CovarianceMode::Full, CovarianceMode::Diagonal}) {
    for (int t = 0; t < 50; ++t) {
      const std::size_t K = 1 + rng() % 4, d = 1 + rng() % 6;
      const ConceptBank bank = testing::random_bank(K, d, mode, rng);
      const auto doc = testing::random_document(5, d, rng);
      const Matrix ll = bank.log_likelihoods(doc.embeddings);
      const auto ref = testing::log_likelihoods(doc, bank);
      for (std::size_t j = 0; j < 5; ++j) {
        for (std::size_t k = 0; k < K; ++k) {
          CHECK(testing::close(ll(j, k), ref(j, k), 1e-10));
          CHECK(testing::close(bank.log_gaussian(doc.embeddings.row(j).transpose(), k), ref(j, k), 1e-10));
        }
      }
    }
  }
}

TEST_CASE("diagonal and full banks agree on diagonal covariances") {
  RowMatrix means(1, 3);
  means << 1.0, -2.0, 0.5;
  Matrix var(3, 1);
  var << 0.5, 2.0, 1.5;
  const ConceptBank diag(means, {var}, CovarianceMode::Diagonal);
  const ConceptBank full(means, {Matrix(var.col(0).asDiagonal())}, CovarianceMode::Full);
  const Vector e = Vector::LinSpaced(3, -1.0, 1.0);
  CHECK(diag.log_gaussian(e, 0) == doctest::Approx(full.log_gaussian(e, 0)).epsilon(1e-14));
  CHECK(diag.log_det(0) == doctest::Approx(std::log(0.5 * 2.0 * 1.5)).epsilon(1e-14));
  CHECK(diag.covariance(0) == full.covariance(0));
}

TEST_CASE("standard normal density at the mean") {
  const ConceptBank b(RowMatrix::Zero(1, 2), {Matrix::Identity(2, 2)}, CovarianceMode::Full);
  CHECK(b.log_gaussian(Vector::Zero(2), 0) == doctest::Approx(-std::log(2.0 * M_PI)).epsilon(1e-15));
  CHECK(b.mahalanobis(Vector::Ones(2), 0) == doctest::Approx(2.0));
}

TEST_CASE("construction validates covariances") {
  Matrix bad(2, 2);
  bad << 1.0, 2.0, 2.0, 1.0;  // indefinite
  try {
    ConceptBank(RowMatrix::Zero(1, 2), {bad}, CovarianceMode::Full);
    FAIL("expected failure");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NotPositiveDefinite);
  }
  Matrix asym(2, 2);
  asym << 1.0, 0.5, 0.0, 1.0;
  CHECK_THROWS_AS(ConceptBank(RowMatrix::Zero(1, 2), {asym}, CovarianceMode::Full), Error);
  Matrix zero_var(2, 1);
  zero_var << 1.0, 0.0;
  CHECK_THROWS_AS(ConceptBank(RowMatrix::Zero(1, 2), {zero_var}, CovarianceMode::Diagonal), Error);
  CHECK_THROWS_AS(ConceptBank(RowMatrix::Zero(2, 2), {Matrix::Identity(2, 2)}, CovarianceMode::Full), Error);
}

TEST_CASE("binary round trip is exact") {
  std::mt19937_64 rng(4);
  for (auto mode : {CovarianceMode::Full, CovarianceMode::Diagonal}) {
    const ConceptBank bank = testing::random_bank(3, 4, mode, rng);
    std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
    write_bank(bank, ss);
    const ConceptBank back = read_bank(ss);
    CHECK(back.mode() == mode);
    CHECK(back.means() == bank.means());
    for (std::size_t k = 0; k < 3; ++k) CHECK(back.stored_covariance(k) == bank.stored_covariance(k));
  }
}

TEST_CASE("bank format errors") {
  std::mt19937_64 rng(6);
  const ConceptBank bank = testing::random_bank(2, 2, CovarianceMode::Full, rng);
  std::ostringstream os(std::ios::binary);
  write_bank(bank, os);
  const std::string good = os.str();
  auto kind_of = [](const std::string& s) {
    std::istringstream is(s, std::ios::binary);
    try {
      read_bank(is);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::InvalidArgument;
  };
  std::string magic = good;
  magic[0] = 'X';
  CHECK(kind_of(magic) == ErrorKind::BadMagic);
  CHECK(kind_of(good.substr(0, good.size() - 3)) == ErrorKind::TruncatedRecord);
  CHECK(kind_of(good + "!") == ErrorKind::TrailingData);
}

TEST_CASE("sidecar summary records per-concept weights") {
  std::mt19937_64 rng(8);
  const ConceptBank bank = testing::random_bank(3, 2, CovarianceMode::Diagonal, rng);
  const auto dir = testing::scratch_dir("bank");
  Vector n(3);
  n << 10.0, 20.5, 0.25;
  write_bank_file(bank, dir / "b.valb", n);
  const ConceptBank back = read_bank_file(dir / "b.valb");
  CHECK(back.size() == 3);
  std::ifstream f(dir / "b.valb.json");
  REQUIRE(f);
  const auto summary = nlohmann::json::parse(f);
  CHECK(summary["K"] == 3);
  CHECK(summary["d"] == 2);
  CHECK(summary["covariance"] == "diag");
  REQUIRE(summary["concepts"].size() == 3);
  CHECK(summary["concepts"][1]["n_k"].get<double>() == 20.5);
  CHECK(summary["concepts"][2]["log_det"].get<double>() == doctest::Approx(bank.log_det(2)));
}

TEST_CASE("mode parsing") {
  CHECK(parse_covariance_mode("full") == CovarianceMode::Full);
  CHECK(parse_covariance_mode("diag") == CovarianceMode::Diagonal);
  CHECK(parse_covariance_mode("diagonal") == CovarianceMode::Diagonal);
  CHECK_THROWS_AS(parse_covariance_mode("spherical"), Error);
  CHECK(std::string(to_string(CovarianceMode::Diagonal)) == "diag");
}
