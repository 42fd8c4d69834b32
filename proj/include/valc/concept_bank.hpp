#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "valc/types.hpp"

namespace valc {

enum class CovarianceMode { Full, Diagonal };

CovarianceMode parse_covariance_mode(const std::string& text);
const char* to_string(CovarianceMode mode) noexcept;

/// K Gaussian concepts over a d-dimensional embedding space.
///
/// Full mode stores d x d SPD covariances with cached Cholesky factors; diagonal
/// mode stores positive variances. log|Sigma_k| is cached in both modes.
class ConceptBank {
 public:
  /// `covariances[k]` is d x d in full mode and d x 1 (variances) in diagonal mode.
  ConceptBank(RowMatrix means, std::vector<Matrix> covariances, CovarianceMode mode);

  std::size_t size() const noexcept { return static_cast<std::size_t>(means_.rows()); }
  std::size_t dimension() const noexcept { return static_cast<std::size_t>(means_.cols()); }
  CovarianceMode mode() const noexcept { return mode_; }

  const RowMatrix& means() const noexcept { return means_; }
  Vector mean(std::size_t k) const { return means_.row(static_cast<Eigen::Index>(k)).transpose(); }

  /// Covariance as a dense d x d matrix regardless of mode.
  Matrix covariance(std::size_t k) const;
  /// Stored representation: d x d (full) or d x 1 (diagonal).
  const Matrix& stored_covariance(std::size_t k) const { return covariances_[k]; }
  double log_det(std::size_t k) const { return log_dets_[k]; }

  double mahalanobis(const Eigen::Ref<const Vector>& e, std::size_t k) const;
  /// log N(e; mu_k, Sigma_k).
  double log_gaussian(const Eigen::Ref<const Vector>& e, std::size_t k) const;
  /// J x K matrix of log-densities for the rows of `embeddings`.
  Matrix log_likelihoods(const RowMatrix& embeddings) const;

 private:
  RowMatrix means_;
  std::vector<Matrix> covariances_;
  std::vector<Matrix> factors_;  // lower Cholesky factors, full mode only
  std::vector<double> log_dets_;
  CovarianceMode mode_;
};

double log_gaussian(const Eigen::Ref<const Vector>& e, std::size_t k, const ConceptBank& bank);

// VALB1 binary format, little-endian:
//   "VALB1" | u32 d | u32 K | u8 mode (0 full, 1 diagonal)
//   | K*d f64 means (row-major) | K covariances as f64 (d*d row-major, or d variances)
inline constexpr char kBankMagic[5] = {'V', 'A', 'L', 'B', '1'};

ConceptBank read_bank(std::istream& in);
void write_bank(const ConceptBank& bank, std::ostream& out);

ConceptBank read_bank_file(const std::filesystem::path& path);
/// Writes the bank and, when `concept_weights` is given, a JSON sidecar at `<path>.json` with per-concept n_k.
void write_bank_file(const ConceptBank& bank, const std::filesystem::path& path,
                     const std::optional<Vector>& concept_weights = std::nullopt);

std::string bank_summary_json(const ConceptBank& bank, const std::optional<Vector>& concept_weights);

}  // namespace valc
