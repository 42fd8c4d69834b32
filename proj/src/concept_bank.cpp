#include "valc/concept_bank.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "json.hpp"

#include "binary_io.hpp"
#include "valc/error.hpp"

namespace valc {

CovarianceMode parse_covariance_mode(const std::string& text) {
  if (text == "full") return CovarianceMode::Full;
  if (text == "diag" || text == "diagonal") return CovarianceMode::Diagonal;
  throw Error(ErrorKind::InvalidArgument, "unknown covariance mode '" + text + "'");
}

const char* to_string(CovarianceMode mode) noexcept { return mode == CovarianceMode::Full ? "full" : "diag"; }

ConceptBank::ConceptBank(RowMatrix means, std::vector<Matrix> covariances, CovarianceMode mode)
    : means_(std::move(means)), covariances_(std::move(covariances)), mode_(mode) {
  const auto K = means_.rows();
  const auto d = means_.cols();
  if (K < 1 || d < 1) throw Error(ErrorKind::InvalidValue, "concept bank needs K >= 1 and d >= 1");
  if (static_cast<Eigen::Index>(covariances_.size()) != K) {
    throw Error(ErrorKind::DimensionMismatch, "covariance count != number of means");
  }
  if (!means_.allFinite()) throw Error(ErrorKind::NonFiniteValue, "non-finite concept mean");
  log_dets_.resize(static_cast<std::size_t>(K));
  if (mode_ == CovarianceMode::Full) factors_.resize(static_cast<std::size_t>(K));
  for (Eigen::Index k = 0; k < K; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    Matrix& cov = covariances_[kk];
    const std::string which = "concept " + std::to_string(k);
    if (!cov.allFinite()) throw Error(ErrorKind::NonFiniteValue, which + ": non-finite covariance");
    if (mode_ == CovarianceMode::Diagonal) {
      if (cov.rows() != d || cov.cols() != 1) {
        throw Error(ErrorKind::DimensionMismatch, which + ": diagonal covariance must be d x 1");
      }
      if ((cov.array() <= 0.0).any()) throw Error(ErrorKind::NotPositiveDefinite, which + ": variance <= 0");
      log_dets_[kk] = cov.array().log().sum();
    } else {
      if (cov.rows() != d || cov.cols() != d) {
        throw Error(ErrorKind::DimensionMismatch, which + ": covariance must be d x d");
      }
      const double scale = cov.cwiseAbs().maxCoeff();
      if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(scale, 1.0)) {
        throw Error(ErrorKind::NotPositiveDefinite, which + ": covariance is not symmetric");
      }
      Eigen::LLT<Matrix> llt(cov);
      if (llt.info() != Eigen::Success) {
        throw Error(ErrorKind::NotPositiveDefinite, which + ": Cholesky factorization failed");
      }
      Matrix L = llt.matrixL();
      const Vector diag = L.diagonal();
      if (!diag.allFinite() || (diag.array() <= 0.0).any()) {
        throw Error(ErrorKind::NotPositiveDefinite, which + ": singular covariance");
      }
      log_dets_[kk] = 2.0 * diag.array().log().sum();
      factors_[kk] = std::move(L);
    }
  }
}

Matrix ConceptBank::covariance(std::size_t k) const {
  if (mode_ == CovarianceMode::Full) return covariances_[k];
  return covariances_[k].col(0).asDiagonal();
}

double ConceptBank::mahalanobis(const Eigen::Ref<const Vector>& e, std::size_t k) const {
  const Vector diff = e - mean(k);
  if (mode_ == CovarianceMode::Diagonal) return (diff.array().square() / covariances_[k].col(0).array()).sum();
  return factors_[k].triangularView<Eigen::Lower>().solve(diff).squaredNorm();
}

double ConceptBank::log_gaussian(const Eigen::Ref<const Vector>& e, std::size_t k) const {
  const double d = static_cast<double>(dimension());
  return -0.5 * mahalanobis(e, k) - 0.5 * log_dets_[k] - 0.5 * d * std::log(2.0 * std::numbers::pi);
}

Matrix ConceptBank::log_likelihoods(const RowMatrix& embeddings) const {
  const auto J = embeddings.rows();
  const auto K = means_.rows();
  const double d = static_cast<double>(dimension());
  const double constant = -0.5 * d * std::log(2.0 * std::numbers::pi);
  Matrix out(J, K);
  for (Eigen::Index k = 0; k < K; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    Matrix diff = (embeddings.rowwise() - means_.row(k)).transpose();  // d x J
    Vector maha;
    if (mode_ == CovarianceMode::Diagonal) {
      maha = (diff.array().square().colwise() / covariances_[kk].col(0).array()).colwise().sum().transpose();
    } else {
      factors_[kk].triangularView<Eigen::Lower>().solveInPlace(diff);
      maha = diff.colwise().squaredNorm().transpose();
    }
    out.col(k) = (-0.5 * maha).array() - 0.5 * log_dets_[kk] + constant;
  }
  return out;
}

double log_gaussian(const Eigen::Ref<const Vector>& e, std::size_t k, const ConceptBank& bank) {
  return bank.log_gaussian(e, k);
}

ConceptBank read_bank(std::istream& in) {
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorKind::IoFailure, "failed reading concept bank stream");
  detail::ByteReader r(bytes);
  if (r.remaining() < sizeof(kBankMagic) ||
      std::string_view(bytes.data(), sizeof(kBankMagic)) != std::string_view(kBankMagic, sizeof(kBankMagic))) {
    throw Error(ErrorKind::BadMagic, "stream does not start with VALB1");
  }
  r.take(sizeof(kBankMagic), "magic");
  const std::size_t d = r.u32("dimension");
  const std::size_t K = r.u32("concept count");
  const std::uint8_t mode_byte = r.u8("covariance mode");
  if (mode_byte > 1) throw Error(ErrorKind::InvalidValue, "unknown covariance mode byte");
  if (d == 0 || K == 0) throw Error(ErrorKind::InvalidValue, "concept bank needs K >= 1 and d >= 1");
  const CovarianceMode mode = mode_byte == 0 ? CovarianceMode::Full : CovarianceMode::Diagonal;
  const std::size_t per_cov = mode == CovarianceMode::Full ? d * d : d;
  if (r.remaining() / 8 < K * d + K * per_cov) throw Error(ErrorKind::TruncatedRecord, "concept bank truncated");

  RowMatrix means(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(d));
  for (Eigen::Index k = 0; k < means.rows(); ++k) {
    for (Eigen::Index c = 0; c < means.cols(); ++c) means(k, c) = r.f64("mean");
  }
  std::vector<Matrix> covs;
  covs.reserve(K);
  for (std::size_t k = 0; k < K; ++k) {
    const auto di = static_cast<Eigen::Index>(d);
    Matrix cov = mode == CovarianceMode::Full ? Matrix(di, di) : Matrix(di, 1);
    for (Eigen::Index i = 0; i < cov.rows(); ++i) {
      for (Eigen::Index j = 0; j < cov.cols(); ++j) cov(i, j) = r.f64("covariance");
    }
    covs.push_back(std::move(cov));
  }
  if (!r.at_end()) throw Error(ErrorKind::TrailingData, "bytes remain after concept bank");
  return ConceptBank(std::move(means), std::move(covs), mode);
}

void write_bank(const ConceptBank& bank, std::ostream& out) {
  detail::ByteWriter w;
  w.raw(std::string_view(kBankMagic, sizeof(kBankMagic)));
  w.u32(static_cast<std::uint32_t>(bank.dimension()));
  w.u32(static_cast<std::uint32_t>(bank.size()));
  w.u8(bank.mode() == CovarianceMode::Full ? 0 : 1);
  const RowMatrix& means = bank.means();
  for (Eigen::Index k = 0; k < means.rows(); ++k) {
    for (Eigen::Index c = 0; c < means.cols(); ++c) w.f64(means(k, c));
  }
  for (std::size_t k = 0; k < bank.size(); ++k) {
    const Matrix& cov = bank.stored_covariance(k);
    for (Eigen::Index i = 0; i < cov.rows(); ++i) {
      for (Eigen::Index j = 0; j < cov.cols(); ++j) w.f64(cov(i, j));
    }
  }
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw Error(ErrorKind::IoFailure, "failed writing concept bank stream");
}

ConceptBank read_bank_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot open concept bank file " + path.string());
  return read_bank(in);
}

std::string bank_summary_json(const ConceptBank& bank, const std::optional<Vector>& concept_weights) {
  nlohmann::ordered_json j;
  j["format"] = "VALB1";
  j["d"] = bank.dimension();
  j["K"] = bank.size();
  j["covariance"] = to_string(bank.mode());
  auto concepts = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < bank.size(); ++k) {
    nlohmann::ordered_json c;
    c["index"] = k;
    if (concept_weights) c["n_k"] = (*concept_weights)(static_cast<Eigen::Index>(k));
    c["log_det"] = bank.log_det(k);
    concepts.push_back(std::move(c));
  }
  j["concepts"] = std::move(concepts);
  return j.dump(2) + "\n";
}

void write_bank_file(const ConceptBank& bank, const std::filesystem::path& path,
                     const std::optional<Vector>& concept_weights) {
  std::ostringstream buffer;
  write_bank(bank, buffer);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoFailure, "cannot open " + path.string() + " for writing");
    const std::string bytes = buffer.str();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::IoFailure, "failed writing " + path.string());
  }
  if (concept_weights) {
    std::filesystem::path sidecar = path;
    sidecar += ".json";
    std::ofstream out(sidecar, std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoFailure, "cannot open " + sidecar.string() + " for writing");
    out << bank_summary_json(bank, concept_weights);
    if (!out) throw Error(ErrorKind::IoFailure, "failed writing " + sidecar.string());
  }
}

}  // namespace valc
