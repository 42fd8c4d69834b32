#pragma once

// Shared fixtures and extended-precision reference formulas for the test suites.
// The references are written directly from the model definitions and avoid the
// library's own special functions, Cholesky factors and update code.

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "valc/concept_bank.hpp"
#include "valc/corpus.hpp"
#include "valc/types.hpp"

namespace testing {

using LD = long double;
using LMatrix = Eigen::Matrix<LD, Eigen::Dynamic, Eigen::Dynamic>;
using LVector = Eigen::Matrix<LD, Eigen::Dynamic, 1>;

inline LD psi(LD x) { return boost::math::digamma(x); }
inline LD lgam(LD x) { return boost::math::lgamma(x); }

/// |a - b| <= tol * max(1, |b|).
inline bool close(double a, LD b, double tol) {
  return std::fabs(static_cast<LD>(a) - b) <= static_cast<LD>(tol) * std::max<LD>(1.0L, std::fabs(b));
}

inline LMatrix widen(const valc::Matrix& m) { return m.cast<LD>(); }
inline LVector widen(const valc::Vector& v) { return v.cast<LD>(); }

// ---------------------------------------------------------------- generators

inline valc::Matrix random_spd(std::size_t d, std::mt19937_64& rng, double floor = 0.2) {
  std::normal_distribution<double> n(0.0, 1.0);
  valc::Matrix a(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) a(i, j) = n(rng);
  }
  valc::Matrix s = a * a.transpose() / static_cast<double>(d) + floor * valc::Matrix::Identity(d, d);
  return 0.5 * (s + s.transpose());
}

inline valc::ConceptBank random_bank(std::size_t K, std::size_t d, valc::CovarianceMode mode, std::mt19937_64& rng,
                                     double spread = 3.0) {
  std::normal_distribution<double> n(0.0, spread);
  std::uniform_real_distribution<double> u(0.3, 2.0);
  valc::RowMatrix means(K, d);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t c = 0; c < d; ++c) means(k, c) = n(rng);
  }
  std::vector<valc::Matrix> covs;
  for (std::size_t k = 0; k < K; ++k) {
    if (mode == valc::CovarianceMode::Full) {
      covs.push_back(random_spd(d, rng));
    } else {
      valc::Matrix v(d, 1);
      for (std::size_t c = 0; c < d; ++c) v(c, 0) = u(rng);
      covs.push_back(v);
    }
  }
  return valc::ConceptBank(means, covs, mode);
}

inline valc::EmbeddedDocument random_document(std::size_t J, std::size_t d, std::mt19937_64& rng,
                                              const std::string& id = "doc", double spread = 3.0) {
  std::normal_distribution<double> n(0.0, spread);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  valc::EmbeddedDocument doc;
  doc.doc_id = id;
  doc.embeddings.resize(J, d);
  doc.attention.resize(J);
  for (std::size_t j = 0; j < J; ++j) {
    doc.tokens.push_back("t" + std::to_string(j));
    for (std::size_t c = 0; c < d; ++c) {
      doc.embeddings(j, c) = static_cast<double>(static_cast<float>(n(rng)));
    }
    doc.attention(j) = static_cast<double>(static_cast<float>(u(rng)));
  }
  return doc;
}

inline valc::Corpus random_corpus(std::size_t M, std::size_t J, std::size_t d, std::mt19937_64& rng) {
  std::vector<valc::EmbeddedDocument> docs;
  for (std::size_t m = 0; m < M; ++m) docs.push_back(random_document(J, d, rng, "doc" + std::to_string(m)));
  return valc::Corpus(d, std::move(docs));
}

inline valc::Vector random_positive(std::size_t n, std::mt19937_64& rng, double lo = 0.1, double hi = 5.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  valc::Vector v(n);
  for (std::size_t i = 0; i < n; ++i) v(i) = u(rng);
  return v;
}

inline valc::Matrix random_phi(std::size_t J, std::size_t K, std::mt19937_64& rng) {
  valc::Matrix phi(J, K);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (std::size_t j = 0; j < J; ++j) {
    for (std::size_t k = 0; k < K; ++k) phi(j, k) = u(rng);
    phi.row(j) /= phi.row(j).sum();
  }
  return phi;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("valc_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// ---------------------------------------------------------------- oracles

/// log N(e; mu, Sigma) via LU determinant and explicit inverse.
inline LD log_gauss(const LVector& e, const LVector& mu, const LMatrix& sigma) {
  const LD pi = 3.141592653589793238462643383279502884L;
  const LVector diff = e - mu;
  const LD quad = diff.dot(sigma.inverse() * diff);
  const LD det = sigma.fullPivLu().determinant();
  return -0.5L * (static_cast<LD>(e.size()) * std::log(2.0L * pi) + std::log(det) + quad);
}

inline LMatrix log_likelihoods(const valc::EmbeddedDocument& doc, const valc::ConceptBank& bank) {
  LMatrix out(doc.length(), bank.size());
  for (std::size_t j = 0; j < doc.length(); ++j) {
    for (std::size_t k = 0; k < bank.size(); ++k) {
      out(j, k) = log_gauss(doc.embeddings.row(j).transpose().cast<LD>(), bank.mean(k).cast<LD>(),
                            bank.covariance(k).cast<LD>());
    }
  }
  return out;
}

/// Responsibilities: softmax_k(psi(gamma_k) - psi(sum gamma) + s_j * loglik_jk), s_j = w_j or 1.
inline LMatrix phi(const LMatrix& loglik, const LVector& counts, const LVector& gamma, bool exponent) {
  const LD total = gamma.sum();
  LMatrix out(loglik.rows(), loglik.cols());
  for (Eigen::Index j = 0; j < loglik.rows(); ++j) {
    const LD scale = exponent ? counts(j) : 1.0L;
    LVector logits(loglik.cols());
    for (Eigen::Index k = 0; k < loglik.cols(); ++k) logits(k) = psi(gamma(k)) - psi(total) + scale * loglik(j, k);
    const LD top = logits.maxCoeff();
    LD norm = 0.0L;
    for (Eigen::Index k = 0; k < logits.size(); ++k) norm += std::exp(logits(k) - top);
    for (Eigen::Index k = 0; k < logits.size(); ++k) out(j, k) = std::exp(logits(k) - top) / norm;
  }
  return out;
}

inline LVector gamma_update(const LVector& alpha, const LMatrix& phi, const LVector& counts) {
  LVector g = alpha;
  for (Eigen::Index k = 0; k < alpha.size(); ++k) {
    for (Eigen::Index j = 0; j < phi.rows(); ++j) g(k) += phi(j, k) * counts(j);
  }
  return g;
}

struct ElboTerms {
  LD dirichlet_prior = 0, z_prior = 0, likelihood = 0, theta_entropy = 0, z_entropy = 0;
  LD total() const { return dirichlet_prior + z_prior + likelihood + theta_entropy + z_entropy; }
};

/// Five-term document bound. With virtual counts the z-prior and z-entropy terms carry w.
inline ElboTerms elbo(const LMatrix& loglik, const LVector& counts, const LVector& gamma, const LMatrix& phi,
                      const LVector& alpha, bool virtual_counts) {
  ElboTerms t;
  const LD gsum = gamma.sum();
  LD asum = 0.0L;
  for (Eigen::Index k = 0; k < alpha.size(); ++k) asum += alpha(k);
  t.dirichlet_prior = lgam(asum);
  t.theta_entropy = -lgam(gsum);
  for (Eigen::Index k = 0; k < gamma.size(); ++k) {
    const LD el = psi(gamma(k)) - psi(gsum);
    t.dirichlet_prior += -lgam(alpha(k)) + (alpha(k) - 1.0L) * el;
    t.theta_entropy += lgam(gamma(k)) - (gamma(k) - 1.0L) * el;
  }
  for (Eigen::Index j = 0; j < phi.rows(); ++j) {
    const LD c = virtual_counts ? counts(j) : 1.0L;
    for (Eigen::Index k = 0; k < phi.cols(); ++k) {
      const LD p = phi(j, k);
      if (p <= 0.0L) continue;
      const LD el = psi(gamma(k)) - psi(gsum);
      t.z_prior += c * p * el;
      t.likelihood += counts(j) * p * loglik(j, k);
      t.z_entropy -= c * p * std::log(p);
    }
  }
  return t;
}

struct Moments {
  std::vector<LD> n;
  std::vector<LVector> mean;
  std::vector<LMatrix> scatter;  // sum phi w (e - mean)(e - mean)^T
};

/// Weighted per-concept moments over several documents, straight from the definitions.
inline Moments moments(const std::vector<valc::EmbeddedDocument>& docs, const std::vector<valc::Matrix>& phis,
                       const std::vector<valc::Vector>& counts, std::size_t K) {
  const std::size_t d = docs.front().dimension();
  Moments m;
  m.n.assign(K, 0.0L);
  m.mean.assign(K, LVector::Zero(d));
  m.scatter.assign(K, LMatrix::Zero(d, d));
  for (std::size_t i = 0; i < docs.size(); ++i) {
    for (std::size_t j = 0; j < docs[i].length(); ++j) {
      for (std::size_t k = 0; k < K; ++k) {
        const LD r = static_cast<LD>(phis[i](j, k)) * counts[i](j);
        m.n[k] += r;
        m.mean[k] += r * docs[i].embeddings.row(j).transpose().cast<LD>();
      }
    }
  }
  for (std::size_t k = 0; k < K; ++k) {
    if (m.n[k] > 0) m.mean[k] /= m.n[k];
  }
  for (std::size_t i = 0; i < docs.size(); ++i) {
    for (std::size_t j = 0; j < docs[i].length(); ++j) {
      for (std::size_t k = 0; k < K; ++k) {
        const LD r = static_cast<LD>(phis[i](j, k)) * counts[i](j);
        const LVector diff = docs[i].embeddings.row(j).transpose().cast<LD>() - m.mean[k];
        m.scatter[k] += r * diff * diff.transpose();
      }
    }
  }
  return m;
}

/// Maximum-likelihood covariance with the trace-scaled ridge.
inline LMatrix mle_covariance(const Moments& m, std::size_t k, LD ridge = 1e-6L) {
  LMatrix cov = m.scatter[k] / m.n[k];
  const LD tr = cov.trace() / static_cast<LD>(cov.rows());
  cov += (tr > 0 ? ridge * tr : ridge) * LMatrix::Identity(cov.rows(), cov.cols());
  return cov;
}

}  // namespace testing
