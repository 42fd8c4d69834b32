#include "valc/elbo.hpp"

#include <cmath>

#include "valc/error.hpp"
#include "valc/parallel.hpp"
#include "valc/special.hpp"

namespace valc {

ElboWeighting parse_elbo_weighting(const std::string& text) {
  if (text == "printed") return ElboWeighting::Printed;
  if (text == "virtual-counts") return ElboWeighting::VirtualCounts;
  throw Error(ErrorKind::InvalidArgument, "unknown ELBO weighting '" + text + "'");
}

const char* to_string(ElboWeighting weighting) noexcept {
  return weighting == ElboWeighting::Printed ? "printed" : "virtual-counts";
}

ElboWeighting paired_weighting(PhiMode mode) noexcept {
  return mode == PhiMode::CountExponent ? ElboWeighting::Printed : ElboWeighting::VirtualCounts;
}

ElboBreakdown& ElboBreakdown::operator+=(const ElboBreakdown& other) noexcept {
  dirichlet_prior_term += other.dirichlet_prior_term;
  z_prior_term += other.z_prior_term;
  likelihood_term += other.likelihood_term;
  theta_entropy_term += other.theta_entropy_term;
  z_entropy_term += other.z_entropy_term;
  total += other.total;
  return *this;
}

ElboBreakdown elbo_terms(const Matrix& log_likelihoods, const Vector& counts, const Vector& gamma, const Matrix& phi,
                         const Vector& alpha, ElboWeighting weighting) {
  const auto J = phi.rows();
  const auto K = phi.cols();
  if (log_likelihoods.rows() != J || log_likelihoods.cols() != K || counts.size() != J || gamma.size() != K ||
      alpha.size() != K) {
    throw Error(ErrorKind::DimensionMismatch, "inconsistent ELBO input shapes");
  }
  if ((gamma.array() <= 0.0).any()) throw Error(ErrorKind::NonPositiveGamma, "gamma entries must be positive");

  const double gamma_sum = gamma.sum();
  const double psi_sum = digamma(gamma_sum);
  Vector elog(K);
  for (Eigen::Index k = 0; k < K; ++k) elog(k) = digamma(gamma(k)) - psi_sum;

  ElboBreakdown out;
  out.dirichlet_prior_term = log_gamma(alpha.sum());
  out.theta_entropy_term = -log_gamma(gamma_sum);
  for (Eigen::Index k = 0; k < K; ++k) {
    out.dirichlet_prior_term += -log_gamma(alpha(k)) + (alpha(k) - 1.0) * elog(k);
    out.theta_entropy_term += log_gamma(gamma(k)) - (gamma(k) - 1.0) * elog(k);
  }
  for (Eigen::Index j = 0; j < J; ++j) {
    const double w = counts(j);
    const double token_weight = weighting == ElboWeighting::VirtualCounts ? w : 1.0;
    double prior = 0.0;
    double lik = 0.0;
    double entropy = 0.0;
    for (Eigen::Index k = 0; k < K; ++k) {
      const double p = phi(j, k);
      if (p <= 0.0) continue;
      prior += p * elog(k);
      lik += p * log_likelihoods(j, k);
      entropy -= p * std::log(p);
    }
    out.z_prior_term += token_weight * prior;
    out.likelihood_term += w * lik;
    out.z_entropy_term += token_weight * entropy;
  }
  out.total = out.dirichlet_prior_term + out.z_prior_term + out.likelihood_term + out.theta_entropy_term +
              out.z_entropy_term;
  return out;
}

ElboBreakdown elbo_document(const EmbeddedDocument& doc, const Vector& counts, const DocumentPosterior& posterior,
                            const ConceptBank& bank, const Vector& alpha, ElboWeighting weighting) {
  return elbo_terms(bank.log_likelihoods(doc.embeddings), counts, posterior.gamma, posterior.phi, alpha, weighting);
}

ElboBreakdown elbo_corpus(const Corpus& corpus, const std::vector<Vector>& counts,
                          const std::vector<DocumentPosterior>& posteriors, const ConceptBank& bank,
                          const Vector& alpha, ElboWeighting weighting, std::size_t threads) {
  if (counts.size() != corpus.size() || posteriors.size() != corpus.size()) {
    throw Error(ErrorKind::DimensionMismatch, "counts and posteriors must align with documents");
  }
  std::vector<ElboBreakdown> parts(corpus.size());
  parallel_for(corpus.size(), threads, [&](std::size_t m) {
    parts[m] = elbo_document(corpus[m], counts[m], posteriors[m], bank, alpha, weighting);
  });
  ElboBreakdown total;
  for (const auto& p : parts) total += p;
  return total;
}

}  // namespace valc
