#include "valc/inference.hpp"

#include <cmath>

#include "valc/elbo.hpp"
#include "valc/error.hpp"
#include "valc/parallel.hpp"
#include "valc/special.hpp"

namespace valc {

PhiMode parse_phi_mode(const std::string& text) {
  if (text == "derived") return PhiMode::CountExponent;
  if (text == "literal") return PhiMode::CountFactor;
  throw Error(ErrorKind::InvalidArgument, "unknown phi mode '" + text + "' (expected derived or literal)");
}

const char* to_string(PhiMode mode) noexcept { return mode == PhiMode::CountExponent ? "derived" : "literal"; }

void validate_alpha(const Vector& alpha, std::size_t K) {
  if (static_cast<std::size_t>(alpha.size()) != K) {
    throw Error(ErrorKind::DimensionMismatch, "alpha length " + std::to_string(alpha.size()) + " != K " +
                                                  std::to_string(K));
  }
  if (!alpha.allFinite() || (alpha.array() <= 0.0).any()) {
    throw Error(ErrorKind::InvalidArgument, "alpha entries must be finite and positive");
  }
}

namespace {

Vector expected_log_theta(const Vector& gamma) {
  if (!gamma.allFinite() || (gamma.array() <= 0.0).any()) {
    throw Error(ErrorKind::NonPositiveGamma, "gamma entries must be finite and positive");
  }
  const double psi_total = digamma(gamma.sum());
  Vector out(gamma.size());
  for (Eigen::Index k = 0; k < gamma.size(); ++k) out(k) = digamma(gamma(k)) - psi_total;
  return out;
}

}  // namespace

Matrix update_phi(const Matrix& log_likelihoods, const Vector& counts, const Vector& gamma, PhiMode mode) {
  const auto J = log_likelihoods.rows();
  const auto K = log_likelihoods.cols();
  if (gamma.size() != K) throw Error(ErrorKind::DimensionMismatch, "gamma length != K");
  if (counts.size() != J) throw Error(ErrorKind::DimensionMismatch, "counts length != token count");
  const Vector prior = expected_log_theta(gamma);
  Matrix phi(J, K);
  for (Eigen::Index j = 0; j < J; ++j) {
    const double scale = mode == PhiMode::CountExponent ? counts(j) : 1.0;
    auto row = phi.row(j);
    row = prior.transpose() + scale * log_likelihoods.row(j);
    const double top = row.maxCoeff();
    row = (row.array() - top).exp().matrix();
    row /= row.sum();
  }
  return phi;
}

Matrix update_phi(const EmbeddedDocument& doc, const Vector& counts, const Vector& gamma, const ConceptBank& bank,
                  PhiMode mode) {
  return update_phi(bank.log_likelihoods(doc.embeddings), counts, gamma, mode);
}

Vector update_gamma(const Vector& alpha, const Matrix& phi, const Vector& counts) {
  if (phi.cols() != alpha.size()) throw Error(ErrorKind::DimensionMismatch, "phi columns != alpha length");
  if (phi.rows() != counts.size()) throw Error(ErrorKind::DimensionMismatch, "phi rows != counts length");
  return alpha + phi.transpose() * counts;
}

Vector initial_gamma(const Vector& alpha, const Vector& counts) {
  return alpha.array() + counts.sum() / static_cast<double>(alpha.size());
}

DocumentPosterior infer_document(const EmbeddedDocument& doc, const Vector& counts, const ConceptBank& bank,
                                 const Vector& alpha, const InferenceOptions& options,
                                 const std::optional<Vector>& start) {
  validate_alpha(alpha, bank.size());
  if (counts.size() != static_cast<Eigen::Index>(doc.length())) {
    throw Error(ErrorKind::DimensionMismatch, "counts length != token count");
  }
  if (options.max_iters < 1) throw Error(ErrorKind::InvalidArgument, "max_iters must be >= 1");
  if (!(options.tol >= 0.0)) throw Error(ErrorKind::InvalidArgument, "tol must be >= 0");

  const Matrix loglik = bank.log_likelihoods(doc.embeddings);
  DocumentPosterior post;
  post.gamma = start ? *start : initial_gamma(alpha, counts);
  const ElboWeighting weighting = paired_weighting(options.phi_mode);
  for (std::size_t it = 1; it <= options.max_iters; ++it) {
    post.phi = update_phi(loglik, counts, post.gamma, options.phi_mode);
    Vector next = update_gamma(alpha, post.phi, counts);
    const double change = (next - post.gamma).cwiseAbs().mean();
    post.gamma = std::move(next);
    post.iterations = it;
    if (options.record_elbo) {
      post.elbo_trace.push_back(elbo_terms(loglik, counts, post.gamma, post.phi, alpha, weighting).total);
    }
    if (change < options.tol * post.gamma.sum()) {
      post.converged = true;
      break;
    }
  }
  return post;
}

std::vector<DocumentPosterior> infer_corpus(const Corpus& corpus, const std::vector<Vector>& counts,
                                            const ConceptBank& bank, const Vector& alpha,
                                            const InferenceOptions& options, std::size_t threads,
                                            const std::vector<Vector>* start) {
  if (counts.size() != corpus.size()) throw Error(ErrorKind::DimensionMismatch, "one count vector per document");
  if (corpus.dimension() != bank.dimension()) {
    throw Error(ErrorKind::DimensionMismatch, "corpus dimension != concept bank dimension");
  }
  if (start && start->size() != corpus.size()) throw Error(ErrorKind::DimensionMismatch, "one start per document");
  std::vector<DocumentPosterior> out(corpus.size());
  parallel_for(corpus.size(), threads, [&](std::size_t m) {
    std::optional<Vector> init;
    if (start) init = (*start)[m];
    out[m] = infer_document(corpus[m], counts[m], bank, alpha, options, init);
  });
  return out;
}

Vector infer_phrase(const DocumentPosterior& posterior, const Vector& counts, const Vector& alpha, std::size_t r,
                    std::size_t s) {
  const auto J = static_cast<std::size_t>(posterior.phi.rows());
  if (r < 1 || s < r || s > J) {
    throw Error(ErrorKind::BadSpan, "span [" + std::to_string(r) + ", " + std::to_string(s) +
                                        "] outside 1.." + std::to_string(J));
  }
  if (counts.size() != posterior.phi.rows()) throw Error(ErrorKind::DimensionMismatch, "counts length != J");
  const auto begin = static_cast<Eigen::Index>(r - 1);
  const auto len = static_cast<Eigen::Index>(s - r + 1);
  return alpha + posterior.phi.middleRows(begin, len).transpose() * counts.segment(begin, len);
}

}  // namespace valc
