#pragma once

#include <optional>
#include <string>
#include <vector>

#include "valc/concept_bank.hpp"
#include "valc/corpus.hpp"
#include "valc/types.hpp"

namespace valc {

/// How the continuous count enters the responsibility update.
///
/// CountExponent raises each token's likelihood to the power w (the stationary point
/// of the weighted ELBO in phi). CountFactor multiplies the density by w, which
/// cancels under row normalization and leaves the unweighted form.
enum class PhiMode { CountExponent, CountFactor };

PhiMode parse_phi_mode(const std::string& text);
const char* to_string(PhiMode mode) noexcept;

/// Variational posterior for one document.
struct DocumentPosterior {
  Vector gamma;  // K Dirichlet parameters
  Matrix phi;    // J x K responsibilities, rows sum to 1
  std::size_t iterations = 0;
  bool converged = false;
  /// Per-sweep ELBO values, filled only when requested.
  std::vector<double> elbo_trace;

  /// Posterior mean concept proportions gamma / sum(gamma).
  Vector theta() const { return gamma / gamma.sum(); }
};

struct InferenceOptions {
  PhiMode phi_mode = PhiMode::CountExponent;
  double tol = 1e-4;
  std::size_t max_iters = 100;
  bool record_elbo = false;
};

/// Responsibilities from a precomputed J x K log-likelihood matrix.
Matrix update_phi(const Matrix& log_likelihoods, const Vector& counts, const Vector& gamma, PhiMode mode);
Matrix update_phi(const EmbeddedDocument& doc, const Vector& counts, const Vector& gamma, const ConceptBank& bank,
                  PhiMode mode);

/// gamma_k = alpha_k + sum_j phi_jk w_j.
Vector update_gamma(const Vector& alpha, const Matrix& phi, const Vector& counts);

/// Default starting point: alpha_k + sum(w) / K.
Vector initial_gamma(const Vector& alpha, const Vector& counts);

/// Alternates phi and gamma updates until the mean absolute gamma change drops below
/// tol * sum(gamma) or max_iters sweeps have run. `start` overrides the initial gamma.
DocumentPosterior infer_document(const EmbeddedDocument& doc, const Vector& counts, const ConceptBank& bank,
                                 const Vector& alpha, const InferenceOptions& options = {},
                                 const std::optional<Vector>& start = std::nullopt);

/// Runs infer_document over the corpus on `threads` workers (0 = all cores).
std::vector<DocumentPosterior> infer_corpus(const Corpus& corpus, const std::vector<Vector>& counts,
                                            const ConceptBank& bank, const Vector& alpha,
                                            const InferenceOptions& options = {}, std::size_t threads = 1,
                                            const std::vector<Vector>* start = nullptr);

/// Concept strengths of the phrase spanning tokens r..s (1-based, inclusive).
Vector infer_phrase(const DocumentPosterior& posterior, const Vector& counts, const Vector& alpha, std::size_t r,
                    std::size_t s);

void validate_alpha(const Vector& alpha, std::size_t K);

}  // namespace valc
