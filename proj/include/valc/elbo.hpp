#pragma once

#include <string>
#include <vector>

#include "valc/concept_bank.hpp"
#include "valc/corpus.hpp"
#include "valc/inference.hpp"

namespace valc {

/// Which count weighting the assignment terms use.
///
/// Printed leaves the z-prior and z-entropy terms unweighted and weights only the
/// likelihood. VirtualCounts treats each token as w virtual copies, so all three
/// per-token terms carry w. CountFactor responsibilities with the weighted gamma
/// update are exact coordinate ascent on VirtualCounts for any w; CountExponent is
/// exact ascent on Printed when every w is 1.
enum class ElboWeighting { Printed, VirtualCounts };

ElboWeighting parse_elbo_weighting(const std::string& text);
const char* to_string(ElboWeighting weighting) noexcept;

/// The weighting under which a responsibility mode performs coordinate ascent.
ElboWeighting paired_weighting(PhiMode mode) noexcept;

struct ElboBreakdown {
  double dirichlet_prior_term = 0.0;
  double z_prior_term = 0.0;
  double likelihood_term = 0.0;
  double theta_entropy_term = 0.0;
  double z_entropy_term = 0.0;
  double total = 0.0;

  double kl_theta() const noexcept { return -(dirichlet_prior_term + theta_entropy_term); }
  double kl_z() const noexcept { return -(z_prior_term + z_entropy_term); }

  ElboBreakdown& operator+=(const ElboBreakdown& other) noexcept;
};

ElboBreakdown elbo_terms(const Matrix& log_likelihoods, const Vector& counts, const Vector& gamma, const Matrix& phi,
                         const Vector& alpha, ElboWeighting weighting = ElboWeighting::Printed);

ElboBreakdown elbo_document(const EmbeddedDocument& doc, const Vector& counts, const DocumentPosterior& posterior,
                            const ConceptBank& bank, const Vector& alpha,
                            ElboWeighting weighting = ElboWeighting::Printed);

/// Sum of per-document ELBOs.
ElboBreakdown elbo_corpus(const Corpus& corpus, const std::vector<Vector>& counts,
                          const std::vector<DocumentPosterior>& posteriors, const ConceptBank& bank,
                          const Vector& alpha, ElboWeighting weighting = ElboWeighting::Printed,
                          std::size_t threads = 1);

}  // namespace valc
