#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "valc/concept_bank.hpp"
#include "valc/corpus.hpp"
#include "valc/counts.hpp"
#include "valc/inference.hpp"

namespace valc {

/// Weighted per-concept moments: n_k = sum phi w, s_k = sum phi w e, and the scatter
/// S_k = sum phi w (e - s_k/n_k)(e - s_k/n_k)^T (d x d, or its diagonal as d x 1).
struct SufficientStats {
  CovarianceMode mode = CovarianceMode::Full;
  Vector weight;                // K
  RowMatrix sum;                // K x d
  std::vector<Matrix> scatter;  // K entries

  SufficientStats() = default;
  SufficientStats(std::size_t K, std::size_t d, CovarianceMode mode);

  std::size_t size() const noexcept { return static_cast<std::size_t>(weight.size()); }
  std::size_t dimension() const noexcept { return static_cast<std::size_t>(sum.cols()); }
  /// s_k / n_k; zero when n_k == 0.
  Vector weighted_mean(std::size_t k) const;

  /// Parallel combination: S = S_a + S_b + (n_a n_b / n) delta delta^T.
  void merge(const SufficientStats& other);
};

/// Exact moments of one document under the given responsibilities and counts.
SufficientStats document_stats(const EmbeddedDocument& doc, const Matrix& phi, const Vector& counts,
                               CovarianceMode mode);

/// Moments over a corpus. Documents are reduced in fixed 32-document chunks merged in
/// order, so the result does not depend on `threads`.
SufficientStats accumulate_stats(const Corpus& corpus, const std::vector<DocumentPosterior>& posteriors,
                                 const std::vector<Vector>& counts, CovarianceMode mode, std::size_t threads = 1);

inline constexpr double kEmptyConceptWeight = 1e-8;
inline constexpr double kCovarianceRidge = 1e-6;

/// Adds ridge * trace/d to the diagonal (ridge alone when the trace is 0).
Matrix regularize_covariance(const Matrix& cov, CovarianceMode mode, double ridge = kCovarianceRidge);

ConceptBank update_concepts_mle(const SufficientStats& stats, double empty_weight = kEmptyConceptWeight,
                                double ridge = kCovarianceRidge);

/// Which dimension the posterior-mean covariance divisor subtracts.
enum class NiwDivisor { Dimension, ConceptCount };

struct NiwConfig {
  Vector mu0;
  double kappa0 = 0.01;
  Matrix lambda0;  // d x d (full) or d x 1 (diagonal)
  double nu0 = 0.0;
  NiwDivisor divisor = NiwDivisor::Dimension;
};

/// Defaults from corpus moments: mu0 = global mean, kappa0 = 0.01, nu0 = d + 2,
/// Lambda0 = 0.1 * global covariance * (nu0 - d - 1).
NiwConfig default_niw(const Corpus& corpus, CovarianceMode mode);

ConceptBank update_concepts_niw(const SufficientStats& stats, const NiwConfig& niw);

/// Running EMA of concept parameters across minibatches.
struct EmaState {
  RowMatrix means;
  std::vector<Matrix> covariances;
  CovarianceMode mode = CovarianceMode::Full;
  double count = 0.0;  // N
  double rho = 0.99;

  bool initialized() const noexcept { return count > 0.0; }
  ConceptBank bank() const;
};

EmaState make_ema_state(const ConceptBank& bank, double count, double rho);

/// mu <- rho N mu + (1 - rho) B mu_batch; Sigma likewise; N <- rho N + (1 - rho) B; then
/// divide by N. An uninitialized state adopts the batch with N = B.
EmaState ema_merge(const EmaState& state, const ConceptBank& batch_bank, double B);

enum class MStep { Mle, Niw };

MStep parse_mstep(const std::string& text);
const char* to_string(MStep m) noexcept;

struct TrainerConfig {
  std::size_t K = 10;
  std::size_t epochs = 20;
  double alpha = 1.0;
  CountScheme counts = CountScheme::attention_variable();
  /// Unset selects full covariance for d <= 64 and diagonal otherwise.
  std::optional<CovarianceMode> covariance;
  MStep mstep = MStep::Mle;
  /// Unset uses default_niw on the training corpus.
  std::optional<NiwConfig> niw;
  NiwDivisor niw_divisor = NiwDivisor::Dimension;
  /// 0 trains full-batch; otherwise minibatches of this many documents merged by EMA.
  std::size_t batch_size = 0;
  double rho = 0.99;
  InferenceOptions inference;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  /// Number of token embeddings used for k-means++ seeding; 0 means 10 * K * d.
  std::size_t init_sample = 0;
  /// Start each epoch's inference from the previous epoch's gamma.
  bool warm_start = true;
};

CovarianceMode default_covariance_mode(std::size_t d) noexcept;

struct TrainingResult {
  ConceptBank bank;
  /// Posteriors for `bank`, from one inference pass after the last update.
  std::vector<DocumentPosterior> posteriors;
  /// Corpus ELBO after each epoch's inference pass.
  std::vector<double> elbo_trace;
  /// n_k from the final statistics.
  Vector concept_weights;
  std::vector<Vector> counts;
  std::vector<std::string> events;
};

/// k-means++ means on a seeded token subsample; every covariance set to the global one.
ConceptBank initialize_bank(const Corpus& corpus, std::size_t K, CovarianceMode mode, std::uint64_t seed,
                            std::size_t sample_size = 0);

/// Unweighted global mean and covariance of all token embeddings.
std::pair<Vector, Matrix> global_moments(const Corpus& corpus);

TrainingResult train(const Corpus& corpus, const TrainerConfig& config);
/// Same, starting from a given bank instead of k-means++.
TrainingResult train(const Corpus& corpus, const TrainerConfig& config, const ConceptBank& initial);
/// Same, with per-token counts supplied directly instead of derived from `config.counts`.
TrainingResult train_with_counts(const Corpus& corpus, const TrainerConfig& config, const ConceptBank& initial,
                                 std::vector<Vector> counts);

}  // namespace valc
