#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "valc/concept_bank.hpp"
#include "valc/corpus.hpp"
#include "valc/inference.hpp"
#include "valc/learning.hpp"

namespace valc {

/// Planted admixture of K isotropic Gaussian concepts plus one broad stop-word cluster.
struct PlantedSpec {
  RowMatrix means;           // K x d
  Vector sigmas;             // K per-concept standard deviations
  Vector mixing;             // pi*, on the simplex
  Vector stop_mean;          // d
  double stop_sigma = 0.0;   // standard deviation of the stop cluster
  std::size_t tokens_per_doc = 40;       // N
  std::size_t stop_tokens_per_doc = 40;  // N_s
  /// lambda2 / lambda1; non-stop attention lambda1 = 1 / (N + N_s * ratio).
  double attention_ratio = 0.1;
  /// Uniform relative jitter on each token's attention.
  double attention_jitter = 0.2;
  /// Dirichlet concentration multiplying K * pi* for per-document proportions; unset uses pi* for every document.
  std::optional<double> doc_concentration = 1.0;
  double cls_noise = 0.1;
  std::size_t vocabulary_per_concept = 20;

  std::size_t K() const noexcept { return static_cast<std::size_t>(means.rows()); }
  std::size_t dimension() const noexcept { return static_cast<std::size_t>(means.cols()); }
  /// Minimum pairwise mean distance over the largest concept sigma.
  double separation_ratio() const;
  void validate() const;
};

struct PlantedOptions {
  std::size_t K = 5;
  std::size_t d = 8;
  double separation = 6.0;
  double sigma = 1.0;
  double stop_inflation = 10.0;  // stop variance over concept variance
  std::size_t tokens_per_doc = 40;
  std::size_t stop_tokens_per_doc = 40;
  double attention_ratio = 0.1;
  double attention_jitter = 0.2;
  std::optional<double> doc_concentration = 1.0;
};

/// Means centered at the origin and scaled so the closest pair is separation * sigma apart;
/// the stop cluster sits at the origin with variance stop_inflation * sigma^2.
PlantedSpec make_planted_spec(const PlantedOptions& options, std::uint64_t seed);

struct PlantedCorpus {
  Corpus corpus;
  /// Per document, per token: planted concept index, or -1 for stop tokens.
  std::vector<std::vector<int>> assignments;
  std::vector<Vector> proportions;  // planted theta_m
};

/// Deterministic for a given seed. Labels are argmax theta_m; CLS is the theta-weighted mean plus noise.
PlantedCorpus generate_corpus(const PlantedSpec& spec, std::size_t M, std::uint64_t seed);

/// The planted parameters as a bank (stop cluster excluded).
ConceptBank planted_bank(const PlantedSpec& spec, CovarianceMode mode = CovarianceMode::Full);

/// Non-stop masks derived from planted assignments.
std::vector<std::vector<bool>> content_masks(const PlantedCorpus& planted);

/// Sum over non-stop tokens of sum_k phi_jk log N(e_j; mu_k, Sigma_k); phi rows index non-stop tokens in order.
double heldout_likelihood(const ConceptBank& bank, const Corpus& corpus, const std::vector<std::vector<bool>>& keep,
                          const std::vector<Matrix>& phi);

/// Infers phi with unit counts on the non-stop tokens of each document, then scores as above.
double eval_heldout_likelihood(const ConceptBank& bank, const Corpus& corpus,
                               const std::vector<std::vector<bool>>& keep, const Vector& alpha,
                               const InferenceOptions& inference = {}, std::size_t threads = 1);

/// Counts that equal J_m / N_m on content tokens and 0 on stop tokens.
std::vector<Vector> ground_truth_counts(const PlantedCorpus& planted);

struct OrderingSeed {
  std::uint64_t seed = 0;
  double identical = 0.0;
  double attention = 0.0;
  double ground_truth = 0.0;
  bool holds = false;
};

struct OrderingCheckOptions {
  std::size_t epochs = 20;
  double tolerance = 1e-6;  // relative to |L|
  std::size_t threads = 1;
  InferenceOptions inference{.phi_mode = PhiMode::CountFactor};
  std::optional<CovarianceMode> covariance;
};

struct OrderingCheckResult {
  std::vector<OrderingSeed> seeds;
  double fraction = 0.0;
};

/// Trains identical, attention and ground-truth configurations from shared initializations
/// on each seed's corpus and scores each by the content-token likelihood under its own
/// trained bank and responsibilities.
OrderingSeed ordering_check_seed(const PlantedSpec& spec, std::size_t M, std::uint64_t seed,
                                const OrderingCheckOptions& options = {});
OrderingCheckResult ordering_check(const PlantedSpec& spec, std::size_t M, const std::vector<std::uint64_t>& seeds,
                                 const OrderingCheckOptions& options = {});

/// Held-out accuracy of the logistic classifier on theta posterior means (80/20 split).
double faithfulness_probe(const std::vector<DocumentPosterior>& posteriors, const std::vector<std::int32_t>& labels,
                          std::uint64_t split_seed);

/// Planted two-class corpus whose CLS embeddings mix a class concept with a nuisance concept.
///
/// Concepts: 0 and 1 mark the classes, 2 pulls toward class 0 and 3 toward class 1.
/// Clean documents mix their class concept with the helpful nuisance; corrupted documents
/// carry the opposing nuisance strongly enough to cross the class boundary.
struct NuisanceOptions {
  std::size_t d = 8;
  double class_scale = 4.0;     // class means at +-class_scale along the first axis
  double nuisance_scale = 2.0;  // nuisance offset along its own axis
  double nuisance_pull = 6.0;   // nuisance component along the first axis
  double class_weight_min = 0.45;
  double class_weight_max = 0.57;
  double corrupted_fraction = 0.5;
  double noise = 0.2;
  std::size_t tokens_per_doc = 12;
};

struct NuisanceCorpus {
  Corpus clean;
  Corpus corrupted;
  ConceptBank bank;
};

NuisanceCorpus generate_nuisance_corpus(const NuisanceOptions& options, std::size_t M, std::uint64_t seed);

}  // namespace valc
