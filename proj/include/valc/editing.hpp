#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "valc/concept_bank.hpp"
#include "valc/corpus.hpp"
#include "valc/types.hpp"

namespace valc {

/// Euclidean projection onto the probability simplex.
Vector project_to_simplex(const Vector& v);

struct QpOptions {
  double kkt_tolerance = 1e-8;
  std::size_t max_iters = 10000;
  /// Throw NoConvergence instead of returning the best iterate.
  bool strict = false;
};

struct QpSolution {
  Vector x;
  double objective = 0.0;     // ||sum_k x_k mu_k - e||^2
  double kkt_residual = 0.0;  // on the gradient of 0.5 * objective
  std::size_t iterations = 0;
  bool converged = false;
};

/// min ||means^T x - e||^2 over the simplex, by projected gradient with step 1/L and
/// an equality-constrained polish on the identified support.
QpSolution solve_simplex_qp(const Vector& e, const RowMatrix& means, const QpOptions& options = {});

double qp_objective(const Vector& x, const Vector& e, const RowMatrix& means);
double qp_kkt_residual(const Vector& x, const Vector& e, const RowMatrix& means);

/// Scores vectors into classes. Implementations are safe for concurrent const use.
class Classifier {
 public:
  virtual ~Classifier() = default;

  /// Class labels, aligned with score positions.
  virtual const std::vector<std::int32_t>& classes() const = 0;
  virtual Vector scores(const Vector& v) const = 0;

  /// Softmax cross-entropy of the scores against `label`.
  virtual double loss(const Vector& v, std::int32_t label) const;
  std::int32_t predict(const Vector& v) const;
  std::size_t class_index(std::int32_t label) const;
};

/// scores = W v + b, class i has label i.
class LinearClassifier : public Classifier {
 public:
  LinearClassifier(Matrix weights, Vector bias);

  const std::vector<std::int32_t>& classes() const override { return classes_; }
  Vector scores(const Vector& v) const override;

 private:
  Matrix weights_;
  Vector bias_;
  std::vector<std::int32_t> classes_;
};

struct LogisticOptions {
  double learning_rate = 1.0;
  std::size_t epochs = 2000;
  std::uint64_t seed = 0;
};

/// Multinomial logistic regression on standardized features, full-batch gradient descent.
class LogisticClassifier : public Classifier {
 public:
  static LogisticClassifier fit(const RowMatrix& features, const std::vector<std::int32_t>& labels,
                                const LogisticOptions& options = {});

  const std::vector<std::int32_t>& classes() const override { return classes_; }
  Vector scores(const Vector& v) const override;

 private:
  LogisticClassifier() = default;

  Matrix weights_;  // C x d on standardized features
  Vector bias_;
  Vector center_;
  Vector scale_;
  std::vector<std::int32_t> classes_;
};

enum class EditTarget { WordLevel, DocumentLevel };
enum class EditDirection { Subtract, Add };

EditDirection parse_edit_direction(const std::string& text);

struct EditPlan {
  Vector x_star;
  std::size_t chosen_k = 0;
  double omega = 1.0;
  EditTarget target = EditTarget::WordLevel;
  EditDirection direction = EditDirection::Subtract;
  bool qp_converged = true;
};

/// e -/+ omega * x*_k * mu_k for the plan's concept.
Vector apply_edit(const Vector& e, const EditPlan& plan, const ConceptBank& bank);
/// Undoes apply_edit: the opposite direction with the same plan.
Vector revert_edit(const Vector& e, const EditPlan& plan, const ConceptBank& bank);

/// Solves the QP for `e`, picks the concept whose edit minimizes the classifier loss
/// (lowest index on ties) and applies it.
std::pair<Vector, EditPlan> edit_vector(const Vector& e, const ConceptBank& bank, const Classifier& classifier,
                                        std::int32_t label, double omega, EditTarget target,
                                        EditDirection direction = EditDirection::Subtract,
                                        const QpOptions& qp = {});

struct WordEditResult {
  RowMatrix embeddings;
  std::vector<EditPlan> plans;
};

WordEditResult edit_word_level(const EmbeddedDocument& doc, const ConceptBank& bank, const Classifier& classifier,
                               std::int32_t label, double omega, EditDirection direction = EditDirection::Subtract,
                               const QpOptions& qp = {});

struct DocumentEditResult {
  Vector cls_embedding;
  EditPlan plan;
};

DocumentEditResult edit_document_level(const std::optional<Vector>& cls_embedding, const ConceptBank& bank,
                                       const Classifier& classifier, std::int32_t label, double omega,
                                       EditDirection direction = EditDirection::Subtract, const QpOptions& qp = {});

enum class EditScheme { Random, Unweighted, Weighted };

EditScheme parse_edit_scheme(const std::string& text);
const char* to_string(EditScheme scheme) noexcept;

struct EditEvalOptions {
  /// DocumentLevel edits the CLS embedding; WordLevel edits every token and classifies the token mean.
  EditTarget pathway = EditTarget::DocumentLevel;
  std::vector<double> omega_grid{0.25, 0.5, 1.0, 2.0, 4.0};
  std::uint64_t seed = 0;
  double validation_fraction = 0.5;
  EditDirection direction = EditDirection::Subtract;
  std::size_t threads = 1;
};

struct SchemeOutcome {
  EditScheme scheme = EditScheme::Unweighted;
  double accuracy = 0.0;
  double gain = 0.0;
  double omega = 1.0;
};

struct EditEvalResult {
  double unedited_accuracy = 0.0;
  std::vector<SchemeOutcome> outcomes;
  /// (omega, validation accuracy) for the Weighted search.
  std::vector<std::pair<double, double>> validation_curve;
  std::size_t validation_size = 0;
  std::size_t test_size = 0;
};

/// Vector the classifier sees for a document on the given pathway (CLS or token mean).
Vector document_features(const EmbeddedDocument& doc, EditTarget pathway);

/// Splits the labeled corpus into validation and test parts (seeded) and reports test
/// accuracy before and after each requested scheme.
EditEvalResult greedy_edit_eval(const Corpus& corpus, const ConceptBank& bank, const Classifier& classifier,
                                const std::vector<EditScheme>& schemes, const EditEvalOptions& options = {});

}  // namespace valc
