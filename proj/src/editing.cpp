#include "valc/editing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "valc/error.hpp"
#include "valc/parallel.hpp"

namespace valc {

Vector project_to_simplex(const Vector& v) {
  const auto K = v.size();
  std::vector<double> u(v.data(), v.data() + K);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0;
  double tau = 0.0;
  for (Eigen::Index j = 0; j < K; ++j) {
    cumulative += u[static_cast<std::size_t>(j)];
    const double candidate = (cumulative - 1.0) / static_cast<double>(j + 1);
    if (u[static_cast<std::size_t>(j)] - candidate > 0.0) tau = candidate;
  }
  return (v.array() - tau).max(0.0).matrix();
}

namespace {

double residual_from_gradient(const Vector& x, const Vector& g) {
  double lambda = 0.0;
  std::size_t active = 0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    if (x(k) > 0.0) {
      lambda += g(k);
      ++active;
    }
  }
  if (active == 0) return std::numeric_limits<double>::infinity();
  lambda /= static_cast<double>(active);
  double worst = 0.0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    worst = std::max(worst, x(k) > 0.0 ? std::fabs(g(k) - lambda) : std::max(0.0, lambda - g(k)));
  }
  return worst;
}

// Equality-constrained minimizer on the support of `x`; nullopt if it leaves the simplex.
std::optional<Vector> polish(const Vector& x, const Matrix& G, const Vector& b) {
  std::vector<Eigen::Index> support;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    if (x(k) > 1e-12) support.push_back(k);
  }
  const auto s = static_cast<Eigen::Index>(support.size());
  if (s == 0) return std::nullopt;
  Matrix A = Matrix::Zero(s + 1, s + 1);
  Vector rhs(s + 1);
  for (Eigen::Index i = 0; i < s; ++i) {
    for (Eigen::Index j = 0; j < s; ++j) A(i, j) = G(support[static_cast<std::size_t>(i)], support[static_cast<std::size_t>(j)]);
    A(i, s) = 1.0;
    A(s, i) = 1.0;
    rhs(i) = b(support[static_cast<std::size_t>(i)]);
  }
  rhs(s) = 1.0;
  const Vector sol = A.completeOrthogonalDecomposition().solve(rhs);
  if (!sol.allFinite()) return std::nullopt;
  Vector out = Vector::Zero(x.size());
  for (Eigen::Index i = 0; i < s; ++i) {
    if (sol(i) < -1e-12) return std::nullopt;
    out(support[static_cast<std::size_t>(i)]) = std::max(0.0, sol(i));
  }
  const double total = out.sum();
  if (!(total > 0.0)) return std::nullopt;
  return project_to_simplex(out / total);
}

}  // namespace

double qp_objective(const Vector& x, const Vector& e, const RowMatrix& means) {
  return (means.transpose() * x - e).squaredNorm();
}

double qp_kkt_residual(const Vector& x, const Vector& e, const RowMatrix& means) {
  const Vector g = means * (means.transpose() * x - e);
  return residual_from_gradient(x, g);
}

QpSolution solve_simplex_qp(const Vector& e, const RowMatrix& means, const QpOptions& options) {
  const auto K = means.rows();
  if (K < 1) throw Error(ErrorKind::InvalidArgument, "QP needs at least one concept");
  if (means.cols() != e.size()) throw Error(ErrorKind::DimensionMismatch, "QP target width != concept width");
  QpSolution best;
  if (K == 1) {
    best.x = Vector::Ones(1);
    best.objective = qp_objective(best.x, e, means);
    best.converged = true;
    return best;
  }
  const Matrix G = means * means.transpose();
  const Vector b = means * e;
  const double lipschitz = Eigen::SelfAdjointEigenSolver<Matrix>(G, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  const double step = lipschitz > 0.0 ? 1.0 / lipschitz : 1.0;
  auto gradient = [&](const Vector& x) -> Vector { return G * x - b; };

  Vector x = Vector::Constant(K, 1.0 / static_cast<double>(K));
  best.x = x;
  best.kkt_residual = residual_from_gradient(x, gradient(x));
  std::size_t it = 0;
  while (best.kkt_residual > options.kkt_tolerance && it < options.max_iters) {
    x = project_to_simplex(x - step * gradient(x));
    ++it;
    const double r = residual_from_gradient(x, gradient(x));
    if (r < best.kkt_residual) {
      best.x = x;
      best.kkt_residual = r;
    }
    if (it % 10 == 0 || it == options.max_iters) {
      if (auto polished = polish(x, G, b)) {
        const double pr = residual_from_gradient(*polished, gradient(*polished));
        if (pr < best.kkt_residual) {
          best.x = *polished;
          best.kkt_residual = pr;
        }
      }
    }
  }
  best.iterations = it;
  best.objective = qp_objective(best.x, e, means);

  // A vertex can never beat the optimum; fall back to it if rounding says otherwise.
  for (Eigen::Index k = 0; k < K; ++k) {
    const double vertex = (means.row(k).transpose() - e).squaredNorm();
    if (vertex < best.objective) {
      best.x = Vector::Unit(K, k);
      best.objective = vertex;
      best.kkt_residual = residual_from_gradient(best.x, gradient(best.x));
    }
  }
  best.converged = best.kkt_residual <= options.kkt_tolerance;
  if (!best.converged && options.strict) {
    throw Error(ErrorKind::NoConvergence, "simplex QP KKT residual " + std::to_string(best.kkt_residual) +
                                              " after " + std::to_string(it) + " iterations");
  }
  return best;
}

double Classifier::loss(const Vector& v, std::int32_t label) const {
  const Vector s = scores(v);
  const double top = s.maxCoeff();
  const double log_norm = top + std::log((s.array() - top).exp().sum());
  return log_norm - s(static_cast<Eigen::Index>(class_index(label)));
}

std::int32_t Classifier::predict(const Vector& v) const {
  const Vector s = scores(v);
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < s.size(); ++c) {
    if (s(c) > s(best)) best = c;
  }
  return classes()[static_cast<std::size_t>(best)];
}

std::size_t Classifier::class_index(std::int32_t label) const {
  const auto& cls = classes();
  auto it = std::find(cls.begin(), cls.end(), label);
  if (it == cls.end()) throw Error(ErrorKind::InvalidArgument, "label " + std::to_string(label) + " unknown to classifier");
  return static_cast<std::size_t>(it - cls.begin());
}

LinearClassifier::LinearClassifier(Matrix weights, Vector bias) : weights_(std::move(weights)), bias_(std::move(bias)) {
  if (weights_.rows() != bias_.size() || weights_.rows() < 1) {
    throw Error(ErrorKind::DimensionMismatch, "linear classifier needs C x d weights and C biases");
  }
  classes_.resize(static_cast<std::size_t>(weights_.rows()));
  std::iota(classes_.begin(), classes_.end(), 0);
}

Vector LinearClassifier::scores(const Vector& v) const {
  if (v.size() != weights_.cols()) throw Error(ErrorKind::DimensionMismatch, "classifier input width mismatch");
  return weights_ * v + bias_;
}

LogisticClassifier LogisticClassifier::fit(const RowMatrix& features, const std::vector<std::int32_t>& labels,
                                           const LogisticOptions& options) {
  const auto n = features.rows();
  const auto d = features.cols();
  if (n < 1 || static_cast<std::size_t>(n) != labels.size()) {
    throw Error(ErrorKind::DimensionMismatch, "one label per feature row");
  }
  LogisticClassifier model;
  model.classes_ = labels;
  std::sort(model.classes_.begin(), model.classes_.end());
  model.classes_.erase(std::unique(model.classes_.begin(), model.classes_.end()), model.classes_.end());
  if (model.classes_.size() < 2) throw Error(ErrorKind::SingleClass, "training labels contain a single class");
  const auto C = static_cast<Eigen::Index>(model.classes_.size());

  model.center_ = features.colwise().mean().transpose();
  const RowMatrix centered = features.rowwise() - model.center_.transpose();
  model.scale_ = (centered.array().square().colwise().sum() / static_cast<double>(n)).sqrt().transpose();
  for (Eigen::Index c = 0; c < d; ++c) {
    if (!(model.scale_(c) > 1e-12)) model.scale_(c) = 1.0;
  }
  const Matrix X = centered.array().rowwise() / model.scale_.transpose().array();

  Matrix Y = Matrix::Zero(n, C);
  for (Eigen::Index i = 0; i < n; ++i) {
    Y(i, static_cast<Eigen::Index>(model.class_index(labels[static_cast<std::size_t>(i)]))) = 1.0;
  }
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> init(0.0, 0.01);
  model.weights_ = Matrix(C, d);
  for (Eigen::Index i = 0; i < C; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) model.weights_(i, j) = init(rng);
  }
  model.bias_ = Vector::Zero(C);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    Matrix S = (X * model.weights_.transpose()).rowwise() + model.bias_.transpose();  // n x C
    for (Eigen::Index i = 0; i < n; ++i) {
      const double top = S.row(i).maxCoeff();
      S.row(i) = (S.row(i).array() - top).exp();
      S.row(i) /= S.row(i).sum();
    }
    const Matrix residual = S - Y;
    model.weights_ -= options.learning_rate * inv_n * (residual.transpose() * X);
    model.bias_ -= options.learning_rate * inv_n * residual.colwise().sum().transpose();
  }
  return model;
}

Vector LogisticClassifier::scores(const Vector& v) const {
  if (v.size() != center_.size()) throw Error(ErrorKind::DimensionMismatch, "classifier input width mismatch");
  const Vector z = ((v - center_).array() / scale_.array()).matrix();
  return weights_ * z + bias_;
}

EditDirection parse_edit_direction(const std::string& text) {
  if (text == "subtract") return EditDirection::Subtract;
  if (text == "add") return EditDirection::Add;
  throw Error(ErrorKind::InvalidArgument, "unknown edit direction '" + text + "'");
}

namespace {

double direction_sign(EditDirection d) { return d == EditDirection::Subtract ? -1.0 : 1.0; }

Vector edit_with(const Vector& e, double sign, double omega, double xk, const ConceptBank& bank, std::size_t k) {
  return e + (sign * omega * xk) * bank.mean(k);
}

}  // namespace

Vector apply_edit(const Vector& e, const EditPlan& plan, const ConceptBank& bank) {
  return edit_with(e, direction_sign(plan.direction), plan.omega, plan.x_star(static_cast<Eigen::Index>(plan.chosen_k)),
                   bank, plan.chosen_k);
}

Vector revert_edit(const Vector& e, const EditPlan& plan, const ConceptBank& bank) {
  return edit_with(e, -direction_sign(plan.direction), plan.omega,
                   plan.x_star(static_cast<Eigen::Index>(plan.chosen_k)), bank, plan.chosen_k);
}

std::pair<Vector, EditPlan> edit_vector(const Vector& e, const ConceptBank& bank, const Classifier& classifier,
                                        std::int32_t label, double omega, EditTarget target,
                                        EditDirection direction, const QpOptions& qp) {
  if (!(omega >= 0.0) || !std::isfinite(omega)) throw Error(ErrorKind::InvalidArgument, "omega must be >= 0");
  const QpSolution solution = solve_simplex_qp(e, bank.means(), qp);
  EditPlan plan{solution.x, 0, omega, target, direction, solution.converged};
  const double sign = direction_sign(direction);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < bank.size(); ++k) {
    const double l = classifier.loss(edit_with(e, sign, omega, solution.x(static_cast<Eigen::Index>(k)), bank, k), label);
    if (l < best) {
      best = l;
      plan.chosen_k = k;
    }
  }
  return {apply_edit(e, plan, bank), std::move(plan)};
}

WordEditResult edit_word_level(const EmbeddedDocument& doc, const ConceptBank& bank, const Classifier& classifier,
                               std::int32_t label, double omega, EditDirection direction, const QpOptions& qp) {
  WordEditResult out;
  out.embeddings = doc.embeddings;
  out.plans.reserve(doc.length());
  for (Eigen::Index j = 0; j < doc.embeddings.rows(); ++j) {
    auto [edited, plan] =
        edit_vector(doc.embeddings.row(j).transpose(), bank, classifier, label, omega, EditTarget::WordLevel, direction, qp);
    out.embeddings.row(j) = edited.transpose();
    out.plans.push_back(std::move(plan));
  }
  return out;
}

DocumentEditResult edit_document_level(const std::optional<Vector>& cls_embedding, const ConceptBank& bank,
                                       const Classifier& classifier, std::int32_t label, double omega,
                                       EditDirection direction, const QpOptions& qp) {
  if (!cls_embedding) throw Error(ErrorKind::MissingClsEmbedding, "document-level editing needs a CLS embedding");
  auto [edited, plan] = edit_vector(*cls_embedding, bank, classifier, label, omega, EditTarget::DocumentLevel, direction, qp);
  return {std::move(edited), std::move(plan)};
}

EditScheme parse_edit_scheme(const std::string& text) {
  if (text == "random") return EditScheme::Random;
  if (text == "unweighted") return EditScheme::Unweighted;
  if (text == "weighted") return EditScheme::Weighted;
  throw Error(ErrorKind::InvalidArgument, "unknown edit scheme '" + text + "'");
}

const char* to_string(EditScheme scheme) noexcept {
  switch (scheme) {
    case EditScheme::Random:
      return "random";
    case EditScheme::Unweighted:
      return "unweighted";
    case EditScheme::Weighted:
      return "weighted";
  }
  return "unknown";
}

Vector document_features(const EmbeddedDocument& doc, EditTarget pathway) {
  if (pathway == EditTarget::DocumentLevel) {
    if (!doc.cls_embedding) {
      throw Error(ErrorKind::MissingClsEmbedding, "document '" + doc.doc_id + "' has no CLS embedding");
    }
    return *doc.cls_embedding;
  }
  return doc.embeddings.colwise().mean().transpose();
}

namespace {

struct EvalContext {
  const Corpus& corpus;
  const ConceptBank& bank;
  const Classifier& classifier;
  const EditEvalOptions& options;
};

// Random scheme: a uniformly drawn concept k with omega * x_k = 1/K.
Vector random_edit(const Vector& e, const ConceptBank& bank, EditDirection direction, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, bank.size() - 1);
  const std::size_t k = pick(rng);
  return edit_with(e, direction_sign(direction), 1.0, 1.0 / static_cast<double>(bank.size()), bank, k);
}

bool predict_after_edit(const EvalContext& ctx, std::size_t m, std::optional<EditScheme> scheme, double omega) {
  const EmbeddedDocument& doc = ctx.corpus[m];
  const std::int32_t label = *doc.label;
  const EditTarget pathway = ctx.options.pathway;
  const EditDirection direction = ctx.options.direction;
  std::mt19937_64 rng(ctx.options.seed * 0x9E3779B97F4A7C15ull + m);
  Vector features;
  if (!scheme) {
    features = document_features(doc, pathway);
  } else if (pathway == EditTarget::DocumentLevel) {
    const Vector cls = document_features(doc, pathway);
    features = *scheme == EditScheme::Random
                   ? random_edit(cls, ctx.bank, direction, rng)
                   : edit_document_level(cls, ctx.bank, ctx.classifier, label, omega, direction).cls_embedding;
  } else if (*scheme == EditScheme::Random) {
    RowMatrix edited = doc.embeddings;
    for (Eigen::Index j = 0; j < edited.rows(); ++j) {
      edited.row(j) = random_edit(doc.embeddings.row(j).transpose(), ctx.bank, direction, rng).transpose();
    }
    features = edited.colwise().mean().transpose();
  } else {
    features = edit_word_level(doc, ctx.bank, ctx.classifier, label, omega, direction).embeddings.colwise().mean().transpose();
  }
  return ctx.classifier.predict(features) == label;
}

double accuracy(const EvalContext& ctx, const std::vector<std::size_t>& docs, std::optional<EditScheme> scheme,
                double omega) {
  if (docs.empty()) return 0.0;
  std::vector<char> correct(docs.size(), 0);
  parallel_for(docs.size(), ctx.options.threads,
               [&](std::size_t i) { correct[i] = predict_after_edit(ctx, docs[i], scheme, omega) ? 1 : 0; });
  const double hits = static_cast<double>(std::count(correct.begin(), correct.end(), 1));
  return hits / static_cast<double>(docs.size());
}

}  // namespace

EditEvalResult greedy_edit_eval(const Corpus& corpus, const ConceptBank& bank, const Classifier& classifier,
                                const std::vector<EditScheme>& schemes, const EditEvalOptions& options) {
  if (corpus.dimension() != bank.dimension()) throw Error(ErrorKind::DimensionMismatch, "corpus and bank widths differ");
  for (const auto& doc : corpus.documents()) {
    if (!doc.label) throw Error(ErrorKind::MissingLabel, "document '" + doc.doc_id + "' has no label");
  }
  if (!(options.validation_fraction >= 0.0 && options.validation_fraction < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "validation fraction must be in [0, 1)");
  }
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(options.seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::floor(options.validation_fraction * static_cast<double>(corpus.size())));
  std::vector<std::size_t> validation(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(validation.begin(), validation.end());
  std::sort(test.begin(), test.end());

  const EvalContext ctx{corpus, bank, classifier, options};
  EditEvalResult result;
  result.validation_size = validation.size();
  result.test_size = test.size();
  result.unedited_accuracy = accuracy(ctx, test, std::nullopt, 1.0);
  for (EditScheme scheme : schemes) {
    SchemeOutcome outcome;
    outcome.scheme = scheme;
    if (scheme == EditScheme::Weighted) {
      if (options.omega_grid.empty()) throw Error(ErrorKind::InvalidArgument, "omega grid is empty");
      if (validation.empty()) throw Error(ErrorKind::InvalidArgument, "weighted scheme needs a validation split");
      double best_acc = -1.0;
      double best_omega = options.omega_grid.front();
      result.validation_curve.clear();
      for (double omega : options.omega_grid) {
        const double acc = accuracy(ctx, validation, EditScheme::Unweighted, omega);
        result.validation_curve.emplace_back(omega, acc);
        const bool better = acc > best_acc || (acc == best_acc && omega == 1.0);
        if (better) {
          best_acc = acc;
          best_omega = omega;
        }
      }
      outcome.omega = best_omega;
      outcome.accuracy = accuracy(ctx, test, EditScheme::Unweighted, best_omega);
    } else {
      outcome.omega = scheme == EditScheme::Random ? 1.0 / static_cast<double>(bank.size()) : 1.0;
      outcome.accuracy = accuracy(ctx, test, scheme, 1.0);
    }
    outcome.gain = outcome.accuracy - result.unedited_accuracy;
    result.outcomes.push_back(outcome);
  }
  return result;
}

}  // namespace valc
