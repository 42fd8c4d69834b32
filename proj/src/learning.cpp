#include "valc/learning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <unordered_set>

#include "valc/elbo.hpp"
#include "valc/error.hpp"
#include "valc/parallel.hpp"

namespace valc {

SufficientStats::SufficientStats(std::size_t K, std::size_t d, CovarianceMode m)
    : mode(m),
      weight(Vector::Zero(static_cast<Eigen::Index>(K))),
      sum(RowMatrix::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(d))) {
  const auto di = static_cast<Eigen::Index>(d);
  scatter.assign(K, m == CovarianceMode::Full ? Matrix::Zero(di, di) : Matrix::Zero(di, 1));
}

Vector SufficientStats::weighted_mean(std::size_t k) const {
  const auto ki = static_cast<Eigen::Index>(k);
  if (weight(ki) <= 0.0) return Vector::Zero(sum.cols());
  return sum.row(ki).transpose() / weight(ki);
}

void SufficientStats::merge(const SufficientStats& other) {
  if (other.size() != size() || other.dimension() != dimension() || other.mode != mode) {
    throw Error(ErrorKind::DimensionMismatch, "cannot merge statistics of different shapes");
  }
  for (std::size_t k = 0; k < size(); ++k) {
    const auto ki = static_cast<Eigen::Index>(k);
    const double na = weight(ki);
    const double nb = other.weight(ki);
    if (nb <= 0.0) continue;
    if (na <= 0.0) {
      weight(ki) = nb;
      sum.row(ki) = other.sum.row(ki);
      scatter[k] = other.scatter[k];
      continue;
    }
    const double n = na + nb;
    const Vector delta = other.weighted_mean(k) - weighted_mean(k);
    const double factor = na * nb / n;
    if (mode == CovarianceMode::Full) {
      scatter[k] += other.scatter[k] + factor * delta * delta.transpose();
    } else {
      scatter[k] += other.scatter[k] + factor * delta.array().square().matrix();
    }
    weight(ki) = n;
    sum.row(ki) += other.sum.row(ki);
  }
}

SufficientStats document_stats(const EmbeddedDocument& doc, const Matrix& phi, const Vector& counts,
                               CovarianceMode mode) {
  const auto J = static_cast<Eigen::Index>(doc.length());
  if (phi.rows() != J || counts.size() != J) {
    throw Error(ErrorKind::DimensionMismatch, "phi and counts must align with the document");
  }
  const auto K = static_cast<std::size_t>(phi.cols());
  SufficientStats stats(K, doc.dimension(), mode);
  for (std::size_t k = 0; k < K; ++k) {
    const auto ki = static_cast<Eigen::Index>(k);
    const Vector r = phi.col(ki).cwiseProduct(counts);
    const double n = r.sum();
    stats.weight(ki) = n;
    if (n <= 0.0) continue;
    const Vector s = doc.embeddings.transpose() * r;
    stats.sum.row(ki) = s.transpose();
    const Vector mean = s / n;
    const Matrix centered = doc.embeddings.rowwise() - mean.transpose();  // J x d
    if (mode == CovarianceMode::Full) {
      stats.scatter[k] = centered.transpose() * r.asDiagonal() * centered;
    } else {
      stats.scatter[k] = centered.array().square().matrix().transpose() * r;
    }
  }
  return stats;
}

namespace {

constexpr std::size_t kChunk = 32;

SufficientStats accumulate_indices(const Corpus& corpus, const std::vector<std::size_t>& indices,
                                   const std::vector<DocumentPosterior>& posteriors,
                                   const std::vector<Vector>& counts, CovarianceMode mode, std::size_t K,
                                   std::size_t threads) {
  const std::size_t n_chunks = (indices.size() + kChunk - 1) / kChunk;
  std::vector<SufficientStats> partial(n_chunks);
  parallel_for(n_chunks, threads, [&](std::size_t c) {
    SufficientStats acc(K, corpus.dimension(), mode);
    const std::size_t end = std::min(indices.size(), (c + 1) * kChunk);
    for (std::size_t i = c * kChunk; i < end; ++i) {
      const std::size_t m = indices[i];
      acc.merge(document_stats(corpus[m], posteriors[m].phi, counts[m], mode));
    }
    partial[c] = std::move(acc);
  });
  SufficientStats total(K, corpus.dimension(), mode);
  for (const auto& p : partial) total.merge(p);
  return total;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

}  // namespace

SufficientStats accumulate_stats(const Corpus& corpus, const std::vector<DocumentPosterior>& posteriors,
                                 const std::vector<Vector>& counts, CovarianceMode mode, std::size_t threads) {
  if (posteriors.size() != corpus.size() || counts.size() != corpus.size()) {
    throw Error(ErrorKind::DimensionMismatch, "posteriors and counts must align with documents");
  }
  const auto K = static_cast<std::size_t>(posteriors.front().phi.cols());
  return accumulate_indices(corpus, all_indices(corpus.size()), posteriors, counts, mode, K, threads);
}

Matrix regularize_covariance(const Matrix& cov, CovarianceMode mode, double ridge) {
  const double d = static_cast<double>(cov.rows());
  if (mode == CovarianceMode::Diagonal) {
    const double tr = cov.sum();
    const double add = tr > 0.0 ? ridge * tr / d : ridge;
    return cov.array() + add;
  }
  const double tr = cov.trace();
  const double add = tr > 0.0 ? ridge * tr / d : ridge;
  Matrix out = 0.5 * (cov + cov.transpose());
  out.diagonal().array() += add;
  return out;
}

ConceptBank update_concepts_mle(const SufficientStats& stats, double empty_weight, double ridge) {
  const auto K = static_cast<Eigen::Index>(stats.size());
  RowMatrix means(K, static_cast<Eigen::Index>(stats.dimension()));
  std::vector<Matrix> covs;
  covs.reserve(stats.size());
  for (std::size_t k = 0; k < stats.size(); ++k) {
    const auto ki = static_cast<Eigen::Index>(k);
    const double n = stats.weight(ki);
    if (!(n > empty_weight)) {
      throw Error(ErrorKind::EmptyConcept, "concept " + std::to_string(k) + " has total weight " + std::to_string(n));
    }
    means.row(ki) = stats.weighted_mean(k).transpose();
    covs.push_back(regularize_covariance(stats.scatter[k] / n, stats.mode, ridge));
  }
  return ConceptBank(std::move(means), std::move(covs), stats.mode);
}

namespace {

void validate_niw(const NiwConfig& niw, std::size_t d, CovarianceMode mode) {
  if (static_cast<std::size_t>(niw.mu0.size()) != d) throw Error(ErrorKind::DimensionMismatch, "mu0 length != d");
  if (!(niw.kappa0 > 0.0) || !std::isfinite(niw.kappa0)) {
    throw Error(ErrorKind::InvalidArgument, "kappa0 must be positive");
  }
  if (!(niw.nu0 > static_cast<double>(d) + 1.0)) throw Error(ErrorKind::InvalidArgument, "nu0 must exceed d + 1");
  const auto di = static_cast<Eigen::Index>(d);
  if (mode == CovarianceMode::Full) {
    if (niw.lambda0.rows() != di || niw.lambda0.cols() != di) {
      throw Error(ErrorKind::DimensionMismatch, "Lambda0 must be d x d");
    }
    Eigen::LLT<Matrix> llt(niw.lambda0);
    if (llt.info() != Eigen::Success) throw Error(ErrorKind::NotPositiveDefinite, "Lambda0 is not SPD");
  } else {
    if (niw.lambda0.rows() != di || niw.lambda0.cols() != 1) {
      throw Error(ErrorKind::DimensionMismatch, "diagonal Lambda0 must be d x 1");
    }
    if ((niw.lambda0.array() <= 0.0).any()) throw Error(ErrorKind::NotPositiveDefinite, "Lambda0 entries <= 0");
  }
}

}  // namespace

std::pair<Vector, Matrix> global_moments(const Corpus& corpus) {
  const auto d = static_cast<Eigen::Index>(corpus.dimension());
  Vector mean = Vector::Zero(d);
  double n = 0.0;
  for (const auto& doc : corpus.documents()) {
    mean += doc.embeddings.colwise().sum().transpose();
    n += static_cast<double>(doc.length());
  }
  mean /= n;
  Matrix cov = Matrix::Zero(d, d);
  for (const auto& doc : corpus.documents()) {
    const Matrix centered = doc.embeddings.rowwise() - mean.transpose();
    cov += centered.transpose() * centered;
  }
  cov /= n;
  return {mean, cov};
}

NiwConfig default_niw(const Corpus& corpus, CovarianceMode mode) {
  auto [mean, cov] = global_moments(corpus);
  const double d = static_cast<double>(corpus.dimension());
  NiwConfig niw;
  niw.mu0 = mean;
  niw.kappa0 = 0.01;
  niw.nu0 = d + 2.0;
  const Matrix base = regularize_covariance(
      mode == CovarianceMode::Full ? cov : Matrix(cov.diagonal()), mode);
  niw.lambda0 = 0.1 * base * (niw.nu0 - d - 1.0);
  return niw;
}

ConceptBank update_concepts_niw(const SufficientStats& stats, const NiwConfig& niw) {
  const std::size_t d = stats.dimension();
  validate_niw(niw, d, stats.mode);
  const auto K = static_cast<Eigen::Index>(stats.size());
  const double subtract = niw.divisor == NiwDivisor::Dimension ? static_cast<double>(d) : static_cast<double>(K);
  RowMatrix means(K, static_cast<Eigen::Index>(d));
  std::vector<Matrix> covs;
  covs.reserve(stats.size());
  for (std::size_t k = 0; k < stats.size(); ++k) {
    const auto ki = static_cast<Eigen::Index>(k);
    const double n = stats.weight(ki);
    const Vector sample_mean = n > 0.0 ? stats.weighted_mean(k) : niw.mu0;
    means.row(ki) = ((niw.kappa0 * niw.mu0 + n * sample_mean) / (niw.kappa0 + n)).transpose();
    const double divisor = niw.nu0 + n - subtract - 1.0;
    if (!(divisor > 0.0)) {
      throw Error(ErrorKind::NonPositiveDivisor, "NIW covariance divisor " + std::to_string(divisor) +
                                                     " for concept " + std::to_string(k));
    }
    const Vector delta = sample_mean - niw.mu0;
    const double shrink = niw.kappa0 * n / (niw.kappa0 + n);
    Matrix cov;
    if (stats.mode == CovarianceMode::Full) {
      cov = (niw.lambda0 + stats.scatter[k] + shrink * delta * delta.transpose()) / divisor;
      cov = 0.5 * (cov + cov.transpose());
    } else {
      cov = (niw.lambda0 + stats.scatter[k] + shrink * Matrix(delta.array().square().matrix())) / divisor;
    }
    covs.push_back(std::move(cov));
  }
  return ConceptBank(std::move(means), std::move(covs), stats.mode);
}

ConceptBank EmaState::bank() const {
  try {
    return ConceptBank(means, covariances, mode);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::NotPositiveDefinite) throw;
  }
  std::vector<Matrix> fixed;
  fixed.reserve(covariances.size());
  for (const auto& c : covariances) fixed.push_back(regularize_covariance(c, mode));
  return ConceptBank(means, std::move(fixed), mode);
}

EmaState make_ema_state(const ConceptBank& bank, double count, double rho) {
  EmaState state;
  state.means = bank.means();
  state.mode = bank.mode();
  state.count = count;
  state.rho = rho;
  for (std::size_t k = 0; k < bank.size(); ++k) state.covariances.push_back(bank.stored_covariance(k));
  return state;
}

EmaState ema_merge(const EmaState& state, const ConceptBank& batch_bank, double B) {
  if (!(B > 0.0)) throw Error(ErrorKind::InvalidArgument, "EMA batch size must be positive");
  if (!(state.rho > 0.0 && state.rho < 1.0)) throw Error(ErrorKind::InvalidArgument, "EMA momentum must be in (0,1)");
  if (!state.initialized()) return make_ema_state(batch_bank, B, state.rho);
  if (static_cast<std::size_t>(state.means.rows()) != batch_bank.size() ||
      static_cast<std::size_t>(state.means.cols()) != batch_bank.dimension() || state.mode != batch_bank.mode()) {
    throw Error(ErrorKind::DimensionMismatch, "EMA state and batch bank differ in shape");
  }
  EmaState next = state;
  const double old_weight = state.rho * state.count;
  const double new_weight = (1.0 - state.rho) * B;
  next.count = old_weight + new_weight;
  next.means = (old_weight * state.means + new_weight * batch_bank.means()) / next.count;
  for (std::size_t k = 0; k < batch_bank.size(); ++k) {
    next.covariances[k] = (old_weight * state.covariances[k] + new_weight * batch_bank.stored_covariance(k)) /
                          next.count;
  }
  // Surface a non-SPD result immediately.
  (void)next.bank();
  return next;
}

MStep parse_mstep(const std::string& text) {
  if (text == "mle") return MStep::Mle;
  if (text == "niw") return MStep::Niw;
  throw Error(ErrorKind::InvalidArgument, "unknown M-step '" + text + "' (expected mle or niw)");
}

const char* to_string(MStep m) noexcept { return m == MStep::Mle ? "mle" : "niw"; }

CovarianceMode default_covariance_mode(std::size_t d) noexcept {
  return d <= 64 ? CovarianceMode::Full : CovarianceMode::Diagonal;
}

namespace {

// Floyd's algorithm: `count` distinct values from [0, n), returned sorted.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count, std::mt19937_64& rng) {
  if (count >= n) return all_indices(n);
  std::unordered_set<std::size_t> chosen;
  chosen.reserve(count * 2);
  std::vector<std::size_t> out;
  out.reserve(count);
  for (std::size_t j = n - count; j < n; ++j) {
    std::uniform_int_distribution<std::size_t> pick(0, j);
    std::size_t t = pick(rng);
    if (!chosen.insert(t).second) {
      chosen.insert(j);
      t = j;
    }
    out.push_back(t);
  }
  std::sort(out.begin(), out.end());
  return out;
}

RowMatrix gather_tokens(const Corpus& corpus, const std::vector<std::size_t>& flat) {
  RowMatrix points(static_cast<Eigen::Index>(flat.size()), static_cast<Eigen::Index>(corpus.dimension()));
  std::size_t doc = 0;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    while (flat[i] >= offset + corpus[doc].length()) {
      offset += corpus[doc].length();
      ++doc;
    }
    points.row(static_cast<Eigen::Index>(i)) = corpus[doc].embeddings.row(static_cast<Eigen::Index>(flat[i] - offset));
  }
  return points;
}

RowMatrix kmeans_plus_plus(const RowMatrix& points, std::size_t K, std::mt19937_64& rng) {
  const auto n = static_cast<std::size_t>(points.rows());
  RowMatrix centers(static_cast<Eigen::Index>(K), points.cols());
  std::uniform_int_distribution<std::size_t> uniform(0, n - 1);
  std::size_t first = uniform(rng);
  centers.row(0) = points.row(static_cast<Eigen::Index>(first));
  Vector d2 = (points.rowwise() - centers.row(0)).rowwise().squaredNorm();
  const std::size_t trials = 2 + static_cast<std::size_t>(std::log(static_cast<double>(K)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t c = 1; c < K; ++c) {
    const double potential = d2.sum();
    std::size_t best = 0;
    if (!(potential > 0.0)) {
      best = uniform(rng);
    } else {
      std::vector<double> cumulative(n);
      std::partial_sum(d2.data(), d2.data() + n, cumulative.begin());
      double best_potential = std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < trials; ++t) {
        const double target = unit(rng) * cumulative.back();
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), target);
        std::size_t cand = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), n - 1);
        while (d2(static_cast<Eigen::Index>(cand)) <= 0.0 && cand > 0) --cand;
        const Vector cand_d2 = (points.rowwise() - points.row(static_cast<Eigen::Index>(cand))).rowwise().squaredNorm();
        const double pot = d2.cwiseMin(cand_d2).sum();
        if (pot < best_potential) {
          best_potential = pot;
          best = cand;
        }
      }
    }
    centers.row(static_cast<Eigen::Index>(c)) = points.row(static_cast<Eigen::Index>(best));
    d2 = d2.cwiseMin((points.rowwise() - centers.row(static_cast<Eigen::Index>(c))).rowwise().squaredNorm());
  }
  return centers;
}

}  // namespace

ConceptBank initialize_bank(const Corpus& corpus, std::size_t K, CovarianceMode mode, std::uint64_t seed,
                            std::size_t sample_size) {
  if (K < 1) throw Error(ErrorKind::InvalidArgument, "K must be >= 1");
  std::mt19937_64 rng(seed);
  const std::size_t target = sample_size > 0 ? sample_size : 10 * K * corpus.dimension();
  const auto flat = sample_without_replacement(corpus.total_tokens(), target, rng);
  const RowMatrix points = gather_tokens(corpus, flat);
  RowMatrix means = kmeans_plus_plus(points, K, rng);
  const auto [global_mean, global_cov] = global_moments(corpus);
  const Matrix base = regularize_covariance(mode == CovarianceMode::Full ? global_cov : Matrix(global_cov.diagonal()),
                                            mode);
  return ConceptBank(std::move(means), std::vector<Matrix>(K, base), mode);
}

namespace {

struct TrainingContext {
  const Corpus& corpus;
  const TrainerConfig& config;
  const std::vector<Vector>& counts;
  Vector alpha;
  NiwConfig niw;
  Matrix reinit_covariance;
  std::vector<std::string>& events;
};

// Moves each empty concept onto the token farthest from all remaining concept means.
ConceptBank mle_with_reinit(const SufficientStats& stats, TrainingContext& ctx, std::size_t epoch) {
  std::vector<std::size_t> empty;
  for (std::size_t k = 0; k < stats.size(); ++k) {
    if (!(stats.weight(static_cast<Eigen::Index>(k)) > kEmptyConceptWeight)) empty.push_back(k);
  }
  if (empty.empty()) return update_concepts_mle(stats);
  if (empty.size() == stats.size()) throw Error(ErrorKind::EmptyConcept, "every concept has zero weight");

  const auto K = static_cast<Eigen::Index>(stats.size());
  RowMatrix means(K, static_cast<Eigen::Index>(stats.dimension()));
  std::vector<Matrix> covs(stats.size());
  std::vector<bool> placed(stats.size(), false);
  for (std::size_t k = 0; k < stats.size(); ++k) {
    const auto ki = static_cast<Eigen::Index>(k);
    if (stats.weight(ki) > kEmptyConceptWeight) {
      means.row(ki) = stats.weighted_mean(k).transpose();
      covs[k] = regularize_covariance(stats.scatter[k] / stats.weight(ki), stats.mode);
      placed[k] = true;
    }
  }
  for (std::size_t k : empty) {
    double best = -1.0;
    std::size_t best_doc = 0;
    Eigen::Index best_tok = 0;
    for (std::size_t m = 0; m < ctx.corpus.size(); ++m) {
      const auto& E = ctx.corpus[m].embeddings;
      for (Eigen::Index j = 0; j < E.rows(); ++j) {
        double nearest = std::numeric_limits<double>::infinity();
        for (std::size_t q = 0; q < stats.size(); ++q) {
          if (placed[q]) nearest = std::min(nearest, (E.row(j) - means.row(static_cast<Eigen::Index>(q))).squaredNorm());
        }
        if (nearest > best) {
          best = nearest;
          best_doc = m;
          best_tok = j;
        }
      }
    }
    means.row(static_cast<Eigen::Index>(k)) = ctx.corpus[best_doc].embeddings.row(best_tok);
    covs[k] = ctx.reinit_covariance;
    placed[k] = true;
    ctx.events.push_back("epoch " + std::to_string(epoch) + ": concept " + std::to_string(k) +
                         " was empty; reinitialized at document '" + ctx.corpus[best_doc].doc_id + "' token " +
                         std::to_string(best_tok));
  }
  return ConceptBank(std::move(means), std::move(covs), stats.mode);
}

// Batch update for EMA: concepts without batch mass keep the current global parameters.
ConceptBank batch_mle(const SufficientStats& stats, const ConceptBank& current) {
  const auto K = static_cast<Eigen::Index>(stats.size());
  RowMatrix means(K, static_cast<Eigen::Index>(stats.dimension()));
  std::vector<Matrix> covs;
  for (std::size_t k = 0; k < stats.size(); ++k) {
    const auto ki = static_cast<Eigen::Index>(k);
    const double n = stats.weight(ki);
    if (n > kEmptyConceptWeight) {
      means.row(ki) = stats.weighted_mean(k).transpose();
      covs.push_back(regularize_covariance(stats.scatter[k] / n, stats.mode));
    } else {
      means.row(ki) = current.means().row(ki);
      covs.push_back(current.stored_covariance(k));
    }
  }
  return ConceptBank(std::move(means), std::move(covs), stats.mode);
}

ConceptBank m_step(const SufficientStats& stats, TrainingContext& ctx, std::size_t epoch) {
  if (ctx.config.mstep == MStep::Niw) return update_concepts_niw(stats, ctx.niw);
  return mle_with_reinit(stats, ctx, epoch);
}

void infer_indices(const TrainingContext& ctx, const std::vector<std::size_t>& indices, const ConceptBank& bank,
                   const std::vector<Vector>& starts, std::vector<DocumentPosterior>& store) {
  parallel_for(indices.size(), ctx.config.threads, [&](std::size_t i) {
    const std::size_t m = indices[i];
    std::optional<Vector> init;
    if (ctx.config.warm_start && !starts.empty()) init = starts[m];
    store[m] = infer_document(ctx.corpus[m], ctx.counts[m], bank, ctx.alpha, ctx.config.inference, init);
  });
}

double elbo_indices(const TrainingContext& ctx, const std::vector<std::size_t>& indices, const ConceptBank& bank,
                    const std::vector<DocumentPosterior>& posteriors) {
  const ElboWeighting weighting = paired_weighting(ctx.config.inference.phi_mode);
  std::vector<double> parts(indices.size());
  parallel_for(indices.size(), ctx.config.threads, [&](std::size_t i) {
    const std::size_t m = indices[i];
    parts[i] = elbo_document(ctx.corpus[m], ctx.counts[m], posteriors[m], bank, ctx.alpha, weighting).total;
  });
  double total = 0.0;
  for (double p : parts) total += p;
  return total;
}

TrainingResult run_training(const Corpus& corpus, const TrainerConfig& config, const ConceptBank& initial,
                            std::vector<Vector> counts) {
  if (config.epochs < 1) throw Error(ErrorKind::InvalidArgument, "epochs must be >= 1");
  if (initial.size() != config.K) throw Error(ErrorKind::InvalidArgument, "initial bank size != K");
  if (initial.dimension() != corpus.dimension()) {
    throw Error(ErrorKind::DimensionMismatch, "initial bank dimension != corpus dimension");
  }
  if (!(config.alpha > 0.0) || !std::isfinite(config.alpha)) {
    throw Error(ErrorKind::InvalidArgument, "alpha must be positive");
  }
  if (counts.size() != corpus.size()) throw Error(ErrorKind::DimensionMismatch, "one count vector per document");
  for (std::size_t m = 0; m < corpus.size(); ++m) {
    if (counts[m].size() != static_cast<Eigen::Index>(corpus[m].length()) || !counts[m].allFinite() ||
        (counts[m].array() < 0.0).any()) {
      throw Error(ErrorKind::InvalidValue, "counts for document " + std::to_string(m) + " are invalid");
    }
  }

  TrainingResult result{initial, {}, {}, {}, std::move(counts), {}};
  const CovarianceMode mode = initial.mode();
  const auto [global_mean, global_cov] = global_moments(corpus);
  TrainingContext ctx{corpus,
                      config,
                      result.counts,
                      Vector::Constant(static_cast<Eigen::Index>(config.K), config.alpha),
                      {},
                      regularize_covariance(mode == CovarianceMode::Full ? global_cov : Matrix(global_cov.diagonal()),
                                            mode),
                      result.events};
  if (config.mstep == MStep::Niw) {
    ctx.niw = config.niw ? *config.niw : default_niw(corpus, mode);
    if (!config.niw) ctx.niw.divisor = config.niw_divisor;
  }

  const std::size_t M = corpus.size();
  const bool minibatch = config.batch_size > 0 && config.batch_size < M;
  std::vector<DocumentPosterior> posts(M);
  std::vector<Vector> starts;
  const std::vector<std::size_t> everything = all_indices(M);
  ConceptBank bank = initial;
  SufficientStats last_stats;
  std::mt19937_64 rng(config.seed ^ 0x9E3779B97F4A7C15ull);
  EmaState ema;
  ema.rho = config.rho;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    if (!minibatch) {
      infer_indices(ctx, everything, bank, starts, posts);
      result.elbo_trace.push_back(elbo_indices(ctx, everything, bank, posts));
      last_stats = accumulate_indices(corpus, everything, posts, result.counts, mode, config.K, config.threads);
      bank = m_step(last_stats, ctx, epoch);
    } else {
      std::vector<std::size_t> order = everything;
      std::shuffle(order.begin(), order.end(), rng);
      double epoch_elbo = 0.0;
      SufficientStats epoch_stats(config.K, corpus.dimension(), mode);
      for (std::size_t b = 0; b < M; b += config.batch_size) {
        const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(b),
                                             order.begin() + static_cast<std::ptrdiff_t>(std::min(M, b + config.batch_size)));
        infer_indices(ctx, batch, bank, starts, posts);
        epoch_elbo += elbo_indices(ctx, batch, bank, posts);
        SufficientStats stats = accumulate_indices(corpus, batch, posts, result.counts, mode, config.K, config.threads);
        const ConceptBank batch_bank =
            config.mstep == MStep::Niw ? update_concepts_niw(stats, ctx.niw) : batch_mle(stats, bank);
        ema = ema_merge(ema, batch_bank, static_cast<double>(batch.size()));
        bank = ema.bank();
        epoch_stats.merge(stats);
      }
      result.elbo_trace.push_back(epoch_elbo);
      last_stats = std::move(epoch_stats);
    }
    starts.resize(M);
    for (std::size_t m = 0; m < M; ++m) starts[m] = posts[m].gamma;
  }

  infer_indices(ctx, everything, bank, starts, posts);
  result.bank = bank;
  result.posteriors = std::move(posts);
  result.concept_weights = last_stats.weight;
  return result;
}

}  // namespace

TrainingResult train(const Corpus& corpus, const TrainerConfig& config) {
  const CovarianceMode mode = config.covariance.value_or(default_covariance_mode(corpus.dimension()));
  const ConceptBank initial = initialize_bank(corpus, config.K, mode, config.seed, config.init_sample);
  return train(corpus, config, initial);
}

TrainingResult train(const Corpus& corpus, const TrainerConfig& config, const ConceptBank& initial) {
  return run_training(corpus, config, initial, compute_corpus_counts(corpus, config.counts));
}

TrainingResult train_with_counts(const Corpus& corpus, const TrainerConfig& config, const ConceptBank& initial,
                                 std::vector<Vector> counts) {
  return run_training(corpus, config, initial, std::move(counts));
}

}  // namespace valc
