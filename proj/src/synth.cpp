#include "valc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "valc/counts.hpp"
#include "valc/editing.hpp"
#include "valc/error.hpp"
#include "valc/parallel.hpp"

namespace valc {

double PlantedSpec::separation_ratio() const {
  if (K() < 2) return std::numeric_limits<double>::infinity();
  double closest = std::numeric_limits<double>::infinity();
  for (Eigen::Index a = 0; a < means.rows(); ++a) {
    for (Eigen::Index b = a + 1; b < means.rows(); ++b) closest = std::min(closest, (means.row(a) - means.row(b)).norm());
  }
  return closest / sigmas.maxCoeff();
}

void PlantedSpec::validate() const {
  if (K() < 1 || dimension() < 1) throw Error(ErrorKind::InvalidArgument, "planted spec needs K >= 1 and d >= 1");
  if (static_cast<std::size_t>(sigmas.size()) != K() || static_cast<std::size_t>(mixing.size()) != K()) {
    throw Error(ErrorKind::DimensionMismatch, "planted sigmas and mixing need K entries");
  }
  if (static_cast<std::size_t>(stop_mean.size()) != dimension()) {
    throw Error(ErrorKind::DimensionMismatch, "stop mean needs d entries");
  }
  if ((sigmas.array() <= 0.0).any()) throw Error(ErrorKind::InvalidArgument, "planted sigmas must be positive");
  if ((mixing.array() < 0.0).any() || std::fabs(mixing.sum() - 1.0) > 1e-9) {
    throw Error(ErrorKind::InvalidArgument, "mixing weights must lie on the simplex");
  }
  if (stop_tokens_per_doc > 0 && !(stop_sigma > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "stop cluster needs a positive sigma");
  }
  if (tokens_per_doc < 1) throw Error(ErrorKind::InvalidArgument, "documents need at least one content token");
  if (!(attention_ratio >= 0.0) || !(attention_jitter >= 0.0 && attention_jitter < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "attention ratio must be >= 0 and jitter in [0, 1)");
  }
  if (doc_concentration && !(*doc_concentration > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "document concentration must be positive");
  }
  if (vocabulary_per_concept < 1) throw Error(ErrorKind::InvalidArgument, "vocabulary must be non-empty");
}

PlantedSpec make_planted_spec(const PlantedOptions& options, std::uint64_t seed) {
  if (options.K < 1 || options.d < 1) throw Error(ErrorKind::InvalidArgument, "K and d must be >= 1");
  if (!(options.sigma > 0.0) || !(options.separation > 0.0) || !(options.stop_inflation > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "sigma, separation and stop inflation must be positive");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto K = static_cast<Eigen::Index>(options.K);
  const auto d = static_cast<Eigen::Index>(options.d);
  RowMatrix means(K, d);
  for (Eigen::Index k = 0; k < K; ++k) {
    for (Eigen::Index c = 0; c < d; ++c) means(k, c) = normal(rng);
  }
  if (K > 1) {
    means = means.rowwise() - means.colwise().mean();
    double closest = std::numeric_limits<double>::infinity();
    for (Eigen::Index a = 0; a < K; ++a) {
      for (Eigen::Index b = a + 1; b < K; ++b) closest = std::min(closest, (means.row(a) - means.row(b)).norm());
    }
    means *= options.separation * options.sigma / closest;
  } else {
    means.setZero();
  }
  PlantedSpec spec;
  spec.means = std::move(means);
  spec.sigmas = Vector::Constant(K, options.sigma);
  spec.mixing = Vector::Constant(K, 1.0 / static_cast<double>(K));
  spec.stop_mean = Vector::Zero(d);
  spec.stop_sigma = options.sigma * std::sqrt(options.stop_inflation);
  spec.tokens_per_doc = options.tokens_per_doc;
  spec.stop_tokens_per_doc = options.stop_tokens_per_doc;
  spec.attention_ratio = options.attention_ratio;
  spec.attention_jitter = options.attention_jitter;
  spec.doc_concentration = options.doc_concentration;
  return spec;
}

namespace {

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

PlantedCorpus generate_corpus(const PlantedSpec& spec, std::size_t M, std::uint64_t seed) {
  spec.validate();
  if (M < 1) throw Error(ErrorKind::InvalidArgument, "M must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> vocab(0, spec.vocabulary_per_concept - 1);
  const std::size_t K = spec.K();
  const auto d = static_cast<Eigen::Index>(spec.dimension());
  const std::size_t N = spec.tokens_per_doc;
  const std::size_t Ns = spec.stop_tokens_per_doc;
  const std::size_t J = N + Ns;
  const double lambda1 = 1.0 / (static_cast<double>(N) + static_cast<double>(Ns) * spec.attention_ratio);
  const double lambda2 = spec.attention_ratio * lambda1;

  std::vector<EmbeddedDocument> docs;
  PlantedCorpus out{Corpus(1, {EmbeddedDocument{"x", {"x"}, RowMatrix::Zero(1, 1), Vector::Ones(1), {}, {}}}), {}, {}};
  docs.reserve(M);
  for (std::size_t m = 0; m < M; ++m) {
    Vector theta(static_cast<Eigen::Index>(K));
    if (spec.doc_concentration) {
      for (std::size_t k = 0; k < K; ++k) {
        const double shape = *spec.doc_concentration * static_cast<double>(K) * spec.mixing(static_cast<Eigen::Index>(k));
        theta(static_cast<Eigen::Index>(k)) = shape > 0.0 ? std::gamma_distribution<double>(shape, 1.0)(rng) : 0.0;
      }
      if (!(theta.sum() > 0.0)) theta = spec.mixing;
      theta /= theta.sum();
    } else {
      theta = spec.mixing;
    }
    std::discrete_distribution<int> pick(theta.data(), theta.data() + theta.size());

    std::vector<int> z(J);
    for (std::size_t j = 0; j < N; ++j) z[j] = pick(rng);
    for (std::size_t j = N; j < J; ++j) z[j] = -1;
    std::shuffle(z.begin(), z.end(), rng);

    EmbeddedDocument doc;
    doc.doc_id = "doc" + std::to_string(m);
    doc.embeddings.resize(static_cast<Eigen::Index>(J), d);
    doc.attention.resize(static_cast<Eigen::Index>(J));
    for (std::size_t j = 0; j < J; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      const bool stop = z[j] < 0;
      const Vector center = stop ? spec.stop_mean : Vector(spec.means.row(z[j]).transpose());
      const double sd = stop ? spec.stop_sigma : spec.sigmas(z[j]);
      for (Eigen::Index c = 0; c < d; ++c) doc.embeddings(jj, c) = to_f32(center(c) + sd * normal(rng));
      doc.tokens.push_back(stop ? "stop" + std::to_string(vocab(rng))
                                : "c" + std::to_string(z[j]) + "w" + std::to_string(vocab(rng)));
      double a = stop ? lambda2 : lambda1;
      if (Ns > 0) a *= 1.0 + spec.attention_jitter * (2.0 * unit(rng) - 1.0);
      doc.attention(jj) = to_f32(a);
    }
    Eigen::Index label = 0;
    theta.maxCoeff(&label);
    doc.label = static_cast<std::int32_t>(label);
    Vector cls = spec.means.transpose() * theta;
    for (Eigen::Index c = 0; c < d; ++c) cls(c) = to_f32(cls(c) + spec.cls_noise * normal(rng));
    doc.cls_embedding = std::move(cls);
    docs.push_back(std::move(doc));
    out.assignments.push_back(std::move(z));
    out.proportions.push_back(std::move(theta));
  }
  Corpus::Metadata meta{{"generator", "valc-synth"}, {"seed", std::to_string(seed)}};
  out.corpus = Corpus(spec.dimension(), std::move(docs), std::move(meta));
  return out;
}

ConceptBank planted_bank(const PlantedSpec& spec, CovarianceMode mode) {
  std::vector<Matrix> covs;
  const auto d = static_cast<Eigen::Index>(spec.dimension());
  for (std::size_t k = 0; k < spec.K(); ++k) {
    const double var = spec.sigmas(static_cast<Eigen::Index>(k)) * spec.sigmas(static_cast<Eigen::Index>(k));
    covs.push_back(mode == CovarianceMode::Full ? Matrix(var * Matrix::Identity(d, d)) : Matrix(Matrix::Constant(d, 1, var)));
  }
  return ConceptBank(spec.means, std::move(covs), mode);
}

std::vector<std::vector<bool>> content_masks(const PlantedCorpus& planted) {
  std::vector<std::vector<bool>> masks;
  masks.reserve(planted.assignments.size());
  for (const auto& z : planted.assignments) {
    std::vector<bool> keep(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) keep[j] = z[j] >= 0;
    masks.push_back(std::move(keep));
  }
  return masks;
}

namespace {

EmbeddedDocument restrict_tokens(const EmbeddedDocument& doc, const std::vector<bool>& keep) {
  if (keep.size() != doc.length()) throw Error(ErrorKind::DimensionMismatch, "mask length != token count");
  EmbeddedDocument out;
  out.doc_id = doc.doc_id;
  const auto n = static_cast<Eigen::Index>(std::count(keep.begin(), keep.end(), true));
  out.embeddings.resize(n, doc.embeddings.cols());
  out.attention.resize(n);
  Eigen::Index row = 0;
  for (std::size_t j = 0; j < keep.size(); ++j) {
    if (!keep[j]) continue;
    out.tokens.push_back(doc.tokens[j]);
    out.embeddings.row(row) = doc.embeddings.row(static_cast<Eigen::Index>(j));
    out.attention(row) = doc.attention(static_cast<Eigen::Index>(j));
    ++row;
  }
  return out;
}

}  // namespace

double heldout_likelihood(const ConceptBank& bank, const Corpus& corpus, const std::vector<std::vector<bool>>& keep,
                          const std::vector<Matrix>& phi) {
  if (keep.size() != corpus.size() || phi.size() != corpus.size()) {
    throw Error(ErrorKind::DimensionMismatch, "masks and responsibilities must align with documents");
  }
  double total = 0.0;
  for (std::size_t m = 0; m < corpus.size(); ++m) {
    const EmbeddedDocument sub = restrict_tokens(corpus[m], keep[m]);
    if (sub.length() == 0) continue;
    if (phi[m].rows() != static_cast<Eigen::Index>(sub.length()) || phi[m].cols() != static_cast<Eigen::Index>(bank.size())) {
      throw Error(ErrorKind::DimensionMismatch, "responsibilities must cover the kept tokens");
    }
    total += phi[m].cwiseProduct(bank.log_likelihoods(sub.embeddings)).sum();
  }
  return total;
}

double eval_heldout_likelihood(const ConceptBank& bank, const Corpus& corpus,
                               const std::vector<std::vector<bool>>& keep, const Vector& alpha,
                               const InferenceOptions& inference, std::size_t threads) {
  if (keep.size() != corpus.size()) throw Error(ErrorKind::DimensionMismatch, "one mask per document");
  std::vector<double> parts(corpus.size(), 0.0);
  parallel_for(corpus.size(), threads, [&](std::size_t m) {
    const EmbeddedDocument sub = restrict_tokens(corpus[m], keep[m]);
    if (sub.length() == 0) return;
    const Vector ones = Vector::Ones(static_cast<Eigen::Index>(sub.length()));
    const DocumentPosterior post = infer_document(sub, ones, bank, alpha, inference);
    parts[m] = post.phi.cwiseProduct(bank.log_likelihoods(sub.embeddings)).sum();
  });
  double total = 0.0;
  for (double p : parts) total += p;
  return total;
}

std::vector<Vector> ground_truth_counts(const PlantedCorpus& planted) {
  std::vector<Vector> counts;
  counts.reserve(planted.assignments.size());
  for (const auto& z : planted.assignments) {
    const auto content = static_cast<double>(std::count_if(z.begin(), z.end(), [](int v) { return v >= 0; }));
    Vector w(static_cast<Eigen::Index>(z.size()));
    for (std::size_t j = 0; j < z.size(); ++j) {
      w(static_cast<Eigen::Index>(j)) = z[j] >= 0 ? static_cast<double>(z.size()) / content : 0.0;
    }
    counts.push_back(std::move(w));
  }
  return counts;
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

OrderingSeed ordering_check_seed(const PlantedSpec& spec, std::size_t M, std::uint64_t seed,
                                const OrderingCheckOptions& options) {
  const PlantedCorpus train_set = generate_corpus(spec, M, mix_seed(seed, 0));
  const CovarianceMode mode = options.covariance.value_or(default_covariance_mode(spec.dimension()));
  const ConceptBank initial = initialize_bank(train_set.corpus, spec.K(), mode, mix_seed(seed, 2));

  TrainerConfig config;
  config.K = spec.K();
  config.epochs = options.epochs;
  config.alpha = 1.0;
  config.covariance = mode;
  config.mstep = MStep::Mle;
  config.inference = options.inference;
  config.threads = options.threads;
  config.seed = seed;

  const std::vector<Vector> identical = compute_corpus_counts(train_set.corpus, CountScheme::identical());
  const std::vector<Vector> attention = compute_corpus_counts(train_set.corpus, CountScheme::attention_variable());
  const std::vector<Vector> truth = ground_truth_counts(train_set);
  const auto masks = content_masks(train_set);

  auto score = [&](const std::vector<Vector>& counts) {
    const TrainingResult trained = train_with_counts(train_set.corpus, config, initial, counts);
    std::vector<Matrix> phis;
    phis.reserve(train_set.corpus.size());
    for (std::size_t m = 0; m < train_set.corpus.size(); ++m) {
      const auto& keep = masks[m];
      Matrix phi(static_cast<Eigen::Index>(std::count(keep.begin(), keep.end(), true)),
                 static_cast<Eigen::Index>(spec.K()));
      Eigen::Index row = 0;
      for (std::size_t j = 0; j < keep.size(); ++j) {
        if (keep[j]) phi.row(row++) = trained.posteriors[m].phi.row(static_cast<Eigen::Index>(j));
      }
      phis.push_back(std::move(phi));
    }
    return heldout_likelihood(trained.bank, train_set.corpus, masks, phis);
  };
  OrderingSeed out;
  out.seed = seed;
  out.identical = score(identical);
  out.attention = score(attention);
  out.ground_truth = score(truth);
  auto leq = [&](double a, double b) {
    return a <= b + options.tolerance * std::max(std::fabs(a), std::fabs(b));
  };
  out.holds = leq(out.identical, out.attention) && leq(out.attention, out.ground_truth);
  return out;
}

OrderingCheckResult ordering_check(const PlantedSpec& spec, std::size_t M, const std::vector<std::uint64_t>& seeds,
                                 const OrderingCheckOptions& options) {
  if (seeds.empty()) throw Error(ErrorKind::InvalidArgument, "ordering check needs at least one seed");
  OrderingCheckResult result;
  result.seeds.resize(seeds.size());
  OrderingCheckOptions inner = options;
  inner.threads = 1;
  parallel_for(seeds.size(), options.threads,
               [&](std::size_t i) { result.seeds[i] = ordering_check_seed(spec, M, seeds[i], inner); });
  const auto holds = std::count_if(result.seeds.begin(), result.seeds.end(), [](const auto& s) { return s.holds; });
  result.fraction = static_cast<double>(holds) / static_cast<double>(seeds.size());
  return result;
}

double faithfulness_probe(const std::vector<DocumentPosterior>& posteriors, const std::vector<std::int32_t>& labels,
                          std::uint64_t split_seed) {
  if (posteriors.size() != labels.size() || posteriors.empty()) {
    throw Error(ErrorKind::DimensionMismatch, "one label per posterior");
  }
  const std::size_t n = posteriors.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(split_seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n)));
  if (n_train < 1 || n_train >= n) throw Error(ErrorKind::InvalidArgument, "too few documents for an 80/20 split");
  const auto K = posteriors.front().gamma.size();
  RowMatrix train_x(static_cast<Eigen::Index>(n_train), K);
  std::vector<std::int32_t> train_y;
  for (std::size_t i = 0; i < n_train; ++i) {
    train_x.row(static_cast<Eigen::Index>(i)) = posteriors[order[i]].theta().transpose();
    train_y.push_back(labels[order[i]]);
  }
  LogisticOptions lo;
  lo.seed = split_seed;
  const LogisticClassifier model = LogisticClassifier::fit(train_x, train_y, lo);
  std::size_t hits = 0;
  for (std::size_t i = n_train; i < n; ++i) {
    if (model.predict(posteriors[order[i]].theta()) == labels[order[i]]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n - n_train);
}

NuisanceCorpus generate_nuisance_corpus(const NuisanceOptions& o, std::size_t M, std::uint64_t seed) {
  if (o.d < 3) throw Error(ErrorKind::InvalidArgument, "nuisance design needs d >= 3");
  if (M < 2) throw Error(ErrorKind::InvalidArgument, "nuisance design needs M >= 2");
  if (!(o.class_weight_min > 0.0 && o.class_weight_min <= o.class_weight_max && o.class_weight_max <= 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "class weights must satisfy 0 < min <= max <= 1");
  }
  const auto d = static_cast<Eigen::Index>(o.d);
  RowMatrix means = RowMatrix::Zero(4, d);
  means(0, 0) = o.class_scale;
  means(1, 0) = -o.class_scale;
  // Concept 2 corrupts class-0 documents (pulls toward class 1); concept 3 the reverse.
  means(2, 0) = -o.nuisance_pull;
  means(2, 1) = o.nuisance_scale;
  means(3, 0) = o.nuisance_pull;
  means(3, 2) = o.nuisance_scale;
  const double var = std::max(o.noise, 0.1) * std::max(o.noise, 0.1);
  std::vector<Matrix> covs(4, Matrix(var * Matrix::Identity(d, d)));
  ConceptBank bank(means, std::move(covs), CovarianceMode::Full);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto make = [&](std::size_t m, bool allow_corruption, const std::string& prefix) {
    const int label = unit(rng) < 0.5 ? 0 : 1;
    const bool corrupted = allow_corruption && unit(rng) < o.corrupted_fraction;
    const int nuisance = label == 0 ? 2 : 3;
    const double w = corrupted ? o.class_weight_min + (o.class_weight_max - o.class_weight_min) * unit(rng) : 1.0;
    EmbeddedDocument doc;
    doc.doc_id = prefix + std::to_string(m);
    doc.label = label;
    const Vector center = w * means.row(label).transpose() + (1.0 - w) * means.row(nuisance).transpose();
    Vector cls(d);
    for (Eigen::Index c = 0; c < d; ++c) cls(c) = to_f32(center(c) + o.noise * normal(rng));
    doc.cls_embedding = std::move(cls);
    const auto J = static_cast<Eigen::Index>(o.tokens_per_doc);
    doc.embeddings.resize(J, d);
    doc.attention = Vector::Constant(J, to_f32(1.0 / static_cast<double>(J)));
    for (Eigen::Index j = 0; j < J; ++j) {
      const int k = unit(rng) < w ? label : nuisance;
      for (Eigen::Index c = 0; c < d; ++c) doc.embeddings(j, c) = to_f32(means(k, c) + o.noise * normal(rng));
      doc.tokens.push_back("c" + std::to_string(k) + "w" + std::to_string(j % 5));
    }
    return doc;
  };
  std::vector<EmbeddedDocument> clean;
  std::vector<EmbeddedDocument> corrupted;
  for (std::size_t m = 0; m < M; ++m) clean.push_back(make(m, false, "clean"));
  for (std::size_t m = 0; m < M; ++m) corrupted.push_back(make(m, true, "corrupted"));
  return {Corpus(o.d, std::move(clean)), Corpus(o.d, std::move(corrupted)), std::move(bank)};
}

}  // namespace valc
