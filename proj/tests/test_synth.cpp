#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <numeric>
#include <set>
#include <thread>

#include "test_support.hpp"
#include "valc/counts.hpp"
#include "valc/error.hpp"
#include "valc/inference.hpp"
#include "valc/synth.hpp"

using namespace valc;

TEST_CASE("planted spec geometry") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    PlantedOptions po;
    const PlantedSpec spec = make_planted_spec(po, seed);
    CHECK(spec.K() == 5);
    CHECK(spec.dimension() == 8);
    CHECK(spec.separation_ratio() == doctest::Approx(6.0).epsilon(1e-12));
    CHECK(spec.means.colwise().mean().cwiseAbs().maxCoeff() < 1e-12);
    CHECK(std::fabs(spec.mixing.sum() - 1.0) < 1e-15);
    CHECK(spec.stop_sigma == doctest::Approx(std::sqrt(10.0)));
    CHECK(spec.stop_mean.isZero());
  }
  PlantedOptions single;
  single.K = 1;
  CHECK(make_planted_spec(single, 0).means.isZero());
  PlantedOptions a, b;
  b.separation = 3.0;
  const auto sa = make_planted_spec(a, 4), sb = make_planted_spec(b, 4);
  CHECK((sa.means * 0.5 - sb.means).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("generated corpus is valid, deterministic and follows the attention model") {
  PlantedOptions po;
  const PlantedSpec spec = make_planted_spec(po, 1);
  const auto x = generate_corpus(spec, 20, 9);
  const auto y = generate_corpus(spec, 20, 9);
  REQUIRE(x.corpus.size() == 20);
  for (std::size_t m = 0; m < 20; ++m) {
    const auto& doc = x.corpus[m];
    CHECK(doc.embeddings == y.corpus[m].embeddings);
    CHECK(doc.attention == y.corpus[m].attention);
    CHECK(doc.length() == 80);
    CHECK(x.assignments[m].size() == 80);
    CHECK(std::count(x.assignments[m].begin(), x.assignments[m].end(), -1) == 40);
    REQUIRE(doc.label);
    Eigen::Index top = 0;
    x.proportions[m].maxCoeff(&top);
    CHECK(*doc.label == top);
    REQUIRE(doc.cls_embedding);
    double stop_mean = 0.0, content_mean = 0.0;
    for (std::size_t j = 0; j < 80; ++j) {
      const double a = doc.attention(static_cast<Eigen::Index>(j));
      (x.assignments[m][j] < 0 ? stop_mean : content_mean) += a / 40.0;
      CHECK(doc.tokens[j].rfind(x.assignments[m][j] < 0 ? "stop" : "c", 0) == 0);
    }
    CHECK(stop_mean / content_mean == doctest::Approx(0.1).epsilon(0.1));
  }
  CHECK(generate_corpus(spec, 3, 10).corpus[0].embeddings != x.corpus[0].embeddings);
}

TEST_CASE("ground-truth counts and content masks") {
  PlantedOptions po;
  po.stop_tokens_per_doc = 10;
  po.tokens_per_doc = 30;
  const auto x = generate_corpus(make_planted_spec(po, 2), 5, 2);
  const auto w = ground_truth_counts(x);
  const auto masks = content_masks(x);
  for (std::size_t m = 0; m < 5; ++m) {
    CHECK(w[m].sum() == doctest::Approx(40.0));
    for (std::size_t j = 0; j < 40; ++j) {
      CHECK(masks[m][j] == (x.assignments[m][j] >= 0));
      CHECK(w[m](static_cast<Eigen::Index>(j)) == (masks[m][j] ? 40.0 / 30.0 : 0.0));
    }
  }
}

TEST_CASE("content-token likelihood against the oracle") {
  PlantedOptions po;
  po.tokens_per_doc = 6;
  po.stop_tokens_per_doc = 3;
  const PlantedSpec spec = make_planted_spec(po, 3);
  const auto x = generate_corpus(spec, 4, 3);
  const ConceptBank bank = planted_bank(spec);
  const auto masks = content_masks(x);
  std::vector<Matrix> phis;
  testing::LD expected = 0.0L;
  for (std::size_t m = 0; m < 4; ++m) {
    Matrix phi = Matrix::Zero(6, 5);
    const auto ll = testing::log_likelihoods(x.corpus[m], bank);
    Eigen::Index r = 0;
    for (std::size_t j = 0; j < 9; ++j) {
      if (!masks[m][j]) continue;
      phi(r, x.assignments[m][j]) = 1.0;
      expected += ll(static_cast<Eigen::Index>(j), x.assignments[m][j]);
      ++r;
    }
    phis.push_back(phi);
  }
  CHECK(testing::close(heldout_likelihood(bank, x.corpus, masks, phis), expected, 1e-10));
  const double inferred = eval_heldout_likelihood(bank, x.corpus, masks, Vector::Ones(5));
  CHECK(inferred == doctest::Approx(static_cast<double>(expected)).epsilon(1e-3));
}

TEST_CASE("token cluster frequencies follow the mixing weights") {
  PlantedOptions po;
  po.doc_concentration = std::nullopt;
  const PlantedSpec spec = make_planted_spec(po, 7);
  const auto x = generate_corpus(spec, 1250, 7);
  std::vector<double> hits(5, 0.0);
  double total = 0.0;
  for (const auto& doc : x.assignments) {
    for (int z : doc) {
      if (z < 0) continue;
      hits[static_cast<std::size_t>(z)] += 1.0;
      total += 1.0;
    }
  }
  CHECK(total == 50000.0);
  for (std::size_t k = 0; k < 5; ++k) {
    const double p = spec.mixing(static_cast<Eigen::Index>(k));
    CHECK(std::fabs(hits[k] / total - p) <= 3.0 * std::sqrt(p * (1.0 - p) / total));
  }
}

TEST_CASE("content likelihood ignores unused concepts and prefers planted covariances") {
  PlantedOptions po;
  const PlantedSpec spec = make_planted_spec(po, 8);
  const auto x = generate_corpus(spec, 20, 8);
  const auto masks = content_masks(x);
  const ConceptBank bank = planted_bank(spec);
  std::vector<Matrix> phis, wide_phis;
  for (std::size_t m = 0; m < x.corpus.size(); ++m) {
    const auto n = static_cast<Eigen::Index>(std::count(masks[m].begin(), masks[m].end(), true));
    Matrix phi = Matrix::Zero(n, 5);
    Eigen::Index r = 0;
    for (std::size_t j = 0; j < masks[m].size(); ++j) {
      if (masks[m][j]) phi(r++, x.assignments[m][j]) = 1.0;
    }
    Matrix wide = Matrix::Zero(n, 6);
    wide.leftCols(5) = phi;
    phis.push_back(phi);
    wide_phis.push_back(wide);
  }
  const double base = heldout_likelihood(bank, x.corpus, masks, phis);
  RowMatrix means(6, 8);
  means.topRows(5) = bank.means();
  means.row(5).setConstant(1e3);
  std::vector<Matrix> covs;
  for (std::size_t k = 0; k < 5; ++k) covs.push_back(bank.covariance(k));
  covs.push_back(Matrix::Identity(8, 8));
  const ConceptBank far(means, covs, CovarianceMode::Full);
  CHECK(heldout_likelihood(far, x.corpus, masks, wide_phis) == base);
  for (auto& c : covs) c *= 2.0;
  covs.pop_back();
  const ConceptBank doubled(bank.means(), covs, CovarianceMode::Full);
  CHECK(heldout_likelihood(doubled, x.corpus, masks, phis) < base);
}

TEST_CASE("planted parameters score above barely trained banks") {
  PlantedOptions po;
  const PlantedSpec spec = make_planted_spec(po, 9);
  const ConceptBank planted = planted_bank(spec);
  std::size_t wins = 0;
  const std::size_t seeds = 20;
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    const auto x = generate_corpus(spec, 40, seed);
    const auto masks = content_masks(x);
    TrainerConfig cfg;
    cfg.K = 5;
    cfg.epochs = 1;
    cfg.seed = seed;
    const auto r = train(x.corpus, cfg);
    const Vector alpha = Vector::Ones(5);
    if (eval_heldout_likelihood(planted, x.corpus, masks, alpha) >= eval_heldout_likelihood(r.bank, x.corpus, masks, alpha)) {
      ++wins;
    }
  }
  CHECK(static_cast<double>(wins) >= 0.95 * seeds);
}

TEST_CASE("without stop tokens the three configurations coincide") {
  PlantedOptions po;
  po.stop_tokens_per_doc = 0;
  po.tokens_per_doc = 20;
  const auto spec = make_planted_spec(po, 4);
  OrderingCheckOptions opts;
  opts.epochs = 5;
  const auto r = ordering_check_seed(spec, 20, 11, opts);
  CHECK(r.identical == r.attention);
  CHECK(r.attention == r.ground_truth);
  CHECK(r.holds);
}

TEST_CASE("zero stop attention collapses attention onto ground truth") {
  PlantedOptions po;
  po.attention_ratio = 0.0;
  po.attention_jitter = 0.0;
  po.tokens_per_doc = 20;
  po.stop_tokens_per_doc = 10;
  const auto spec = make_planted_spec(po, 5);
  const auto x = generate_corpus(spec, 6, 5);
  const auto a = compute_corpus_counts(x.corpus, CountScheme::attention_variable());
  const auto g = ground_truth_counts(x);
  for (std::size_t m = 0; m < 6; ++m) CHECK((a[m] - g[m]).cwiseAbs().maxCoeff() < 1e-12);
  OrderingCheckOptions opts;
  opts.epochs = 5;
  const auto r = ordering_check_seed(spec, 20, 12, opts);
  CHECK(r.attention == doctest::Approx(r.ground_truth).epsilon(1e-9));
}

TEST_CASE("ordering check aggregates seeds independently of workers") {
  PlantedOptions po;
  const auto spec = make_planted_spec(po, 0);
  OrderingCheckOptions opts;
  opts.epochs = 3;
  const auto serial = ordering_check(spec, 15, {1, 2, 3}, opts);
  opts.threads = 3;
  const auto parallel = ordering_check(spec, 15, {1, 2, 3}, opts);
  REQUIRE(serial.seeds.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(serial.seeds[i].identical == parallel.seeds[i].identical);
    CHECK(serial.seeds[i].holds == parallel.seeds[i].holds);
  }
  const auto hits = std::count_if(serial.seeds.begin(), serial.seeds.end(), [](const auto& s) { return s.holds; });
  CHECK(serial.fraction == doctest::Approx(hits / 3.0));
  CHECK_THROWS_AS(ordering_check(spec, 15, {}, opts), Error);
}

TEST_CASE("faithfulness probe reaches the argmax labels and chance on random labels") {
  PlantedOptions po;
  po.tokens_per_doc = 2;
  po.stop_tokens_per_doc = 0;
  const PlantedSpec spec = make_planted_spec(po, 6);
  const auto x = generate_corpus(spec, 1000, 6);
  std::vector<DocumentPosterior> posts;
  std::vector<std::int32_t> labels, shuffled;
  std::mt19937_64 rng(6);
  for (std::size_t m = 0; m < x.corpus.size(); ++m) {
    DocumentPosterior p;
    p.gamma = x.proportions[m];
    posts.push_back(p);
    labels.push_back(*x.corpus[m].label);
    shuffled.push_back(static_cast<std::int32_t>(rng() % 5));
  }
  const double planted = faithfulness_probe(posts, labels, 1);
  const double chance = faithfulness_probe(posts, shuffled, 1);
  MESSAGE("probe accuracy argmax labels " << planted << ", random labels " << chance);
  CHECK(planted >= 0.99);
  // 200 held-out documents: chance 0.2 with binomial sd 0.028.
  CHECK(std::fabs(chance - 0.2) <= 3.0 * std::sqrt(0.2 * 0.8 / 200.0));
  CHECK(faithfulness_probe(posts, labels, 1) == planted);
  CHECK_THROWS_AS(faithfulness_probe(posts, {1, 2}, 1), Error);
  try {
    faithfulness_probe(posts, std::vector<std::int32_t>(posts.size(), 3), 1);
    FAIL("expected failure");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::SingleClass);
  }
}

TEST_CASE("nuisance corpus layout") {
  NuisanceOptions no;
  const auto n = generate_nuisance_corpus(no, 100, 7);
  CHECK(n.clean.size() == 100);
  CHECK(n.corrupted.size() == 100);
  CHECK(n.bank.size() == 4);
  auto shifted = [](const EmbeddedDocument& doc) {
    return std::fabs((*doc.cls_embedding)(1)) + std::fabs((*doc.cls_embedding)(2)) > 0.5;
  };
  std::set<std::int32_t> labels;
  std::size_t corrupted = 0, clean_shifted = 0;
  for (std::size_t m = 0; m < 100; ++m) {
    labels.insert(*n.corrupted[m].label);
    CHECK(n.corrupted[m].length() == no.tokens_per_doc);
    if (shifted(n.clean[m])) ++clean_shifted;
    if (shifted(n.corrupted[m])) ++corrupted;
  }
  CHECK(labels == std::set<std::int32_t>{0, 1});
  CHECK(clean_shifted <= 15);
  CHECK(corrupted >= 30);
  CHECK(corrupted <= 70);
  NuisanceOptions thin;
  thin.d = 2;
  CHECK_THROWS_AS(generate_nuisance_corpus(thin, 10, 0), Error);
}

TEST_CASE("ordering rate does not fall as the stop cluster widens") {
  std::vector<std::uint64_t> seeds(100);
  std::iota(seeds.begin(), seeds.end(), std::uint64_t{0});
  OrderingCheckOptions opts;
  opts.threads = std::max(1u, std::thread::hardware_concurrency());
  double previous = 0.0;
  for (double inflation : {10.0, 30.0, 100.0}) {
    PlantedOptions po;
    po.stop_inflation = inflation;
    const double fraction = ordering_check(make_planted_spec(po, 0), 100, seeds, opts).fraction;
    MESSAGE("inflation " << inflation << ": ordering fraction " << fraction);
    CHECK(fraction >= previous);
    previous = fraction;
  }
}
