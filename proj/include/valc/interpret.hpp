#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "valc/concept_bank.hpp"
#include "valc/corpus.hpp"
#include "valc/inference.hpp"

namespace valc {

/// Lower-cases ASCII letters; other bytes pass through unchanged.
std::string fold_case(const std::string& token);

/// Mean contextual embedding of every case-folded word type.
struct WordTypeTable {
  std::vector<std::string> words;  // sorted
  RowMatrix means;                 // one row per word
  std::vector<std::size_t> occurrences;
};

WordTypeTable build_word_types(const Corpus& corpus);

struct TopWord {
  std::string word;
  double distance = 0.0;
};

/// The n word types whose mean embedding is closest (Euclidean) to mu_k, ascending.
std::vector<TopWord> top_words_for_concept(const WordTypeTable& table, const ConceptBank& bank, std::size_t k,
                                           std::size_t n);
std::vector<TopWord> top_words_for_concept(const Corpus& corpus, const ConceptBank& bank, std::size_t k,
                                           std::size_t n);

struct IdfResult {
  Vector document_frequency;  // documents where the concept is among some token's top concepts
  Vector idf;                 // log(M / (1 + df))
  double threshold = 0.0;     // IDF quantile; concepts must exceed it to be kept
  std::vector<std::size_t> kept;
};

/// Keeps concepts whose IDF exceeds the given quantile of all IDF scores (quantile 0 keeps all).
IdfResult concept_idf_filter(const std::vector<DocumentPosterior>& posteriors, double threshold_quantile,
                             std::size_t top = 5);

struct Projection {
  RowMatrix coordinates;      // n x dims
  Matrix components;          // d x dims, unit columns
  Vector explained_variance;  // dims
  Vector explained_ratio;     // dims
  /// Set when the data has rank below dims; missing components are zero.
  bool degenerate = false;
};

/// Centered PCA; each component's largest-magnitude loading is positive.
/// With `strict`, rank below dims throws DegenerateSpread instead of padding.
Projection pca_project(const RowMatrix& vectors, std::size_t dims = 2, bool strict = false);

/// Rounds a probability vector to multiples of 1/scale that sum to exactly 1 (largest remainder).
Vector quantize_simplex(const Vector& p, double scale = 1e9);

struct ReportOptions {
  std::size_t top_words = 10;
  double idf_quantile = 0.0;
  std::size_t idf_top = 5;
};

/// report.json (concepts, documents with theta and token phi), theta.csv and projection.csv.
void export_report(const Corpus& corpus, const std::vector<DocumentPosterior>& posteriors, const ConceptBank& bank,
                   const ReportOptions& options, const std::filesystem::path& out_dir);

}  // namespace valc
