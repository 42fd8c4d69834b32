#pragma once

#include <optional>
#include <string>
#include <vector>

#include "valc/corpus.hpp"
#include "valc/types.hpp"

namespace valc {

enum class CountKind { Identical, AttentionFixed, AttentionVariable };

/// How attention weights become continuous word counts w_mj.
struct CountScheme {
  CountKind kind = CountKind::AttentionVariable;
  /// Shared sequence length J' for AttentionFixed. Unset means "corpus mean of J_m".
  std::optional<double> fixed_length;

  static CountScheme identical() { return {CountKind::Identical, std::nullopt}; }
  static CountScheme attention_fixed(std::optional<double> length = std::nullopt) {
    return {CountKind::AttentionFixed, length};
  }
  static CountScheme attention_variable() { return {CountKind::AttentionVariable, std::nullopt}; }
};

/// Parses "identical", "variable", "fixed" or "fixed:<J'>".
CountScheme parse_count_scheme(const std::string& text);
std::string to_string(const CountScheme& scheme);

double mean_document_length(const Corpus& corpus);

/// Fills in the default J' for AttentionFixed from the corpus; other schemes pass through.
CountScheme resolve_scheme(const CountScheme& scheme, const Corpus& corpus);

/// Per-token counts for one document. AttentionFixed requires a resolved J'.
Vector compute_counts(const EmbeddedDocument& doc, const CountScheme& scheme);

std::vector<Vector> compute_corpus_counts(const Corpus& corpus, const CountScheme& scheme);

}  // namespace valc
