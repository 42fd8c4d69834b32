#include "valc/counts.hpp"

#include <cmath>
#include <sstream>

#include "valc/error.hpp"

namespace valc {

CountScheme parse_count_scheme(const std::string& text) {
  if (text == "identical") return CountScheme::identical();
  if (text == "variable") return CountScheme::attention_variable();
  if (text == "fixed") return CountScheme::attention_fixed();
  const std::string prefix = "fixed:";
  if (text.rfind(prefix, 0) == 0) {
    const std::string number = text.substr(prefix.size());
    std::size_t used = 0;
    double value = 0.0;
    try {
      value = std::stod(number, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != number.size() || number.empty() || !std::isfinite(value) || value <= 0.0) {
      throw Error(ErrorKind::InvalidArgument, "fixed count length must be a positive number, got '" + number + "'");
    }
    return CountScheme::attention_fixed(value);
  }
  throw Error(ErrorKind::InvalidArgument, "unknown count scheme '" + text + "'");
}

std::string to_string(const CountScheme& scheme) {
  switch (scheme.kind) {
    case CountKind::Identical:
      return "identical";
    case CountKind::AttentionVariable:
      return "variable";
    case CountKind::AttentionFixed: {
      if (!scheme.fixed_length) return "fixed";
      std::ostringstream os;
      os.precision(17);
      os << "fixed:" << *scheme.fixed_length;
      return os.str();
    }
  }
  return "unknown";
}

double mean_document_length(const Corpus& corpus) {
  return static_cast<double>(corpus.total_tokens()) / static_cast<double>(corpus.size());
}

CountScheme resolve_scheme(const CountScheme& scheme, const Corpus& corpus) {
  CountScheme out = scheme;
  if (out.kind == CountKind::AttentionFixed && !out.fixed_length) out.fixed_length = mean_document_length(corpus);
  return out;
}

Vector compute_counts(const EmbeddedDocument& doc, const CountScheme& scheme) {
  const auto J = static_cast<Eigen::Index>(doc.length());
  switch (scheme.kind) {
    case CountKind::Identical:
      return Vector::Ones(J);
    case CountKind::AttentionFixed: {
      if (!scheme.fixed_length) {
        throw Error(ErrorKind::InvalidArgument, "AttentionFixed counts need a resolved sequence length");
      }
      const double length = *scheme.fixed_length;
      if (!(length > 0.0) || !std::isfinite(length)) {
        throw Error(ErrorKind::InvalidArgument, "AttentionFixed sequence length must be positive");
      }
      return length * doc.attention;
    }
    case CountKind::AttentionVariable: {
      const double mass = doc.attention.sum();
      if (!(mass > 0.0)) {
        throw Error(ErrorKind::ZeroAttentionMass, "document '" + doc.doc_id + "' has zero total attention");
      }
      return (static_cast<double>(J) / mass) * doc.attention;
    }
  }
  throw Error(ErrorKind::InvalidArgument, "unknown count scheme");
}

std::vector<Vector> compute_corpus_counts(const Corpus& corpus, const CountScheme& scheme) {
  const CountScheme resolved = resolve_scheme(scheme, corpus);
  std::vector<Vector> counts;
  counts.reserve(corpus.size());
  for (const auto& doc : corpus.documents()) counts.push_back(compute_counts(doc, resolved));
  return counts;
}

}  // namespace valc
