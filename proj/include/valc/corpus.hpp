#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "valc/types.hpp"

namespace valc {

/// One document's contextual embeddings and head-averaged CLS attention.
///
/// Rows of `embeddings` align with `tokens` and `attention`. Special tokens
/// and padding are excluded; every stored row is a real token.
struct EmbeddedDocument {
  std::string doc_id;
  std::vector<std::string> tokens;
  RowMatrix embeddings;  // J x d
  Vector attention;      // J
  std::optional<Vector> cls_embedding;
  std::optional<std::int32_t> label;

  std::size_t length() const noexcept { return tokens.size(); }
  std::size_t dimension() const noexcept { return static_cast<std::size_t>(embeddings.cols()); }
};

/// Throws valc::Error when `doc` violates the document invariants for width `dimension`.
void validate_document(const EmbeddedDocument& doc, std::size_t dimension);

/// Immutable, validated collection of embedded documents sharing one width.
class Corpus {
 public:
  using Metadata = std::map<std::string, std::string>;

  Corpus(std::size_t dimension, std::vector<EmbeddedDocument> documents, Metadata metadata = {});

  std::size_t dimension() const noexcept { return dimension_; }
  std::size_t size() const noexcept { return documents_.size(); }
  const std::vector<EmbeddedDocument>& documents() const noexcept { return documents_; }
  const EmbeddedDocument& operator[](std::size_t m) const { return documents_[m]; }
  const Metadata& metadata() const noexcept { return metadata_; }

  std::size_t total_tokens() const noexcept;
  bool has_labels() const noexcept;

  /// Corpus restricted to the given document indices, in the given order.
  Corpus subset(const std::vector<std::size_t>& indices) const;

 private:
  std::size_t dimension_;
  std::vector<EmbeddedDocument> documents_;
  Metadata metadata_;
};

// VALC1 binary format, little-endian:
//   "VALC1" | u32 version=1 | u32 d | u32 M | u32 n_meta | n_meta x (str key, str value)
//   M x record: str doc_id | u32 J | u8 has_cls | u8 has_label | J x str token
//               | J*d f32 embeddings (row-major) | J f32 attention
//               | [d f32 cls] | [i32 label]
// where str = u32 byte length followed by UTF-8 bytes.
inline constexpr char kCorpusMagic[5] = {'V', 'A', 'L', 'C', '1'};
inline constexpr std::uint32_t kCorpusVersion = 1;

Corpus read_corpus(std::istream& in);
void write_corpus(const Corpus& corpus, std::ostream& out);

Corpus read_corpus_file(const std::filesystem::path& path);
void write_corpus_file(const Corpus& corpus, const std::filesystem::path& path);

}  // namespace valc
