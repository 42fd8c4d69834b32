#include "valc/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "binary_io.hpp"
#include "valc/error.hpp"

namespace valc {

namespace detail {

bool is_valid_utf8(std::string_view s) noexcept {
  std::size_t i = 0;
  while (i < s.size()) {
    auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Reject overlong encodings, surrogates and out-of-range code points.
    if ((extra == 1 && cp < 0x80) || (extra == 2 && cp < 0x800) || (extra == 3 && cp < 0x10000) ||
        (cp >= 0xD800 && cp <= 0xDFFF) || cp > 0x10FFFF) {
      return false;
    }
    i += extra + 1;
  }
  return true;
}

}  // namespace detail

namespace {

std::string doc_context(const EmbeddedDocument& doc) { return "document '" + doc.doc_id + "'"; }

}  // namespace

void validate_document(const EmbeddedDocument& doc, std::size_t dimension) {
  const std::size_t J = doc.tokens.size();
  if (J == 0) throw Error(ErrorKind::InvalidValue, doc_context(doc) + " has no tokens");
  if (static_cast<std::size_t>(doc.embeddings.rows()) != J) {
    throw Error(ErrorKind::DimensionMismatch, doc_context(doc) + ": embedding row count != token count");
  }
  if (static_cast<std::size_t>(doc.attention.size()) != J) {
    throw Error(ErrorKind::DimensionMismatch, doc_context(doc) + ": attention length != token count");
  }
  if (static_cast<std::size_t>(doc.embeddings.cols()) != dimension) {
    throw Error(ErrorKind::DimensionMismatch, doc_context(doc) + ": embedding width " +
                                                  std::to_string(doc.embeddings.cols()) + " != corpus dimension " +
                                                  std::to_string(dimension));
  }
  if (!doc.embeddings.allFinite()) throw Error(ErrorKind::NonFiniteValue, doc_context(doc) + ": non-finite embedding");
  if (!doc.attention.allFinite()) throw Error(ErrorKind::NonFiniteValue, doc_context(doc) + ": non-finite attention");
  if ((doc.attention.array() < 0.0).any()) {
    throw Error(ErrorKind::InvalidValue, doc_context(doc) + ": negative attention weight");
  }
  if (doc.cls_embedding) {
    if (static_cast<std::size_t>(doc.cls_embedding->size()) != dimension) {
      throw Error(ErrorKind::DimensionMismatch, doc_context(doc) + ": CLS width != corpus dimension");
    }
    if (!doc.cls_embedding->allFinite()) {
      throw Error(ErrorKind::NonFiniteValue, doc_context(doc) + ": non-finite CLS embedding");
    }
  }
}

Corpus::Corpus(std::size_t dimension, std::vector<EmbeddedDocument> documents, Metadata metadata)
    : dimension_(dimension), documents_(std::move(documents)), metadata_(std::move(metadata)) {
  if (dimension_ == 0) throw Error(ErrorKind::InvalidValue, "corpus dimension must be >= 1");
  if (documents_.empty()) throw Error(ErrorKind::EmptyCorpus, "corpus must contain at least one document");
  for (const auto& doc : documents_) validate_document(doc, dimension_);
}

std::size_t Corpus::total_tokens() const noexcept {
  std::size_t n = 0;
  for (const auto& doc : documents_) n += doc.length();
  return n;
}

bool Corpus::has_labels() const noexcept {
  return std::all_of(documents_.begin(), documents_.end(), [](const auto& d) { return d.label.has_value(); });
}

Corpus Corpus::subset(const std::vector<std::size_t>& indices) const {
  std::vector<EmbeddedDocument> docs;
  docs.reserve(indices.size());
  for (std::size_t m : indices) docs.push_back(documents_.at(m));
  return Corpus(dimension_, std::move(docs), metadata_);
}

namespace {

using detail::ByteReader;
using detail::ByteWriter;

std::string checked_utf8(ByteReader& r, const char* what) {
  std::string s = r.str(what);
  if (!detail::is_valid_utf8(s)) throw Error(ErrorKind::InvalidValue, std::string(what) + " is not valid UTF-8");
  return s;
}

double checked_f32(ByteReader& r, const char* what) {
  float v = r.f32(what);
  if (!std::isfinite(v)) throw Error(ErrorKind::NonFiniteValue, std::string("non-finite ") + what);
  return static_cast<double>(v);
}

EmbeddedDocument read_record(ByteReader& r, std::size_t d) {
  EmbeddedDocument doc;
  doc.doc_id = checked_utf8(r, "doc_id");
  const std::uint32_t J = r.u32("token count");
  const std::uint8_t has_cls = r.u8("has_cls flag");
  const std::uint8_t has_label = r.u8("has_label flag");
  if (has_cls > 1 || has_label > 1) throw Error(ErrorKind::InvalidValue, "flag byte must be 0 or 1");
  if (J == 0) throw Error(ErrorKind::InvalidValue, "document '" + doc.doc_id + "' has no tokens");
  // A record needs at least 4 bytes per token prefix plus its floats; reject absurd counts early.
  if (static_cast<std::size_t>(J) > r.remaining() / 4) {
    throw Error(ErrorKind::TruncatedRecord, "token count exceeds remaining stream");
  }
  doc.tokens.reserve(J);
  for (std::uint32_t j = 0; j < J; ++j) doc.tokens.push_back(checked_utf8(r, "token"));
  if (static_cast<std::size_t>(J) * d > r.remaining() / 4) {
    throw Error(ErrorKind::TruncatedRecord, "stream ended while reading embeddings");
  }
  doc.embeddings.resize(J, static_cast<Eigen::Index>(d));
  for (std::uint32_t j = 0; j < J; ++j) {
    for (std::size_t c = 0; c < d; ++c) doc.embeddings(j, static_cast<Eigen::Index>(c)) = checked_f32(r, "embedding");
  }
  doc.attention.resize(J);
  for (std::uint32_t j = 0; j < J; ++j) doc.attention(j) = checked_f32(r, "attention");
  if (has_cls) {
    Vector cls(static_cast<Eigen::Index>(d));
    for (std::size_t c = 0; c < d; ++c) cls(static_cast<Eigen::Index>(c)) = checked_f32(r, "CLS embedding");
    doc.cls_embedding = std::move(cls);
  }
  if (has_label) doc.label = r.i32("label");
  validate_document(doc, d);
  return doc;
}

bool parses_to_end(std::string_view bytes, std::size_t offset, std::size_t d, std::size_t records) {
  try {
    ByteReader r(bytes, offset);
    for (std::size_t i = 0; i < records; ++i) read_record(r, d);
    return r.at_end();
  } catch (const Error&) {
    return false;
  }
}

// Looks for records whose rows are not `d` wide: either the whole stream parses with one
// other width, or one record re-parses with another width and every following record
// parses with `d` up to the end of the stream.
void diagnose_width(std::string_view bytes, const std::vector<std::size_t>& starts, std::size_t d,
                    std::size_t total_records) {
  const std::size_t max_width = 4 * d + 16;
  if (starts.empty()) return;
  for (std::size_t w = 1; w <= max_width; ++w) {
    if (w != d && parses_to_end(bytes, starts.front(), w, total_records)) {
      throw Error(ErrorKind::DimensionMismatch, "records have embedding width " + std::to_string(w) +
                                                    " but header declares d=" + std::to_string(d));
    }
  }
  for (std::size_t i = 0; i < starts.size(); ++i) {
    for (std::size_t w = 1; w <= max_width; ++w) {
      if (w == d) continue;
      try {
        ByteReader r(bytes, starts[i]);
        EmbeddedDocument doc = read_record(r, w);
        if (parses_to_end(bytes, r.offset(), d, total_records - i - 1)) {
          throw Error(ErrorKind::DimensionMismatch, "document '" + doc.doc_id + "' (record " + std::to_string(i) +
                                                        ") has embedding width " + std::to_string(w) +
                                                        " but header declares d=" + std::to_string(d));
        }
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::DimensionMismatch) throw;
      }
    }
  }
}

}  // namespace

Corpus read_corpus(std::istream& in) {
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorKind::IoFailure, "failed reading corpus stream");
  ByteReader r(bytes);
  if (r.remaining() < sizeof(kCorpusMagic) ||
      std::string_view(bytes.data(), sizeof(kCorpusMagic)) != std::string_view(kCorpusMagic, sizeof(kCorpusMagic))) {
    throw Error(ErrorKind::BadMagic, "stream does not start with VALC1");
  }
  r.take(sizeof(kCorpusMagic), "magic");
  const std::uint32_t version = r.u32("version");
  if (version != kCorpusVersion) {
    throw Error(ErrorKind::UnsupportedVersion, "corpus version " + std::to_string(version));
  }
  const std::size_t d = r.u32("dimension");
  const std::size_t M = r.u32("document count");
  if (d == 0) throw Error(ErrorKind::InvalidValue, "corpus dimension must be >= 1");
  if (M == 0) throw Error(ErrorKind::EmptyCorpus, "corpus must contain at least one document");

  Corpus::Metadata metadata;
  const std::uint32_t n_meta = r.u32("metadata count");
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string key = checked_utf8(r, "metadata key");
    std::string value = checked_utf8(r, "metadata value");
    if (!metadata.emplace(std::move(key), std::move(value)).second) {
      throw Error(ErrorKind::InvalidValue, "duplicate metadata key");
    }
  }

  std::vector<EmbeddedDocument> docs;
  std::vector<std::size_t> starts;
  docs.reserve(std::min<std::size_t>(M, 1u << 20));
  try {
    for (std::size_t m = 0; m < M; ++m) {
      starts.push_back(r.offset());
      docs.push_back(read_record(r, d));
    }
    if (!r.at_end()) throw Error(ErrorKind::TrailingData, "bytes remain after the last record");
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::DimensionMismatch) {
      diagnose_width(bytes, starts, d, M);
    }
    throw;
  }
  return Corpus(d, std::move(docs), std::move(metadata));
}

void write_corpus(const Corpus& corpus, std::ostream& out) {
  ByteWriter w;
  w.raw(std::string_view(kCorpusMagic, sizeof(kCorpusMagic)));
  w.u32(kCorpusVersion);
  w.u32(static_cast<std::uint32_t>(corpus.dimension()));
  w.u32(static_cast<std::uint32_t>(corpus.size()));
  w.u32(static_cast<std::uint32_t>(corpus.metadata().size()));
  for (const auto& [key, value] : corpus.metadata()) {
    w.str(key);
    w.str(value);
  }
  for (const auto& doc : corpus.documents()) {
    validate_document(doc, corpus.dimension());
    w.str(doc.doc_id);
    w.u32(static_cast<std::uint32_t>(doc.length()));
    w.u8(doc.cls_embedding ? 1 : 0);
    w.u8(doc.label ? 1 : 0);
    for (const auto& t : doc.tokens) w.str(t);
    for (Eigen::Index j = 0; j < doc.embeddings.rows(); ++j) {
      for (Eigen::Index c = 0; c < doc.embeddings.cols(); ++c) w.f32(doc.embeddings(j, c), "embedding");
    }
    for (Eigen::Index j = 0; j < doc.attention.size(); ++j) w.f32(doc.attention(j), "attention");
    if (doc.cls_embedding) {
      for (Eigen::Index c = 0; c < doc.cls_embedding->size(); ++c) w.f32((*doc.cls_embedding)(c), "CLS embedding");
    }
    if (doc.label) w.i32(*doc.label);
  }
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw Error(ErrorKind::IoFailure, "failed writing corpus stream");
}

Corpus read_corpus_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot open corpus file " + path.string());
  return read_corpus(in);
}

void write_corpus_file(const Corpus& corpus, const std::filesystem::path& path) {
  std::ostringstream buffer;
  write_corpus(corpus, buffer);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoFailure, "cannot open " + path.string() + " for writing");
  const std::string bytes = buffer.str();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::IoFailure, "failed writing " + path.string());
}

}  // namespace valc
