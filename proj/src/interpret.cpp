#include "valc/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "json.hpp"
#include "valc/error.hpp"

namespace valc {

std::string fold_case(const std::string& token) {
  std::string out = token;
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

WordTypeTable build_word_types(const Corpus& corpus) {
  std::map<std::string, std::pair<Vector, std::size_t>> acc;
  const auto d = static_cast<Eigen::Index>(corpus.dimension());
  for (const auto& doc : corpus.documents()) {
    for (std::size_t j = 0; j < doc.length(); ++j) {
      auto [it, fresh] = acc.try_emplace(fold_case(doc.tokens[j]), Vector::Zero(d), 0);
      it->second.first += doc.embeddings.row(static_cast<Eigen::Index>(j)).transpose();
      ++it->second.second;
    }
  }
  WordTypeTable table;
  table.means.resize(static_cast<Eigen::Index>(acc.size()), d);
  Eigen::Index row = 0;
  for (auto& [word, entry] : acc) {
    table.words.push_back(word);
    table.occurrences.push_back(entry.second);
    table.means.row(row++) = (entry.first / static_cast<double>(entry.second)).transpose();
  }
  return table;
}

std::vector<TopWord> top_words_for_concept(const WordTypeTable& table, const ConceptBank& bank, std::size_t k,
                                           std::size_t n) {
  if (table.words.empty()) throw Error(ErrorKind::EmptyCorpus, "no word types to rank");
  if (k >= bank.size()) throw Error(ErrorKind::InvalidArgument, "concept index out of range");
  if (static_cast<std::size_t>(table.means.cols()) != bank.dimension()) {
    throw Error(ErrorKind::DimensionMismatch, "word table and bank widths differ");
  }
  const Vector center = bank.mean(k);
  std::vector<TopWord> all;
  all.reserve(table.words.size());
  for (std::size_t i = 0; i < table.words.size(); ++i) {
    all.push_back({table.words[i], (table.means.row(static_cast<Eigen::Index>(i)).transpose() - center).norm()});
  }
  const std::size_t keep = std::min(n, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(),
                    [](const TopWord& a, const TopWord& b) {
                      return a.distance != b.distance ? a.distance < b.distance : a.word < b.word;
                    });
  all.resize(keep);
  return all;
}

std::vector<TopWord> top_words_for_concept(const Corpus& corpus, const ConceptBank& bank, std::size_t k,
                                           std::size_t n) {
  return top_words_for_concept(build_word_types(corpus), bank, k, n);
}

namespace {

double quantile_linear(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

}  // namespace

IdfResult concept_idf_filter(const std::vector<DocumentPosterior>& posteriors, double threshold_quantile,
                             std::size_t top) {
  if (posteriors.empty()) throw Error(ErrorKind::EmptyCorpus, "no posteriors for IDF filtering");
  if (!(threshold_quantile >= 0.0 && threshold_quantile <= 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "IDF quantile must be in [0, 1]");
  }
  if (top < 1) throw Error(ErrorKind::InvalidArgument, "top must be >= 1");
  const auto K = posteriors.front().phi.cols();
  IdfResult result;
  result.document_frequency = Vector::Zero(K);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(K));
  for (const auto& post : posteriors) {
    if (post.phi.cols() != K) throw Error(ErrorKind::DimensionMismatch, "posteriors disagree on K");
    std::vector<bool> present(static_cast<std::size_t>(K), false);
    const std::size_t take = std::min<std::size_t>(top, static_cast<std::size_t>(K));
    for (Eigen::Index j = 0; j < post.phi.rows(); ++j) {
      std::iota(order.begin(), order.end(), Eigen::Index{0});
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                        [&](Eigen::Index a, Eigen::Index b) {
                          return post.phi(j, a) != post.phi(j, b) ? post.phi(j, a) > post.phi(j, b) : a < b;
                        });
      for (std::size_t t = 0; t < take; ++t) present[static_cast<std::size_t>(order[t])] = true;
    }
    for (Eigen::Index k = 0; k < K; ++k) {
      if (present[static_cast<std::size_t>(k)]) result.document_frequency(k) += 1.0;
    }
  }
  const double M = static_cast<double>(posteriors.size());
  result.idf = (M / (1.0 + result.document_frequency.array())).log().matrix();
  std::vector<double> values(result.idf.data(), result.idf.data() + K);
  result.threshold = quantile_linear(values, threshold_quantile);
  for (Eigen::Index k = 0; k < K; ++k) {
    if (threshold_quantile == 0.0 || result.idf(k) > result.threshold) result.kept.push_back(static_cast<std::size_t>(k));
  }
  return result;
}

Projection pca_project(const RowMatrix& vectors, std::size_t dims, bool strict) {
  const auto n = vectors.rows();
  const auto d = vectors.cols();
  if (dims < 1) throw Error(ErrorKind::InvalidArgument, "dims must be >= 1");
  if (static_cast<std::size_t>(n) < dims) {
    throw Error(ErrorKind::InvalidArgument, "PCA needs at least dims vectors");
  }
  const auto D = static_cast<Eigen::Index>(dims);
  const RowMatrix centered = vectors.rowwise() - vectors.colwise().mean();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  const Vector values = eig.eigenvalues().reverse();
  const Matrix vecs = eig.eigenvectors().rowwise().reverse();
  const double total = std::max(0.0, cov.trace());
  const double floor = 1e-12 * std::max(values.size() > 0 ? values(0) : 0.0, 1e-300);

  Projection out;
  out.components = Matrix::Zero(d, D);
  out.explained_variance = Vector::Zero(D);
  out.explained_ratio = Vector::Zero(D);
  for (Eigen::Index c = 0; c < D; ++c) {
    if (c >= d || !(values(c) > floor)) {
      out.degenerate = true;
      continue;
    }
    Vector comp = vecs.col(c);
    Eigen::Index arg = 0;
    for (Eigen::Index i = 1; i < d; ++i) {
      if (std::fabs(comp(i)) > std::fabs(comp(arg))) arg = i;
    }
    if (comp(arg) < 0.0) comp = -comp;
    out.components.col(c) = comp;
    out.explained_variance(c) = values(c);
    out.explained_ratio(c) = total > 0.0 ? values(c) / total : 0.0;
  }
  if (out.degenerate && strict) {
    throw Error(ErrorKind::DegenerateSpread, "data spans fewer than " + std::to_string(dims) + " dimensions");
  }
  out.coordinates = centered * out.components;
  return out;
}

Vector quantize_simplex(const Vector& p, double scale) {
  const auto K = p.size();
  const double total = p.sum();
  if (!(total > 0.0)) throw Error(ErrorKind::InvalidValue, "cannot quantize a vector with zero mass");
  std::vector<long long> units(static_cast<std::size_t>(K));
  std::vector<std::pair<double, Eigen::Index>> remainders;
  long long assigned = 0;
  for (Eigen::Index k = 0; k < K; ++k) {
    const double exact = p(k) / total * scale;
    const double base = std::floor(exact);
    units[static_cast<std::size_t>(k)] = static_cast<long long>(base);
    assigned += static_cast<long long>(base);
    remainders.emplace_back(exact - base, k);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  auto missing = static_cast<long long>(std::llround(scale)) - assigned;
  for (std::size_t i = 0; missing > 0 && i < remainders.size(); ++i, --missing) {
    ++units[static_cast<std::size_t>(remainders[i].second)];
  }
  Vector out(K);
  for (Eigen::Index k = 0; k < K; ++k) out(k) = static_cast<double>(units[static_cast<std::size_t>(k)]) / scale;
  return out;
}

namespace {

std::string fixed9(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(9) << v;
  return os.str();
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoFailure, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error(ErrorKind::IoFailure, "failed writing " + path.string());
}

}  // namespace

void export_report(const Corpus& corpus, const std::vector<DocumentPosterior>& posteriors, const ConceptBank& bank,
                   const ReportOptions& options, const std::filesystem::path& out_dir) {
  if (posteriors.size() != corpus.size()) throw Error(ErrorKind::DimensionMismatch, "one posterior per document");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::IoFailure, "cannot create " + out_dir.string() + ": " + ec.message());

  const std::size_t K = bank.size();
  const WordTypeTable table = build_word_types(corpus);
  const IdfResult idf = concept_idf_filter(posteriors, options.idf_quantile, options.idf_top);
  std::vector<bool> kept(K, false);
  for (std::size_t k : idf.kept) kept[k] = true;

  nlohmann::ordered_json report;
  report["K"] = K;
  report["d"] = bank.dimension();
  report["M"] = corpus.size();
  report["idf_quantile"] = options.idf_quantile;
  report["idf_threshold"] = idf.threshold;
  auto concepts = nlohmann::ordered_json::array();
  std::vector<std::vector<TopWord>> tops(K);
  for (std::size_t k = 0; k < K; ++k) {
    tops[k] = top_words_for_concept(table, bank, k, options.top_words);
    nlohmann::ordered_json c;
    c["index"] = k;
    c["kept"] = kept[k];
    c["idf"] = idf.idf(static_cast<Eigen::Index>(k));
    c["document_frequency"] = idf.document_frequency(static_cast<Eigen::Index>(k));
    auto words = nlohmann::ordered_json::array();
    for (const auto& w : tops[k]) words.push_back({{"word", w.word}, {"distance", w.distance}});
    c["top_words"] = std::move(words);
    concepts.push_back(std::move(c));
  }
  report["concepts"] = std::move(concepts);

  std::string theta_csv = "doc_id";
  for (std::size_t k = 0; k < K; ++k) theta_csv += ",theta_" + std::to_string(k);
  theta_csv += "\n";
  auto documents = nlohmann::ordered_json::array();
  for (std::size_t m = 0; m < corpus.size(); ++m) {
    const auto& doc = corpus[m];
    const auto& post = posteriors[m];
    const Vector theta = quantize_simplex(post.theta());
    nlohmann::ordered_json dj;
    dj["doc_id"] = doc.doc_id;
    dj["theta"] = std::vector<double>(theta.data(), theta.data() + theta.size());
    theta_csv += csv_field(doc.doc_id);
    for (Eigen::Index k = 0; k < theta.size(); ++k) theta_csv += "," + fixed9(theta(k));
    theta_csv += "\n";
    auto tokens = nlohmann::ordered_json::array();
    for (Eigen::Index j = 0; j < post.phi.rows(); ++j) {
      const Vector phi = quantize_simplex(post.phi.row(j).transpose());
      Eigen::Index dominant = 0;
      post.phi.row(j).maxCoeff(&dominant);
      tokens.push_back({{"token", doc.tokens[static_cast<std::size_t>(j)]},
                        {"concept", dominant},
                        {"phi", std::vector<double>(phi.data(), phi.data() + phi.size())}});
    }
    dj["tokens"] = std::move(tokens);
    documents.push_back(std::move(dj));
  }
  report["documents"] = std::move(documents);

  // Top-word mean embeddings and concept centers share one projection.
  std::vector<std::tuple<std::string, std::size_t, std::string, double, Vector>> rows;
  std::map<std::string, Eigen::Index> word_row;
  for (std::size_t i = 0; i < table.words.size(); ++i) word_row[table.words[i]] = static_cast<Eigen::Index>(i);
  for (std::size_t k = 0; k < K; ++k) {
    if (!kept[k]) continue;
    rows.emplace_back("center", k, "", 0.0, bank.mean(k));
    for (const auto& w : tops[k]) rows.emplace_back("word", k, w.word, w.distance, table.means.row(word_row[w.word]).transpose());
  }
  std::string projection_csv = "kind,concept,word,distance,pc1,pc2\n";
  if (rows.size() >= 2) {
    RowMatrix points(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(bank.dimension()));
    for (std::size_t i = 0; i < rows.size(); ++i) points.row(static_cast<Eigen::Index>(i)) = std::get<4>(rows[i]).transpose();
    const Projection proj = pca_project(points, 2);
    report["projection_explained_ratio"] =
        std::vector<double>(proj.explained_ratio.data(), proj.explained_ratio.data() + proj.explained_ratio.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      projection_csv += std::get<0>(rows[i]) + "," + std::to_string(std::get<1>(rows[i])) + "," +
                        csv_field(std::get<2>(rows[i])) + "," + fixed9(std::get<3>(rows[i])) + "," +
                        fixed9(proj.coordinates(r, 0)) + "," + fixed9(proj.coordinates(r, 1)) + "\n";
    }
  }

  write_text(out_dir / "report.json", report.dump(2) + "\n");
  write_text(out_dir / "theta.csv", theta_csv);
  write_text(out_dir / "projection.csv", projection_csv);
}

}  // namespace valc
