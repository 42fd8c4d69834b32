#include "valc/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "valc/concept_bank.hpp"
#include "valc/corpus.hpp"
#include "valc/counts.hpp"
#include "valc/editing.hpp"
#include "valc/error.hpp"
#include "valc/inference.hpp"
#include "valc/interpret.hpp"
#include "valc/learning.hpp"
#include "valc/parallel.hpp"
#include "valc/synth.hpp"

namespace valc::cli {

namespace {

using json = nlohmann::ordered_json;

struct Field {
  std::function<void(RunConfig&, const json&)> read;
  std::function<json(const RunConfig&)> write;
};

template <typename T>
Field field(T RunConfig::*member) {
  return {[member](RunConfig& c, const json& v) {
            if constexpr (std::is_same_v<T, std::string>) {
              if (!v.is_string()) throw std::invalid_argument("expected a string");
            } else if constexpr (std::is_same_v<T, std::vector<double>>) {
              if (!v.is_array()) throw std::invalid_argument("expected an array of numbers");
              for (const auto& x : v) {
                if (!x.is_number()) throw std::invalid_argument("expected an array of numbers");
              }
            } else if constexpr (std::is_floating_point_v<T>) {
              if (!v.is_number()) throw std::invalid_argument("expected a number");
            } else {
              if (!v.is_number_unsigned()) throw std::invalid_argument("expected a non-negative integer");
            }
            c.*member = v.get<T>();
          },
          [member](const RunConfig& c) { return json(c.*member); }};
}

const std::vector<std::pair<std::string, Field>>& schema() {
  static const std::vector<std::pair<std::string, Field>> fields{
      {"corpus", field(&RunConfig::corpus)},
      {"model", field(&RunConfig::model)},
      {"out", field(&RunConfig::out)},
      {"classifier_corpus", field(&RunConfig::classifier_corpus)},
      {"threads", field(&RunConfig::threads)},
      {"seed", field(&RunConfig::seed)},
      {"counts", field(&RunConfig::counts)},
      {"phi_mode", field(&RunConfig::phi_mode)},
      {"tol", field(&RunConfig::tol)},
      {"max_iters", field(&RunConfig::max_iters)},
      {"alpha", field(&RunConfig::alpha)},
      {"k", field(&RunConfig::k)},
      {"epochs", field(&RunConfig::epochs)},
      {"cov", field(&RunConfig::cov)},
      {"mstep", field(&RunConfig::mstep)},
      {"ema", field(&RunConfig::ema)},
      {"batch", field(&RunConfig::batch)},
      {"scheme", field(&RunConfig::scheme)},
      {"omega_grid", field(&RunConfig::omega_grid)},
      {"pathway", field(&RunConfig::pathway)},
      {"top", field(&RunConfig::top)},
      {"idf_quantile", field(&RunConfig::idf_quantile)},
      {"d", field(&RunConfig::d)},
      {"docs", field(&RunConfig::docs)},
      {"seeds", field(&RunConfig::seeds)},
      {"separation", field(&RunConfig::separation)},
      {"stop_inflation", field(&RunConfig::stop_inflation)},
      {"attention_ratio", field(&RunConfig::attention_ratio)},
      {"tokens", field(&RunConfig::tokens)},
      {"stop_tokens", field(&RunConfig::stop_tokens)},
  };
  return fields;
}

}  // namespace

void apply_config_json(RunConfig& config, const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::InvalidArgument, std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw Error(ErrorKind::InvalidArgument, "config must be a JSON object");
  const auto& fields = schema();
  for (const auto& [key, value] : doc.items()) {
    const auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return f.first == key; });
    if (it == fields.end()) throw Error(ErrorKind::InvalidArgument, "unknown config key '" + key + "'");
    try {
      it->second.read(config, value);
    } catch (const std::exception& e) {
      throw Error(ErrorKind::InvalidArgument, "config key '" + key + "': " + e.what());
    }
  }
}

std::string config_to_json(const RunConfig& config) {
  json doc = json::object();
  for (const auto& [key, f] : schema()) doc[key] = f.write(config);
  return doc.dump();
}

namespace {

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw Error(ErrorKind::InvalidArgument, std::string("missing required ") + flag);
}

InferenceOptions inference_options(const RunConfig& c) {
  if (!(c.tol > 0.0)) throw Error(ErrorKind::InvalidArgument, "--tol must be positive");
  if (c.max_iters < 1) throw Error(ErrorKind::InvalidArgument, "--max-iters must be >= 1");
  InferenceOptions opts;
  opts.phi_mode = parse_phi_mode(c.phi_mode);
  opts.tol = c.tol;
  opts.max_iters = c.max_iters;
  return opts;
}

std::optional<CovarianceMode> covariance_option(const RunConfig& c) {
  if (c.cov == "auto") return std::nullopt;
  return parse_covariance_mode(c.cov);
}

EditTarget parse_pathway(const std::string& text) {
  if (text == "document") return EditTarget::DocumentLevel;
  if (text == "word") return EditTarget::WordLevel;
  throw Error(ErrorKind::InvalidArgument, "unknown pathway '" + text + "' (expected document|word)");
}

std::vector<EditScheme> parse_schemes(const std::string& text) {
  if (text == "all") return {EditScheme::Random, EditScheme::Unweighted, EditScheme::Weighted};
  std::vector<EditScheme> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_edit_scheme(item));
  if (out.empty()) throw Error(ErrorKind::InvalidArgument, "--scheme needs at least one scheme");
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::IoFailure, "cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw Error(ErrorKind::IoFailure, "failed writing '" + path + "'");
}

void check_dimensions(const Corpus& corpus, const ConceptBank& bank) {
  if (corpus.dimension() != bank.dimension()) {
    throw Error(ErrorKind::DimensionMismatch, "corpus width " + std::to_string(corpus.dimension()) +
                                                  " != bank width " + std::to_string(bank.dimension()));
  }
}

json vector_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

std::string joined(const std::vector<double>& values) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < values.size(); ++i) os << (i ? "," : "") << values[i];
  return os.str();
}

int cmd_train(const RunConfig& c, std::ostream& out, std::ostream& err) {
  require(c.corpus, "--corpus");
  require(c.out, "--out");
  const Corpus corpus = read_corpus_file(c.corpus);
  TrainerConfig t;
  t.K = c.k;
  t.epochs = c.epochs;
  t.alpha = c.alpha;
  t.counts = parse_count_scheme(c.counts);
  t.covariance = covariance_option(c);
  t.mstep = parse_mstep(c.mstep);
  t.batch_size = c.batch;
  t.rho = c.ema;
  t.inference = inference_options(c);
  t.seed = c.seed;
  t.threads = resolve_threads(c.threads);
  const TrainingResult result = train(corpus, t);
  for (const auto& e : result.events) err << e << "\n";
  write_bank_file(result.bank, c.out, result.concept_weights);
  out << "elbo_trace: " << joined(result.elbo_trace) << "\n";
  out << "wrote " << c.out << " (K=" << result.bank.size() << ", d=" << result.bank.dimension() << ")\n";
  return 0;
}

int cmd_infer(const RunConfig& c, std::ostream& out, std::ostream&) {
  require(c.model, "--model");
  require(c.corpus, "--corpus");
  require(c.out, "--out");
  const ConceptBank bank = read_bank_file(c.model);
  const Corpus corpus = read_corpus_file(c.corpus);
  check_dimensions(corpus, bank);
  const CountScheme scheme = resolve_scheme(parse_count_scheme(c.counts), corpus);
  const auto counts = compute_corpus_counts(corpus, scheme);
  const Vector alpha = Vector::Constant(static_cast<Eigen::Index>(bank.size()), c.alpha);
  const InferenceOptions opts = inference_options(c);
  const auto posts = infer_corpus(corpus, counts, bank, alpha, opts, resolve_threads(c.threads));

  json report;
  report["K"] = bank.size();
  report["d"] = bank.dimension();
  report["M"] = corpus.size();
  report["counts"] = to_string(scheme);
  report["phi_mode"] = to_string(opts.phi_mode);
  json docs = json::array();
  std::size_t converged = 0;
  for (std::size_t m = 0; m < corpus.size(); ++m) {
    const auto& doc = corpus[m];
    const auto& post = posts[m];
    converged += post.converged ? 1 : 0;
    json d;
    d["doc_id"] = doc.doc_id;
    d["theta"] = vector_json(quantize_simplex(post.theta()));
    d["gamma"] = vector_json(post.gamma);
    d["iterations"] = post.iterations;
    d["converged"] = post.converged;
    json tokens = json::array();
    for (std::size_t j = 0; j < doc.length(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      tokens.push_back({{"token", doc.tokens[j]},
                        {"count", counts[m](jj)},
                        {"phi", vector_json(quantize_simplex(post.phi.row(jj).transpose()))}});
    }
    d["tokens"] = std::move(tokens);
    docs.push_back(std::move(d));
  }
  report["documents"] = std::move(docs);
  write_text(c.out, report.dump(2) + "\n");
  out << "inferred " << corpus.size() << " documents (" << converged << " converged); wrote " << c.out << "\n";
  return 0;
}

int cmd_edit(const RunConfig& c, std::ostream& out, std::ostream&) {
  require(c.model, "--model");
  require(c.corpus, "--corpus");
  const ConceptBank bank = read_bank_file(c.model);
  const Corpus corpus = read_corpus_file(c.corpus);
  check_dimensions(corpus, bank);
  EditEvalOptions opts;
  opts.pathway = parse_pathway(c.pathway);
  opts.omega_grid = c.omega_grid;
  opts.seed = c.seed;
  opts.threads = resolve_threads(c.threads);
  const auto schemes = parse_schemes(c.scheme);

  const Corpus train_corpus = c.classifier_corpus.empty() ? corpus : read_corpus_file(c.classifier_corpus);
  check_dimensions(train_corpus, bank);
  RowMatrix features(static_cast<Eigen::Index>(train_corpus.size()), static_cast<Eigen::Index>(bank.dimension()));
  std::vector<std::int32_t> labels;
  for (std::size_t m = 0; m < train_corpus.size(); ++m) {
    const auto& doc = train_corpus[m];
    if (!doc.label) throw Error(ErrorKind::MissingLabel, "document '" + doc.doc_id + "' has no label");
    features.row(static_cast<Eigen::Index>(m)) = document_features(doc, opts.pathway).transpose();
    labels.push_back(*doc.label);
  }
  LogisticOptions lo;
  lo.seed = c.seed;
  const LogisticClassifier clf = LogisticClassifier::fit(features, labels, lo);
  const EditEvalResult result = greedy_edit_eval(corpus, bank, clf, schemes, opts);

  json report;
  report["pathway"] = c.pathway;
  report["validation_size"] = result.validation_size;
  report["test_size"] = result.test_size;
  report["unedited_accuracy"] = result.unedited_accuracy;
  json curve = json::array();
  for (const auto& [omega, acc] : result.validation_curve) curve.push_back({{"omega", omega}, {"accuracy", acc}});
  report["validation_curve"] = std::move(curve);
  json outcomes = json::array();
  for (const auto& o : result.outcomes) {
    outcomes.push_back({{"scheme", to_string(o.scheme)}, {"accuracy", o.accuracy}, {"gain", o.gain}, {"omega", o.omega}});
  }
  report["schemes"] = std::move(outcomes);
  const std::string text = report.dump(2) + "\n";
  if (c.out.empty()) {
    out << text;
  } else {
    write_text(c.out, text);
    out << "wrote " << c.out << "\n";
  }
  return 0;
}

int cmd_topics(const RunConfig& c, std::ostream& out, std::ostream&) {
  require(c.model, "--model");
  require(c.corpus, "--corpus");
  require(c.out, "--out");
  const ConceptBank bank = read_bank_file(c.model);
  const Corpus corpus = read_corpus_file(c.corpus);
  check_dimensions(corpus, bank);
  const auto counts = compute_corpus_counts(corpus, parse_count_scheme(c.counts));
  const Vector alpha = Vector::Constant(static_cast<Eigen::Index>(bank.size()), c.alpha);
  const auto posts = infer_corpus(corpus, counts, bank, alpha, inference_options(c), resolve_threads(c.threads));
  ReportOptions ro;
  ro.top_words = c.top;
  ro.idf_quantile = c.idf_quantile;
  std::filesystem::create_directories(c.out);
  export_report(corpus, posts, bank, ro, c.out);
  out << "wrote report.json, theta.csv and projection.csv to " << c.out << "\n";
  return 0;
}

PlantedOptions planted_options(const RunConfig& c) {
  PlantedOptions po;
  po.K = c.k;
  po.d = c.d;
  po.separation = c.separation;
  po.stop_inflation = c.stop_inflation;
  po.attention_ratio = c.attention_ratio;
  po.tokens_per_doc = c.tokens;
  po.stop_tokens_per_doc = c.stop_tokens;
  return po;
}

int cmd_synth_validate(const RunConfig& c, std::ostream& out, std::ostream&) {
  if (c.seeds < 10) throw Error(ErrorKind::InvalidArgument, "--seeds must be >= 10");
  const PlantedSpec spec = make_planted_spec(planted_options(c), c.seed);
  OrderingCheckOptions opts;
  opts.epochs = c.epochs;
  opts.threads = resolve_threads(c.threads);
  opts.inference = inference_options(c);
  opts.covariance = covariance_option(c);
  std::vector<std::uint64_t> seeds(c.seeds);
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = c.seed + i;
  const OrderingCheckResult result = ordering_check(spec, c.docs, seeds, opts);

  json report;
  report["K"] = spec.K();
  report["d"] = spec.dimension();
  report["docs"] = c.docs;
  report["separation_ratio"] = spec.separation_ratio();
  report["stop_inflation"] = c.stop_inflation;
  report["attention_ratio"] = c.attention_ratio;
  report["tolerance"] = opts.tolerance;
  json rows = json::array();
  for (const auto& s : result.seeds) {
    rows.push_back({{"seed", s.seed},
                    {"identical", s.identical},
                    {"attention", s.attention},
                    {"ground_truth", s.ground_truth},
                    {"holds", s.holds}});
  }
  report["seeds"] = std::move(rows);
  report["fraction"] = result.fraction;
  const std::string text = report.dump(2) + "\n";
  if (c.out.empty()) {
    out << text;
  } else {
    write_text(c.out, text);
  }
  out << "ordering fraction: " << result.fraction << " over " << result.seeds.size() << " seeds\n";
  return 0;
}

int cmd_synth_corpus(const RunConfig& c, std::ostream& out, std::ostream&) {
  require(c.out, "--out");
  const PlantedSpec spec = make_planted_spec(planted_options(c), c.seed);
  const PlantedCorpus planted = generate_corpus(spec, c.docs, c.seed);
  write_corpus_file(planted.corpus, c.out);
  if (!c.model.empty()) write_bank_file(planted_bank(spec, covariance_option(c).value_or(CovarianceMode::Full)), c.model);
  out << "wrote " << planted.corpus.size() << " documents to " << c.out << "\n";
  return 0;
}

std::optional<std::string> find_config_path(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw Error(ErrorKind::InvalidArgument, "--config needs a path");
      return args[i + 1];
    }
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  return std::nullopt;
}

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::IoFailure, "cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

enum class Opt {
  Corpus, Model, Out, ClassifierCorpus, Counts, Phi, Tol, MaxIters, Alpha, K, Epochs, Cov, Mstep, Ema, Batch,
  Scheme, OmegaGrid, Pathway, Top, IdfQuantile, D, Docs, Seeds, Separation, Inflation, Ratio, Tokens, StopTokens
};

void add_options(CLI::App* sub, RunConfig& c, std::string& config_path, std::initializer_list<Opt> wanted) {
  sub->add_option("--config", config_path, "JSON config file; flags override its keys");
  sub->add_option("--threads", c.threads, "worker threads (0 = available parallelism, 1 = serial)")->capture_default_str();
  sub->add_option("--seed", c.seed, "random seed")->capture_default_str();
  for (Opt o : wanted) {
    switch (o) {
      case Opt::Corpus: sub->add_option("--corpus", c.corpus, "VALC1 corpus file"); break;
      case Opt::Model: sub->add_option("--model", c.model, "VALB1 concept bank file"); break;
      case Opt::Out: sub->add_option("--out", c.out, "output path"); break;
      case Opt::ClassifierCorpus:
        sub->add_option("--classifier-corpus", c.classifier_corpus, "labeled corpus for fitting the classifier (default: --corpus)");
        break;
      case Opt::Counts:
        sub->add_option("--counts", c.counts, "count scheme: identical|fixed[:<J'>]|variable")->capture_default_str();
        break;
      case Opt::Phi:
        sub->add_option("--phi-mode", c.phi_mode, "responsibility mode: derived|literal (default derived; literal for synth-validate)");
        break;
      case Opt::Tol: sub->add_option("--tol", c.tol, "relative gamma convergence tolerance")->capture_default_str(); break;
      case Opt::MaxIters: sub->add_option("--max-iters", c.max_iters, "inference iteration cap")->capture_default_str(); break;
      case Opt::Alpha: sub->add_option("--alpha", c.alpha, "symmetric Dirichlet prior")->capture_default_str(); break;
      case Opt::K: sub->add_option("--k", c.k, "number of concepts")->capture_default_str(); break;
      case Opt::Epochs: sub->add_option("--epochs", c.epochs, "training epochs")->capture_default_str(); break;
      case Opt::Cov: sub->add_option("--cov", c.cov, "covariance: auto|full|diag (auto = full for d <= 64)")->capture_default_str(); break;
      case Opt::Mstep: sub->add_option("--mstep", c.mstep, "concept update: mle|niw")->capture_default_str(); break;
      case Opt::Ema: sub->add_option("--ema", c.ema, "EMA decay for minibatch training")->capture_default_str(); break;
      case Opt::Batch: sub->add_option("--batch", c.batch, "minibatch size (0 = full batch)")->capture_default_str(); break;
      case Opt::Scheme: sub->add_option("--scheme", c.scheme, "all or a list of random,unweighted,weighted")->capture_default_str(); break;
      case Opt::OmegaGrid:
        sub->add_option("--omega-grid", c.omega_grid, "comma-separated edit scales")->delimiter(',')->capture_default_str();
        break;
      case Opt::Pathway: sub->add_option("--pathway", c.pathway, "edit pathway: document|word")->capture_default_str(); break;
      case Opt::Top: sub->add_option("--top", c.top, "top words per concept")->capture_default_str(); break;
      case Opt::IdfQuantile: sub->add_option("--idf-quantile", c.idf_quantile, "concept IDF quantile filter")->capture_default_str(); break;
      case Opt::D: sub->add_option("--d", c.d, "embedding width")->capture_default_str(); break;
      case Opt::Docs: sub->add_option("--docs", c.docs, "documents per corpus")->capture_default_str(); break;
      case Opt::Seeds: sub->add_option("--seeds", c.seeds, "number of seeds")->capture_default_str(); break;
      case Opt::Separation: sub->add_option("--separation", c.separation, "minimum mean distance in sigmas")->capture_default_str(); break;
      case Opt::Inflation: sub->add_option("--stop-inflation", c.stop_inflation, "stop cluster variance factor")->capture_default_str(); break;
      case Opt::Ratio: sub->add_option("--attention-ratio", c.attention_ratio, "stop over content attention")->capture_default_str(); break;
      case Opt::Tokens: sub->add_option("--tokens", c.tokens, "content tokens per document")->capture_default_str(); break;
      case Opt::StopTokens: sub->add_option("--stop-tokens", c.stop_tokens, "stop tokens per document")->capture_default_str(); break;
    }
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig config;
  if (!args.empty() && args.front().starts_with("synth-")) config.k = 5;
  try {
    if (const auto path = find_config_path(args)) apply_config_json(config, read_text(*path));
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(category(e.kind()));
  }

  CLI::App app{"Multi-level concept inference and editing over contextual embeddings", "valc"};
  app.require_subcommand(1);
  std::string config_path;
  using O = Opt;
  auto* train = app.add_subcommand("train", "fit a concept bank to a corpus");
  add_options(train, config, config_path,
              {O::Corpus, O::Out, O::Counts, O::Phi, O::Tol, O::MaxIters, O::Alpha, O::K, O::Epochs, O::Cov, O::Mstep,
               O::Ema, O::Batch});
  auto* infer = app.add_subcommand("infer", "infer document and word concepts with a fixed bank");
  add_options(infer, config, config_path, {O::Model, O::Corpus, O::Out, O::Counts, O::Phi, O::Tol, O::MaxIters, O::Alpha});
  auto* edit = app.add_subcommand("edit", "evaluate greedy concept editing schemes");
  add_options(edit, config, config_path, {O::Corpus, O::Model, O::Out, O::ClassifierCorpus, O::Scheme, O::OmegaGrid, O::Pathway});
  auto* topics = app.add_subcommand("topics", "export top words, theta tables and projections");
  add_options(topics, config, config_path,
              {O::Model, O::Corpus, O::Out, O::Counts, O::Phi, O::Tol, O::MaxIters, O::Alpha, O::Top, O::IdfQuantile});
  auto* validate = app.add_subcommand("synth-validate", "check the weight-configuration ordering on planted corpora");
  add_options(validate, config, config_path,
              {O::Out, O::K, O::D, O::Docs, O::Seeds, O::Epochs, O::Cov, O::Phi, O::Tol, O::MaxIters, O::Separation,
               O::Inflation, O::Ratio, O::Tokens, O::StopTokens});
  auto* synth = app.add_subcommand("synth-corpus", "write a planted corpus (and optionally its bank via --model)");
  add_options(synth, config, config_path,
              {O::Out, O::Model, O::K, O::D, O::Docs, O::Cov, O::Separation, O::Inflation, O::Ratio, O::Tokens,
               O::StopTokens});

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  try {
    if (config.phi_mode.empty()) config.phi_mode = validate->parsed() ? "literal" : "derived";
    out << "config: " << config_to_json(config) << "\n";
    out << "seed: " << config.seed << "\n";
    if (train->parsed()) return cmd_train(config, out, err);
    if (infer->parsed()) return cmd_infer(config, out, err);
    if (edit->parsed()) return cmd_edit(config, out, err);
    if (topics->parsed()) return cmd_topics(config, out, err);
    if (validate->parsed()) return cmd_synth_validate(config, out, err);
    if (synth->parsed()) return cmd_synth_corpus(config, out, err);
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(category(e.kind()));
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(ErrorCategory::Data);
  }
}

}  // namespace valc::cli
