#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace valc::cli {

/// Settings shared by every subcommand. Config files use the same key names.
struct RunConfig {
  std::string corpus;
  std::string model;
  std::string out;
  std::string classifier_corpus;
  std::size_t threads = 0;
  std::uint64_t seed = 0;

  std::string counts = "variable";
  /// Empty selects the subcommand default: derived, or literal for synth-validate.
  std::string phi_mode;
  double tol = 1e-4;
  std::size_t max_iters = 100;
  double alpha = 1.0;

  /// 10 for train; the synth subcommands default to 5.
  std::size_t k = 10;
  std::size_t epochs = 20;
  std::string cov = "auto";
  std::string mstep = "mle";
  double ema = 0.99;
  std::size_t batch = 0;

  std::string scheme = "all";
  std::vector<double> omega_grid{0.25, 0.5, 1.0, 2.0, 4.0};
  std::string pathway = "document";

  std::size_t top = 10;
  double idf_quantile = 0.0;

  std::size_t d = 8;
  std::size_t docs = 100;
  std::size_t seeds = 100;
  double separation = 6.0;
  double stop_inflation = 10.0;
  double attention_ratio = 0.1;
  std::size_t tokens = 40;
  std::size_t stop_tokens = 40;
};

/// Overlays keys from a JSON object; unknown keys and wrong types raise InvalidArgument.
void apply_config_json(RunConfig& config, const std::string& json_text);
std::string config_to_json(const RunConfig& config);

/// Full command-line entry point; args excludes the program name. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace valc::cli
