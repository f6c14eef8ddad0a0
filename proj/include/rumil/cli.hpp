#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rumil/embed.hpp"
#include "rumil/train.hpp"

namespace rumil::cli {

inline constexpr const char* kSeedEnv = "RUMIL_SEED";

/// Every flag of every subcommand. Optional fields fall back to a
/// method- or architecture-specific default (see the effective_* helpers).
struct RunConfig {
  std::string subcommand;

  std::string input;
  std::string output;
  std::string rules;  // empty: bundled rules
  std::string vocab;
  std::string model;
  std::string embeddings;
  std::string w2v, fasttext, glove;
  std::string train_path, val_path, test_path;
  std::string history;
  std::string report_kv;
  std::string query;

  std::string method = "w2v";
  std::string arch = "hybrid";
  std::string static_mode = "mixed";
  std::string bigru = "on";
  std::string features = "tfidf";
  std::string averaging = "macro";

  std::size_t dim = 200;
  std::optional<std::size_t> window;
  std::optional<int> epochs;
  std::int64_t min_count = 5;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  int patience = 5;
  std::size_t batch = 32;
  std::size_t max_len = corpus::kDefaultMaxLen;
  std::size_t k = 10;
  double train_frac = 0.6;
  double val_frac = 0.1;
  double test_frac = 0.3;

  std::size_t hidden = 64;
  std::size_t bigru_hidden = 64;
  double clip = 5.0;
  int threads = 1;
  int negatives = 5;
  int min_n = 3;
  int max_n = 6;
  std::uint32_t buckets = 1u << 21;
  double x_max = 100.0;
  double alpha = 0.75;
  double nb_alpha = 1.0;
  double l2 = 1e-4;
  double svm_c = 1.0;

  std::size_t effective_window() const;
  int effective_epochs() const;
  double effective_lr() const;
  std::uint64_t effective_seed() const;

  embed::SgnsConfig sgns_config() const;
  embed::GloveConfig glove_config() const;
  train::FitConfig fit_config() const;
  corpus::SplitSpec split_spec() const;
};

/// Parses a command line without running it. `env_seed` stands in for the
/// RUMIL_SEED variable. Throws Error(Usage) on a bad command line; returns
/// nullopt for --help, after printing help to `out`.
std::optional<RunConfig> parse_command_line(const std::vector<std::string>& args, std::ostream& out,
                                            std::optional<std::string> env_seed = std::nullopt);

/// Help text of one subcommand ("" for the top level).
std::string help_text(const std::string& subcommand);

/// Runs the tool. Exit codes: 0 success, 1 usage error, 2 data error.
int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);
int main(int argc, char** argv);

}  // namespace rumil::cli
