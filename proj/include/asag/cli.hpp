#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "asag/data.hpp"
#include "asag/model.hpp"
#include "asag/training.hpp"

namespace asag::cli {

enum ExitCode : int { kSuccess = 0, kUsageError = 1, kDataError = 2, kNumericError = 3 };

// Flat key=value run configuration. Every key has a typed schema entry and a
// default; unknown keys and malformed values are ConfigErrors.
class RunConfig {
 public:
  RunConfig();

  static const std::vector<std::string>& keys();
  static bool known(const std::string& key);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  // True once the key was assigned by a file or flag.
  bool is_set(const std::string& key) const { return assigned_.count(key) != 0; }

  // "key = value" lines; '#' starts a comment, blank lines are ignored.
  void merge_file(const std::string& path);
  void merge_text(const std::string& text, const std::string& origin);

  std::size_t get_size(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  model::ModelConfig model_config(std::size_t vocab_size) const;
  training::TrainConfig train_config() const;
  void validate() const;

  std::string serialize() const;

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> assigned_;
};

struct SplitOptions {
  double train_fraction = 0.7;
  double validation_fraction = 0.1;
};

struct SplitSizes {
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test = 0;
};

// Generates a synthetic corpus and writes train.tsv, validation.tsv and
// test.tsv under `out_dir`.
SplitSizes generate_splits(const data::GeneratorConfig& generator, const SplitOptions& split,
                           std::uint64_t seed, const std::string& out_dir);

// Trains from data_dir/{train,validation}.tsv and writes best.ckpt,
// final.ckpt, metrics.tsv, vocab.txt and run.cfg to out_dir. Progress lines
// go to `log`.
training::TrainReport train_from_config(const RunConfig& config, std::ostream& log);

// P(right) for one pair using the checkpoint and the vocab.txt next to it.
double grade_pair(const std::string& checkpoint_path, const std::string& student,
                  const std::string& reference);

// Runs one invocation; returns the process exit status.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace asag::cli
