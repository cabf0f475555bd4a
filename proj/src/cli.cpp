#include "asag/cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "asag/diagnostics.hpp"
#include "asag/eval.hpp"

namespace asag::cli {

namespace fs = std::filesystem;

namespace {

enum class Kind { size, real, boolean, text };

struct KeySpec {
  const char* key;
  Kind kind;
  const char* fallback;
};

constexpr KeySpec kSchema[] = {
    {"seed", Kind::size, "1"},
    {"data_dir", Kind::text, ""},
    {"out_dir", Kind::text, ""},
    {"embeddings", Kind::text, ""},
    {"min_count", Kind::size, "1"},
    {"d_emb", Kind::size, "64"},
    {"d_model", Kind::size, "64"},
    {"head_count", Kind::size, "4"},
    {"d_ffn", Kind::size, "256"},
    {"max_len", Kind::size, "32"},
    {"encoder_layers", Kind::size, "1"},
    {"aggregation_layers", Kind::size, "1"},
    {"pooling_dim", Kind::size, "64"},
    {"dropout_rate", Kind::real, "0"},
    {"share_encoders", Kind::boolean, "true"},
    {"positional_encoding", Kind::boolean, "true"},
    {"epochs", Kind::size, "20"},
    {"batch_size", Kind::size, "32"},
    {"patience", Kind::size, "5"},
    {"clip_norm", Kind::real, "5"},
    {"lr", Kind::real, "0.001"},
    {"beta1", Kind::real, "0.9"},
    {"beta2", Kind::real, "0.999"},
    {"adam_eps", Kind::real, "1e-8"},
};

const KeySpec& spec_of(const std::string& key) {
  for (const auto& s : kSchema)
    if (key == s.key) return s;
  throw ConfigError("unknown config key '" + key + "'");
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::uint64_t parse_size(const std::string& key, const std::string& value) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size() || value.empty()) {
    throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + value + "'");
  }
  return v;
}

double parse_real(const std::string& key, const std::string& value) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size() || value.empty() || !std::isfinite(v)) {
    throw ConfigError("config key '" + key + "' expects a finite number, got '" + value + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config key '" + key + "' expects true or false, got '" + value + "'");
}

std::string dashed(std::string key) {
  for (auto& c : key)
    if (c == '_') c = '-';
  return key;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<data::AnswerPair> read_split(const fs::path& dir, const std::string& name) {
  const auto path = dir / name;
  if (!fs::exists(path)) throw DataError("dataset file not found: " + path.string());
  return data::read_dataset(path.string());
}

data::Vocabulary vocab_next_to(const std::string& checkpoint_path, std::size_t expected_size) {
  const auto path = fs::path(checkpoint_path).parent_path() / "vocab.txt";
  auto vocab = data::Vocabulary::load(path.string());
  if (vocab.size() != expected_size) {
    throw DataError("vocabulary " + path.string() + " has " + std::to_string(vocab.size()) +
                    " entries but the checkpoint expects " + std::to_string(expected_size));
  }
  return vocab;
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& s : kSchema) values_[s.key] = s.fallback;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> all = [] {
    std::vector<std::string> out;
    for (const auto& s : kSchema) out.emplace_back(s.key);
    return out;
  }();
  return all;
}

bool RunConfig::known(const std::string& key) {
  for (const auto& s : kSchema)
    if (key == s.key) return true;
  return false;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& spec = spec_of(key);
  switch (spec.kind) {
    case Kind::size: parse_size(key, value); break;
    case Kind::real: parse_real(key, value); break;
    case Kind::boolean: parse_bool(key, value); break;
    case Kind::text: break;
  }
  values_[key] = value;
  assigned_.insert(key);
}

const std::string& RunConfig::get(const std::string& key) const {
  spec_of(key);
  return values_.at(key);
}

void RunConfig::merge_file(const std::string& path) { merge_text(read_file(path), path); }

void RunConfig::merge_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view(line);
    if (auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    const std::string content = trim(view);
    if (content.empty()) continue;
    const auto eq = content.find('=');
    const std::string where = origin + ":" + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value, got '" + content + "'");
    const std::string key = trim(std::string_view(content).substr(0, eq));
    const std::string value = trim(std::string_view(content).substr(eq + 1));
    try {
      set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

std::size_t RunConfig::get_size(const std::string& key) const {
  if (spec_of(key).kind != Kind::size) throw ConfigError("config key '" + key + "' is not an integer");
  return static_cast<std::size_t>(parse_size(key, values_.at(key)));
}

double RunConfig::get_double(const std::string& key) const {
  if (spec_of(key).kind != Kind::real) throw ConfigError("config key '" + key + "' is not a number");
  return parse_real(key, values_.at(key));
}

bool RunConfig::get_bool(const std::string& key) const {
  if (spec_of(key).kind != Kind::boolean) throw ConfigError("config key '" + key + "' is not a boolean");
  return parse_bool(key, values_.at(key));
}

model::ModelConfig RunConfig::model_config(std::size_t vocab_size) const {
  model::ModelConfig c;
  c.vocab_size = vocab_size;
  c.d_emb = get_size("d_emb");
  c.d_model = get_size("d_model");
  c.head_count = get_size("head_count");
  c.d_ffn = get_size("d_ffn");
  c.max_len = get_size("max_len");
  c.encoder_layers = get_size("encoder_layers");
  c.aggregation_layers = get_size("aggregation_layers");
  c.pooling_dim = get_size("pooling_dim");
  c.dropout_rate = get_double("dropout_rate");
  c.share_encoders = get_bool("share_encoders");
  c.positional_encoding = get_bool("positional_encoding");
  c.seed = get_size("seed");
  return c;
}

training::TrainConfig RunConfig::train_config() const {
  training::TrainConfig c;
  c.epochs = get_size("epochs");
  c.batch_size = get_size("batch_size");
  c.patience = get_size("patience");
  c.clip_norm = get_double("clip_norm");
  c.adam.lr = get_double("lr");
  c.adam.beta1 = get_double("beta1");
  c.adam.beta2 = get_double("beta2");
  c.adam.eps = get_double("adam_eps");
  return c;
}

void RunConfig::validate() const {
  model_config(2).validate();
  const auto t = train_config();
  if (t.batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (t.clip_norm < 0.0) throw ConfigError("clip_norm must be non-negative");
  if (t.adam.lr < 0.0) throw ConfigError("lr must be non-negative");
  if (t.adam.beta1 < 0.0 || t.adam.beta1 >= 1.0) throw ConfigError("beta1 must lie in [0, 1)");
  if (t.adam.beta2 < 0.0 || t.adam.beta2 >= 1.0) throw ConfigError("beta2 must lie in [0, 1)");
  if (t.adam.eps <= 0.0) throw ConfigError("adam_eps must be positive");
  if (get_size("min_count") == 0) throw ConfigError("min_count must be at least 1");
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& s : kSchema) out += std::string(s.key) + " = " + values_.at(s.key) + "\n";
  return out;
}

SplitSizes generate_splits(const data::GeneratorConfig& generator, const SplitOptions& split,
                           std::uint64_t seed, const std::string& out_dir) {
  if (split.train_fraction < 0.0 || split.validation_fraction < 0.0 ||
      split.train_fraction + split.validation_fraction > 1.0) {
    throw ConfigError("split fractions must be non-negative and sum to at most 1");
  }
  const auto streams = training::set_global_seed(seed);
  Rng gen_rng = streams.stream("generator");
  auto pairs = data::generate_synthetic_dataset(generator, gen_rng);
  Rng split_rng = streams.stream("split");
  split_rng.shuffle(std::span<data::AnswerPair>(pairs));

  const auto n = static_cast<double>(pairs.size());
  SplitSizes sizes;
  sizes.train = static_cast<std::size_t>(std::llround(n * split.train_fraction));
  sizes.validation = static_cast<std::size_t>(std::llround(n * split.validation_fraction));
  if (sizes.train + sizes.validation > pairs.size()) sizes.validation = pairs.size() - sizes.train;
  sizes.test = pairs.size() - sizes.train - sizes.validation;

  fs::create_directories(out_dir);
  const std::span<const data::AnswerPair> all(pairs);
  const fs::path dir(out_dir);
  data::write_dataset(all.subspan(0, sizes.train), (dir / "train.tsv").string());
  data::write_dataset(all.subspan(sizes.train, sizes.validation), (dir / "validation.tsv").string());
  data::write_dataset(all.subspan(sizes.train + sizes.validation), (dir / "test.tsv").string());
  return sizes;
}

training::TrainReport train_from_config(const RunConfig& config, std::ostream& log) {
  config.validate();
  if (config.get("data_dir").empty()) throw ConfigError("data_dir is not set");
  if (config.get("out_dir").empty()) throw ConfigError("out_dir is not set");
  const fs::path data_dir(config.get("data_dir"));
  const fs::path out_dir(config.get("out_dir"));

  const auto train = read_split(data_dir, "train.tsv");
  const auto validation = read_split(data_dir, "validation.tsv");
  const auto vocab = data::build_vocab(train, config.get_size("min_count"));
  const auto model_config = config.model_config(vocab.size());
  model_config.validate();

  const auto streams = training::set_global_seed(model_config.seed);
  Rng init_rng = streams.stream("init");
  auto params = model::init_params(model_config, init_rng);
  if (!config.get("embeddings").empty()) {
    Rng emb_rng = streams.stream("embeddings");
    auto loaded = data::load_embeddings(config.get("embeddings"), vocab, emb_rng, model_config.d_emb);
    loaded.table.set_requires_grad(true);
    params.embedding = loaded.table;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", loaded.coverage);
    log << "embedding coverage: " << buf << "\n";
  }
  log << "train pairs: " << train.size() << ", validation pairs: " << validation.size()
      << ", vocabulary: " << vocab.size() << ", parameters: " << params.parameter_count() << "\n";

  fs::create_directories(out_dir);
  vocab.save((out_dir / "vocab.txt").string());
  {
    std::ofstream cfg(out_dir / "run.cfg", std::ios::binary);
    cfg << config.serialize();
  }

  auto train_config = config.train_config();
  train_config.on_epoch = [&log](const training::EpochRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "epoch %zu  train_loss=%.6f train_acc=%.4f  val_loss=%.6f val_acc=%.4f val_auc=%.4f  "
                  "(%.1fs)\n",
                  r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy, r.val_auc,
                  r.wall_seconds);
    log << buf << std::flush;
  };
  auto result = training::fit(model_config, params, vocab, train, validation, train_config, streams);

  model::save_checkpoint(result.best, model_config, (out_dir / "best.ckpt").string());
  model::save_checkpoint(params, model_config, (out_dir / "final.ckpt").string());
  training::write_metrics(result.report, (out_dir / "metrics.tsv").string());
  char buf[128];
  std::snprintf(buf, sizeof buf, "best epoch %zu, val_auc=%.6f%s\n", result.report.best_epoch,
                result.report.best_val_auc, result.report.stopped_early ? " (stopped early)" : "");
  log << buf;
  return result.report;
}

double grade_pair(const std::string& checkpoint_path, const std::string& student,
                  const std::string& reference) {
  auto loaded = model::load_checkpoint(checkpoint_path);
  const auto vocab = vocab_next_to(checkpoint_path, loaded.config.vocab_size);
  const std::vector<data::AnswerPair> pairs{{"grade", student, reference, 0}};
  const std::vector<std::size_t> index{0};
  NoGradGuard no_grad;
  const auto batch = data::make_batch(pairs, index, vocab, loaded.config.max_len);
  return model::model_forward(loaded.params, batch).data()[1];
}

namespace {

int report(const std::exception& e, std::ostream& err, int code) {
  err << "error: " << e.what() << "\n";
  return code;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Short-answer grading with multiway attention", "asag"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic graded-answer corpus");
  std::string gen_out;
  std::uint64_t gen_seed = 1;
  data::GeneratorConfig gen_config;
  SplitOptions split;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--pairs", gen_config.pairs, "Total pairs (even)")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Root seed")->capture_default_str();
  gen->add_option("--noise", gen_config.noise, "Per-token replacement rate")->capture_default_str();
  gen->add_option("--references", gen_config.references)->capture_default_str();
  gen->add_option("--concepts", gen_config.concepts)->capture_default_str();
  gen->add_option("--synonyms", gen_config.synonyms)->capture_default_str();
  gen->add_option("--filler-words", gen_config.filler_words)->capture_default_str();
  gen->add_option("--keywords", gen_config.keywords)->capture_default_str();
  gen->add_option("--reference-length", gen_config.reference_length)->capture_default_str();
  gen->add_option("--student-filler-min", gen_config.student_filler_min)->capture_default_str();
  gen->add_option("--student-filler-max", gen_config.student_filler_max)->capture_default_str();
  gen->add_option("--reference-filler-share", gen_config.reference_filler_share)->capture_default_str();
  gen->add_option("--train-fraction", split.train_fraction)->capture_default_str();
  gen->add_option("--validation-fraction", split.validation_fraction)->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "Train a model from a dataset directory");
  std::string train_config_path;
  std::map<std::string, std::string> overrides;
  std::map<std::string, CLI::Option*> override_options;
  train->add_option("--config", train_config_path, "key=value run configuration file");
  for (const auto& key : RunConfig::keys()) {
    override_options[key] = train->add_option("--" + dashed(key), overrides[key], "Overrides '" + key + "'");
  }

  // eval
  auto* evaluate = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset file");
  std::string eval_checkpoint, eval_data;
  std::size_t eval_batch = 64;
  evaluate->add_option("--checkpoint", eval_checkpoint)->required();
  evaluate->add_option("--data", eval_data)->required();
  evaluate->add_option("--batch-size", eval_batch)->capture_default_str();

  // grade
  auto* grade = app.add_subcommand("grade", "Grade one student answer against a reference");
  std::string grade_checkpoint, grade_student, grade_reference;
  grade->add_option("--checkpoint", grade_checkpoint)->required();
  grade->add_option("--student", grade_student)->required();
  grade->add_option("--reference", grade_reference)->required();

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  std::string gc_config_path;
  std::uint64_t gc_seed = 1;
  gradcheck->add_option("--config", gc_config_path, "Optional run configuration (structure keys)");
  gradcheck->add_option("--seed", gc_seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kUsageError;
  }

  try {
    if (*gen) {
      const auto sizes = generate_splits(gen_config, split, gen_seed, gen_out);
      out << "wrote " << sizes.train << " train, " << sizes.validation << " validation, " << sizes.test
          << " test pairs to " << gen_out << "\n";
    } else if (*train) {
      RunConfig config;
      if (!train_config_path.empty()) config.merge_file(train_config_path);
      for (const auto& [key, option] : override_options)
        if (option->count() > 0) config.set(key, overrides[key]);
      train_from_config(config, out);
    } else if (*evaluate) {
      const auto m = eval::evaluate_checkpoint(eval_checkpoint, eval_data, eval_batch);
      out << "dataset: " << eval_data << "\n"
          << "examples: " << m.n << "\n"
          << "accuracy: " << fixed(m.accuracy, 4) << "\n"
          << "auc: " << fixed(m.auc, 4) << "\n"
          << "loss: " << fixed(m.loss, 6) << "\n"
          << "positive rate: " << fixed(m.positive_rate, 4) << "\n"
          << eval::metrics_line(eval_data, m) << "\n";
    } else if (*grade) {
      const double p = grade_pair(grade_checkpoint, grade_student, grade_reference);
      out << "p_right=" << fixed(p, 6) << "\tverdict=" << (p >= 0.5 ? "right" : "wrong") << "\n";
    } else if (*gradcheck) {
      auto tiny = diagnostics::tiny_config();
      if (!gc_config_path.empty()) {
        RunConfig config;
        config.merge_file(gc_config_path);
        if (config.is_set("head_count")) tiny.head_count = config.get_size("head_count");
        if (config.is_set("d_ffn")) tiny.d_ffn = config.get_size("d_ffn");
        if (config.is_set("encoder_layers")) tiny.encoder_layers = config.get_size("encoder_layers");
        if (config.is_set("aggregation_layers")) tiny.aggregation_layers = config.get_size("aggregation_layers");
        if (config.is_set("pooling_dim")) tiny.pooling_dim = config.get_size("pooling_dim");
        if (config.is_set("share_encoders")) tiny.share_encoders = config.get_bool("share_encoders");
      }
      bool ok = true;
      out << "layer\tmax_relative_error\ttolerance\tstatus\n";
      for (const auto& entry : diagnostics::run_gradcheck_suite(tiny, gc_seed)) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s\t%.3e\t%.0e\t%s\n", entry.name.c_str(), entry.max_relative_error,
                      entry.tolerance, entry.passed() ? "pass" : "FAIL");
        out << buf;
        ok = ok && entry.passed();
      }
      out << (ok ? "all gradient checks passed\n" : "gradient check failed\n");
      return ok ? kSuccess : kNumericError;
    }
  } catch (const ConfigError& e) {
    return report(e, err, kUsageError);
  } catch (const DataError& e) {
    return report(e, err, kDataError);
  } catch (const ShapeError& e) {
    return report(e, err, kDataError);
  } catch (const NumericError& e) {
    return report(e, err, kNumericError);
  } catch (const MaskError& e) {
    return report(e, err, kNumericError);
  } catch (const std::exception& e) {
    return report(e, err, kDataError);
  }
  return kSuccess;
}

}  // namespace asag::cli
