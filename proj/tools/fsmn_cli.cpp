// fsmn: corpus preparation, training, evaluation and gradient self-check for
// FSMN language models.
//
// Exit codes: 0 success, 1 usage/config/data error, 2 numeric failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fsmn/checkpoint.hpp"
#include "fsmn/data.hpp"
#include "fsmn/model.hpp"
#include "fsmn/run_config.hpp"
#include "fsmn/trainer.hpp"

namespace fs = std::filesystem;
using namespace fsmn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumeric = 2;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!split_whitespace(line).empty()) out.push_back(line);
  return out;
}

std::string join_lines(const std::vector<std::string>& lines, std::size_t begin, std::size_t end) {
  std::string s;
  for (std::size_t i = begin; i < end; ++i) s += lines[i] + '\n';
  return s;
}

// ---- prep ------------------------------------------------------------------

struct PrepOptions {
  std::string input;
  std::string out_dir;
  std::size_t max_vocab = 80000;
  std::string format = "auto";
  double valid_frac = 0.05;
  double test_frac = 0.05;
};

fs::path find_split(const fs::path& dir, const std::string& name) {
  for (const auto& candidate : {"ptb." + name + ".txt", name + ".txt", name}) {
    if (fs::exists(dir / candidate)) return dir / candidate;
  }
  throw DataError("no " + name + " split found in " + dir.string());
}

int cmd_prep(const PrepOptions& o) {
  std::string splits[3];  // train, valid, test
  const fs::path input(o.input);
  if (fs::is_directory(input)) {
    splits[0] = read_file(find_split(input, "train"));
    splits[1] = read_file(find_split(input, "valid"));
    splits[2] = read_file(find_split(input, "test"));
  } else {
    std::string text = read_file(input);
    const bool wiki = o.format == "wiki" || (o.format == "auto" && text.find("<page>") != std::string::npos);
    if (wiki) text = wiki_to_sentences(text);
    const auto lines = lines_of(text);
    if (!(o.valid_frac >= 0 && o.test_frac >= 0 && o.valid_frac + o.test_frac < 1)) {
      throw ConfigError("valid and test fractions must be >= 0 and sum below 1");
    }
    const auto n = lines.size();
    const auto n_test = static_cast<std::size_t>(static_cast<double>(n) * o.test_frac);
    const auto n_valid = static_cast<std::size_t>(static_cast<double>(n) * o.valid_frac);
    const std::size_t n_train = n - n_test - n_valid;
    splits[0] = join_lines(lines, 0, n_train);
    splits[1] = join_lines(lines, n_train, n_train + n_valid);
    splits[2] = join_lines(lines, n_train + n_valid, n);
  }

  const auto train_tokens = tokenize(splits[0]);
  if (train_tokens.empty()) throw DataError("training split is empty");
  const Vocabulary vocab = build_vocab(train_tokens, o.max_vocab);

  fs::create_directories(o.out_dir);
  const fs::path out(o.out_dir);
  vocab.save((out / "vocab.txt").string());
  std::cout << "vocab_size=" << vocab.size() << " reserved=" << kReservedTokens << '\n';

  const char* names[3] = {"train", "valid", "test"};
  for (int i = 0; i < 3; ++i) {
    EncodedCorpus c{vocab.size(), encode_corpus(splits[i], vocab)};
    write_encoded((out / (std::string(names[i]) + ".ids")).string(), c);
    std::size_t words = 0, oov = 0, unk = 0;
    for (const auto& w : tokenize(splits[i])) {
      ++words;
      if (is_unknown_marker(w)) {
        ++unk;
      } else if (!vocab.contains(w)) {
        ++oov;
        ++unk;
      }
    }
    const auto rate = [&](std::size_t k) {
      return words ? static_cast<double>(k) / static_cast<double>(words) : 0.0;
    };
    std::cout << "split=" << names[i] << " sentences=" << c.sentences.size() << " words=" << words
              << " tokens=" << c.token_count() << " oov_rate=" << rate(oov)
              << " unk_rate=" << rate(unk) << '\n';
  }
  return kExitOk;
}

// ---- train -----------------------------------------------------------------

struct TeeBuf : std::streambuf {
  std::streambuf* a;
  std::streambuf* b;
  TeeBuf(std::streambuf* x, std::streambuf* y) : a(x), b(y) {}
  int overflow(int c) override {
    if (c == EOF) return !EOF;
    const int r1 = a->sputc(static_cast<char>(c));
    const int r2 = b ? b->sputc(static_cast<char>(c)) : c;
    return r1 == EOF || r2 == EOF ? EOF : c;
  }
  int sync() override {
    const int r = a->pubsync();
    return (b ? b->pubsync() : 0) == 0 && r == 0 ? 0 : -1;
  }
};

int cmd_train(const std::string& config_path, const std::string& resume_path) {
  RunConfig rc = load_run_config(config_path);
  validate_run_config(rc);

  EncodedCorpus train_data = read_encoded(rc.train_path);
  const EncodedCorpus valid_data = read_encoded(rc.valid_path);
  if (valid_data.vocab_size != train_data.vocab_size) {
    throw ConfigError("validation data vocabulary (" + std::to_string(valid_data.vocab_size) +
                      ") differs from training data (" + std::to_string(train_data.vocab_size) + ")");
  }
  if (rc.model.vocab_size == 0) rc.model.vocab_size = train_data.vocab_size;
  if (rc.model.vocab_size != train_data.vocab_size) {
    throw ConfigError("config vocab_size " + std::to_string(rc.model.vocab_size) +
                      " differs from training data vocabulary " +
                      std::to_string(train_data.vocab_size));
  }
  rc.model.validate();
  if (rc.train_fraction < 1.0) {
    const auto keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(static_cast<double>(train_data.sentences.size()) * rc.train_fraction));
    train_data.sentences.resize(keep);
  }
  if (train_data.sentences.empty()) throw DataError("training data is empty");
  if (valid_data.sentences.empty()) throw DataError("validation data is empty");

  Checkpoint start;
  if (!resume_path.empty()) {
    start = load_checkpoint(resume_path);
    if (start.model.describe() != rc.model.describe() ||
        start.model.memory_order != rc.model.memory_order) {
      throw ConfigError("checkpoint architecture " + start.model.describe() +
                        " does not match config " + rc.model.describe());
    }
  } else {
    start = fresh_checkpoint(rc.model, rc.optim, rc.seed);
  }

  std::unique_ptr<std::ofstream> log_file;
  if (!rc.log_path.empty()) {
    log_file = std::make_unique<std::ofstream>(rc.log_path, resume_path.empty() ? std::ios::trunc
                                                                                : std::ios::app);
    if (!*log_file) throw ConfigError("cannot write log file " + rc.log_path);
  }
  TeeBuf tee(std::cout.rdbuf(), log_file ? log_file->rdbuf() : nullptr);
  std::ostream log(&tee);

  log << "model=" << rc.model.describe() << " memory_order=" << rc.model.memory_order
      << " params=" << parameter_count(start.params)
      << " train_sentences=" << train_data.sentences.size()
      << " train_tokens=" << train_data.token_count() << " start_epoch=" << start.epoch << '\n';

  TrainSettings ts;
  ts.batch_size = rc.batch_size;
  ts.eval_batch_size = rc.eval_batch_size;
  ts.max_epochs = rc.max_epochs;
  ts.log_interval = rc.log_interval;
  ts.checkpoint_dir = rc.checkpoint_dir;
  const auto result = train(std::move(start), train_data.sentences, valid_data.sentences, ts, &log);

  log << "done epochs=" << result.state.epoch
      << " best_valid_ppl=" << format_double(result.state.best_val_ppl) << '\n';
  if (!rc.test_path.empty()) {
    const EncodedCorpus test_data = read_encoded(rc.test_path);
    if (test_data.vocab_size != rc.model.vocab_size) throw ConfigError("test data vocabulary mismatch");
    log << "test_ppl="
        << format_double(perplexity(result.state.params, result.state.model, test_data.sentences,
                                    rc.eval_batch_size))
        << '\n';
  }
  log.flush();
  return kExitOk;
}

// ---- eval ------------------------------------------------------------------

int cmd_eval(const std::string& ckpt_path, const std::string& data_path, std::size_t batch_size) {
  const Checkpoint c = load_checkpoint(ckpt_path);
  const EncodedCorpus data = read_encoded(data_path);
  if (data.vocab_size != c.model.vocab_size) {
    throw ConfigError("vocabulary size mismatch: checkpoint has " +
                      std::to_string(c.model.vocab_size) + ", data has " +
                      std::to_string(data.vocab_size));
  }
  const NllTotals t = evaluate(c.params, c.model, data.sentences, batch_size);
  std::cout << "positions=" << t.positions << " ppl=" << std::setprecision(4) << t.perplexity()
            << '\n';
  return kExitOk;
}

// ---- gradcheck -------------------------------------------------------------

bool parse_group(const std::string& name, ParamGroup& out) {
  for (auto g : {ParamGroup::embedding, ParamGroup::weight, ParamGroup::bias, ParamGroup::taps,
                 ParamGroup::memory_weight, ParamGroup::output}) {
    if (name == group_name(g)) {
      out = g;
      return true;
    }
  }
  return false;
}

int cmd_gradcheck(const std::string& config_path, double step, const std::string& fault) {
  const RunConfig rc = load_run_config(config_path);
  ModelConfig model = rc.model;
  if (model.vocab_size == 0) throw ConfigError("gradcheck config must set vocab_size");
  model.validate();

  std::vector<Sentence> sentences;
  if (!rc.train_path.empty()) {
    auto data = read_encoded(rc.train_path);
    if (data.vocab_size != model.vocab_size) throw ConfigError("training data vocabulary mismatch");
    sentences.assign(data.sentences.begin(),
                     data.sentences.begin() + std::min<std::size_t>(2, data.sentences.size()));
  } else {
    // two short random sentences over the non-reserved words
    std::mt19937_64 rng(rc.seed);
    const auto words = model.vocab_size - kReservedTokens;
    for (std::size_t len : {4u, 6u}) {
      Sentence s;
      for (std::size_t i = 0; i < len; ++i)
        s.push_back(static_cast<TokenId>(kReservedTokens + (words ? rng() % words : 0)));
      s.push_back(kEos);
      sentences.push_back(std::move(s));
    }
  }
  const std::vector<std::size_t> idx = [&] {
    std::vector<std::size_t> v(sentences.size());
    std::iota(v.begin(), v.end(), 0);
    return v;
  }();
  const SentenceBatch batch = make_batch(sentences, idx, model.context_window);

  Parameters params = init_parameters(model, rc.seed);
  jitter_for_grad_check(params, rc.seed);

  GradientFn gradient = loss_and_grad;
  if (!fault.empty()) {
    ParamGroup target{};
    if (!parse_group(fault, target)) throw ConfigError("unknown parameter group '" + fault + "'");
    // negative control: perturb one group's analytic gradient
    gradient = [target](const Parameters& p, const ModelConfig& c, const SentenceBatch& b) {
      auto lg = loss_and_grad(p, c, b);
      for_each_tensor(lg.grads, [&](const TensorInfo& info, Matrix& g) {
        if (info.group == target)
          for (double& v : g.values()) v = v * 1.01 + 1e-3;
      });
      return lg;
    };
  }

  const GradCheckReport report = grad_check(params, model, batch, step, gradient);
  std::cout << "model=" << model.describe() << " memory_order=" << model.memory_order
            << " params=" << parameter_count(params) << " step=" << step << '\n';
  for (const auto& g : report.groups) {
    std::cout << "group=" << group_name(g.group) << " max_rel_error=" << std::scientific
              << std::setprecision(3) << g.max_error << std::defaultfloat
              << " worst=" << g.worst_tensor << '[' << g.worst_index << ']'
              << " checked=" << g.checked << " absolute=" << g.absolute_count
              << " status=" << (g.max_error < kGradCheckTolerance ? "ok" : "FAIL") << '\n';
  }
  const bool ok = report.passed();
  std::cout << "result=" << (ok ? "pass" : "fail") << '\n';
  return ok ? kExitOk : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FSMN language model toolkit"};
  app.require_subcommand(1);

  PrepOptions prep;
  auto* prep_cmd = app.add_subcommand("prep", "Build vocabulary and encode train/valid/test splits");
  prep_cmd->add_option("input", prep.input, "Raw text file, or directory with train/valid/test")
      ->required();
  prep_cmd->add_option("out_dir", prep.out_dir, "Output directory")->required();
  prep_cmd->add_option("--max-vocab", prep.max_vocab, "Vocabulary cap, reserved tokens included")
      ->capture_default_str();
  prep_cmd->add_option("--format", prep.format, "Input format for a single file")
      ->check(CLI::IsMember({"auto", "lines", "wiki"}))
      ->capture_default_str();
  prep_cmd->add_option("--valid-frac", prep.valid_frac, "Validation fraction (single file)")
      ->capture_default_str();
  prep_cmd->add_option("--test-frac", prep.test_frac, "Test fraction (single file)")
      ->capture_default_str();

  std::string train_config, resume;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
  train_cmd->add_option("config", train_config, "Run config (key = value)")->required();
  train_cmd->add_option("--resume", resume, "Continue from a checkpoint");

  std::string eval_ckpt, eval_data;
  std::size_t eval_batch = 200;
  auto* eval_cmd = app.add_subcommand("eval", "Print perplexity of a checkpoint on encoded data");
  eval_cmd->add_option("checkpoint", eval_ckpt)->required();
  eval_cmd->add_option("data", eval_data, "Encoded .ids file")->required();
  eval_cmd->add_option("--batch-size", eval_batch)->capture_default_str();

  std::string gc_config, gc_fault;
  double gc_step = kDefaultGradCheckStep;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Compare analytic and numeric gradients");
  gc_cmd->add_option("config", gc_config, "Config describing a tiny model")->required();
  gc_cmd->add_option("--step", gc_step, "Central-difference step")->capture_default_str();
  gc_cmd->add_option("--inject-fault", gc_fault,
                     "Corrupt one group's analytic gradient (negative control)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*prep_cmd) return cmd_prep(prep);
    if (*train_cmd) return cmd_train(train_config, resume);
    if (*eval_cmd) return cmd_eval(eval_ckpt, eval_data, eval_batch);
    if (*gc_cmd) return cmd_gradcheck(gc_config, gc_step, gc_fault);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
