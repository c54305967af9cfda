// grace: synthetic data, training, evaluation and prediction for joint
// aspect-term / polarity tagging.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numeric failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "grace/checkpoint.hpp"
#include "grace/config.hpp"
#include "grace/corpus.hpp"
#include "grace/errors.hpp"
#include "grace/eval.hpp"
#include "grace/synth.hpp"
#include "grace/train.hpp"
#include "grace/vocab.hpp"

namespace fs = std::filesystem;
using namespace grace;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

fs::path default_vocab(const fs::path& checkpoint) { return checkpoint.parent_path() / "vocab.txt"; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataError::Kind::Io, 0, "cannot write " + path.string());
  out << text;
  if (!out) throw DataError(DataError::Kind::Io, 0, "write failed for " + path.string());
}

// Encodes every sentence; overlength sentences become empty placeholders so
// sentence indices stay aligned with the corpus.
std::vector<EncodedExample> encode_aligned(const std::vector<TaggedSentence>& corpus, const Vocab& vocab,
                                           std::size_t max_len, std::vector<bool>& usable) {
  std::vector<EncodedExample> out;
  usable.assign(corpus.size(), false);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    try {
      EncodedExample e = encode_example(corpus[i], vocab, max_len);
      e.source = i;
      out.push_back(std::move(e));
      usable[i] = true;
    } catch (const DataError& err) {
      if (err.kind() != DataError::Kind::Overlength) throw;
      std::cerr << "warning: sentence " << i + 1 << " skipped: " << err.what() << '\n';
    }
  }
  return out;
}

PairSets predict_corpus(const Checkpoint& ckpt, const Vocab& vocab, const std::vector<TaggedSentence>& corpus,
                        bool consistent, DecodeDiagnostics* diag) {
  const GraceModel<float> model = ckpt.model();
  std::vector<bool> usable;
  const auto encoded =
      encode_aligned(corpus, vocab, static_cast<std::size_t>(model.config().max_len), usable);
  PredictOptions opt;
  opt.consistent = consistent;
  const std::string* head = ckpt.find_metadata("consistent_polarity");
  opt.consistent_head = head != nullptr && *head == "true";
  const PairSets pairs = prediction_pairs(predict(model, encoded, opt), diag);
  PairSets aligned(corpus.size());
  for (std::size_t k = 0; k < encoded.size(); ++k) aligned[encoded[k].source] = pairs[k];
  return aligned;
}

struct SynthArgs {
  std::string out;
  std::size_t n = 100;
  std::uint64_t seed = 1;
  double imbalance = 20.0;
  bool no_coordination = false;
  bool no_neutral = false;
  bool conflict = false;
};

int cmd_synth(const SynthArgs& a) {
  SynthOptions o;
  o.n_sentences = a.n;
  o.seed = a.seed;
  o.imbalance = a.imbalance;
  o.coordination = !a.no_coordination;
  o.neutral = !a.no_neutral;
  o.conflict = a.conflict;
  save_corpus(a.out, synth_generate(o));
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string train;
  std::string dev;
  std::string out_dir;
  std::string stage = "all";
  std::string from;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a) {
  TrainConfig cfg = load_train_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  const bool run1 = a.stage == "all" || a.stage == "1";
  const bool run2 = a.stage == "all" || a.stage == "2";
  if (!run1 && !run2) throw ConfigError("--stage must be 1, 2 or all");
  if (a.stage == "2" && a.from.empty()) throw ConfigError("--stage 2 requires --from <stage-1 checkpoint>");

  const fs::path out(a.out_dir);
  fs::create_directories(out);
  const auto train_corpus = load_corpus(a.train);

  Vocab vocab;
  std::optional<GraceModel<float>> model;
  if (!a.from.empty()) {
    vocab = Vocab::load(default_vocab(a.from));
    Checkpoint ck = load_checkpoint(a.from);
    cfg.model = ck.config;
    model.emplace(ck.model());
  } else {
    vocab = Vocab::build(train_corpus, static_cast<std::size_t>(cfg.min_count));
    cfg.model.vocab_size = static_cast<int>(vocab.size());
    model.emplace(cfg.model, derive_seed(cfg.seed, 0, 0, 0));
  }
  vocab.save(out / "vocab.txt");
  write_text(out / "config.cfg", format_train_config(cfg));

  const auto max_len = static_cast<std::size_t>(cfg.model.max_len);
  auto warn = [](const std::string& m) { std::cerr << "warning: " << m << '\n'; };
  const auto train = encode_corpus(train_corpus, vocab, max_len, warn);
  Trainer trainer(cfg, std::move(*model));
  if (!a.dev.empty()) trainer.set_dev(encode_corpus(load_corpus(a.dev), vocab, max_len, warn));

  std::ofstream log(out / "metrics.jsonl", std::ios::binary);
  if (!log) throw DataError(DataError::Kind::Io, 0, "cannot write metrics log");
  TrainingHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& r) {
    log << to_json_line(r) << '\n';
    log.flush();
    std::cerr << to_json_line(r) << '\n';
  };
  hooks.on_phase_end = [&](Phase p, const GraceModel<float>& m) {
    save_checkpoint(out / (to_string(p) + ".ckpt"),
                    make_checkpoint(m, {{"phase", to_string(p)},
                                        {"seed", std::to_string(cfg.seed)},
                                        {"consistent_polarity", cfg.consistent_polarity ? "true" : "false"}}));
  };
  trainer.set_hooks(hooks);

  if (run1) trainer.train_stage1(train);
  if (run2) trainer.train_stage2(train);

  save_checkpoint(out / "final.ckpt",
                  make_checkpoint(trainer.model(),
                                  {{"phase", run2 ? "stage2" : "stage1"},
                                   {"seed", std::to_string(cfg.seed)},
                                   {"consistent_polarity", cfg.consistent_polarity ? "true" : "false"}}));
  if (!trainer.term_snapshots().empty()) export_gradient_stats(trainer.term_snapshots(), out / "grad_hist_term.csv");
  if (!trainer.polarity_snapshots().empty()) {
    export_gradient_stats(trainer.polarity_snapshots(), out / "grad_hist_polarity.csv");
  }
  if (trainer.vat_diagnostics().zero_gradient > 0) {
    std::cerr << "note: " << trainer.vat_diagnostics().zero_gradient
              << " sentence(s) received a zero adversarial perturbation\n";
  }
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string predictions;
  std::string vocab;
  std::string data;
  std::string out;
  bool consistent = false;
};

int cmd_eval(const EvalArgs& a) {
  if (a.checkpoint.empty() == a.predictions.empty()) {
    throw ConfigError("eval needs exactly one of --checkpoint or --predictions");
  }
  const auto corpus = load_corpus(a.data);
  PairSets gold;
  for (const auto& s : corpus) gold.push_back(gold_pairs(s));
  PairSets pred;
  DecodeDiagnostics diag;
  if (!a.predictions.empty()) {
    std::ifstream in(a.predictions);
    if (!in) throw DataError(DataError::Kind::Io, 0, "cannot open " + a.predictions);
    pred = read_prediction_dump(in);
  } else {
    const Vocab vocab = Vocab::load(a.vocab.empty() ? default_vocab(a.checkpoint) : fs::path(a.vocab));
    pred = predict_corpus(load_checkpoint(a.checkpoint), vocab, corpus, a.consistent, &diag);
  }
  if (pred.size() != gold.size()) {
    throw DataError(DataError::Kind::LengthMismatch, 0,
                    "predictions cover " + std::to_string(pred.size()) + " sentences, data has " +
                        std::to_string(gold.size()));
  }
  MetricsReport report = pair_prf(gold, pred);
  if (diag.unresolved_polarity > 0) {
    report.diagnostics.push_back(std::to_string(diag.unresolved_polarity) +
                                 " predicted term(s) had no polarity tag and were labelled NEU");
  }
  const std::string json = metrics_to_json(report);
  if (!a.out.empty()) write_text(a.out, json + "\n");
  std::cout << json << '\n';
  return 0;
}

struct PredictArgs {
  std::string checkpoint;
  std::string vocab;
  std::string data;
  std::string out;
  bool consistent = false;
};

int cmd_predict(const PredictArgs& a) {
  const auto corpus = load_corpus(a.data);
  const Vocab vocab = Vocab::load(a.vocab.empty() ? default_vocab(a.checkpoint) : fs::path(a.vocab));
  const PairSets pred = predict_corpus(load_checkpoint(a.checkpoint), vocab, corpus, a.consistent, nullptr);
  if (a.out.empty()) {
    write_prediction_dump(std::cout, pred);
  } else {
    std::ofstream out(a.out, std::ios::binary);
    if (!out) throw DataError(DataError::Kind::Io, 0, "cannot write " + a.out);
    write_prediction_dump(out, pred);
  }
  return 0;
}

int cmd_stats(const std::string& data) {
  std::cout << label_stats_to_json(label_stats(load_corpus(data))) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint aspect-term and polarity tagging with gradient-harmonized, adversarially regularised training"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Write a synthetic tagged corpus");
  synth->add_option("--out", sa.out, "Output corpus path")->required();
  synth->add_option("--n", sa.n, "Number of sentences")->capture_default_str();
  synth->add_option("--seed", sa.seed, "Random seed")->capture_default_str();
  synth->add_option("--imbalance", sa.imbalance, "Target O : non-O term-tag ratio")->capture_default_str();
  synth->add_flag("--no-coordination", sa.no_coordination, "Disable the coordinated-aspect family");
  synth->add_flag("--no-neutral", sa.no_neutral, "Disable the neutral family");
  synth->add_flag("--conflict", sa.conflict, "Enable the conflict (CON) family");

  TrainArgs ta;
  std::uint64_t seed_override = 0;
  auto* train = app.add_subcommand("train", "Run two-stage training");
  train->add_option("--config", ta.config, "Configuration file (key = value)")->required();
  train->add_option("--train", ta.train, "Training corpus")->required();
  train->add_option("--dev", ta.dev, "Development corpus for per-epoch F1");
  train->add_option("--out-dir", ta.out_dir, "Directory for checkpoints, vocabulary and logs")->required();
  train->add_option("--stage", ta.stage, "Stages to run: 1, 2 or all")->capture_default_str();
  train->add_option("--from", ta.from, "Start from this checkpoint (its directory must hold vocab.txt)");
  auto* seed_opt = train->add_option("--seed", seed_override, "Override the configured seed");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Score predictions against a tagged corpus");
  eval->add_option("--checkpoint", ea.checkpoint, "Model checkpoint");
  eval->add_option("--predictions", ea.predictions, "Prediction dump to score instead of a checkpoint");
  eval->add_option("--vocab", ea.vocab, "Vocabulary file (default: vocab.txt beside the checkpoint)");
  eval->add_option("--data", ea.data, "Gold corpus")->required();
  eval->add_option("--out", ea.out, "Also write the report to this file");
  eval->add_flag("--consistent-decode", ea.consistent, "One polarity per predicted term span");

  PredictArgs pa;
  auto* predict_cmd = app.add_subcommand("predict", "Write predicted pairs, one sentence per line");
  predict_cmd->add_option("--checkpoint", pa.checkpoint, "Model checkpoint")->required();
  predict_cmd->add_option("--vocab", pa.vocab, "Vocabulary file (default: vocab.txt beside the checkpoint)");
  predict_cmd->add_option("--data", pa.data, "Corpus to tag (tags are ignored)")->required();
  predict_cmd->add_option("--out", pa.out, "Output path (default: stdout)");
  predict_cmd->add_flag("--consistent-decode", pa.consistent, "One polarity per predicted term span");

  std::string stats_data;
  auto* stats = app.add_subcommand("stats", "Print label counts of a corpus");
  stats->add_option("--data", stats_data, "Corpus")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(sa);
    if (*train) {
      if (seed_opt->count() > 0) ta.seed = seed_override;
      return cmd_train(ta);
    }
    if (*eval) return cmd_eval(ea);
    if (*predict_cmd) return cmd_predict(pa);
    if (*stats) return cmd_stats(stats_data);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
