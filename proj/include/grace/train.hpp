#pragma once

// Two-stage training: term tagging first (plain, then with adversarial
// regularisation), then the joint objective with the polarity decoder.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "grace/adam.hpp"
#include "grace/config.hpp"
#include "grace/corpus.hpp"
#include "grace/eval.hpp"
#include "grace/ghm.hpp"
#include "grace/model.hpp"
#include "grace/spans.hpp"
#include "grace/vat.hpp"

namespace grace {

enum class Phase { Stage1 = 1, Stage1Vat = 2, Stage2 = 3 };

std::string to_string(Phase p);

/// Deterministic 64-bit seed for one (phase, a, b) coordinate of a run.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t phase, std::uint64_t a, std::uint64_t b);

/// Packed examples with their targets. Specials carry mask 0.
struct TrainingBatch {
  PackedBatch packed;
  std::vector<int> term_ids;
  std::vector<int> polarity_ids;
  std::vector<unsigned char> mask;
  std::vector<RowSpan> term_spans;  // enclosing gold term span of every packed row

  Index rows() const noexcept { return packed.rows(); }
};

TrainingBatch make_batch(const std::vector<EncodedExample>& data, std::span<const std::size_t> indices);

/// Enclosing-span rows for packed term tags; sentence specials and O tokens
/// are singletons.
std::vector<RowSpan> packed_term_spans(const PackedBatch& packed, std::span<const int> term_ids);

struct LossOptions {
  bool term = true;
  bool polarity = true;
  GradientHistogram* term_histogram = nullptr;      // null: plain cross-entropy
  GradientHistogram* polarity_histogram = nullptr;
  bool ema = true;
  std::optional<VatConfig> vat;                     // empty: no adversarial term
  std::uint64_t vat_seed = 0;
  bool consistent = false;                          // polarity scores from the span-pooled head
  VatDiagnostics* vat_diagnostics = nullptr;
};

template <typename Scalar>
struct LossBreakdown {
  Var<Scalar> total;
  double term = 0;
  double polarity = 0;
  double vat = 0;
  std::vector<double> term_norms;
  std::vector<double> polarity_norms;
};

/// J = L_e + L_c + L_VAT for one batch; disabled components are zero and
/// absent from the graph. The polarity branch is teacher-forced with the gold
/// term tags. Throws NumericError naming every component if any is non-finite.
template <typename Scalar>
LossBreakdown<Scalar> loss_total(const GraceModel<Scalar>& model, const TrainingBatch& batch,
                                 const LossOptions& opt, const ForwardOptions<Scalar>& fwd = {}) {
  if (!opt.term && !opt.polarity) throw ConfigError("loss_total: no loss component enabled");
  const std::span<const int> q(batch.term_ids);
  const std::span<const unsigned char> mask(batch.mask);
  const VatInputs vin{&batch.packed, q, mask};

  LossBreakdown<Scalar> out;
  const auto layers = model.encode(batch.packed, nullptr, fwd);
  std::optional<BranchOutput<Scalar>> ate, asc;
  if (opt.term) ate = model.ate_branch(layers);
  if (opt.polarity) asc = model.asc_branch(layers, batch.packed, q, fwd, opt.consistent ? &batch.term_spans : nullptr);

  std::optional<Mat<Scalar>> r;
  CleanDistributions<Scalar> clean;
  if (opt.vat) {
    const VatBranch branch = opt.vat->apply_to;
    // Without dropout the clean pass equals the main pass, so its outputs are reused.
    const bool reuse_ate = !fwd.training && ate.has_value();
    const bool reuse_asc = !fwd.training && asc.has_value() && !opt.consistent;
    if ((branch != VatBranch::Asc && !reuse_ate) || (branch != VatBranch::Ate && !reuse_asc)) {
      clean = clean_distributions(model, vin, branch);
    }
    if (branch != VatBranch::Asc && reuse_ate) clean.ate = ate->probs.value();
    if (branch != VatBranch::Ate && reuse_asc) clean.asc = asc->probs.value();
    r = adversarial_perturbation(model, vin, clean, *opt.vat, opt.vat_seed, opt.vat_diagnostics);
  }

  Var<Scalar> total;
  auto add = [&](const Var<Scalar>& part) { total = total.defined() ? total + part : part; };
  if (opt.term) {
    Var<Scalar> le = masked_cross_entropy(ate->probs, q, mask, opt.term_histogram, opt.ema, &out.term_norms);
    out.term = static_cast<double>(le.item());
    add(le);
  }
  if (opt.polarity) {
    Var<Scalar> lc = masked_cross_entropy(asc->probs, std::span<const int>(batch.polarity_ids), mask,
                                          opt.polarity_histogram, opt.ema, &out.polarity_norms);
    out.polarity = static_cast<double>(lc.item());
    add(lc);
  }
  if (opt.vat) {
    Var<Scalar> lv = vat_loss(model, vin, clean, *r, *opt.vat);
    out.vat = static_cast<double>(lv.item());
    add(lv);
  }
  if (!std::isfinite(out.term) || !std::isfinite(out.polarity) || !std::isfinite(out.vat)) {
    throw NumericError("non-finite loss: L_e=" + std::to_string(out.term) + " L_c=" + std::to_string(out.polarity) +
                       " L_VAT=" + std::to_string(out.vat));
  }
  out.total = total;
  return out;
}

/// Tags predicted for one sentence (specials stripped).
struct Prediction {
  std::vector<TermTag> terms;
  std::vector<Polarity> polarities;
};

struct PredictOptions {
  std::size_t batch_size = 64;
  bool consistent = false;           // one polarity per predicted term span
  bool consistent_head = false;      // span scores from the trained consistent head instead of the polarity head
};

namespace detail {

template <typename Scalar>
int row_argmax(const Mat<Scalar>& m, Index row) {
  Index best = 0;
  m.row(row).maxCoeff(&best);
  return static_cast<int>(best);
}

}  // namespace detail

/// Cascade inference: term tags by argmax, BIO repair, then the polarity
/// branch queried with the repaired tags.
template <typename Scalar>
std::vector<Prediction> predict(const GraceModel<Scalar>& model, const std::vector<EncodedExample>& data,
                                const PredictOptions& opt = {}) {
  NoGradScope<Scalar> no_grad;
  std::vector<Prediction> out(data.size());
  const std::size_t step = std::max<std::size_t>(1, opt.batch_size);
  for (std::size_t start = 0; start < data.size(); start += step) {
    const std::size_t stop = std::min(data.size(), start + step);
    std::vector<std::vector<int>> seqs;
    for (std::size_t i = start; i < stop; ++i) seqs.push_back(data[i].ids);
    const PackedBatch packed = PackedBatch::pack(std::span<const std::vector<int>>(seqs));
    const auto layers = model.encode(packed);
    const Mat<Scalar> term_probs = model.ate_branch(layers).probs.value();

    std::vector<int> q(static_cast<std::size_t>(packed.rows()), id_of(TermTag::O));
    for (std::size_t k = 0; k < seqs.size(); ++k) {
      const Segment& s = packed.segments[k];
      std::vector<TermTag> tags;
      for (Index j = 1; j + 1 < s.length; ++j) tags.push_back(term_tag_from_id(detail::row_argmax(term_probs, s.offset + j)));
      tags = repair_bio(tags);
      for (std::size_t j = 0; j < tags.size(); ++j) q[static_cast<std::size_t>(s.offset) + 1 + j] = id_of(tags[j]);
      out[start + k].terms = std::move(tags);
    }

    Mat<Scalar> pol;
    if (opt.consistent) {
      const auto spans = packed_term_spans(packed, std::span<const int>(q));
      if (opt.consistent_head) {
        pol = model.asc_branch(layers, packed, std::span<const int>(q), {}, &spans).logits.value();
      } else {
        const auto g = model.asc_branch(layers, packed, std::span<const int>(q)).states;
        pol = linear(span_max_pool(g, std::span<const RowSpan>(spans)), model.params().at("head.polarity.weight"),
                     model.params().at("head.polarity.bias"))
                  .value();
      }
    } else {
      pol = model.asc_branch(layers, packed, std::span<const int>(q)).logits.value();
    }
    for (std::size_t k = 0; k < seqs.size(); ++k) {
      const Segment& s = packed.segments[k];
      auto& p = out[start + k].polarities;
      for (Index j = 1; j + 1 < s.length; ++j) p.push_back(polarity_from_id(detail::row_argmax(pol, s.offset + j)));
    }
  }
  return out;
}

/// Gold pairs from encoded targets (specials stripped).
PairSets encoded_gold_pairs(const std::vector<EncodedExample>& data);
PairSets prediction_pairs(const std::vector<Prediction>& preds, DecodeDiagnostics* diagnostics = nullptr);

struct EpochRecord {
  Phase phase = Phase::Stage1;
  int epoch = 0;          // 1-based within the phase
  int global_epoch = 0;   // 1-based across all phases of the run
  double loss_term = 0;
  double loss_polarity = 0;
  double loss_vat = 0;
  std::optional<double> f1_dev;
  std::size_t steps = 0;
};

/// One JSON object per line: epoch, phase, L_e, L_c, L_VAT, F1_dev.
std::string to_json_line(const EpochRecord& r);

struct TrainingHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(Phase, const GraceModel<float>&)> on_phase_end;
};

/// Owns the model, per-phase optimizer and histograms, and the epoch log.
class Trainer {
 public:
  Trainer(TrainConfig cfg, GraceModel<float> model);

  void set_dev(std::vector<EncodedExample> dev) { dev_ = std::move(dev); }
  void set_hooks(TrainingHooks hooks) { hooks_ = std::move(hooks); }

  /// Term-only phase followed by the adversarial term phase (if enabled).
  void train_stage1(const std::vector<EncodedExample>& train);
  /// Initialises the decoder from the encoder, then trains the joint objective.
  void train_stage2(const std::vector<EncodedExample>& train);
  void run_phase(Phase phase, const std::vector<EncodedExample>& train);

  /// Pair F1 of the current model on `data`.
  MetricsReport evaluate(const std::vector<EncodedExample>& data, bool consistent = false) const;

  const TrainConfig& config() const noexcept { return cfg_; }
  const GraceModel<float>& model() const noexcept { return model_; }
  GraceModel<float>& model() noexcept { return model_; }
  const std::vector<EpochRecord>& records() const noexcept { return records_; }
  const std::vector<HistogramSnapshot>& term_snapshots() const noexcept { return term_snapshots_; }
  const std::vector<HistogramSnapshot>& polarity_snapshots() const noexcept { return polarity_snapshots_; }
  const VatDiagnostics& vat_diagnostics() const noexcept { return vat_diag_; }

 private:
  TrainConfig cfg_;
  GraceModel<float> model_;
  std::vector<EncodedExample> dev_;
  TrainingHooks hooks_;
  std::vector<EpochRecord> records_;
  std::vector<HistogramSnapshot> term_snapshots_;
  std::vector<HistogramSnapshot> polarity_snapshots_;
  VatDiagnostics vat_diag_;
};

}  // namespace grace
