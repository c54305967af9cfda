#include "grace/train.hpp"

#include <algorithm>
#include <random>
#include <sstream>

#include <json.hpp>

#include "grace/errors.hpp"

namespace grace {
namespace {

std::vector<TermTag> term_tags(std::span<const int> ids) {
  std::vector<TermTag> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(term_tag_from_id(id));
  return out;
}

struct PhaseSettings {
  bool polarity = false;
  std::optional<VatConfig> vat;
  int epochs = 0;
};

}  // namespace

std::string to_string(Phase p) {
  switch (p) {
    case Phase::Stage1: return "stage1";
    case Phase::Stage1Vat: return "stage1_vat";
    case Phase::Stage2: return "stage2";
  }
  return "stage1";
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t phase, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(phase), static_cast<std::uint32_t>(a),
                    static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

std::vector<RowSpan> packed_term_spans(const PackedBatch& packed, std::span<const int> term_ids) {
  if (static_cast<Index>(term_ids.size()) != packed.rows()) throw ShapeError("packed_term_spans: one tag per row");
  std::vector<RowSpan> spans(static_cast<std::size_t>(packed.rows()));
  for (Index i = 0; i < packed.rows(); ++i) spans[i] = {i, i + 1};
  for (const Segment& s : packed.segments) {
    if (s.length < 2) continue;
    const auto inner = term_tags(term_ids.subspan(static_cast<std::size_t>(s.offset) + 1,
                                                  static_cast<std::size_t>(s.length - 2)));
    const TokenBoundaries b = extract_boundaries(inner);
    for (std::size_t j = 0; j < b.size(); ++j) {
      const Index base = s.offset + 1;
      spans[static_cast<std::size_t>(base) + j] = {base + b.spans[j].begin, base + b.spans[j].end};
    }
  }
  return spans;
}

TrainingBatch make_batch(const std::vector<EncodedExample>& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ShapeError("make_batch: empty batch");
  TrainingBatch b;
  std::vector<std::vector<int>> seqs;
  seqs.reserve(indices.size());
  for (std::size_t i : indices) {
    const EncodedExample& e = data.at(i);
    seqs.push_back(e.ids);
    b.term_ids.insert(b.term_ids.end(), e.term_ids.begin(), e.term_ids.end());
    b.polarity_ids.insert(b.polarity_ids.end(), e.polarity_ids.begin(), e.polarity_ids.end());
    b.mask.insert(b.mask.end(), e.mask.begin(), e.mask.end());
  }
  b.packed = PackedBatch::pack(std::span<const std::vector<int>>(seqs));
  b.term_spans = packed_term_spans(b.packed, std::span<const int>(b.term_ids));
  return b;
}

PairSets encoded_gold_pairs(const std::vector<EncodedExample>& data) {
  PairSets out;
  out.reserve(data.size());
  for (const auto& e : data) {
    std::vector<TermTag> terms;
    std::vector<Polarity> pols;
    for (std::size_t j = 1; j + 1 < e.length(); ++j) {
      terms.push_back(term_tag_from_id(e.term_ids[j]));
      pols.push_back(polarity_from_id(e.polarity_ids[j]));
    }
    out.push_back(decode_pairs(terms, pols));
  }
  return out;
}

PairSets prediction_pairs(const std::vector<Prediction>& preds, DecodeDiagnostics* diagnostics) {
  PairSets out;
  out.reserve(preds.size());
  for (const auto& p : preds) {
    out.push_back(decode_pairs(p.terms, p.polarities, PolarityStrategy::FirstToken, nullptr, diagnostics));
  }
  return out;
}

std::string to_json_line(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.global_epoch;
  j["phase"] = to_string(r.phase);
  j["phase_epoch"] = r.epoch;
  j["L_e"] = r.loss_term;
  j["L_c"] = r.loss_polarity;
  j["L_VAT"] = r.loss_vat;
  if (r.f1_dev) {
    j["F1_dev"] = *r.f1_dev;
  } else {
    j["F1_dev"] = nullptr;
  }
  j["steps"] = r.steps;
  return j.dump();
}

Trainer::Trainer(TrainConfig cfg, GraceModel<float> model) : cfg_(std::move(cfg)), model_(std::move(model)) {
  cfg_.validate();
}

MetricsReport Trainer::evaluate(const std::vector<EncodedExample>& data, bool consistent) const {
  PredictOptions opt;
  opt.consistent = consistent;
  opt.consistent_head = cfg_.consistent_polarity;
  return pair_prf(encoded_gold_pairs(data), prediction_pairs(predict(model_, data, opt)));
}

void Trainer::train_stage1(const std::vector<EncodedExample>& train) {
  run_phase(Phase::Stage1, train);
  if (cfg_.vat && cfg_.stage1_vat_epochs > 0) run_phase(Phase::Stage1Vat, train);
}

void Trainer::train_stage2(const std::vector<EncodedExample>& train) {
  model_.init_asc_from_ate(derive_seed(cfg_.seed, static_cast<std::uint64_t>(Phase::Stage2), 0, 0));
  run_phase(Phase::Stage2, train);
}

void Trainer::run_phase(Phase phase, const std::vector<EncodedExample>& train) {
  if (train.empty()) throw ShapeError("training set is empty");
  PhaseSettings ps;
  std::vector<Adam<float>::Group> groups;
  switch (phase) {
    case Phase::Stage1:
      ps.epochs = cfg_.stage1_epochs;
      groups.push_back({model_.ate_parameters(), cfg_.lr_stage1});
      break;
    case Phase::Stage1Vat: {
      ps.epochs = cfg_.stage1_vat_epochs;
      VatConfig v = cfg_.vat_config;
      v.apply_to = VatBranch::Ate;
      ps.vat = v;
      groups.push_back({model_.ate_parameters(), cfg_.lr_stage1_vat});
      break;
    }
    case Phase::Stage2:
      ps.epochs = cfg_.stage2_epochs;
      ps.polarity = true;
      if (cfg_.vat) ps.vat = cfg_.vat_config;
      groups.push_back({model_.asc_parameters(), cfg_.lr_stage2_asc});
      groups.push_back({model_.ate_parameters(), cfg_.lr_stage2_ate});
      break;
  }
  if (ps.epochs <= 0) return;

  const std::size_t n = train.size();
  const std::size_t bs = static_cast<std::size_t>(cfg_.batch_size);
  const std::size_t per_epoch = (n + bs - 1) / bs;
  const auto total_steps = static_cast<std::int64_t>(per_epoch * static_cast<std::size_t>(ps.epochs));
  WarmupSchedule schedule{static_cast<std::int64_t>(std::ceil(cfg_.warmup_fraction * static_cast<double>(total_steps)))};
  Adam<float> adam(std::move(groups), schedule);

  GradientHistogram term_hist(cfg_.ghm_bins, cfg_.ghm_momentum);
  GradientHistogram pol_hist(cfg_.ghm_bins, cfg_.ghm_momentum);
  const auto phase_id = static_cast<std::uint64_t>(phase);

  for (int epoch = 1; epoch <= ps.epochs; ++epoch) {
    const auto order = epoch_order(n, cfg_.seed, phase_id, static_cast<std::uint64_t>(epoch));
    std::vector<double> term_counts(static_cast<std::size_t>(cfg_.ghm_bins), 0.0);
    std::vector<double> pol_counts(static_cast<std::size_t>(cfg_.ghm_bins), 0.0);
    double sum_e = 0, sum_c = 0, sum_v = 0;
    std::size_t steps = 0;

    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t stop = std::min(n, start + bs);
      const TrainingBatch batch =
          make_batch(train, std::span<const std::size_t>(order.data() + start, stop - start));
      const auto step = static_cast<std::uint64_t>(adam.steps());

      LossOptions lo;
      lo.term = true;
      lo.polarity = ps.polarity;
      lo.term_histogram = cfg_.ghm ? &term_hist : nullptr;
      lo.polarity_histogram = cfg_.ghm ? &pol_hist : nullptr;
      lo.ema = cfg_.ghm_ema;
      lo.vat = ps.vat;
      lo.vat_seed = derive_seed(cfg_.seed, phase_id, step, 2);
      lo.consistent = ps.polarity && cfg_.consistent_polarity;
      lo.vat_diagnostics = &vat_diag_;

      std::mt19937_64 dropout_rng(derive_seed(cfg_.seed, phase_id, step, 1));
      ForwardOptions<float> fwd;
      fwd.training = model_.config().dropout > 0;
      fwd.rng = &dropout_rng;

      {
        Tape<float> tape;
        const auto loss = loss_total(model_, batch, lo, fwd);
        tape.backward(loss.total);
        sum_e += loss.term;
        sum_c += loss.polarity;
        sum_v += loss.vat;
        for (double g : loss.term_norms) term_counts[static_cast<std::size_t>(bin_index(g, cfg_.ghm_bins))] += 1;
        for (double g : loss.polarity_norms) pol_counts[static_cast<std::size_t>(bin_index(g, cfg_.ghm_bins))] += 1;
      }
      adam.clip_grad_norm(cfg_.clip_norm);
      adam.step();
      model_.params().zero_grad();
      ++steps;
    }

    EpochRecord rec;
    rec.phase = phase;
    rec.epoch = epoch;
    rec.global_epoch = static_cast<int>(records_.size()) + 1;
    rec.loss_term = sum_e / static_cast<double>(steps);
    rec.loss_polarity = sum_c / static_cast<double>(steps);
    rec.loss_vat = sum_v / static_cast<double>(steps);
    rec.steps = steps;
    if (cfg_.dev_eval && !dev_.empty()) {
      if (phase == Phase::Stage2) {
        rec.f1_dev = evaluate(dev_).overall.f1;
      } else {
        // Before stage 2 only term spans are meaningful: score spans with a
        // shared placeholder polarity.
        auto preds = predict(model_, dev_);
        for (auto& p : preds) std::fill(p.polarities.begin(), p.polarities.end(), Polarity::NEU);
        PairSets gold = encoded_gold_pairs(dev_);
        for (auto& s : gold) {
          for (auto& x : s) x.polarity = Polarity::NEU;
        }
        rec.f1_dev = pair_prf(gold, prediction_pairs(preds)).overall.f1;
      }
    }
    const std::vector<double> zeros(static_cast<std::size_t>(cfg_.ghm_bins), 0.0);
    term_snapshots_.push_back({rec.global_epoch, term_counts, cfg_.ghm ? term_hist.ema() : zeros});
    if (ps.polarity) polarity_snapshots_.push_back({rec.global_epoch, pol_counts, cfg_.ghm ? pol_hist.ema() : zeros});
    records_.push_back(rec);
    if (hooks_.on_epoch) hooks_.on_epoch(rec);
  }
  if (hooks_.on_phase_end) hooks_.on_phase_end(phase, model_);
}

}  // namespace grace
