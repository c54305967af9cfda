#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <json.hpp>
#include <random>
#include <sstream>
#include <vector>

#include "grace/checkpoint.hpp"
#include "grace/config.hpp"
#include "grace/errors.hpp"
#include "grace/synth.hpp"
#include "grace/train.hpp"
#include "grace/vocab.hpp"
#include "support.hpp"

using namespace grace;
using namespace grace::testing;

namespace {

struct SmallData {
  Vocab vocab;
  std::vector<EncodedExample> train;
  std::vector<EncodedExample> dev;
};

SmallData small_data(std::size_t n, std::uint64_t seed) {
  SynthOptions o;
  o.n_sentences = n;
  o.seed = seed;
  o.imbalance = 5.0;
  o.max_tokens = 30;
  const auto corpus = synth_generate(o);
  o.n_sentences = 40;
  o.seed = seed + 1000;
  const auto dev = synth_generate(o);
  SmallData d;
  d.vocab = Vocab::build(corpus);
  d.train = encode_corpus(corpus, d.vocab, 32);
  d.dev = encode_corpus(dev, d.vocab, 32);
  return d;
}

TrainConfig small_config(const SmallData& d, std::uint64_t seed) {
  TrainConfig c = desk_preset();
  c.seed = seed;
  c.stage1_epochs = 2;
  c.stage1_vat_epochs = 1;
  c.stage2_epochs = 2;
  c.batch_size = 8;
  c.ghm_bins = 10;
  c.model.layers = 2;
  c.model.shared_layers = 1;
  c.model.hidden = 16;
  c.model.heads = 2;
  c.model.ffn = 32;
  c.model.max_len = 32;
  c.model.asc_layers = 1;
  c.model.vocab_size = static_cast<int>(d.vocab.size());
  return c;
}

std::string serialize(const GraceModel<float>& m) {
  std::ostringstream out;
  write_checkpoint(out, make_checkpoint(m));
  return out.str();
}

TrainingBatch tiny_batch(std::uint64_t seed, int sentences = 2) {
  std::mt19937_64 rng(seed);
  std::vector<EncodedExample> data;
  std::vector<std::size_t> idx;
  for (int s = 0; s < sentences; ++s) {
    data.push_back(random_example(rng, 3 + s, 12));
    idx.push_back(static_cast<std::size_t>(s));
  }
  return make_batch(data, idx);
}

// Mean of -log p[target] over masked rows, weighted by GHM factors when m > 0.
long double reference_ce(const MatD& p, const std::vector<int>& targets, const std::vector<unsigned char>& mask,
                         int m) {
  std::vector<Index> rows;
  for (Index i = 0; i < p.rows(); ++i) {
    if (mask[static_cast<std::size_t>(i)]) rows.push_back(i);
  }
  const long double n = static_cast<long double>(rows.size());
  std::vector<int> bin(rows.size());
  std::vector<long double> count(static_cast<std::size_t>(std::max(m, 1)), 0);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const long double g = 1.0L - p(rows[k], targets[static_cast<std::size_t>(rows[k])]);
    bin[k] = m > 0 ? std::min(static_cast<int>(std::floor(g * m)), m - 1) : 0;
    count[static_cast<std::size_t>(bin[k])] += 1;
  }
  long double total = 0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const long double beta = m > 0 ? n / (m * count[static_cast<std::size_t>(bin[k])]) : 1.0L;
    total -= beta * std::log(static_cast<long double>(p(rows[k], targets[static_cast<std::size_t>(rows[k])])));
  }
  return total / n;
}

long double reference_kl(const MatD& p, const MatD& q, const std::vector<unsigned char>& mask) {
  long double total = 0;
  int rows = 0;
  for (Index i = 0; i < p.rows(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    ++rows;
    for (Index c = 0; c < p.cols(); ++c) {
      const long double a = p(i, c), b = q(i, c);
      if (a > 0) total += a * std::log(a / b);
    }
  }
  return total / rows;
}

struct Branches {
  MatD ate, asc;
};

Branches branch_probs(const GraceModel<double>& m, const TrainingBatch& b, const MatD* r = nullptr) {
  NoGradScope<double> ng;
  const VarD perturbation = r != nullptr ? VarD::constant(*r) : VarD();
  const auto layers = m.encode(b.packed, r != nullptr ? &perturbation : nullptr);
  return {m.ate_branch(layers).probs.value(), m.asc_branch(layers, b.packed, b.term_ids).probs.value()};
}

bool all_zero_grads(const std::vector<VarD>& ps) {
  for (const auto& p : ps) {
    if (p.has_grad() && p.grad().cwiseAbs().maxCoeff() != 0.0) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("train") {
  TEST_CASE("without reweighting or adversarial term the loss is the sum of cross-entropies") {
    GraceModel<double> m(tiny_config(), 61);
    spread_weights(m, 62);
    const auto b = tiny_batch(63);
    const auto p = branch_probs(m, b);
    const long double expected = reference_ce(p.ate, b.term_ids, b.mask, 0) + reference_ce(p.asc, b.polarity_ids, b.mask, 0);
    LossOptions lo;
    const auto loss = loss_total(m, b, lo);
    CHECK(std::abs(loss.total.item() - static_cast<double>(expected)) < 1e-12);
    CHECK(loss.vat == 0.0);
  }

  TEST_CASE("without the adversarial term the loss is L_e + L_c") {
    GraceModel<double> m(tiny_config(), 64);
    spread_weights(m, 65);
    const auto b = tiny_batch(66);
    GradientHistogram he(10, 0.75), hc(10, 0.75);
    LossOptions lo;
    lo.term_histogram = &he;
    lo.polarity_histogram = &hc;
    const auto loss = loss_total(m, b, lo);
    CHECK(loss.total.item() == loss.term + loss.polarity);
    CHECK(loss.term >= 0.0);
    CHECK(loss.polarity >= 0.0);
  }

  TEST_CASE("two-sentence hand trace of the full objective") {
    GraceModel<double> m(tiny_config(), 67);
    spread_weights(m, 68);
    const auto b = tiny_batch(69);
    VatConfig vc;
    vc.eps = 1.5;
    GradientHistogram he(10, 0.75), hc(10, 0.75);
    LossOptions lo;
    lo.term_histogram = &he;
    lo.polarity_histogram = &hc;
    lo.ema = false;
    lo.vat = vc;
    lo.vat_seed = 70;
    const auto loss = loss_total(m, b, lo);

    const auto clean = branch_probs(m, b);
    const VatInputs vin{&b.packed, b.term_ids, b.mask};
    const CleanDistributions<double> cd{clean.ate, clean.asc};
    const MatD r = adversarial_perturbation(m, vin, cd, vc, 70);
    const auto perturbed = branch_probs(m, b, &r);
    const long double le = reference_ce(clean.ate, b.term_ids, b.mask, 10);
    const long double lc = reference_ce(clean.asc, b.polarity_ids, b.mask, 10);
    const long double lv =
        (reference_kl(clean.ate, perturbed.ate, b.mask) + reference_kl(clean.asc, perturbed.asc, b.mask)) / 2;
    CHECK(std::abs(loss.term - static_cast<double>(le)) < 1e-12);
    CHECK(std::abs(loss.polarity - static_cast<double>(lc)) < 1e-12);
    CHECK(std::abs(loss.vat - static_cast<double>(lv)) < 1e-12);
    CHECK(std::abs(loss.total.item() - static_cast<double>(le + lc + lv)) < 1e-12);
    CHECK(he.observed() == 7);
  }

  TEST_CASE("polarity loss leaves encoder layers above the shared layer untouched") {
    GraceModel<double> m(tiny_config(), 71);
    spread_weights(m, 72);
    const auto b = tiny_batch(73);
    LossOptions lo;
    lo.term = false;
    m.params().zero_grad();
    {
      Tape<double> tape;
      tape.backward(loss_total(m, b, lo).total);
    }
    for (const auto& e : m.params().entries()) {
      const bool upper = e.name.starts_with("encoder.1.") || e.name.starts_with("head.term.");
      const bool touched = e.var.has_grad() && e.var.grad().cwiseAbs().maxCoeff() != 0.0;
      if (upper) CHECK_MESSAGE(!touched, e.name);
    }
    CHECK_FALSE(all_zero_grads(std::vector<VarD>{m.params().at("encoder.0.ffn.out.weight")}));
  }

  TEST_CASE("term loss leaves the polarity branch untouched") {
    GraceModel<double> m(tiny_config(), 74);
    spread_weights(m, 75);
    const auto b = tiny_batch(76);
    LossOptions lo;
    lo.polarity = false;
    m.params().zero_grad();
    {
      Tape<double> tape;
      tape.backward(loss_total(m, b, lo).total);
    }
    CHECK(all_zero_grads(m.asc_parameters()));
    CHECK_FALSE(all_zero_grads(m.ate_parameters()));
  }

  TEST_CASE("stage 1 trains the term branch only") {
    const auto d = small_data(40, 1);
    auto cfg = small_config(d, 3);
    cfg.dev_eval = false;
    Trainer t(cfg, GraceModel<float>(cfg.model, 4));
    const auto before = t.model().params().entries();
    std::vector<Mat<float>> asc_before, ate_before;
    for (const auto& p : t.model().asc_parameters()) asc_before.push_back(p.value());
    for (const auto& p : t.model().ate_parameters()) ate_before.push_back(p.value());
    t.train_stage1(d.train);
    const auto asc_after = t.model().asc_parameters();
    const auto ate_after = t.model().ate_parameters();
    for (std::size_t k = 0; k < asc_after.size(); ++k) CHECK(asc_after[k].value() == asc_before[k]);
    std::size_t changed = 0;
    for (std::size_t k = 0; k < ate_after.size(); ++k) changed += ate_after[k].value() != ate_before[k];
    CHECK(changed == ate_after.size());
    CHECK(t.records().size() == 3);
    CHECK(t.records()[2].phase == Phase::Stage1Vat);
    CHECK(t.records()[2].loss_vat > 0.0);
    CHECK(t.polarity_snapshots().empty());
    CHECK(t.term_snapshots().size() == 3);
  }

  TEST_CASE("stage 1 loss decreases on 50 sentences for at least 4 of 5 seeds") {
    int decreased = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto d = small_data(50, 100 + seed);
      auto cfg = desk_preset();
      cfg.seed = seed;
      cfg.stage1_epochs = 5;
      cfg.vat = false;
      cfg.dev_eval = false;
      cfg.model.max_len = 32;
      cfg.model.vocab_size = static_cast<int>(d.vocab.size());
      Trainer t(cfg, GraceModel<float>(cfg.model, derive_seed(seed, 0, 0, 0)));
      t.train_stage1(d.train);
      REQUIRE(t.records().size() == 5);
      if (t.records()[4].loss_term < t.records()[0].loss_term) ++decreased;
    }
    CHECK(decreased >= 4);
  }

  TEST_CASE("stage 2 resumed from a stage 1 checkpoint is bit-exact") {
    const auto d = small_data(40, 2);
    auto cfg = small_config(d, 5);
    cfg.dev_eval = false;
    Trainer a(cfg, GraceModel<float>(cfg.model, 6));
    a.train_stage1(d.train);
    std::stringstream saved;
    write_checkpoint(saved, make_checkpoint(a.model()));
    a.train_stage2(d.train);

    Trainer b(cfg, read_checkpoint(saved).model());
    b.train_stage2(d.train);
    CHECK(serialize(a.model()) == serialize(b.model()));
    CHECK(a.records().back().loss_polarity == b.records().back().loss_polarity);
  }

  TEST_CASE("two complete runs are identical") {
    const auto d = small_data(40, 3);
    auto cfg = small_config(d, 7);
    auto run = [&] {
      Trainer t(cfg, GraceModel<float>(cfg.model, derive_seed(cfg.seed, 0, 0, 0)));
      t.set_dev(d.dev);
      t.train_stage1(d.train);
      t.train_stage2(d.train);
      std::string log;
      for (const auto& r : t.records()) log += to_json_line(r) + "\n";
      return std::make_pair(serialize(t.model()), log + metrics_to_json(t.evaluate(d.dev)));
    };
    const auto first = run();
    const auto second = run();
    CHECK(first.first == second.first);
    CHECK(first.second == second.second);
  }

  TEST_CASE("stage 2 records polarity snapshots with global epochs") {
    const auto d = small_data(30, 4);
    auto cfg = small_config(d, 8);
    cfg.vat = false;
    cfg.dev_eval = true;
    Trainer t(cfg, GraceModel<float>(cfg.model, 9));
    t.set_dev(d.dev);
    t.train_stage1(d.train);
    t.train_stage2(d.train);
    REQUIRE(t.records().size() == 4);
    CHECK(t.records()[3].global_epoch == 4);
    CHECK(t.records()[3].epoch == 2);
    CHECK(t.records()[3].f1_dev.has_value());
    REQUIRE(t.polarity_snapshots().size() == 2);
    CHECK(t.polarity_snapshots()[0].epoch == 3);
    std::size_t labels = 0;
    for (const auto& e : d.train) {
      for (auto mk : e.mask) labels += mk;
    }
    for (const auto& s : t.polarity_snapshots()) CHECK(s.total() == static_cast<double>(labels));
    for (const auto& s : t.term_snapshots()) CHECK(s.total() == static_cast<double>(labels));
  }

  TEST_CASE("learning rate groups differ by their ratio after one step") {
    const TrainConfig paper = paper_preset();
    CHECK(paper.lr_stage2_asc / paper.lr_stage2_ate == doctest::Approx(10.0));
    GraceModel<float> m(tiny_config(), 10);
    Adam<float> adam({{m.asc_parameters(), paper.lr_stage2_asc}, {m.ate_parameters(), paper.lr_stage2_ate}},
                     WarmupSchedule{0});
    std::vector<Mat<float>> before;
    for (const auto& e : m.params().entries()) before.push_back(e.var.value());
    {
      Tape<float> tape;
      Var<float> total;
      for (const auto& e : m.params().entries()) total = total.defined() ? total + sum(e.var) : sum(e.var);
      tape.backward(total);
    }
    adam.step();
    double asc = 0, ate = 0;
    std::size_t k = 0;
    for (const auto& e : m.params().entries()) {
      const double delta = (e.var.value() - before[k++]).cwiseAbs().maxCoeff();
      if (m.is_asc_parameter(e.name)) {
        asc = std::max(asc, delta);
      } else {
        ate = std::max(ate, delta);
      }
    }
    CHECK(asc / ate == doctest::Approx(10.0).epsilon(1e-2));
  }

  TEST_CASE("epoch log line keys") {
    EpochRecord r;
    r.phase = Phase::Stage2;
    r.epoch = 2;
    r.global_epoch = 5;
    r.steps = 3;
    const auto j = nlohmann::json::parse(to_json_line(r));
    CHECK(j["epoch"] == 5);
    CHECK(j["phase"] == "stage2");
    CHECK(j["phase_epoch"] == 2);
    CHECK(j["F1_dev"].is_null());
    for (const char* key : {"L_e", "L_c", "L_VAT", "steps"}) CHECK(j.contains(key));
  }

  TEST_CASE("seed derivation separates coordinates") {
    CHECK(derive_seed(1, 1, 0, 1) == derive_seed(1, 1, 0, 1));
    CHECK(derive_seed(1, 1, 0, 1) != derive_seed(1, 1, 0, 2));
    CHECK(derive_seed(1, 1, 0, 1) != derive_seed(1, 2, 0, 1));
    CHECK(derive_seed(1, 1, 0, 1) != derive_seed(2, 1, 0, 1));
  }

  TEST_CASE("term spans of a packed batch") {
    const auto b = tiny_batch(77, 1);
    REQUIRE(b.term_spans.size() == static_cast<std::size_t>(b.rows()));
    for (std::size_t i = 0; i < b.term_spans.size(); ++i) {
      const auto s = b.term_spans[i];
      CHECK(s.begin <= static_cast<Index>(i));
      CHECK(s.end > static_cast<Index>(i));
      if (b.term_ids[i] == id_of(TermTag::O)) CHECK(s.end - s.begin == 1);
    }
  }
}

TEST_SUITE("config") {
  TEST_CASE("missing key names the key") {
    std::istringstream in("seed = 3\n");
    try {
      parse_train_config(in);
      FAIL("expected a config error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("missing config key 'stage1_epochs'") != std::string::npos);
    }
  }

  TEST_CASE("preset fills defaults and keys override") {
    std::istringstream in("# comment\npreset = desk\nseed = 9\nmodel.hidden = 32\nvat_apply_to = asc\n");
    const auto c = parse_train_config(in);
    CHECK(c.seed == 9);
    CHECK(c.model.hidden == 32);
    CHECK(c.vat_config.apply_to == VatBranch::Asc);
    CHECK(c.stage2_epochs == desk_preset().stage2_epochs);
  }

  TEST_CASE("rejections") {
    auto fails = [](const std::string& text) {
      std::istringstream in(text);
      CHECK_THROWS_AS(parse_train_config(in), ConfigError);
    };
    fails("preset = desk\nbogus = 1\n");
    fails("preset = desk\nseed = 1\nseed = 2\n");
    fails("preset = desk\nseed\n");
    fails("preset = desk\nstage1_epochs = 0\n");
    fails("preset = desk\nlr_stage1 = -1\n");
    fails("preset = desk\nghm = maybe\n");
    fails("preset = desk\nmodel.hidden = 30\nmodel.heads = 4\n");
    fails("preset = desk\nmodel.asc_layers = 9\n");
    fails("preset = huge\n");
  }

  TEST_CASE("format and parse round trip for every preset") {
    for (const char* name : {"paper", "desk", "base"}) {
      const auto c = preset_by_name(name);
      std::istringstream in(format_train_config(c));
      CHECK(format_train_config(parse_train_config(in)) == format_train_config(c));
    }
    const auto keys = config_keys();
    const std::string text = format_train_config(desk_preset());
    for (const auto& k : keys) CHECK(text.find(k + " = ") != std::string::npos);
  }

  TEST_CASE("shipped config files equal their presets") {
    for (const char* name : {"paper", "desk", "base"}) {
      const auto path = std::filesystem::path(GRACE_SOURCE_DIR) / "configs" / (std::string(name) + ".cfg");
      CAPTURE(name);
      CHECK(format_train_config(load_train_config(path)) == format_train_config(preset_by_name(name)));
    }
  }

  TEST_CASE("preset values") {
    const auto p = paper_preset();
    CHECK(p.lr_stage1 == 3e-5);
    CHECK(p.lr_stage1_vat == 1e-5);
    CHECK(p.lr_stage2_asc == 3e-5);
    CHECK(p.lr_stage2_ate == 3e-6);
    CHECK(p.batch_size == 32);
    CHECK(p.ghm_bins == 24);
    CHECK(p.ghm_momentum == 0.75);
    CHECK(p.vat_config.xi == 1e-6);
    CHECK(p.vat_config.eps == 2.0);
    CHECK(p.model.asc_layers == 2);
    const auto b = base_preset();
    CHECK_FALSE(b.ghm);
    CHECK_FALSE(b.vat);
    CHECK(b.model.shared_layers == b.model.layers);
    CHECK(b.model.asc_layers == 0);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("round trip is bit-exact") {
    GraceModel<float> m(tiny_config(), 80);
    std::stringstream s;
    write_checkpoint(s, make_checkpoint(m, {{"phase", "stage1"}}));
    const auto back = read_checkpoint(s);
    REQUIRE(back.find_metadata("phase") != nullptr);
    CHECK(*back.find_metadata("phase") == "stage1");
    CHECK(back.config == m.config());
    CHECK(serialize(back.model()) == serialize(m));
  }

  TEST_CASE("corruption is rejected") {
    GraceModel<float> m(tiny_config(), 81);
    std::ostringstream s;
    write_checkpoint(s, make_checkpoint(m));
    const std::string good = s.str();
    auto fails = [](const std::string& bytes) {
      std::istringstream in(bytes);
      CHECK_THROWS_AS(read_checkpoint(in), DataError);
    };
    fails("not a checkpoint\n");
    fails(good.substr(0, good.size() - 4));
    fails(good + "x");
    std::string renamed = good;
    renamed.replace(renamed.find("tensor="), 7, "tensox=");
    fails(renamed);
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/model.ckpt"), DataError);
  }
}
