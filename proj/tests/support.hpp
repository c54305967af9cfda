#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "grace/corpus.hpp"
#include "grace/model.hpp"
#include "grace/ops.hpp"
#include "grace/tensor.hpp"

namespace grace::testing {

using MatD = Mat<double>;
using VarD = Var<double>;

inline MatD random_matrix(Index r, Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  MatD m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

struct GradCheckResult {
  double max_rel_error = 0;
  std::string worst;
};

/// Compares reverse-mode gradients of a scalar function with central
/// differences (step h) for every entry of every input. The relative error of
/// one input is ||analytic - numeric|| / max(||analytic||, ||numeric||), with
/// an absolute fallback when both vanish.
inline GradCheckResult grad_check(const std::function<VarD()>& f, std::vector<VarD> inputs, double h = 1e-5) {
  std::vector<MatD> analytic;
  {
    Tape<double> tape;
    for (auto& in : inputs) in.zero_grad();
    VarD y = f();
    tape.backward(y);
    for (auto& in : inputs) analytic.push_back(in.has_grad() ? in.grad() : MatD::Zero(in.rows(), in.cols()));
  }
  GradCheckResult res;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    MatD numeric(inputs[k].rows(), inputs[k].cols());
    for (Index i = 0; i < numeric.size(); ++i) {
      double& x = inputs[k].mutable_value().data()[i];
      const double saved = x;
      double fp, fm;
      {
        NoGradScope<double> ng;
        x = saved + h;
        fp = f().item();
        x = saved - h;
        fm = f().item();
      }
      x = saved;
      numeric.data()[i] = (fp - fm) / (2 * h);
    }
    const double diff = (analytic[k] - numeric).norm();
    const double scale = std::max(analytic[k].norm(), numeric.norm());
    const double rel = scale > 1e-8 ? diff / scale : diff;
    if (rel > res.max_rel_error) {
      res.max_rel_error = rel;
      res.worst = "input " + std::to_string(k);
    }
  }
  return res;
}

inline EncoderConfig tiny_config(int asc_layers = 1) {
  EncoderConfig c;
  c.layers = 2;
  c.shared_layers = 1;
  c.hidden = 8;
  c.heads = 2;
  c.ffn = 12;
  c.vocab_size = 12;
  c.max_len = 10;
  c.asc_layers = asc_layers;
  c.dropout = 0.0;
  return c;
}

/// Scales every weight so the tiny model has non-trivial activations.
template <typename Scalar>
void spread_weights(GraceModel<Scalar>& m, std::uint64_t seed, double scale = 0.4) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  for (const auto& e : m.params().entries()) {
    auto& v = m.params().at(e.name).mutable_value();
    for (Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<Scalar>(d(rng));
  }
}

/// Random sentence with valid BIO term tags and term-consistent polarity.
inline EncodedExample random_example(std::mt19937_64& rng, int length, int vocab_size) {
  EncodedExample e;
  std::uniform_int_distribution<int> tok(4, vocab_size - 1), coin(0, 3), pol(0, 3);
  e.ids.push_back(2);
  e.term_ids.push_back(2);
  e.polarity_ids.push_back(4);
  e.mask.push_back(0);
  int current_pol = 4;
  int prev = 2;
  for (int i = 0; i < length; ++i) {
    int t = 2;
    const int c = coin(rng);
    if (c == 0) t = 0;
    if (c == 1 && prev != 2) t = 1;
    if (t == 0) current_pol = pol(rng);
    e.ids.push_back(tok(rng));
    e.term_ids.push_back(t);
    e.polarity_ids.push_back(t == 2 ? 4 : current_pol);
    e.mask.push_back(1);
    prev = t;
  }
  e.ids.push_back(3);
  e.term_ids.push_back(2);
  e.polarity_ids.push_back(4);
  e.mask.push_back(0);
  return e;
}

/// Random valid tagged sentence over a small lexicon; every run has one
/// non-O polarity.
inline TaggedSentence random_sentence(std::mt19937_64& rng, int length) {
  static const char* kWords[] = {"the", "screen", "battery", "is", "great", "and", "slow", "keyboard", "food", "ok"};
  std::uniform_int_distribution<int> word(0, 9), coin(0, 3), pol(0, 3);
  TaggedSentence s;
  TermTag prev = TermTag::O;
  Polarity current = Polarity::NEU;
  for (int i = 0; i < length; ++i) {
    TermTag t = TermTag::O;
    const int c = coin(rng);
    if (c == 0) t = TermTag::B;
    if (c == 1 && prev != TermTag::O) t = TermTag::I;
    if (t == TermTag::B) current = polarity_from_id(pol(rng));
    s.tokens.emplace_back(kWords[word(rng)]);
    s.terms.push_back(t);
    s.polarities.push_back(t == TermTag::O ? Polarity::O : current);
    prev = t;
  }
  return s;
}

}  // namespace grace::testing
