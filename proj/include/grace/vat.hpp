#pragma once

// Virtual adversarial training on token embeddings.
//
// One linearised power step: probe the embeddings with xi * d for Gaussian d,
// differentiate the KL divergence between clean and probed tag distributions
// with respect to the probe (parameters held constant), and scale the result
// to L2 norm eps per sentence.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "grace/model.hpp"

namespace grace {

enum class VatBranch { Ate, Asc, Both };

inline std::string to_string(VatBranch b) {
  switch (b) {
    case VatBranch::Ate: return "ate";
    case VatBranch::Asc: return "asc";
    case VatBranch::Both: return "both";
  }
  return "both";
}

inline VatBranch parse_vat_branch(const std::string& s) {
  if (s == "ate") return VatBranch::Ate;
  if (s == "asc") return VatBranch::Asc;
  if (s == "both") return VatBranch::Both;
  throw ConfigError("vat branch must be one of ate, asc, both (got '" + s + "')");
}

struct VatConfig {
  double xi = 1e-6;
  double eps = 2.0;
  VatBranch apply_to = VatBranch::Both;

  void validate() const {
    if (!(xi > 0)) throw ConfigError("vat xi must be positive");
    if (!(eps > 0)) throw ConfigError("vat eps must be positive");
  }
};

struct VatDiagnostics {
  std::size_t zero_gradient = 0;  // sentences whose probe gradient vanished
};

/// Inputs that fix the tag distributions apart from the embeddings.
struct VatInputs {
  const PackedBatch* batch = nullptr;
  std::span<const int> q_labels;             // query-stream labels for the polarity branch
  std::span<const unsigned char> mask;       // rows that enter the divergence
};

/// Detached branch distributions on the unperturbed input.
template <typename Scalar>
struct CleanDistributions {
  Mat<Scalar> ate;
  Mat<Scalar> asc;
};

namespace detail {

inline std::vector<int> masked_rows(std::span<const unsigned char> mask) {
  std::vector<int> rows;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) rows.push_back(static_cast<int>(i));
  }
  if (rows.empty()) throw ShapeError("vat: no rows selected by the mask");
  return rows;
}

}  // namespace detail

template <typename Scalar>
CleanDistributions<Scalar> clean_distributions(const GraceModel<Scalar>& model, const VatInputs& in, VatBranch branch) {
  NoGradScope<Scalar> no_grad;
  const auto layers = model.encode(*in.batch);
  CleanDistributions<Scalar> out;
  if (branch != VatBranch::Asc) out.ate = model.ate_branch(layers).probs.value();
  if (branch != VatBranch::Ate) out.asc = model.asc_branch(layers, *in.batch, in.q_labels).probs.value();
  return out;
}

/// Mean row-wise KL(clean || model(E + perturbation)) over masked rows; the
/// average of both branch divergences when `branch` is Both. The clean side is
/// a constant.
template <typename Scalar>
Var<Scalar> branch_divergence(const GraceModel<Scalar>& model, const VatInputs& in,
                              const CleanDistributions<Scalar>& clean, const Var<Scalar>& perturbation,
                              VatBranch branch) {
  const auto rows = detail::masked_rows(in.mask);
  const std::span<const int> sel(rows);
  const auto layers = model.encode(*in.batch, &perturbation);
  Var<Scalar> total;
  int parts = 0;
  auto accumulate = [&](const Mat<Scalar>& p_clean, const Var<Scalar>& q) {
    Var<Scalar> kl = kl_divergence(gather_rows(Var<Scalar>::constant(p_clean), sel), gather_rows(q, sel));
    total = parts == 0 ? kl : total + kl;
    ++parts;
  };
  if (branch != VatBranch::Asc) accumulate(clean.ate, model.ate_branch(layers).probs);
  if (branch != VatBranch::Ate) accumulate(clean.asc, model.asc_branch(layers, *in.batch, in.q_labels).probs);
  return parts == 2 ? total * Scalar(0.5) : total;
}

/// Adversarial direction scaled to L2 norm eps over each sentence's embedding
/// block. Leaves parameter gradients untouched. Sentences with a vanishing
/// probe gradient get a zero perturbation and are counted in `diag`.
template <typename Scalar>
Mat<Scalar> adversarial_perturbation(const GraceModel<Scalar>& model, const VatInputs& in,
                                     const CleanDistributions<Scalar>& clean, const VatConfig& cfg,
                                     std::uint64_t seed, VatDiagnostics* diag = nullptr) {
  cfg.validate();
  const Index n = in.batch->rows(), h = model.config().hidden;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat<Scalar> d(n, h);
  for (Index i = 0; i < d.size(); ++i) d.data()[i] = static_cast<Scalar>(normal(rng));

  Tape<Scalar> tape(ParameterMode::Frozen);
  Var<Scalar> probe = tape.leaf(d * static_cast<Scalar>(cfg.xi));
  Var<Scalar> kl = branch_divergence(model, in, clean, probe, cfg.apply_to);
  Mat<Scalar> grad = Mat<Scalar>::Zero(n, h);
  if (kl.requires_grad()) {
    tape.backward(kl);
    grad = probe.grad();
  }

  Mat<Scalar> r = Mat<Scalar>::Zero(n, h);
  for (const Segment& s : in.batch->segments) {
    const auto block = grad.middleRows(s.offset, s.length);
    const double norm = std::sqrt(block.template cast<double>().squaredNorm());
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      if (diag != nullptr) ++diag->zero_gradient;
      continue;
    }
    r.middleRows(s.offset, s.length) = (block.template cast<double>() * (cfg.eps / norm)).template cast<Scalar>();
  }
  return r;
}

/// Consistency loss between the clean distribution and the distribution under
/// perturbation r. Differentiable in the model parameters through the
/// perturbed branch only.
template <typename Scalar>
Var<Scalar> vat_loss(const GraceModel<Scalar>& model, const VatInputs& in, const CleanDistributions<Scalar>& clean,
                     const Mat<Scalar>& r, const VatConfig& cfg) {
  if (r.rows() != in.batch->rows() || r.cols() != model.config().hidden) {
    throw ShapeError("vat_loss: perturbation shape does not match the embeddings");
  }
  return branch_divergence(model, in, clean, Var<Scalar>::constant(r), cfg.apply_to);
}

}  // namespace grace
