#pragma once

// Gradient-harmonized cross-entropy.
//
// Each label's difficulty is its gradient norm g = 1 - p[true] in [0, 1]. The
// unit interval is split into m equal bins; a label's weight is the batch label
// count divided by the estimated density m * count(bin of g), where the count
// is either the current batch histogram or its exponential moving average.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "grace/ops.hpp"

namespace grace {

class GradientHistogram {
 public:
  explicit GradientHistogram(int bins = 24, double momentum = 0.75);

  int bins() const noexcept { return bins_; }
  double momentum() const noexcept { return momentum_; }
  double epsilon() const noexcept { return 1.0 / bins_; }

  /// Current-batch counts U_j.
  const std::vector<double>& counts() const noexcept { return counts_; }
  /// Moving-average counts A_j.
  const std::vector<double>& ema() const noexcept { return ema_; }
  /// Labels seen in the last update.
  std::size_t observed() const noexcept { return observed_; }
  std::size_t updates() const noexcept { return updates_; }

  /// Replaces U with the histogram of `norms` and advances A <- alpha*A + (1-alpha)*U.
  void update(std::span<const double> norms);

  void set_ema(std::vector<double> ema);

 private:
  int bins_;
  double momentum_;
  std::vector<double> counts_;
  std::vector<double> ema_;
  std::size_t observed_ = 0;
  std::size_t updates_ = 0;
};

/// 1 - p[true_class]; equal to half the L1 norm of p minus the one-hot target.
double gradient_norm(std::span<const double> p, int true_class);

/// Bin of g under half-open bins [j/m, (j+1)/m), with g = 1 in the last bin.
int bin_index(double g, int bins);

/// Exact density: count of g_k with g - eps/2 <= g_k < g + eps/2, divided by the
/// clipped neighbourhood length min(g + eps/2, 1) - max(g - eps/2, 0).
double exact_density(double g, std::span<const double> all_g, double epsilon);

/// Updates the histogram with a batch of gradient norms and returns one weight
/// per label: N / (m * A_bin) with ema, N / (m * U_bin) without. A zero moving
/// average count in an occupied bin falls back to the batch count.
std::vector<double> harmonizing_weights(std::span<const double> norms, GradientHistogram& hist, bool ema);

/// Row-wise probabilities and true classes to harmonizing weights.
template <typename Scalar>
std::vector<double> update_and_weights(const Mat<Scalar>& probs, std::span<const int> true_classes,
                                       GradientHistogram& hist, bool ema) {
  if (static_cast<std::size_t>(probs.rows()) != true_classes.size()) {
    throw ShapeError("update_and_weights: one class per row required");
  }
  if (probs.rows() == 0) throw ShapeError("update_and_weights: empty batch");
  std::vector<double> norms(true_classes.size());
  std::vector<double> row(static_cast<std::size_t>(probs.cols()));
  for (Index i = 0; i < probs.rows(); ++i) {
    for (Index c = 0; c < probs.cols(); ++c) row[c] = static_cast<double>(probs(i, c));
    norms[i] = gradient_norm(row, true_classes[i]);
  }
  return harmonizing_weights(norms, hist, ema);
}

/// -(1/n) sum_i weights[i] * log(max(p_i[true_i], 1e-12)).
double weighted_cross_entropy(const Mat<double>& probs, std::span<const int> true_classes,
                              std::span<const double> weights);

/// Updates `hist` from the batch and returns the harmonized cross-entropy.
double ghm_cross_entropy(const Mat<double>& probs, std::span<const int> true_classes, GradientHistogram& hist,
                         bool ema);

/// Differentiable loss over the rows selected by `mask`. With `hist` null every
/// weight is 1 (plain cross-entropy); otherwise the histogram is updated from
/// the detached probabilities and the weights enter as constants.
template <typename Scalar>
Var<Scalar> masked_cross_entropy(const Var<Scalar>& probs, std::span<const int> targets,
                                 std::span<const unsigned char> mask, GradientHistogram* hist, bool ema,
                                 std::vector<double>* norms_out = nullptr) {
  const Index n = probs.rows();
  if (static_cast<Index>(targets.size()) != n || static_cast<Index>(mask.size()) != n) {
    throw ShapeError("masked_cross_entropy: targets/mask must have one entry per row");
  }
  std::vector<Index> rows;
  for (Index i = 0; i < n; ++i) {
    if (mask[i]) rows.push_back(i);
  }
  if (rows.empty()) throw ShapeError("masked_cross_entropy: no labelled rows");
  std::vector<Scalar> weights(static_cast<std::size_t>(n), Scalar(0));
  std::vector<double> norms(rows.size());
  std::vector<double> p(static_cast<std::size_t>(probs.cols()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    for (Index c = 0; c < probs.cols(); ++c) p[c] = static_cast<double>(probs.value()(rows[k], c));
    norms[k] = gradient_norm(p, targets[rows[k]]);
  }
  if (hist != nullptr) {
    const auto beta = harmonizing_weights(norms, *hist, ema);
    for (std::size_t k = 0; k < rows.size(); ++k) weights[rows[k]] = static_cast<Scalar>(beta[k]);
  } else {
    for (Index r : rows) weights[r] = Scalar(1);
  }
  if (norms_out != nullptr) *norms_out = std::move(norms);
  return weighted_nll(probs, targets, std::span<const Scalar>(weights), static_cast<Scalar>(rows.size()));
}

/// One per-epoch export of a histogram: accumulated label counts per bin and
/// the moving-average state at epoch end.
struct HistogramSnapshot {
  int epoch = 0;
  std::vector<double> counts;
  std::vector<double> ema;

  double total() const;
};

/// Writes "bin_lo,bin_hi,U,A" rows for every snapshot followed by one summary line.
void write_histogram_snapshots(std::ostream& out, const std::vector<HistogramSnapshot>& snapshots);

}  // namespace grace
