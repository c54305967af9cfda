#include "grace/ghm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <string>

#include "grace/errors.hpp"

namespace grace {

GradientHistogram::GradientHistogram(int bins, double momentum)
    : bins_(bins), momentum_(momentum) {
  if (bins < 1) throw ConfigError("gradient histogram needs at least one bin");
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw ConfigError("histogram momentum must lie in [0, 1]");
  counts_.assign(static_cast<std::size_t>(bins), 0.0);
  ema_.assign(static_cast<std::size_t>(bins), 0.0);
}

void GradientHistogram::update(std::span<const double> norms) {
  std::fill(counts_.begin(), counts_.end(), 0.0);
  for (double g : norms) counts_[static_cast<std::size_t>(bin_index(g, bins_))] += 1.0;
  for (std::size_t j = 0; j < ema_.size(); ++j) ema_[j] = momentum_ * ema_[j] + (1.0 - momentum_) * counts_[j];
  observed_ = norms.size();
  ++updates_;
}

void GradientHistogram::set_ema(std::vector<double> ema) {
  if (ema.size() != ema_.size()) throw ShapeError("set_ema: bin count mismatch");
  ema_ = std::move(ema);
}

double gradient_norm(std::span<const double> p, int true_class) {
  if (true_class < 0 || static_cast<std::size_t>(true_class) >= p.size()) {
    throw ShapeError("gradient_norm: true class out of range");
  }
  const double g = 1.0 - p[static_cast<std::size_t>(true_class)];
  return std::clamp(g, 0.0, 1.0);
}

int bin_index(double g, int bins) {
  if (!(g >= 0.0 && g <= 1.0)) throw NumericError("bin_index: gradient norm outside [0, 1]");
  if (bins < 1) throw ConfigError("bin_index: bins must be positive");
  const int b = static_cast<int>(std::floor(g * bins));
  return std::min(b, bins - 1);
}

double exact_density(double g, std::span<const double> all_g, double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1.0)) throw NumericError("exact_density: epsilon must lie in (0, 1]");
  const double lo = g - epsilon / 2, hi = g + epsilon / 2;
  std::size_t count = 0;
  for (double x : all_g) {
    if (lo <= x && x < hi) ++count;
  }
  const double valid = std::min(hi, 1.0) - std::max(lo, 0.0);
  return static_cast<double>(count) / valid;
}

std::vector<double> harmonizing_weights(std::span<const double> norms, GradientHistogram& hist, bool ema) {
  if (norms.empty()) throw ShapeError("harmonizing_weights: empty batch");
  hist.update(norms);
  const double total = static_cast<double>(norms.size());
  const double m = hist.bins();
  std::vector<double> weights(norms.size());
  for (std::size_t i = 0; i < norms.size(); ++i) {
    const auto bin = static_cast<std::size_t>(bin_index(norms[i], hist.bins()));
    double count = hist.counts()[bin];
    if (ema && hist.ema()[bin] > 0.0) count = hist.ema()[bin];
    weights[i] = total / (m * count);
  }
  return weights;
}

double weighted_cross_entropy(const Mat<double>& probs, std::span<const int> true_classes,
                              std::span<const double> weights) {
  const auto n = static_cast<std::size_t>(probs.rows());
  if (true_classes.size() != n || weights.size() != n) throw ShapeError("weighted_cross_entropy: size mismatch");
  if (n == 0) throw ShapeError("weighted_cross_entropy: empty batch");
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int t = true_classes[i];
    if (t < 0 || t >= probs.cols()) throw ShapeError("weighted_cross_entropy: class out of range");
    total -= weights[i] * std::log(std::max(probs(static_cast<Index>(i), t), kProbabilityFloor));
  }
  return total / static_cast<double>(n);
}

double ghm_cross_entropy(const Mat<double>& probs, std::span<const int> true_classes, GradientHistogram& hist,
                         bool ema) {
  const auto weights = update_and_weights(probs, true_classes, hist, ema);
  return weighted_cross_entropy(probs, true_classes, weights);
}

double HistogramSnapshot::total() const { return std::accumulate(counts.begin(), counts.end(), 0.0); }

void write_histogram_snapshots(std::ostream& out, const std::vector<HistogramSnapshot>& snapshots) {
  double labels = 0;
  std::size_t bins = 0;
  char buf[160];
  for (const auto& s : snapshots) {
    bins = s.counts.size();
    const double width = 1.0 / static_cast<double>(bins);
    for (std::size_t j = 0; j < bins; ++j) {
      std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.0f,%.17g\n", width * static_cast<double>(j),
                    width * static_cast<double>(j + 1), s.counts[j], s.ema.at(j));
      out << buf;
    }
    labels += s.total();
  }
  std::snprintf(buf, sizeof buf, "# snapshots=%zu bins=%zu labels=%.0f\n", snapshots.size(), bins, labels);
  out << buf;
}

}  // namespace grace
