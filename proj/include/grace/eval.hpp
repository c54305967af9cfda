#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "grace/ghm.hpp"
#include "grace/spans.hpp"
#include "grace/tags.hpp"

namespace grace {

using PairSets = std::vector<std::vector<AspectPolarityPair>>;

struct PrfScore {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::size_t n_gold = 0;
  std::size_t n_pred = 0;
  std::size_t n_correct = 0;
};

/// Micro-averaged exact-match metrics. A predicted pair is correct iff its
/// (begin, end, polarity) equals a gold pair of the same sentence.
struct MetricsReport {
  PrfScore overall;
  std::array<PrfScore, 4> per_polarity{};  // indexed by POS, NEU, NEG, CON ids
  std::vector<std::string> diagnostics;
};

MetricsReport pair_prf(const PairSets& gold, const PairSets& pred);

/// Structured report with keys precision, recall, f1, n_gold, n_pred,
/// n_correct and a per_polarity object.
std::string metrics_to_json(const MetricsReport& report);

struct LabelStats {
  std::array<std::size_t, kNumTermTags> term{};
  std::array<std::size_t, kNumPolarityTags> polarity{};
  std::size_t tokens = 0;
  std::size_t sentences = 0;

  double o_share() const;       // share of O among term tags
  double o_ratio() const;       // O : non-O among term tags
};

LabelStats label_stats(const std::vector<TaggedSentence>& corpus);
std::string label_stats_to_json(const LabelStats& stats);

/// Histogram export: per-snapshot bin rows plus a summary line.
void export_gradient_stats(const std::vector<HistogramSnapshot>& snapshots, const std::filesystem::path& path);

}  // namespace grace
