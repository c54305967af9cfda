#pragma once

// Aspect-term boundaries, BIO repair, and aspect-polarity pair assembly.
//
// All indices are 0-based and half-open. A term labeled "O B I O B" has
// boundaries [0,1) [1,3) [1,3) [3,4) [4,5).

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "grace/ops.hpp"
#include "grace/tags.hpp"

namespace grace {

/// Per-token enclosing span. O tokens map to their own singleton span.
struct TokenBoundaries {
  std::vector<RowSpan> spans;

  std::size_t size() const noexcept { return spans.size(); }
};

struct AspectPolarityPair {
  int begin = 0;
  int end = 0;
  std::string surface;
  Polarity polarity = Polarity::NEU;

  /// Identity is (begin, end, polarity); the surface is informational.
  bool operator==(const AspectPolarityPair& o) const {
    return begin == o.begin && end == o.end && polarity == o.polarity;
  }
  bool operator<(const AspectPolarityPair& o) const {
    if (begin != o.begin) return begin < o.begin;
    if (end != o.end) return end < o.end;
    return polarity < o.polarity;
  }
};

enum class PolarityStrategy { FirstToken, Majority };

struct DecodeDiagnostics {
  std::size_t unresolved_polarity = 0;  // runs whose polarity tags were all O
};

/// Expects valid BIO; call repair_bio first on model output.
TokenBoundaries extract_boundaries(const std::vector<TermTag>& terms);

/// Inverse of extract_boundaries for boundary sets: spans longer than one
/// token become B I..., singletons become O.
std::vector<TermTag> tags_from_boundaries(const TokenBoundaries& b);

/// Rewrites every I that follows O (or starts the sequence) to B.
std::vector<TermTag> repair_bio(const std::vector<TermTag>& terms);

std::vector<AspectPolarityPair> decode_pairs(const std::vector<TermTag>& terms,
                                             const std::vector<Polarity>& polarities,
                                             PolarityStrategy strategy = PolarityStrategy::FirstToken,
                                             const std::vector<std::string>* tokens = nullptr,
                                             DecodeDiagnostics* diagnostics = nullptr);

/// Pairs of a gold sentence.
std::vector<AspectPolarityPair> gold_pairs(const TaggedSentence& s);

/// Prediction dump line: space-separated "begin:end:POLARITY" triples.
std::string format_pairs(const std::vector<AspectPolarityPair>& pairs);
std::vector<AspectPolarityPair> parse_pairs(const std::string& line);

void write_prediction_dump(std::ostream& out, const std::vector<std::vector<AspectPolarityPair>>& pairs);
std::vector<std::vector<AspectPolarityPair>> read_prediction_dump(std::istream& in);

/// Consistent-polarity scores: each token's row is ReLU(max-pool(G[span]) * w + b)
/// over its enclosing span. Scores are computed at the first row of each span and
/// copied to the others, so every token of one term gets bit-identical scores.
template <typename Scalar>
Var<Scalar> consistent_polarity(const Var<Scalar>& decoder_states, const std::vector<RowSpan>& row_spans,
                                const Var<Scalar>& weight, const Var<Scalar>& bias) {
  const auto scores = relu(linear(span_max_pool(decoder_states, std::span<const RowSpan>(row_spans)), weight, bias));
  std::vector<int> first(row_spans.size());
  for (std::size_t i = 0; i < row_spans.size(); ++i) first[i] = static_cast<int>(row_spans[i].begin);
  return gather_rows(scores, std::span<const int>(first));
}

}  // namespace grace
