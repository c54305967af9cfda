#include "grace/spans.hpp"

#include <array>
#include <istream>
#include <ostream>
#include <sstream>

#include "grace/errors.hpp"

namespace grace {

TokenBoundaries extract_boundaries(const std::vector<TermTag>& terms) {
  if (!is_valid_bio(terms)) throw std::logic_error("extract_boundaries: invalid BIO sequence");
  TokenBoundaries b;
  const Index n = static_cast<Index>(terms.size());
  b.spans.resize(terms.size());
  Index i = 0;
  while (i < n) {
    if (terms[i] == TermTag::O) {
      b.spans[i] = {i, i + 1};
      ++i;
      continue;
    }
    Index end = i + 1;
    while (end < n && terms[end] == TermTag::I) ++end;
    for (Index k = i; k < end; ++k) b.spans[k] = {i, end};
    i = end;
  }
  return b;
}

std::vector<TermTag> tags_from_boundaries(const TokenBoundaries& b) {
  std::vector<TermTag> tags(b.size(), TermTag::O);
  for (std::size_t i = 0; i < b.size(); ++i) {
    const RowSpan s = b.spans[i];
    if (s.end - s.begin > 1) tags[i] = static_cast<Index>(i) == s.begin ? TermTag::B : TermTag::I;
  }
  return tags;
}

std::vector<TermTag> repair_bio(const std::vector<TermTag>& terms) {
  std::vector<TermTag> out = terms;
  TermTag prev = TermTag::O;
  for (auto& t : out) {
    if (t == TermTag::I && prev == TermTag::O) t = TermTag::B;
    prev = t;
  }
  return out;
}

std::vector<AspectPolarityPair> decode_pairs(const std::vector<TermTag>& terms,
                                             const std::vector<Polarity>& polarities,
                                             PolarityStrategy strategy,
                                             const std::vector<std::string>* tokens,
                                             DecodeDiagnostics* diagnostics) {
  if (terms.size() != polarities.size() || (tokens != nullptr && tokens->size() != terms.size())) {
    throw ShapeError("decode_pairs: sequences differ in length");
  }
  std::vector<AspectPolarityPair> pairs;
  const std::size_t n = terms.size();
  std::size_t i = 0;
  while (i < n) {
    if (terms[i] != TermTag::B) {
      ++i;
      continue;
    }
    std::size_t end = i + 1;
    while (end < n && terms[end] == TermTag::I) ++end;

    Polarity resolved = Polarity::O;
    if (strategy == PolarityStrategy::FirstToken) {
      resolved = polarities[i];
    } else {
      std::array<int, kNumPolarityTags> votes{};
      for (std::size_t k = i; k < end; ++k) {
        if (polarities[k] != Polarity::O) ++votes[id_of(polarities[k])];
      }
      int best = -1;
      for (int c = 0; c < kNumPolarityTags; ++c) {
        if (votes[c] > 0 && (best < 0 || votes[c] > votes[best])) best = c;
      }
      if (best >= 0) resolved = polarity_from_id(best);
    }
    if (resolved == Polarity::O) {
      resolved = Polarity::NEU;
      if (diagnostics != nullptr) ++diagnostics->unresolved_polarity;
    }

    AspectPolarityPair p;
    p.begin = static_cast<int>(i);
    p.end = static_cast<int>(end);
    p.polarity = resolved;
    if (tokens != nullptr) {
      for (std::size_t k = i; k < end; ++k) {
        if (k > i) p.surface += ' ';
        p.surface += (*tokens)[k];
      }
    }
    pairs.push_back(std::move(p));
    i = end;
  }
  return pairs;
}

std::vector<AspectPolarityPair> gold_pairs(const TaggedSentence& s) {
  return decode_pairs(s.terms, s.polarities, PolarityStrategy::FirstToken, &s.tokens);
}

std::string format_pairs(const std::vector<AspectPolarityPair>& pairs) {
  std::string out;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    if (k > 0) out += ' ';
    out += std::to_string(pairs[k].begin) + ':' + std::to_string(pairs[k].end) + ':' +
           std::string(to_string(pairs[k].polarity));
  }
  return out;
}

std::vector<AspectPolarityPair> parse_pairs(const std::string& line) {
  std::vector<AspectPolarityPair> pairs;
  std::istringstream in(line);
  std::string item;
  while (in >> item) {
    const auto c1 = item.find(':');
    const auto c2 = c1 == std::string::npos ? std::string::npos : item.find(':', c1 + 1);
    if (c2 == std::string::npos) throw DataError(DataError::Kind::Format, 0, "malformed pair '" + item + "'");
    AspectPolarityPair p;
    try {
      p.begin = std::stoi(item.substr(0, c1));
      p.end = std::stoi(item.substr(c1 + 1, c2 - c1 - 1));
    } catch (const std::exception&) {
      throw DataError(DataError::Kind::Format, 0, "malformed pair indices '" + item + "'");
    }
    const auto pol = parse_polarity(item.substr(c2 + 1));
    if (!pol || *pol == Polarity::O || p.begin < 0 || p.begin >= p.end) {
      throw DataError(DataError::Kind::Format, 0, "invalid pair '" + item + "'");
    }
    p.polarity = *pol;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void write_prediction_dump(std::ostream& out, const std::vector<std::vector<AspectPolarityPair>>& pairs) {
  for (const auto& sentence : pairs) out << format_pairs(sentence) << '\n';
}

std::vector<std::vector<AspectPolarityPair>> read_prediction_dump(std::istream& in) {
  std::vector<std::vector<AspectPolarityPair>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    try {
      out.push_back(parse_pairs(line));
    } catch (const DataError& e) {
      throw DataError(e.kind(), lineno, e.what());
    }
  }
  return out;
}

}  // namespace grace
