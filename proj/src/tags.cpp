#include "grace/tags.hpp"

#include <stdexcept>

#include "grace/errors.hpp"

namespace grace {

std::string_view to_string(TermTag t) noexcept {
  switch (t) {
    case TermTag::B: return "B";
    case TermTag::I: return "I";
    case TermTag::O: return "O";
  }
  return "?";
}

std::string_view to_string(Polarity p) noexcept {
  switch (p) {
    case Polarity::POS: return "POS";
    case Polarity::NEU: return "NEU";
    case Polarity::NEG: return "NEG";
    case Polarity::CON: return "CON";
    case Polarity::O: return "O";
  }
  return "?";
}

std::optional<TermTag> parse_term_tag(std::string_view s) noexcept {
  for (TermTag t : kAllTermTags) {
    if (to_string(t) == s) return t;
  }
  return std::nullopt;
}

std::optional<Polarity> parse_polarity(std::string_view s) noexcept {
  for (Polarity p : kAllPolarities) {
    if (to_string(p) == s) return p;
  }
  return std::nullopt;
}

TermTag term_tag_from_id(int id) {
  if (id < 0 || id >= kNumTermTags) throw ShapeError("term tag id out of range: " + std::to_string(id));
  return static_cast<TermTag>(id);
}

Polarity polarity_from_id(int id) {
  if (id < 0 || id >= kNumPolarityTags) throw ShapeError("polarity id out of range: " + std::to_string(id));
  return static_cast<Polarity>(id);
}

bool is_valid_bio(const std::vector<TermTag>& tags) noexcept {
  TermTag prev = TermTag::O;
  for (TermTag t : tags) {
    if (t == TermTag::I && prev == TermTag::O) return false;
    prev = t;
  }
  return true;
}

std::optional<SentenceViolation> find_violation(const TaggedSentence& s) {
  using Kind = SentenceViolation::Kind;
  if (s.terms.size() != s.tokens.size() || s.polarities.size() != s.tokens.size()) {
    return SentenceViolation{Kind::LengthMismatch, 0, "token and tag sequences differ in length"};
  }
  for (std::size_t i = 0; i < s.size(); ++i) {
    const TermTag t = s.terms[i];
    const Polarity p = s.polarities[i];
    if (t == TermTag::I && (i == 0 || s.terms[i - 1] == TermTag::O)) {
      return SentenceViolation{Kind::OrphanInside, i, "I tag without a preceding B or I"};
    }
    if ((t == TermTag::O) != (p == Polarity::O)) {
      return SentenceViolation{Kind::PolarityMismatch, i,
                               "polarity must be O exactly where the term tag is O"};
    }
    if (t == TermTag::I && p != s.polarities[i - 1]) {
      return SentenceViolation{Kind::InconsistentPolarity, i, "polarity changes inside an aspect term"};
    }
  }
  return std::nullopt;
}

}  // namespace grace
