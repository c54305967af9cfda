#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace grace {

/// Aspect-term tags. Ids are fixed: B=0, I=1, O=2.
enum class TermTag : std::uint8_t { B = 0, I = 1, O = 2 };

/// Polarity tags. Ids are fixed: POS=0, NEU=1, NEG=2, CON=3, O=4.
enum class Polarity : std::uint8_t { POS = 0, NEU = 1, NEG = 2, CON = 3, O = 4 };

inline constexpr int kNumTermTags = 3;
inline constexpr int kNumPolarityTags = 5;

inline constexpr std::array<TermTag, kNumTermTags> kAllTermTags{TermTag::B, TermTag::I, TermTag::O};
inline constexpr std::array<Polarity, kNumPolarityTags> kAllPolarities{
    Polarity::POS, Polarity::NEU, Polarity::NEG, Polarity::CON, Polarity::O};

constexpr int id_of(TermTag t) noexcept { return static_cast<int>(t); }
constexpr int id_of(Polarity p) noexcept { return static_cast<int>(p); }

std::string_view to_string(TermTag t) noexcept;
std::string_view to_string(Polarity p) noexcept;
std::optional<TermTag> parse_term_tag(std::string_view s) noexcept;
std::optional<Polarity> parse_polarity(std::string_view s) noexcept;
TermTag term_tag_from_id(int id);
Polarity polarity_from_id(int id);

/// One sentence with parallel term and polarity tag sequences.
struct TaggedSentence {
  std::vector<std::string> tokens;
  std::vector<TermTag> terms;
  std::vector<Polarity> polarities;
  std::size_t first_line = 0;  // 1-based source span, 0 when not loaded from a file
  std::size_t last_line = 0;

  std::size_t size() const noexcept { return tokens.size(); }
  bool operator==(const TaggedSentence& other) const {
    return tokens == other.tokens && terms == other.terms && polarities == other.polarities;
  }
};

/// First violated sentence invariant, if any.
struct SentenceViolation {
  enum class Kind { LengthMismatch, OrphanInside, PolarityMismatch, InconsistentPolarity };
  Kind kind;
  std::size_t token = 0;  // offending token index
  std::string message;
};

std::optional<SentenceViolation> find_violation(const TaggedSentence& s);

bool is_valid_bio(const std::vector<TermTag>& tags) noexcept;

}  // namespace grace
