#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "grace/tags.hpp"

namespace grace {

struct SynthOptions {
  std::size_t n_sentences = 100;
  std::uint64_t seed = 1;
  double imbalance = 20.0;      // target ratio of O to non-O term tags
  bool coordination = true;     // "the A and the B are ADJ" family
  bool neutral = true;          // "i used the A yesterday" family
  bool conflict = false;        // "the A is ADJ+ but ADJ-" family (CON)
  std::size_t max_tokens = 126; // longest sentence emitted (max_len minus the two specials)
};

/// Template-grammar corpus over a fixed lexicon of about 200 words.
///
/// Every sentence holds one opinion clause padded with filler tokens on both
/// sides so that the corpus-wide O:non-O ratio tracks `imbalance`. Polarity is
/// a function of the clause adjective: positive adjectives give POS, negative
/// give NEG, the neutral family gives NEU and the conflict family CON.
std::vector<TaggedSentence> synth_generate(const SynthOptions& options);

/// Every word the generator can emit.
std::vector<std::string> synth_lexicon();

}  // namespace grace
