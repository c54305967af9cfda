#pragma once

// Corpus wire format: one token per line as "token<TAB>term<TAB>polarity",
// a blank line ends a sentence, and a '#' in column 0 starts a comment line.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "grace/tags.hpp"
#include "grace/vocab.hpp"

namespace grace {

std::vector<TaggedSentence> parse_corpus(std::istream& in);
std::vector<TaggedSentence> load_corpus(const std::filesystem::path& path);

void write_corpus(std::ostream& out, const std::vector<TaggedSentence>& corpus);
void save_corpus(const std::filesystem::path& path, const std::vector<TaggedSentence>& corpus);

/// Model-ready ids for one sentence: [CLS] tokens [SEP], with `O` tags at the
/// two special positions and a mask marking real tokens.
struct EncodedExample {
  std::vector<int> ids;
  std::vector<int> term_ids;
  std::vector<int> polarity_ids;
  std::vector<unsigned char> mask;
  std::size_t source = 0;  // index into the originating corpus

  std::size_t length() const noexcept { return ids.size(); }
};

/// Throws DataError(Overlength) when the sentence plus specials exceeds max_len.
EncodedExample encode_example(const TaggedSentence& s, const Vocab& vocab, std::size_t max_len);

/// Encodes a corpus, skipping overlength sentences. `on_skip` receives a
/// diagnostic for each skipped sentence.
std::vector<EncodedExample> encode_corpus(const std::vector<TaggedSentence>& corpus, const Vocab& vocab,
                                          std::size_t max_len,
                                          const std::function<void(const std::string&)>& on_skip = {});

/// Shuffle order for one epoch; a pure function of (seed, stream, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t stream, std::uint64_t epoch);

}  // namespace grace
