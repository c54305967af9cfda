#include "grace/corpus.hpp"

#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>

#include "grace/errors.hpp"

namespace grace {
namespace {

DataError::Kind to_error_kind(SentenceViolation::Kind k) {
  switch (k) {
    case SentenceViolation::Kind::LengthMismatch: return DataError::Kind::LengthMismatch;
    case SentenceViolation::Kind::OrphanInside: return DataError::Kind::OrphanInside;
    case SentenceViolation::Kind::PolarityMismatch: return DataError::Kind::PolarityMismatch;
    case SentenceViolation::Kind::InconsistentPolarity: return DataError::Kind::InconsistentPolarity;
  }
  return DataError::Kind::Format;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

}  // namespace

std::vector<TaggedSentence> parse_corpus(std::istream& in) {
  std::vector<TaggedSentence> corpus;
  TaggedSentence current;
  std::vector<std::size_t> lines;

  auto flush = [&]() {
    if (current.tokens.empty()) return;
    if (auto v = find_violation(current)) {
      throw DataError(to_error_kind(v->kind), lines.at(v->token), v->message);
    }
    current.first_line = lines.front();
    current.last_line = lines.back();
    corpus.push_back(std::move(current));
    current = TaggedSentence{};
    lines.clear();
  };

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    if (line.front() == '#') continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 3) {
      throw DataError(DataError::Kind::FieldCount, lineno,
                      "expected 3 tab-separated fields, found " + std::to_string(fields.size()));
    }
    if (fields[0].empty()) throw DataError(DataError::Kind::FieldCount, lineno, "empty token");
    const auto term = parse_term_tag(fields[1]);
    if (!term) throw DataError(DataError::Kind::UnknownTag, lineno, "unknown term tag '" + fields[1] + "'");
    const auto pol = parse_polarity(fields[2]);
    if (!pol) throw DataError(DataError::Kind::UnknownTag, lineno, "unknown polarity tag '" + fields[2] + "'");
    current.tokens.push_back(fields[0]);
    current.terms.push_back(*term);
    current.polarities.push_back(*pol);
    lines.push_back(lineno);
  }
  flush();
  return corpus;
}

std::vector<TaggedSentence> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(DataError::Kind::Io, 0, "cannot open corpus " + path.string());
  return parse_corpus(in);
}

void write_corpus(std::ostream& out, const std::vector<TaggedSentence>& corpus) {
  for (const auto& s : corpus) {
    if (s.tokens.empty()) continue;
    for (std::size_t i = 0; i < s.size(); ++i) {
      out << s.tokens[i] << '\t' << to_string(s.terms[i]) << '\t' << to_string(s.polarities[i]) << '\n';
    }
    out << '\n';
  }
}

void save_corpus(const std::filesystem::path& path, const std::vector<TaggedSentence>& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataError::Kind::Io, 0, "cannot write corpus " + path.string());
  write_corpus(out, corpus);
  if (!out) throw DataError(DataError::Kind::Io, 0, "write failed for " + path.string());
}

EncodedExample encode_example(const TaggedSentence& s, const Vocab& vocab, std::size_t max_len) {
  const std::size_t n = s.size();
  if (n + 2 > max_len) {
    throw DataError(DataError::Kind::Overlength, s.first_line,
                    "sentence of " + std::to_string(n) + " tokens exceeds max_len " + std::to_string(max_len) +
                        " with specials");
  }
  EncodedExample e;
  e.ids.reserve(n + 2);
  e.ids.push_back(Vocab::kCls);
  e.term_ids.push_back(id_of(TermTag::O));
  e.polarity_ids.push_back(id_of(Polarity::O));
  e.mask.push_back(0);
  for (std::size_t i = 0; i < n; ++i) {
    e.ids.push_back(vocab.id(s.tokens[i]));
    e.term_ids.push_back(id_of(s.terms[i]));
    e.polarity_ids.push_back(id_of(s.polarities[i]));
    e.mask.push_back(1);
  }
  e.ids.push_back(Vocab::kSep);
  e.term_ids.push_back(id_of(TermTag::O));
  e.polarity_ids.push_back(id_of(Polarity::O));
  e.mask.push_back(0);
  return e;
}

std::vector<EncodedExample> encode_corpus(const std::vector<TaggedSentence>& corpus, const Vocab& vocab,
                                          std::size_t max_len,
                                          const std::function<void(const std::string&)>& on_skip) {
  std::vector<EncodedExample> out;
  out.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    try {
      out.push_back(encode_example(corpus[i], vocab, max_len));
      out.back().source = i;
    } catch (const DataError& e) {
      if (e.kind() != DataError::Kind::Overlength) throw;
      if (on_skip) on_skip("skipping sentence " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t stream, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(epoch), 0x5eedu};
  std::mt19937_64 rng(seq);
  // Fisher-Yates with an explicit draw so the order does not depend on std::shuffle internals.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

}  // namespace grace
