#include "grace/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "grace/errors.hpp"

namespace grace {

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

Vocab::Vocab() {
  for (const char* special : {"[PAD]", "[UNK]", "[CLS]", "[SEP]"}) add(special);
}

void Vocab::add(std::string token) {
  if (ids_.count(token) != 0) return;
  ids_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(std::move(token));
}

Vocab Vocab::build(const std::vector<TaggedSentence>& corpus, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : corpus) {
    for (const auto& t : s.tokens) ++counts[lowercase(t)];
  }
  Vocab v;
  for (const auto& [token, count] : counts) {
    if (count >= min_count) v.add(token);
  }
  return v;
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  Vocab v;
  for (const auto& t : tokens) v.add(lowercase(t));
  return v;
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(DataError::Kind::Io, 0, "cannot open vocabulary " + path.string());
  Vocab v;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) throw DataError(DataError::Kind::Format, lineno, "empty vocabulary entry");
    if (v.contains(line)) throw DataError(DataError::Kind::Format, lineno, "duplicate vocabulary entry '" + line + "'");
    v.add(line);
  }
  return v;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError(DataError::Kind::Io, 0, "cannot write vocabulary " + path.string());
  for (std::size_t i = kNumSpecials; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
  if (!out) throw DataError(DataError::Kind::Io, 0, "write failed for " + path.string());
}

int Vocab::id(std::string_view token) const {
  auto it = ids_.find(lowercase(token));
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const { return ids_.count(std::string(token)) != 0; }

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw DataError(DataError::Kind::UnknownToken, 0, "vocabulary id out of range: " + std::to_string(id));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::string> Vocab::ordinary_tokens() const {
  return {tokens_.begin() + kNumSpecials, tokens_.end()};
}

}  // namespace grace
