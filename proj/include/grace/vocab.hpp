#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "grace/tags.hpp"

namespace grace {

/// Lowercased whitespace-token vocabulary with four reserved ids.
///
/// Ordinary tokens are sorted lexicographically, so the id assignment does not
/// depend on corpus order.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kNumSpecials = 4;

  Vocab();

  static Vocab build(const std::vector<TaggedSentence>& corpus, std::size_t min_count = 1);
  static Vocab from_tokens(const std::vector<std::string>& tokens);

  /// One token per line; line k holds id k + kNumSpecials.
  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int id(std::string_view token) const;
  const std::string& token(int id) const;
  bool contains(std::string_view token) const;
  std::size_t size() const noexcept { return tokens_.size(); }

  /// Ordinary tokens in id order (specials excluded).
  std::vector<std::string> ordinary_tokens() const;

 private:
  void add(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

std::string lowercase(std::string_view s);

}  // namespace grace
