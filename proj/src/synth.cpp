#include "grace/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>
#include <string_view>

#include "grace/errors.hpp"

namespace grace {
namespace {

constexpr std::string_view kSingleAspects[] = {
    "screen",  "keyboard", "battery", "price",    "service", "food",     "touchpad", "speakers",
    "camera",  "design",   "display", "memory",   "processor", "wifi",   "charger",  "fan",
    "trackpad", "staff",   "menu",    "pizza",    "sushi",   "dessert",  "atmosphere", "portions",
    "coffee",  "waiter",   "bread",   "drinks",   "music",   "interior",
};

// Multi-word aspects use tokens that appear nowhere else in the lexicon.
constexpr std::string_view kMultiAspects[] = {
    "operating system", "hard drive", "graphics card", "sound quality",
    "wine list",        "customer support", "boot time", "power cord",
};

constexpr std::string_view kPositive[] = {
    "great", "excellent", "amazing", "fantastic", "wonderful", "superb",
    "good",  "nice",      "perfect", "awesome",   "brilliant", "lovely",
};

constexpr std::string_view kNegative[] = {
    "terrible", "awful", "horrible", "bad",    "poor",    "disappointing",
    "mediocre", "weak",  "slow",     "broken", "useless", "lousy",
};

constexpr std::string_view kNeutralVerbs[] = {
    "used", "checked", "mentioned", "saw", "tried", "opened", "noticed", "described",
};

constexpr std::string_view kFillers[] = {
    "i",        "we",       "you",      "they",     "he",      "she",      "it",       "this",
    "that",     "these",    "those",    "my",       "our",     "your",     "their",    "a",
    "an",       "to",       "of",       "in",       "on",      "at",       "for",      "with",
    "from",     "by",       "about",    "as",       "into",    "after",    "before",   "during",
    "while",    "because",  "so",       "or",       "if",      "then",     "than",     "also",
    "just",     "very",     "quite",    "rather",   "honestly", "overall", "anyway",   "maybe",
    "perhaps",  "probably", "actually", "basically", "laptop", "computer", "restaurant", "place",
    "store",    "shop",     "friend",   "brother",  "sister",  "mother",   "father",   "family",
    "month",    "year",     "day",      "night",    "morning", "evening",  "weekend",  "bought",
    "ordered",  "visited",  "went",     "came",     "got",     "took",     "made",     "said",
    "told",     "asked",    "thought",  "know",     "want",    "need",     "like",     "wanted",
    "again",    "here",     "there",    "now",      "still",   "already",  "always",   "never",
    "sometimes", "usually", "often",    "around",   "near",    "downtown", "online",   "recently",
    "finally",  "first",    "second",   "next",     "other",   "another",  "some",     "many",
    "much",     "more",     "most",     "every",    "each",    "all",      "any",      "one",
    "two",      "three",    "people",   "someone",  "everyone", "reviews", "order",    "table",
};

class SynthRng {
 public:
  explicit SynthRng(std::uint64_t seed) : engine_(seed) {}
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }
  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  bool chance(double p) { return unit() < p; }
  template <typename T, std::size_t N>
  std::string_view pick(const T (&arr)[N]) { return arr[below(N)]; }

 private:
  std::mt19937_64 engine_;
};

struct Builder {
  TaggedSentence s;

  void word(std::string_view w) {
    s.tokens.emplace_back(w);
    s.terms.push_back(TermTag::O);
    s.polarities.push_back(Polarity::O);
  }
  void words(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string w;
    while (in >> w) word(w);
  }
  void aspect(std::string_view text, Polarity p) {
    std::istringstream in{std::string(text)};
    std::string w;
    bool head = true;
    while (in >> w) {
      s.tokens.push_back(w);
      s.terms.push_back(head ? TermTag::B : TermTag::I);
      s.polarities.push_back(p);
      head = false;
    }
  }
  std::size_t aspect_tokens() const {
    return static_cast<std::size_t>(std::count_if(s.terms.begin(), s.terms.end(),
                                                  [](TermTag t) { return t != TermTag::O; }));
  }
};

std::string_view pick_aspect(SynthRng& rng) {
  if (rng.chance(0.1)) return rng.pick(kMultiAspects);
  return rng.pick(kSingleAspects);
}

Builder opinion_clause(SynthRng& rng, const SynthOptions& o) {
  Builder b;
  double r = rng.unit();
  const double p_conflict = o.conflict ? 0.05 : 0.0;
  const double p_neutral = o.neutral ? 0.2 : 0.0;
  const double p_coord = o.coordination ? 0.2 : 0.0;
  if (r < p_conflict) {
    b.words("the");
    b.aspect(pick_aspect(rng), Polarity::CON);
    b.words("is");
    b.word(rng.pick(kPositive));
    b.words("but");
    b.word(rng.pick(kNegative));
    return b;
  }
  r -= p_conflict;
  if (r < p_neutral) {
    const std::string_view verb = rng.pick(kNeutralVerbs);
    const bool we = rng.chance(0.5);
    b.words(we ? "we" : "i");
    b.word(verb);
    b.words("the");
    b.aspect(pick_aspect(rng), Polarity::NEU);
    b.words(we ? "last week" : "yesterday");
    return b;
  }
  r -= p_neutral;
  const bool positive = rng.chance(0.5);
  const Polarity pol = positive ? Polarity::POS : Polarity::NEG;
  const std::string_view adj = positive ? rng.pick(kPositive) : rng.pick(kNegative);
  if (r < p_coord) {
    const std::string_view first = pick_aspect(rng);
    std::string_view second = pick_aspect(rng);
    while (second == first) second = pick_aspect(rng);
    const bool both = rng.chance(0.5);
    b.words(both ? "both the" : "the");
    b.aspect(first, pol);
    b.words("and the");
    b.aspect(second, pol);
    b.words(both ? "were" : "are");
    b.word(adj);
    return b;
  }
  switch (rng.below(3)) {
    case 0:
      b.words("the");
      b.aspect(pick_aspect(rng), pol);
      b.words("is");
      break;
    case 1:
      b.words("the");
      b.aspect(pick_aspect(rng), pol);
      b.words("was really");
      break;
    default:
      b.words("i think the");
      b.aspect(pick_aspect(rng), pol);
      b.words("is");
      break;
  }
  b.word(adj);
  return b;
}

TaggedSentence one_sentence(SynthRng& rng, const SynthOptions& o) {
  constexpr int kAttempts = 32;
  Builder core;
  std::size_t target_o = 0;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    core = opinion_clause(rng, o);
    const double jitter = 0.75 + 0.5 * rng.unit();
    target_o = static_cast<std::size_t>(std::lround(o.imbalance * static_cast<double>(core.aspect_tokens()) * jitter));
    const std::size_t total = core.aspect_tokens() + std::max(target_o, core.s.size() - core.aspect_tokens());
    if (total <= o.max_tokens) break;
  }
  const std::size_t core_o = core.s.size() - core.aspect_tokens();
  std::size_t filler = target_o > core_o ? target_o - core_o : 0;
  if (core.s.size() + filler > o.max_tokens) {
    filler = o.max_tokens > core.s.size() ? o.max_tokens - core.s.size() : 0;
  }
  const std::size_t prefix = filler == 0 ? 0 : rng.below(filler + 1);

  Builder out;
  for (std::size_t i = 0; i < prefix; ++i) out.word(rng.pick(kFillers));
  for (std::size_t i = 0; i < core.s.size(); ++i) {
    out.s.tokens.push_back(core.s.tokens[i]);
    out.s.terms.push_back(core.s.terms[i]);
    out.s.polarities.push_back(core.s.polarities[i]);
  }
  for (std::size_t i = prefix; i < filler; ++i) out.word(rng.pick(kFillers));
  return std::move(out.s);
}

}  // namespace

std::vector<TaggedSentence> synth_generate(const SynthOptions& options) {
  if (options.n_sentences == 0) throw ConfigError("synth: n_sentences must be at least 1");
  if (!(options.imbalance >= 0)) throw ConfigError("synth: imbalance must be non-negative");
  if (options.max_tokens < 12) throw ConfigError("synth: max_tokens too small for the grammar");
  SynthRng rng(options.seed);
  std::vector<TaggedSentence> corpus;
  corpus.reserve(options.n_sentences);
  for (std::size_t i = 0; i < options.n_sentences; ++i) corpus.push_back(one_sentence(rng, options));
  return corpus;
}

std::vector<std::string> synth_lexicon() {
  std::set<std::string> words;
  auto add_text = [&](std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string w;
    while (in >> w) words.insert(w);
  };
  for (auto w : kSingleAspects) add_text(w);
  for (auto w : kMultiAspects) add_text(w);
  for (auto w : kPositive) add_text(w);
  for (auto w : kNegative) add_text(w);
  for (auto w : kNeutralVerbs) add_text(w);
  for (auto w : kFillers) add_text(w);
  add_text("the is are was were really i think and both but we last week yesterday");
  return {words.begin(), words.end()};
}

}  // namespace grace
