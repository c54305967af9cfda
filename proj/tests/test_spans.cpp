#include <doctest.h>

#include <random>
#include <set>
#include <sstream>
#include <vector>

#include "grace/errors.hpp"
#include "grace/spans.hpp"
#include "support.hpp"

using namespace grace;
using namespace grace::testing;

namespace {

using T = TermTag;
using P = Polarity;

std::vector<std::pair<Index, Index>> as_pairs(const TokenBoundaries& b) {
  std::vector<std::pair<Index, Index>> out;
  for (const auto& s : b.spans) out.emplace_back(s.begin, s.end);
  return out;
}

// Independent run finder: a run starts at B and absorbs the following I tags.
std::set<AspectPolarityPair> brute_pairs(const TaggedSentence& s) {
  std::set<AspectPolarityPair> out;
  const int n = static_cast<int>(s.size());
  for (int i = 0; i < n; ++i) {
    if (s.terms[i] != T::B) continue;
    int j = i + 1;
    while (j < n && s.terms[j] == T::I) ++j;
    AspectPolarityPair p;
    p.begin = i;
    p.end = j;
    p.polarity = s.polarities[i];
    out.insert(p);
  }
  return out;
}

std::vector<T> random_tags(std::mt19937_64& rng, int n) {
  std::uniform_int_distribution<int> tag(0, 2);
  std::vector<T> out;
  for (int i = 0; i < n; ++i) out.push_back(term_tag_from_id(tag(rng)));
  return out;
}

}  // namespace

TEST_SUITE("spans") {
  TEST_CASE("boundaries of O B I O B") {
    const auto b = extract_boundaries({T::O, T::B, T::I, T::O, T::B});
    const std::vector<std::pair<Index, Index>> expected{{0, 1}, {1, 3}, {1, 3}, {3, 4}, {4, 5}};
    CHECK(as_pairs(b) == expected);
  }

  TEST_CASE("boundary edge cases") {
    const auto all_o = extract_boundaries({T::O, T::O, T::O});
    const std::vector<std::pair<Index, Index>> singletons{{0, 1}, {1, 2}, {2, 3}};
    CHECK(as_pairs(all_o) == singletons);
    const auto last_b = extract_boundaries({T::O, T::O, T::B});
    CHECK(as_pairs(last_b).back() == std::pair<Index, Index>{2, 3});
    CHECK(extract_boundaries({}).size() == 0);
  }

  TEST_CASE("repair rewrites orphan I to B") {
    CHECK(repair_bio({T::O, T::I, T::I}) == std::vector<T>{T::O, T::B, T::I});
    CHECK(repair_bio({T::I}) == std::vector<T>{T::B});
    const std::vector<T> valid{T::B, T::I, T::O, T::B, T::B, T::I};
    CHECK(repair_bio(valid) == valid);
  }

  TEST_CASE("repair yields valid BIO on 10k random strings") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> len(0, 20);
    for (int trial = 0; trial < 10000; ++trial) {
      const auto tags = random_tags(rng, len(rng));
      const auto fixed = repair_bio(tags);
      REQUIRE(fixed.size() == tags.size());
      REQUIRE(is_valid_bio(fixed));
      REQUIRE(repair_bio(fixed) == fixed);
      for (std::size_t i = 0; i < tags.size(); ++i) {
        if (tags[i] != T::I) REQUIRE(fixed[i] == tags[i]);
      }
    }
  }

  TEST_CASE("tags from boundaries inverts extraction on boundary sets") {
    std::mt19937_64 rng(12);
    std::uniform_int_distribution<int> len(0, 15);
    for (int trial = 0; trial < 2000; ++trial) {
      auto tags = repair_bio(random_tags(rng, len(rng)));
      const auto b = extract_boundaries(tags);
      const auto back = extract_boundaries(tags_from_boundaries(b));
      REQUIRE(as_pairs(back) == as_pairs(b));
    }
  }

  TEST_CASE("decode of the worked example") {
    const auto pairs =
        decode_pairs({T::O, T::B, T::I, T::O, T::B}, {P::O, P::POS, P::POS, P::O, P::POS});
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[0].begin == 1);
    CHECK(pairs[0].end == 3);
    CHECK(pairs[0].polarity == P::POS);
    CHECK(pairs[1].begin == 4);
    CHECK(pairs[1].end == 5);
    CHECK(pairs[1].polarity == P::POS);
  }

  TEST_CASE("polarity strategies") {
    const std::vector<T> terms{T::B, T::I, T::I};
    const std::vector<P> pols{P::POS, P::NEG, P::NEG};
    CHECK(decode_pairs(terms, pols, PolarityStrategy::FirstToken)[0].polarity == P::POS);
    CHECK(decode_pairs(terms, pols, PolarityStrategy::Majority)[0].polarity == P::NEG);
    CHECK(decode_pairs({T::B, T::I}, {P::POS, P::NEG})[0].polarity == P::POS);
  }

  TEST_CASE("unresolved polarity becomes NEU and is counted") {
    DecodeDiagnostics diag;
    const auto pairs = decode_pairs({T::B, T::O}, {P::O, P::O}, PolarityStrategy::FirstToken, nullptr, &diag);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].polarity == P::NEU);
    CHECK(diag.unresolved_polarity == 1);
  }

  TEST_CASE("surface strings join the run tokens") {
    TaggedSentence s;
    s.tokens = {"the", "operating", "system", "is", "nice"};
    s.terms = {T::O, T::B, T::I, T::O, T::O};
    s.polarities = {P::O, P::POS, P::POS, P::O, P::O};
    const auto pairs = gold_pairs(s);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].surface == "operating system");
  }

  TEST_CASE("decode round trip on 5k generated sentences") {
    std::mt19937_64 rng(13);
    std::uniform_int_distribution<int> len(1, 25);
    for (int trial = 0; trial < 5000; ++trial) {
      const auto s = random_sentence(rng, len(rng));
      REQUIRE_FALSE(find_violation(s).has_value());
      const auto pairs = gold_pairs(s);
      const std::set<AspectPolarityPair> got(pairs.begin(), pairs.end());
      REQUIRE(got == brute_pairs(s));
      for (std::size_t k = 1; k < pairs.size(); ++k) REQUIRE(pairs[k - 1].end <= pairs[k].begin);
      REQUIRE(parse_pairs(format_pairs(pairs)) == pairs);
    }
  }

  TEST_CASE("prediction dump round trip and errors") {
    std::vector<std::vector<AspectPolarityPair>> dump(3);
    dump[0].push_back({1, 3, "", P::POS});
    dump[0].push_back({4, 5, "", P::NEG});
    dump[2].push_back({0, 1, "", P::CON});
    std::ostringstream out;
    write_prediction_dump(out, dump);
    CHECK(out.str() == "1:3:POS 4:5:NEG\n\n0:1:CON\n");
    std::istringstream in(out.str());
    CHECK(read_prediction_dump(in) == dump);

    std::istringstream bad("1:3:POS\n2:2:NEG\n");
    try {
      read_prediction_dump(bad);
      FAIL("expected a format error");
    } catch (const DataError& e) {
      CHECK(e.line() == 2);
      CHECK(e.kind() == DataError::Kind::Format);
    }
    CHECK_THROWS_AS(parse_pairs("1:3:XYZ"), DataError);
    CHECK_THROWS_AS(parse_pairs("1:3:O"), DataError);
    CHECK_THROWS_AS(parse_pairs("a:3:POS"), DataError);
    CHECK_THROWS_AS(parse_pairs("13POS"), DataError);
  }

  TEST_CASE("span max pool") {
    const VarD x = VarD::constant(MatD{{1.0, -2.0}, {0.0, 3.0}, {5.0, 7.0}});
    const std::vector<RowSpan> spans{{0, 2}, {0, 2}, {2, 3}};
    const MatD g = span_max_pool(x, std::span<const RowSpan>(spans)).value();
    CHECK(g(0, 0) == 1.0);
    CHECK(g(0, 1) == 3.0);
    CHECK(g.row(1) == g.row(0));
    CHECK(g.row(2) == x.value().row(2));
  }

  TEST_CASE("consistent polarity gives equal rows within every span") {
    std::mt19937_64 rng(14);
    std::uniform_int_distribution<int> len(1, 12);
    for (int trial = 0; trial < 1000; ++trial) {
      const int n = len(rng);
      const auto tags = repair_bio(random_tags(rng, n));
      const auto b = extract_boundaries(tags);
      const VarD g = VarD::constant(random_matrix(n, 6, rng));
      const VarD w = VarD::constant(random_matrix(6, 5, rng));
      const VarD bias = VarD::constant(random_matrix(1, 5, rng));
      const MatD scores = consistent_polarity(g, b.spans, w, bias).value();
      for (int i = 0; i < n; ++i) {
        for (Index k = b.spans[i].begin; k < b.spans[i].end; ++k) REQUIRE(scores.row(k) == scores.row(i));
      }
      const auto labels = [&] {
        std::vector<Index> out(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) scores.row(i).maxCoeff(&out[static_cast<std::size_t>(i)]);
        return out;
      }();
      for (int i = 0; i < n; ++i) REQUIRE(labels[static_cast<std::size_t>(b.spans[i].begin)] == labels[static_cast<std::size_t>(i)]);
    }
  }
}
