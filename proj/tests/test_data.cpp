#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>
#include <set>
#include <sstream>
#include <vector>

#include "grace/corpus.hpp"
#include "grace/errors.hpp"
#include "grace/eval.hpp"
#include "grace/synth.hpp"
#include "grace/vocab.hpp"
#include "support.hpp"

using namespace grace;
using namespace grace::testing;

namespace {

DataError parse_error(const std::string& text) {
  std::istringstream in(text);
  try {
    parse_corpus(in);
  } catch (const DataError& e) {
    return e;
  }
  FAIL("expected a data error");
  return DataError(DataError::Kind::Io, 0, "");
}

std::string serialize(const std::vector<TaggedSentence>& corpus) {
  std::ostringstream out;
  write_corpus(out, corpus);
  return out.str();
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("tag names and ids") {
    CHECK(to_string(TermTag::B) == "B");
    CHECK(to_string(Polarity::CON) == "CON");
    CHECK(parse_term_tag("I") == TermTag::I);
    CHECK_FALSE(parse_term_tag("X").has_value());
    CHECK(parse_polarity("NEG") == Polarity::NEG);
    CHECK_FALSE(parse_polarity("neg").has_value());
    for (int id = 0; id < kNumPolarityTags; ++id) CHECK(id_of(polarity_from_id(id)) == id);
    CHECK_THROWS(term_tag_from_id(3));
  }

  TEST_CASE("minimal well-formed block") {
    std::istringstream in("The\tO\tO\nkeyboard\tB\tPOS\nrocks\tO\tO\n");
    const auto corpus = parse_corpus(in);
    REQUIRE(corpus.size() == 1);
    CHECK(corpus[0].size() == 3);
    const auto pairs = gold_pairs(corpus[0]);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].surface == "keyboard");
    CHECK(pairs[0].polarity == Polarity::POS);
    CHECK(corpus[0].first_line == 1);
    CHECK(corpus[0].last_line == 3);
  }

  TEST_CASE("comments and repeated blank lines") {
    std::istringstream in("# header\n\na\tO\tO\n\n\n# mid\nb\tB\tNEG\n");
    const auto corpus = parse_corpus(in);
    REQUIRE(corpus.size() == 2);
    CHECK(corpus[1].tokens == std::vector<std::string>{"b"});
  }

  TEST_CASE("schema errors name the line") {
    const auto unknown = parse_error("a\tO\tO\nb\tXYZ\tO\n");
    CHECK(unknown.kind() == DataError::Kind::UnknownTag);
    CHECK(unknown.line() == 2);
    CHECK(std::string(unknown.what()).find("line 2") != std::string::npos);

    const auto fields = parse_error("a\tO\n");
    CHECK(fields.kind() == DataError::Kind::FieldCount);
    CHECK(fields.line() == 1);

    const auto orphan = parse_error("a\tO\tO\n\nb\tO\tO\nc\tI\tPOS\n");
    CHECK(orphan.kind() == DataError::Kind::OrphanInside);
    CHECK(orphan.line() == 4);

    const auto mismatch = parse_error("a\tB\tO\n");
    CHECK(mismatch.kind() == DataError::Kind::PolarityMismatch);

    const auto outside = parse_error("a\tO\tPOS\n");
    CHECK(outside.kind() == DataError::Kind::PolarityMismatch);

    const auto inconsistent = parse_error("a\tB\tPOS\nb\tI\tNEG\n");
    CHECK(inconsistent.kind() == DataError::Kind::InconsistentPolarity);
    CHECK(inconsistent.line() == 2);
  }

  TEST_CASE("missing file is an io error") {
    CHECK_THROWS_AS(load_corpus("/nonexistent/corpus.txt"), DataError);
  }

  TEST_CASE("save and load round trip on 1k random sentences") {
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<int> len(1, 20);
    std::vector<TaggedSentence> corpus;
    for (int i = 0; i < 1000; ++i) corpus.push_back(random_sentence(rng, len(rng)));
    const auto path = std::filesystem::temp_directory_path() / "grace_test_roundtrip.txt";
    save_corpus(path, corpus);
    const auto back = load_corpus(path);
    std::filesystem::remove(path);
    CHECK(back == corpus);
  }

  TEST_CASE("vocabulary") {
    std::istringstream in("The\tO\tO\nkeyboard\tB\tPOS\nrocks\tO\tO\n\nthe\tO\tO\nscreen\tB\tNEG\n");
    const auto corpus = parse_corpus(in);
    const Vocab v = Vocab::build(corpus);
    CHECK(v.size() == Vocab::kNumSpecials + 4);
    CHECK(v.id("THE") == v.id("the"));
    CHECK(v.id("unseen") == Vocab::kUnk);
    CHECK(v.ordinary_tokens() == std::vector<std::string>{"keyboard", "rocks", "screen", "the"});
    CHECK(v.token(Vocab::kNumSpecials) == "keyboard");
    CHECK_THROWS_AS(v.token(99), DataError);

    const Vocab min2 = Vocab::build(corpus, 2);
    CHECK(min2.ordinary_tokens() == std::vector<std::string>{"the"});

    const auto path = std::filesystem::temp_directory_path() / "grace_test_vocab.txt";
    v.save(path);
    const Vocab back = Vocab::load(path);
    std::filesystem::remove(path);
    CHECK(back.ordinary_tokens() == v.ordinary_tokens());
  }

  TEST_CASE("vocabulary build is order independent") {
    auto corpus = synth_generate({.n_sentences = 300, .seed = 4});
    const Vocab a = Vocab::build(corpus);
    std::mt19937_64 rng(5);
    std::shuffle(corpus.begin(), corpus.end(), rng);
    const Vocab b = Vocab::build(corpus);
    CHECK(a.ordinary_tokens() == b.ordinary_tokens());
  }

  TEST_CASE("encode example shapes") {
    const Vocab v = Vocab::from_tokens({"keyboard", "rocks"});
    TaggedSentence empty;
    const auto e0 = encode_example(empty, v, 8);
    CHECK(e0.ids == std::vector<int>{Vocab::kCls, Vocab::kSep});
    CHECK(e0.term_ids == std::vector<int>{id_of(TermTag::O), id_of(TermTag::O)});

    TaggedSentence s;
    s.tokens = {"the", "keyboard", "rocks"};
    s.terms = {TermTag::O, TermTag::B, TermTag::O};
    s.polarities = {Polarity::O, Polarity::POS, Polarity::O};
    const auto e = encode_example(s, v, 8);
    CHECK(e.length() == 5);
    CHECK(e.mask == std::vector<unsigned char>{0, 1, 1, 1, 0});
    CHECK(e.ids[1] == Vocab::kUnk);
    CHECK(e.ids[2] == v.id("keyboard"));
    CHECK(e.term_ids == std::vector<int>{2, 2, 0, 2, 2});
    CHECK(e.polarity_ids == std::vector<int>{4, 4, 0, 4, 4});

    CHECK_THROWS_AS(encode_example(s, v, 4), DataError);
    std::vector<std::string> skipped;
    const auto encoded = encode_corpus({s, empty}, v, 4, [&](const std::string& m) { skipped.push_back(m); });
    CHECK(encoded.size() == 1);
    CHECK(encoded[0].source == 1);
    CHECK(skipped.size() == 1);
  }

  TEST_CASE("epoch order is a pure permutation") {
    const auto a = epoch_order(50, 9, 1, 3);
    CHECK(a == epoch_order(50, 9, 1, 3));
    CHECK(a != epoch_order(50, 9, 1, 4));
    CHECK(a != epoch_order(50, 9, 2, 3));
    auto sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
  }

  TEST_CASE("synthetic corpus is deterministic") {
    const SynthOptions o{.n_sentences = 200, .seed = 7};
    CHECK(serialize(synth_generate(o)) == serialize(synth_generate(o)));
    SynthOptions other = o;
    other.seed = 8;
    CHECK(serialize(synth_generate(o)) != serialize(synth_generate(other)));
  }

  TEST_CASE("synthetic corpus invariants and imbalance") {
    const auto corpus = synth_generate({.n_sentences = 2000, .seed = 1, .imbalance = 20.0});
    const auto lexicon = synth_lexicon();
    const std::set<std::string> words(lexicon.begin(), lexicon.end());
    std::size_t coordinated = 0;
    for (const auto& s : corpus) {
      REQUIRE_FALSE(find_violation(s).has_value());
      for (const auto& t : s.tokens) REQUIRE(words.count(t) == 1);
      const auto pairs = gold_pairs(s);
      if (pairs.size() == 2) {
        ++coordinated;
        CHECK(pairs[0].polarity == pairs[1].polarity);
      }
      for (const auto& p : pairs) CHECK(p.polarity != Polarity::CON);
    }
    CHECK(coordinated > 0);
    const auto stats = label_stats(corpus);
    CHECK(stats.o_ratio() == doctest::Approx(20.0).epsilon(0.10));
    const Vocab v = Vocab::build(corpus);
    CHECK(v.size() > 150);
    CHECK(v.size() < 260);
  }

  TEST_CASE("synthetic families can be switched") {
    const auto con = synth_generate({.n_sentences = 400, .seed = 2, .conflict = true});
    bool saw_con = false;
    for (const auto& s : con) {
      for (const auto& p : gold_pairs(s)) saw_con = saw_con || p.polarity == Polarity::CON;
    }
    CHECK(saw_con);
    const auto plain = synth_generate({.n_sentences = 400, .seed = 2, .coordination = false, .neutral = false});
    for (const auto& s : plain) {
      const auto pairs = gold_pairs(s);
      CHECK(pairs.size() == 1);
      CHECK(pairs[0].polarity != Polarity::NEU);
    }
  }
}
