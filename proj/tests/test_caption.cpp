#include <doctest.h>

#include <string>

#include "dtlab/caption_analysis.hpp"
#include "oracles.hpp"

using namespace dtlab;

using testing::brute_force_elements;
using testing::tally_lengths;

namespace {

const std::string kData = DTLAB_DATA_DIR;

}  // namespace

TEST_CASE("tokenize lowercases and splits on punctuation") {
  CHECK(tokenize("A Dog, running!") == std::vector<std::string>{"a", "dog", "running"});
  CHECK(tokenize("  ice-cream\tcone ") == std::vector<std::string>{"ice", "cream", "cone"});
  CHECK(tokenize("").empty());
}

TEST_CASE("tokenize is idempotent") {
  for (const char* s : {"Hello, World", "a  b\tc", "X-Y_Z 12.5%", "mixed CASE; words."}) {
    const auto t = tokenize(s);
    std::string joined;
    for (const auto& w : t) joined += (joined.empty() ? "" : " ") + w;
    CHECK(tokenize(joined) == t);
  }
}

TEST_CASE("phrase matching is whole-token") {
  const auto toks = tokenize("a redwood table in front of the red barn");
  CHECK(contains_phrase(toks, tokenize("red")));
  CHECK(contains_phrase(toks, tokenize("in front of")));
  CHECK_FALSE(contains_phrase(toks, tokenize("front in")));
  CHECK_FALSE(contains_phrase(tokenize("a redwood table"), tokenize("red")));
  CHECK_FALSE(contains_phrase(toks, {}));
}

TEST_CASE("corpus and lexicon parsing") {
  const auto c = parse_corpus("src\tA cat\n\nsrc2\tTwo dogs\n");
  REQUIRE(c.size() == 2);
  CHECK(c[1].source == "src2");
  CHECK(c[1].text == "Two dogs");
  CHECK_THROWS_AS(parse_corpus("no tab here\n"), CaptionError);
  CHECK_THROWS_AS(parse_corpus("src\t\n"), CaptionError);
  const auto lex = parse_lexicon("color\tRed\ncolor\tblue\nspatial\tnext to\n");
  CHECK(lex.size() == 3);
  CHECK(lex.phrases.at("color").front() == "red");
  CHECK(element_types().size() == 12);
}

TEST_CASE("fixtures load") {
  const auto lex = read_lexicon(kData + "/fixtures/lexicon.tsv");
  CHECK(lex.types().size() == 12);
  CHECK(read_corpus(kData + "/fixtures/captions_short.tsv").size() == 20);
  CHECK(read_corpus(kData + "/fixtures/captions_long.tsv").size() == 20);
  CHECK_THROWS_AS(read_corpus(kData + "/fixtures/missing.tsv"), CaptionError);
}

TEST_CASE("match_elements equals the brute-force oracle on the fixtures") {
  const auto lex = read_lexicon(kData + "/fixtures/lexicon.tsv");
  for (const char* name : {"captions_short.tsv", "captions_long.tsv"}) {
    CAPTURE(name);
    const auto corpus = read_corpus(kData + "/fixtures/" + name);
    CHECK(match_elements(corpus, lex) == brute_force_elements(corpus, lex));
  }
}

TEST_CASE("match_elements equals the oracle on adversarial captions") {
  ElementLexicon lex;
  lex.add("color", "red");
  lex.add("spatial", "next to");
  lex.add("food", "ice cream");
  const CaptionCorpus corpus{{"s", "RED!"},           {"s", "redwood"},        {"s", "next-to the door"},
                             {"s", "next  to"},       {"s", "to next"},        {"s", "ice cream, red"},
                             {"s", "icecream"},       {"s", "a (red) ice  cream"}};
  CHECK(match_elements(corpus, lex) == brute_force_elements(corpus, lex));
}

TEST_CASE("density report properties") {
  const auto lex = read_lexicon(kData + "/fixtures/lexicon.tsv");
  const auto shrt = read_corpus(kData + "/fixtures/captions_short.tsv");
  const auto lng = read_corpus(kData + "/fixtures/captions_long.tsv");
  const auto r = density_report({{"short", shrt}, {"long", lng}}, lex);
  REQUIRE(r.mean.size() == 2);
  CHECK(r.mean[1] > r.mean[0]);

  // Duplicating a corpus leaves every percentage unchanged.
  CaptionCorpus doubled = shrt;
  doubled.insert(doubled.end(), shrt.begin(), shrt.end());
  CHECK(match_elements(doubled, lex) == match_elements(shrt, lex));

  // Appending matching text to every caption never lowers a percentage.
  CaptionCorpus richer = shrt;
  for (auto& c : richer) c.text += " near a red table";
  const auto before = match_elements(shrt, lex), after = match_elements(richer, lex);
  for (const auto& [type, pct] : before) CHECK(after.at(type) >= pct);
  CHECK(after.at("color") == 100.0);

  // Adding a phrase to the lexicon never lowers a percentage.
  ElementLexicon more = lex;
  more.add("animal/human", "man");
  const auto grown = match_elements(shrt, more);
  for (const auto& [type, pct] : before) CHECK(grown.at(type) >= pct);

  CHECK_THROWS_AS(density_report({{"only", shrt}}, lex), CaptionError);
}

TEST_CASE("length histogram equals an independent tally") {
  const auto corpus = read_corpus(DTLAB_DATA_DIR "/fixtures/captions_long.tsv");
  for (std::size_t width : {1u, 5u, 10u}) {
    const auto tally = tally_lengths(corpus, width);
    const auto h = length_histogram(corpus, width);
    CHECK(h.counts == tally);
    CHECK(h.total == corpus.size());
  }
  CHECK_THROWS_AS(length_histogram(corpus, 0), CaptionError);
  CHECK_THROWS_AS(length_histogram({}, 5), CaptionError);
}

TEST_CASE("stemming only widens matches") {
  ElementLexicon lex;
  lex.add("object", "chair");
  const CaptionCorpus corpus{{"s", "two chairs"}, {"s", "a chair"}, {"s", "a table"}};
  CHECK(match_elements(corpus, lex).at("object") == doctest::Approx(100.0 / 3));
  MatchOptions stem;
  stem.stem = true;
  CHECK(match_elements(corpus, lex, stem).at("object") == doctest::Approx(200.0 / 3));
}

TEST_CASE("csv writers") {
  const auto corpus = parse_corpus("s\ta b c\ns\ta\n");
  const auto csv = histogram_csv(length_histogram(corpus, 2));
  CHECK(csv.find("\n") != std::string::npos);
  ElementLexicon lex;
  lex.add("color", "a");
  const auto d = density_csv(density_report({{"x", corpus}, {"y", corpus}}, lex));
  CHECK(d.find("color") != std::string::npos);
}
