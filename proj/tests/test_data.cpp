#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>

#include "morse/data.hpp"
#include "morse/rng.hpp"
#include "morse/util.hpp"

using namespace morse;

namespace {

Token make_token(const std::string& form, const std::string& lemma,
                 std::vector<std::string> feats) {
    return Token{form, lemma, std::move(feats)};
}

Corpus tag_corpus(const std::vector<std::vector<std::string>>& tags_per_token) {
    // one sentence per token; forms/lemmas irrelevant for tag statistics
    Corpus corpus;
    for (const auto& feats : tags_per_token) {
        Sentence s;
        s.tokens.push_back(make_token("w", "w", feats));
        corpus.push_back(std::move(s));
    }
    return corpus;
}

std::string fixture(const char* name) {
    return read_file(std::string(FIXTURES_DIR) + "/" + name);
}

}  // namespace

TEST_CASE("conllu: column mapping, FEATS splitting, skipped lines") {
    Corpus corpus = parse_conllu(fixture("sample.conllu"));
    REQUIRE(corpus.size() == 3);
    // multiword range "1-2" and empty node "5.1" were dropped
    REQUIRE(corpus[0].tokens.size() == 3);
    const Token& t = corpus[0].tokens[0];
    CHECK(t.form == "vamos");
    CHECK(t.lemma == "ir");
    CHECK(t.features == std::vector<std::string>{"VERB", "Mood=Ind", "Number=Plur"});
    // FEATS "_" leaves only the POS
    CHECK(corpus[0].tokens[1].features == std::vector<std::string>{"ADP"});
    CHECK(corpus[2].tokens[0].features == std::vector<std::string>{"NOUN"});
    size_t tokens = count_tokens(corpus);
    CHECK(tokens == 6);
}

TEST_CASE("conllu: malformed input") {
    CHECK_THROWS_AS(parse_conllu(""), DataError);
    CHECK_THROWS_AS(parse_conllu("1\tform\tlemma\n"), DataError);  // 3 columns
}

TEST_CASE("conllu: canonical fixture round-trips byte-exactly") {
    std::string text = fixture("canonical.conllu");
    Corpus corpus = parse_conllu(text);
    CHECK(serialize_conllu(corpus) == text);
}

TEST_CASE("trmor: analysis splitting matches the format examples") {
    Corpus corpus = parse_trmor("masalı\tmasal+Noun+A3sg+Pnon+Acc\n");
    REQUIRE(corpus.size() == 1);
    const Token& t = corpus[0].tokens[0];
    CHECK(t.form == "masalı");
    CHECK(t.lemma == "masal");
    CHECK(t.features == std::vector<std::string>{"Noun", "A3sg", "Pnon", "Acc"});

    Corpus derived = parse_trmor("masalı\tmasa+Noun+A3sg+Pnon+Nom^DB+Adj+With\n");
    CHECK(derived[0].tokens[0].lemma == "masa");
    CHECK(derived[0].tokens[0].features ==
          std::vector<std::string>{"Noun", "A3sg", "Pnon", "Nom", "^DB", "Adj", "With"});

    Corpus minimal = parse_trmor("a\ta+X\n");
    CHECK(minimal[0].tokens[0].lemma == "a");
    CHECK(minimal[0].tokens[0].features == std::vector<std::string>{"X"});
}

TEST_CASE("trmor: sentence boundaries and errors") {
    Corpus corpus = parse_trmor("<S>\na\ta+X\n</S>\n<S>\nb\tb+Y\nc\tc+Z\n</S>\n");
    REQUIRE(corpus.size() == 2);
    CHECK(corpus[0].tokens.size() == 1);
    CHECK(corpus[1].tokens.size() == 2);

    CHECK_THROWS_AS(parse_trmor("word noanalysis\n"), DataError);  // missing '+'
    CHECK_THROWS_AS(parse_trmor("word\t+Noun\n"), DataError);      // empty lemma
    CHECK_THROWS_AS(parse_trmor("word\n"), DataError);             // no analysis column
    CHECK_THROWS_AS(parse_trmor("\n\n"), DataError);               // empty input
}

TEST_CASE("trmor: fixture round-trips byte-exactly") {
    std::string text = fixture("sample.trmor");
    Corpus corpus = parse_trmor(text);
    CHECK(serialize_trmor(corpus) == text);
    // parse(serialize(parse(x))) preserves every field
    Corpus again = parse_trmor(serialize_trmor(corpus));
    REQUIRE(again.size() == corpus.size());
    for (size_t i = 0; i < corpus.size(); ++i) {
        REQUIRE(again[i].tokens.size() == corpus[i].tokens.size());
        for (size_t j = 0; j < corpus[i].tokens.size(); ++j) {
            CHECK(again[i].tokens[j].form == corpus[i].tokens[j].form);
            CHECK(again[i].tokens[j].lemma == corpus[i].tokens[j].lemma);
            CHECK(again[i].tokens[j].features == corpus[i].tokens[j].features);
        }
    }
}

TEST_CASE("vocabulary: toy enumeration") {
    Corpus corpus = parse_trmor("ab\tab+X\n");
    Vocabulary v = Vocabulary::build(corpus);
    CHECK(v.char_count() == 2);
    CHECK(v.feature_count() == 1);
    CHECK(v.output_count() == 2 + 1 + 4);
    CHECK(v.char_at(0) == 'a');
    CHECK(v.char_at(1) == 'b');
    CHECK(v.feature_at(0) == "X");
    CHECK(v.bow_id() == 3);
    CHECK(v.eow_id() == 4);
}

TEST_CASE("vocabulary: determinism and hand counts") {
    std::string text = fixture("sample.trmor");
    Vocabulary a = Vocabulary::build(parse_trmor(text));
    Vocabulary b = Vocabulary::build(parse_trmor(text));
    CHECK(a.hash() == b.hash());
    for (size_t i = 0; i < a.char_count(); ++i) CHECK(a.char_at(i) == b.char_at(i));

    // hand count over the fixture: forms+lemmas chars
    // masalı yaz babamın mavi oda / masal baba masa ev... (fixture has no 'ev')
    Corpus corpus = parse_trmor("ev\tev+Noun+A3sg\nven\tven+Verb\n");
    Vocabulary v = Vocabulary::build(corpus);
    CHECK(v.char_count() == 3);  // e, v, n
    CHECK(v.feature_count() == 3);  // Noun, A3sg, Verb
    CHECK(v.char_index('e').value() == 0);
    CHECK(v.char_index('v').value() == 1);
    CHECK(v.char_index('n').value() == 2);
    CHECK_FALSE(v.char_index('x').has_value());
}

TEST_CASE("vocabulary: rejects leading or trailing derivational boundaries") {
    CHECK_THROWS_AS(Vocabulary::build(parse_trmor("x\tx+^DB+Adj\n")), DataError);
    CHECK_THROWS_AS(Vocabulary::build(parse_trmor("x\tx+Noun+Nom^DB\n")), DataError);
    CHECK_NOTHROW(Vocabulary::build(parse_trmor("x\tx+Noun+Nom^DB+Adj\n")));
}

TEST_CASE("conllu: messy fixture round-trips structurally") {
    Corpus corpus = parse_conllu(fixture("sample.conllu"));
    Corpus again = parse_conllu(serialize_conllu(corpus));
    REQUIRE(again.size() == corpus.size());
    for (size_t i = 0; i < corpus.size(); ++i) {
        REQUIRE(again[i].tokens.size() == corpus[i].tokens.size());
        for (size_t j = 0; j < corpus[i].tokens.size(); ++j) {
            CHECK(again[i].tokens[j].form == corpus[i].tokens[j].form);
            CHECK(again[i].tokens[j].lemma == corpus[i].tokens[j].lemma);
            CHECK(again[i].tokens[j].features == corpus[i].tokens[j].features);
        }
    }
}

TEST_CASE("vocabulary: serialization round-trip") {
    Vocabulary v = Vocabulary::build(parse_trmor(fixture("sample.trmor")));
    std::string bytes;
    v.serialize(bytes);
    size_t offset = 0;
    Vocabulary w = Vocabulary::deserialize(bytes, offset);
    CHECK(offset == bytes.size());
    CHECK(w.hash() == v.hash());
    CHECK(w.char_count() == v.char_count());
    CHECK(w.feature_count() == v.feature_count());
}

TEST_CASE("encode_target: the running example has length 10") {
    Corpus corpus = parse_trmor("masalı\tmasal+Noun+A3sg+P3sg+Nom\n");
    Vocabulary v = Vocabulary::build(corpus);
    AnalysisSequence seq = encode_target(corpus[0].tokens[0], v);
    CHECK(seq.ids.size() == 10);  // 5 lemma chars + 4 features + EOW
    CHECK(seq.ids.back() == v.eow_id());
    for (size_t i = 0; i < 5; ++i) CHECK(v.is_char_output(seq.ids[i]));
    for (size_t i = 5; i < 9; ++i) CHECK(v.is_feature_output(seq.ids[i]));

    AnalysisSequence tags = encode_target_tags(corpus[0].tokens[0], v);
    CHECK(tags.ids.size() == seq.ids.size() - 5);  // joint length minus lemma length

    DecodedAnalysis dec = decode_sequence(seq.ids, v);
    CHECK(dec.lemma == "masal");
    CHECK(dec.features == corpus[0].tokens[0].features);
}

TEST_CASE("encode_target: unknown symbols become UNK tokens") {
    Vocabulary v = Vocabulary::build(parse_trmor("ab\tab+X\n"));
    Token t = make_token("zz", "zq", {"X", "Unknown"});
    AnalysisSequence seq = encode_target(t, v);
    CHECK(seq.ids[0] == v.unk_char_id());
    CHECK(seq.ids[1] == v.unk_char_id());
    CHECK(seq.ids[3] == v.unk_feat_id());
    DecodedAnalysis dec = decode_sequence(seq.ids, v);
    CHECK(dec.features == std::vector<std::string>{"X", "<UNK>"});
}

TEST_CASE("composite_tag preserves order and ^DB") {
    CHECK(composite_tag(make_token("x", "x", {"Noun", "A3sg", "Pnon", "Acc"})) ==
          "Noun+A3sg+Pnon+Acc");
    CHECK(composite_tag(make_token("x", "x", {"X"})) == "X");
    CHECK(composite_tag(make_token("x", "x", {"Noun", "^DB", "Adj"})) == "Noun+^DB+Adj");
    CHECK(composite_tag(make_token("a", "a", {"X", "Y"})) ==
          composite_tag(make_token("b", "b", {"X", "Y"})));
}

TEST_CASE("composite_tag is injective on distinct feature sequences") {
    // property over random feature sequences drawn from a '+'-free pool
    Rng rng(314);
    std::vector<std::string> pool{"Noun", "Verb", "Acc", "Nom", "A3sg", "^DB", "Adj"};
    std::map<std::string, std::vector<std::string>> seen;
    for (int rep = 0; rep < 500; ++rep) {
        std::vector<std::string> feats;
        size_t n = 1 + rng.below(4);
        for (size_t i = 0; i < n; ++i) feats.push_back(pool[rng.below(pool.size())]);
        std::string tag = composite_tag(feats);
        auto it = seen.find(tag);
        if (it != seen.end()) {
            CHECK(it->second == feats);  // equal tags only for equal sequences
        } else {
            seen.emplace(std::move(tag), std::move(feats));
        }
    }
}

TEST_CASE("corpus_stats on the hand-counted fixture") {
    Corpus train = tag_corpus({{"A", "B"}, {"A", "B"}, {"A", "B"}, {"A", "B"}, {"A", "B"},
                               {"A", "B"}, {"C", "D"}});
    Corpus test = tag_corpus({{"A", "B"}, {"C", "D"}, {"E", "F"}});
    CorpusStats stats = corpus_stats(train, test, 5);
    CHECK(stats.distinct_tags == 2);
    CHECK(stats.distinct_features == 4);
    CHECK(stats.unseen_tag_pct == doctest::Approx(33.3333).epsilon(1e-3));
    CHECK(stats.rare_tag_pct == doctest::Approx(66.6667).epsilon(1e-3));
    CHECK(stats.train_tokens == 7);
    CHECK(stats.test_tokens == 3);
}

TEST_CASE("corpus_stats: subsets and threshold monotonicity") {
    Corpus train = tag_corpus({{"A"}, {"A"}, {"A"}, {"A"}, {"A"}, {"B"}, {"B"}, {"B"},
                               {"B"}, {"B"}});
    Corpus test = tag_corpus({{"A"}, {"B"}});
    CorpusStats s5 = corpus_stats(train, test, 5);
    CHECK(s5.unseen_tag_pct == 0.0);
    CHECK(s5.rare_tag_pct == 0.0);
    CorpusStats s100 = corpus_stats(train, test, 100);
    CHECK(s100.rare_tag_pct >= s5.rare_tag_pct);
    // |R| equals the rare percentage at threshold 1
    CorpusStats s1 = corpus_stats(train, test, 1);
    CHECK(s1.rare_tag_pct == s1.unseen_tag_pct);
    CHECK_THROWS_AS(corpus_stats({}, test, 5), DataError);
}

TEST_CASE("tag inventory built in first-seen order") {
    Corpus train = tag_corpus({{"A", "B"}, {"C"}, {"A", "B"}});
    TagInventory inv = TagInventory::build(train);
    REQUIRE(inv.size() == 2);
    CHECK(inv.tags[0] == "A+B");
    CHECK(inv.tags[1] == "C");
    CHECK(inv.find("A+B").value() == 0);
    CHECK_FALSE(inv.find("Z").has_value());
}

TEST_CASE("utf8 characters are treated as codepoints") {
    Corpus corpus = parse_trmor("gül\tgül+Noun\n");
    Vocabulary v = Vocabulary::build(corpus);
    CHECK(v.char_count() == 3);  // g, ü, l
    AnalysisSequence seq = encode_target(corpus[0].tokens[0], v);
    CHECK(seq.ids.size() == 3 + 1 + 1);
    CHECK(decode_sequence(seq.ids, v).lemma == "gül");
}
