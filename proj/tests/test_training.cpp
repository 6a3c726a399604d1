#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "morse/checkpoint.hpp"
#include "morse/training.hpp"
#include "morse/util.hpp"
#include "testutil.hpp"

using namespace morse;
using morse::testutil::toy_corpus;

namespace {

MorseModel small_model(const Corpus& corpus, uint64_t seed, Mode mode = Mode::joint,
                       size_t hidden = 12) {
    MorseConfig cfg;
    cfg.hidden = hidden;
    cfg.char_emb_size = 6;
    cfg.out_emb_size = 6;
    cfg.mode = mode;
    TagInventory tags;
    if (mode == Mode::whole_tag) tags = TagInventory::build(corpus);
    MorseModel model(cfg, Vocabulary::build(corpus), std::move(tags));
    Rng rng(seed);
    model.init_params(rng);
    return model;
}

TrainConfig fast_train(uint64_t seed, size_t epochs, double lr = 0.8) {
    TrainConfig cfg;
    cfg.lr = lr;
    cfg.dropout_rate = 0;
    cfg.max_epochs = epochs;
    cfg.seed = seed;
    cfg.stop_patience = 1000;  // fixed-epoch runs
    cfg.decay_patience = 999;
    return cfg;
}

}  // namespace

TEST_CASE("schedule: one decay after five flat epochs") {
    TrainConfig cfg;
    TrainState st;
    st.lr = cfg.lr;
    CHECK(schedule_step(st, 50, cfg));  // epoch 1 improves over -inf
    for (int epoch = 2; epoch <= 5; ++epoch) {
        CHECK_FALSE(schedule_step(st, 50, cfg));
        CHECK(st.lr == 1.6);
    }
    CHECK_FALSE(schedule_step(st, 50, cfg));  // epoch 6: fifth flat epoch
    CHECK(st.lr == doctest::Approx(1.6 * 0.8).epsilon(1e-15));
    CHECK_FALSE(st.stop);
}

TEST_CASE("schedule: strictly increasing accuracy never decays or stops") {
    TrainConfig cfg;
    TrainState st;
    st.lr = cfg.lr;
    for (int epoch = 1; epoch <= 30; ++epoch) CHECK(schedule_step(st, epoch, cfg));
    CHECK(st.lr == 1.6);
    CHECK_FALSE(st.stop);
}

TEST_CASE("schedule: stop after ten flat epochs, two decays on the way") {
    TrainConfig cfg;
    TrainState st;
    st.lr = cfg.lr;
    schedule_step(st, 50, cfg);
    for (int epoch = 2; epoch <= 10; ++epoch) {
        schedule_step(st, 50, cfg);
        CHECK_FALSE(st.stop);
    }
    schedule_step(st, 50, cfg);  // epoch 11
    CHECK(st.stop);
    CHECK(st.lr == doctest::Approx(1.6 * 0.8 * 0.8).epsilon(1e-12));
    CHECK(st.best_dev_acc == 50);
}

TEST_CASE("train: frozen dev metric reproduces the hand-traced lr schedule") {
    Corpus corpus = toy_corpus();
    MorseModel model = small_model(corpus, 3, Mode::joint, 6);
    TrainConfig cfg;
    cfg.lr = 1.6;
    cfg.dropout_rate = 0;
    cfg.max_epochs = 100;
    cfg.seed = 5;

    std::string first_epoch_ckpt;
    size_t calls = 0;
    DevMetric frozen = [&](const MorseModel& m, const Corpus&) {
        if (calls++ == 0) first_epoch_ckpt = checkpoint_bytes(m);
        return 50.0;
    };
    TrainResult result = train(model, corpus, corpus, cfg, frozen);

    REQUIRE(result.history.size() == 11);  // stopped after 10 flat epochs
    for (size_t i = 0; i < 6; ++i)
        CHECK(result.history[i].lr == doctest::Approx(1.6).epsilon(1e-12));
    for (size_t i = 6; i < 11; ++i)
        CHECK(result.history[i].lr == doctest::Approx(1.6 * 0.8).epsilon(1e-12));
    CHECK(result.best_dev_acc == 50.0);
    // best checkpoint is the epoch-1 snapshot
    CHECK(checkpoint_bytes(result.best_model) == first_epoch_ckpt);

    // log rendering: header plus one line per epoch
    std::string log = history_to_log(result.history);
    CHECK(log.substr(0, log.find('\n')) == "epoch\ttrain_loss\tdev_acc\tlr");
    size_t lines = 0;
    for (char c : log)
        if (c == '\n') ++lines;
    CHECK(lines == 12);
    CHECK(log.find("\t1.6\n") != std::string::npos);
    CHECK(log.find("\t1.28\n") != std::string::npos);
}

TEST_CASE("train: identical seeds give identical histories and checkpoints") {
    Corpus corpus = toy_corpus();
    TrainConfig cfg = fast_train(11, 4);
    cfg.dropout_rate = 0.3;  // exercise the dropout rng path too
    TrainResult a = train(small_model(corpus, 7), corpus, corpus, cfg);
    TrainResult b = train(small_model(corpus, 7), corpus, corpus, cfg);
    REQUIRE(a.history.size() == b.history.size());
    for (size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].train_loss == b.history[i].train_loss);
        CHECK(a.history[i].dev_acc == b.history[i].dev_acc);
        CHECK(a.history[i].lr == b.history[i].lr);
    }
    CHECK(checkpoint_bytes(a.best_model) == checkpoint_bytes(b.best_model));
}

TEST_CASE("train: one-sentence corpus reaches perfect training accuracy") {
    Corpus corpus = parse_trmor("evde\tev+Noun+A3sg+Loc\nkedi\tkedi+Noun+A3sg+Nom\n");
    MorseModel model = small_model(corpus, 13, Mode::joint, 16);
    TrainConfig cfg = fast_train(13, 300, 1.6);
    TrainResult result = train(model, corpus, corpus, cfg);
    CHECK(result.best_dev_acc == 100.0);
    CHECK(exact_match_accuracy(result.best_model, corpus) == 100.0);

    // loss decreases on average over the run
    double head = 0, tail = 0;
    for (size_t i = 0; i < 10; ++i) {
        head += result.history[i].train_loss;
        tail += result.history[result.history.size() - 1 - i].train_loss;
    }
    CHECK(tail < head);

    // with the model overfit, its own predicted features reproduce the
    // gold-window output encoder feed: decoding against gold windows
    // gives the same sequences as predict_sentence
    const MorseModel& m = result.best_model;
    for (const Sentence& s : corpus) {
        auto preds = m.predict_sentence(s);
        auto e = m.word_embeddings(s);
        auto c = m.context_embeddings(e);
        for (size_t i = 0; i < s.tokens.size(); ++i) {
            std::vector<size_t> window;
            for (size_t w = (i >= 2 ? i - 2 : 0); w < i; ++w)
                for (const std::string& f : s.tokens[w].features)
                    window.push_back(m.vocab().feature_input_row(f));
            WordPrediction gold_window = m.greedy_decode(c[i], e[i], m.output_embedding(window));
            CHECK(gold_window.ids == preds[i].ids);
        }
    }
}

TEST_CASE("train: returned model reproduces the best history accuracy") {
    Corpus corpus = toy_corpus();
    TrainConfig cfg = fast_train(17, 8, 0.5);
    TrainResult result = train(small_model(corpus, 19), corpus, corpus, cfg);
    double best = 0;
    for (const auto& r : result.history) best = std::max(best, r.dev_acc);
    CHECK(result.best_dev_acc == best);
    CHECK(exact_match_accuracy(result.best_model, corpus) == best);
}

TEST_CASE("train: batched updates stay deterministic and differ from per-sentence SGD") {
    Corpus corpus = toy_corpus();
    TrainConfig cfg = fast_train(31, 3, 0.5);
    cfg.batch_sentences = 2;
    TrainResult a = train(small_model(corpus, 33), corpus, corpus, cfg);
    TrainResult b = train(small_model(corpus, 33), corpus, corpus, cfg);
    CHECK(checkpoint_bytes(a.best_model) == checkpoint_bytes(b.best_model));
    TrainConfig single = cfg;
    single.batch_sentences = 1;
    TrainResult c = train(small_model(corpus, 33), corpus, corpus, single);
    CHECK(checkpoint_bytes(a.best_model) != checkpoint_bytes(c.best_model));
}

TEST_CASE("train: global-norm clipping engages and stays deterministic") {
    Corpus corpus = toy_corpus();
    TrainConfig base = fast_train(37, 2, 0.5);
    TrainConfig huge_clip = base;
    huge_clip.clip_norm = 1e9;  // never binds: identical to no clipping
    TrainResult plain = train(small_model(corpus, 39), corpus, corpus, base);
    TrainResult loose = train(small_model(corpus, 39), corpus, corpus, huge_clip);
    CHECK(checkpoint_bytes(plain.best_model) == checkpoint_bytes(loose.best_model));

    TrainConfig tight = base;
    tight.clip_norm = 1e-3;  // binds on every update
    TrainResult clipped_a = train(small_model(corpus, 39), corpus, corpus, tight);
    TrainResult clipped_b = train(small_model(corpus, 39), corpus, corpus, tight);
    CHECK(checkpoint_bytes(clipped_a.best_model) == checkpoint_bytes(clipped_b.best_model));
    CHECK(checkpoint_bytes(clipped_a.best_model) != checkpoint_bytes(plain.best_model));
}

TEST_CASE("train: non-finite loss aborts with a diagnostic") {
    Corpus corpus = toy_corpus();
    MorseModel model = small_model(corpus, 23);
    model.params().char_emb[0] = std::numeric_limits<double>::quiet_NaN();
    TrainConfig cfg = fast_train(23, 2);
    CHECK_THROWS_AS(train(model, corpus, corpus, cfg), NumericError);
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.decay_factor = 1.0;
    CHECK_THROWS_AS(cfg.validate(), UsageError);
    cfg = TrainConfig{};
    cfg.decay_patience = 10;
    cfg.stop_patience = 10;
    CHECK_THROWS_AS(cfg.validate(), UsageError);
    cfg = TrainConfig{};
    cfg.dropout_rate = 1.0;
    CHECK_THROWS_AS(cfg.validate(), UsageError);
}

TEST_CASE("predict_corpus is thread-count invariant") {
    Corpus corpus = toy_corpus();
    MorseModel model = small_model(corpus, 29);
    auto one = predict_corpus(model, corpus, 1);
    auto four = predict_corpus(model, corpus, 4);
    REQUIRE(one.size() == four.size());
    for (size_t i = 0; i < one.size(); ++i) {
        REQUIRE(one[i].size() == four[i].size());
        for (size_t j = 0; j < one[i].size(); ++j) CHECK(one[i][j].ids == four[i][j].ids);
    }
}

// ------------------------------------------------------------------ transfer

TEST_CASE("transfer: identical vocabularies copy every tensor bit-exactly") {
    Corpus corpus = toy_corpus();
    MorseModel source = small_model(corpus, 31);
    Rng rng(1234);
    MorseModel target =
        transfer_init(source, Vocabulary::build(corpus), TagInventory{}, rng);
    auto src = std::as_const(source.params()).named_tensors();
    auto dst = std::as_const(target.params()).named_tensors();
    REQUIRE(src.size() == dst.size());
    for (size_t i = 0; i < src.size(); ++i) {
        CHECK(src[i].first == dst[i].first);
        CHECK(*src[i].second == *dst[i].second);
    }
}

TEST_CASE("transfer: disjoint vocabularies keep LSTM blocks, refresh symbol rows") {
    Corpus hr = parse_trmor("ab\tab+X+Y\nba\tba+Y+X\n");
    Corpus lr = parse_trmor("cd\tcd+Z+W\ndc\tdc+W+Z\n");
    MorseModel source = small_model(hr, 37);
    Vocabulary lr_vocab = Vocabulary::build(lr);

    const uint64_t seed = 555;
    Rng rng(seed);
    MorseModel target = transfer_init(source, lr_vocab, TagInventory{}, rng);

    CHECK(target.params().word_lstm.w_x == source.params().word_lstm.w_x);
    CHECK(target.params().ctx_fwd.w_h == source.params().ctx_fwd.w_h);
    CHECK(target.params().dec2.b == source.params().dec2.b);
    CHECK(target.params().w_d == source.params().w_d);

    // symbol rows match an untouched fresh initialization with the same rng
    Rng rng2(seed);
    MorseParams fresh = init_morse_params(source.config(), lr_vocab, 0, rng2);
    for (size_t i = 0; i < lr_vocab.char_count(); ++i)
        for (size_t j = 0; j < target.params().char_emb.cols(); ++j)
            CHECK(target.params().char_emb(i, j) == fresh.char_emb(i, j));
    for (size_t i = 0; i < lr_vocab.feature_count(); ++i)
        for (size_t j = 0; j < target.params().feat_emb.cols(); ++j)
            CHECK(target.params().feat_emb(i, j) == fresh.feat_emb(i, j));
    // the shared UNK input rows transfer
    size_t unk_row = lr_vocab.char_count();
    size_t src_unk = source.vocab().char_count();
    for (size_t j = 0; j < target.params().char_emb.cols(); ++j)
        CHECK(target.params().char_emb(unk_row, j) == source.params().char_emb(src_unk, j));
}

TEST_CASE("transfer: 10-of-15 character overlap copies exactly the shared rows") {
    // HR chars: a..o (15); LR chars: f..t (15); overlap f..o (10)
    std::string hr_text, lr_text;
    for (char c = 'a'; c <= 'o'; ++c) {
        hr_text += std::string(1, c) + "\t" + std::string(1, c) + "+X\n";
    }
    for (char c = 'f'; c <= 't'; ++c) {
        lr_text += std::string(1, c) + "\t" + std::string(1, c) + "+X\n";
    }
    Corpus hr = parse_trmor(hr_text), lr = parse_trmor(lr_text);
    MorseModel source = small_model(hr, 41);
    Vocabulary lr_vocab = Vocabulary::build(lr);
    REQUIRE(lr_vocab.char_count() == 15);

    Rng rng(777);
    MorseModel target = transfer_init(source, lr_vocab, TagInventory{}, rng);
    size_t copied = 0, fresh = 0;
    for (size_t i = 0; i < 15; ++i) {
        uint32_t cp = lr_vocab.char_at(i);
        auto src_idx = source.vocab().char_index(cp);
        bool row_equal = true;
        if (src_idx) {
            for (size_t j = 0; j < target.params().char_emb.cols(); ++j)
                if (target.params().char_emb(i, j) != source.params().char_emb(*src_idx, j))
                    row_equal = false;
            CHECK(row_equal);
            ++copied;
        } else {
            ++fresh;
        }
    }
    CHECK(copied == 10);
    CHECK(fresh == 5);
}

TEST_CASE("transfer: source model is never mutated") {
    Corpus corpus = toy_corpus();
    MorseModel source = small_model(corpus, 43);
    std::string before = checkpoint_bytes(source);
    Rng rng(99);
    transfer_init(source, Vocabulary::build(parse_trmor("zz\tzz+Q\n")), TagInventory{}, rng);
    CHECK(checkpoint_bytes(source) == before);
}

TEST_CASE("transfer: whole-tag head rows map by composite tag") {
    Corpus hr = parse_trmor("ab\tab+X+Y\ncd\tcd+Z\n");
    Corpus lr = parse_trmor("ab\tab+Z\nef\tef+Q\n");
    MorseModel source = small_model(hr, 47, Mode::whole_tag);
    Vocabulary lr_vocab = Vocabulary::build(lr);
    TagInventory lr_tags = TagInventory::build(lr);
    Rng rng(31337);
    MorseModel target = transfer_init(source, lr_vocab, lr_tags, rng);
    size_t src_z = source.tags().find("Z").value();
    size_t dst_z = lr_tags.find("Z").value();
    for (size_t j = 0; j < target.params().tag_w.cols(); ++j)
        CHECK(target.params().tag_w(dst_z, j) == source.params().tag_w(src_z, j));
}
