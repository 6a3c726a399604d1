#include "morse/model.hpp"

#include <cmath>
#include <stdexcept>

namespace morse {

namespace {

Tensor embed_row(const Tensor& table, size_t row) {
    Tensor v({table.cols()});
    const Real* src = table.row(row);
    for (size_t j = 0; j < v.size(); ++j) v[j] = src[j];
    return v;
}

void apply_mask(Tensor& x, const Tensor& mask) {
    for (size_t i = 0; i < x.size(); ++i) x[i] *= mask[i];
}

void acc_row(Tensor& table, size_t row, const Tensor& d) {
    Real* dst = table.row(row);
    for (size_t j = 0; j < d.size(); ++j) dst[j] += d[j];
}

Tensor softmax_vec(const Tensor& logits) {
    Tensor probs({logits.size()});
    double mx = logits[0];
    for (size_t i = 1; i < logits.size(); ++i) mx = std::max(mx, logits[i]);
    double denom = 0;
    for (size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(logits[i] - mx);
        denom += probs[i];
    }
    for (size_t i = 0; i < logits.size(); ++i) probs[i] /= denom;
    return probs;
}

// ---- training tapes ----

struct WordEncTape {
    std::vector<size_t> rows;
    std::vector<Tensor> emb_masks;
    std::vector<LstmCache> steps;
    Tensor e_mask;
    Tensor e;  // dropped output (what consumers see)
};

struct CtxTape {
    std::vector<LstmCache> fwd_steps, bwd_steps;  // bwd_steps[k] consumed e[N-1-k]
    std::vector<Tensor> fwd_masks, bwd_masks;
    std::vector<Tensor> c;  // (2H) per word
};

struct OutTape {  // windowed variant, one per word
    std::vector<size_t> rows;
    std::vector<Tensor> emb_masks;
    std::vector<LstmCache> steps;
    Tensor o_mask;
    Tensor o;
};

struct CarryTape {  // carried-state variant, one chain per sentence
    std::vector<size_t> rows;
    std::vector<Tensor> emb_masks;
    std::vector<LstmCache> steps;
    std::vector<size_t> tap;  // per word: steps consumed before this word
    std::vector<Tensor> o_masks;
    std::vector<Tensor> o;
};

struct DecStepTape {
    size_t input_id = 0;
    Tensor in_mask;
    LstmCache s1, s2;
    Tensor h1_mask, h2_mask;
    Tensor h1d, h2d;  // dropped copies fed forward
    Tensor probs;
    size_t target = 0;
};

struct WordDecTape {
    Tensor pre;  // W_d c + W_db, before relu
    std::vector<DecStepTape> steps;
};

}  // namespace

std::string mode_name(Mode mode) {
    switch (mode) {
        case Mode::joint: return "joint";
        case Mode::tag_only: return "tag_only";
        case Mode::whole_tag: return "whole_tag";
    }
    return "?";
}

std::optional<Mode> mode_from_name(std::string_view name) {
    if (name == "joint") return Mode::joint;
    if (name == "tag_only") return Mode::tag_only;
    if (name == "whole_tag") return Mode::whole_tag;
    return std::nullopt;
}

void MorseConfig::normalize_and_validate() {
    if (mode == Mode::whole_tag) use_output_encoder = false;
    if (hidden < 1 || char_emb_size < 1 || out_emb_size < 1)
        throw UsageError("model config: H, A, B must be >= 1");
    if (max_decode_len < 2) throw UsageError("model config: max_decode_len must be >= 2");
}

std::vector<std::pair<std::string, Tensor*>> MorseParams::named_tensors() {
    std::vector<std::pair<std::string, Tensor*>> out;
    auto add = [&out](const char* name, Tensor& t) {
        if (!t.empty()) out.emplace_back(name, &t);
    };
    auto add_lstm = [&out](const char* prefix, LSTMCellParams& p) {
        if (p.w_x.empty()) return;
        out.emplace_back(std::string(prefix) + ".w_x", &p.w_x);
        out.emplace_back(std::string(prefix) + ".w_h", &p.w_h);
        out.emplace_back(std::string(prefix) + ".b", &p.b);
    };
    add("char_emb", char_emb);
    add("feat_emb", feat_emb);
    add("dec_in_emb", dec_in_emb);
    add_lstm("word_lstm", word_lstm);
    add_lstm("ctx_fwd", ctx_fwd);
    add_lstm("ctx_bwd", ctx_bwd);
    add_lstm("out_lstm", out_lstm);
    add_lstm("dec1", dec1);
    add_lstm("dec2", dec2);
    add("w_d", w_d);
    add("w_db", w_db);
    add("w_s", w_s);
    add("w_sb", w_sb);
    add("tag_w", tag_w);
    add("tag_b", tag_b);
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> MorseParams::named_tensors() const {
    auto mut = const_cast<MorseParams*>(this)->named_tensors();
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(mut.size());
    for (auto& [name, t] : mut) out.emplace_back(name, t);
    return out;
}

static MorseParams morse_params_zeros(const MorseConfig& cfg, const Vocabulary& vocab,
                                      size_t tag_count) {
    const size_t H = cfg.hidden, A = cfg.char_emb_size, B = cfg.out_emb_size;
    const bool seq = cfg.mode != Mode::whole_tag;
    MorseParams p;
    p.char_emb = Tensor({vocab.char_input_rows(), A});
    if (cfg.use_output_encoder) p.feat_emb = Tensor({vocab.feature_input_rows(), B});
    if (seq) p.dec_in_emb = Tensor({vocab.output_count(), B});
    p.word_lstm = lstm_params_zeros(A, H);
    if (cfg.use_context) {
        p.ctx_fwd = lstm_params_zeros(H, H);
        p.ctx_bwd = lstm_params_zeros(H, H);
    }
    if (cfg.use_output_encoder) p.out_lstm = lstm_params_zeros(B, H);
    if (seq) {
        p.dec1 = lstm_params_zeros(B, H);
        p.dec2 = lstm_params_zeros(H, H);
        p.w_d = Tensor({H, 2 * H});
        p.w_db = Tensor({H});
        p.w_s = Tensor({vocab.output_count(), H});
        p.w_sb = Tensor({vocab.output_count()});
    } else {
        if (tag_count == 0) throw DataError("whole_tag mode needs a non-empty tag inventory");
        p.tag_w = Tensor({tag_count, 2 * H});
        p.tag_b = Tensor({tag_count});
    }
    return p;
}

MorseParams init_morse_params(const MorseConfig& cfg, const Vocabulary& vocab, size_t tag_count,
                              Rng& rng) {
    const size_t H = cfg.hidden, A = cfg.char_emb_size, B = cfg.out_emb_size;
    const bool seq = cfg.mode != Mode::whole_tag;
    MorseParams p = morse_params_zeros(cfg, vocab, tag_count);
    p.char_emb = xavier_init({vocab.char_input_rows(), A}, rng);
    if (cfg.use_output_encoder) p.feat_emb = xavier_init({vocab.feature_input_rows(), B}, rng);
    if (seq) p.dec_in_emb = xavier_init({vocab.output_count(), B}, rng);
    p.word_lstm = lstm_params_init(A, H, rng);
    if (cfg.use_context) {
        p.ctx_fwd = lstm_params_init(H, H, rng);
        p.ctx_bwd = lstm_params_init(H, H, rng);
    }
    if (cfg.use_output_encoder) p.out_lstm = lstm_params_init(B, H, rng);
    if (seq) {
        p.dec1 = lstm_params_init(B, H, rng);
        p.dec2 = lstm_params_init(H, H, rng);
        p.w_d = xavier_init({H, 2 * H}, rng);
        p.w_s = xavier_init({vocab.output_count(), H}, rng);
        // w_db, w_sb stay zero
    } else {
        p.tag_w = xavier_init({tag_count, 2 * H}, rng);
    }
    return p;
}

void validate_shapes(const MorseParams& params, const MorseConfig& config, const Vocabulary& vocab,
                     size_t tag_count) {
    MorseParams expected = morse_params_zeros(config, vocab, tag_count);
    auto exp = expected.named_tensors();
    auto got = params.named_tensors();
    if (exp.size() != got.size())
        throw DataError("checkpoint does not match configuration: tensor count " +
                        std::to_string(got.size()) + " vs expected " + std::to_string(exp.size()));
    for (size_t i = 0; i < exp.size(); ++i) {
        if (exp[i].first != got[i].first || exp[i].second->shape() != got[i].second->shape())
            throw DataError("checkpoint does not match configuration at tensor '" + got[i].first +
                            "'");
    }
}

MorseModel::MorseModel(MorseConfig config, Vocabulary vocab, TagInventory tags)
    : config_(std::move(config)), vocab_(std::move(vocab)), tags_(std::move(tags)) {
    config_.normalize_and_validate();
    params_ = morse_params_zeros(config_, vocab_, tags_.size());
}

void MorseModel::init_params(Rng& rng) {
    params_ = init_morse_params(config_, vocab_, tags_.size(), rng);
}

MorseParams MorseModel::zero_grads() const {
    MorseParams g = params_;
    for (auto& [name, t] : g.named_tensors()) {
        (void)name;
        t->fill(0);
    }
    return g;
}

std::vector<size_t> MorseModel::form_rows(const Token& token) const {
    if (token.form.empty()) throw DataError("token with empty surface form");
    std::vector<size_t> rows;
    for (uint32_t cp : utf8_decode(token.form)) rows.push_back(vocab_.char_input_row(cp));
    return rows;
}

std::vector<size_t> MorseModel::gold_window_rows(const Sentence& sentence, size_t word) const {
    std::vector<size_t> rows;
    for (size_t w = (word >= 2 ? word - 2 : 0); w < word; ++w)
        for (const std::string& f : sentence.tokens[w].features)
            rows.push_back(vocab_.feature_input_row(f));
    return rows;
}

AnalysisSequence MorseModel::target_for(const Token& token) const {
    switch (config_.mode) {
        case Mode::joint: return encode_target(token, vocab_);
        case Mode::tag_only: return encode_target_tags(token, vocab_);
        case Mode::whole_tag: break;
    }
    throw std::logic_error("target_for: whole_tag mode has no sequence target");
}

// ---------------------------------------------------------------- inference

std::vector<Tensor> MorseModel::word_embeddings(const Sentence& sentence) const {
    const size_t H = config_.hidden;
    std::vector<Tensor> e;
    e.reserve(sentence.tokens.size());
    for (const Token& tok : sentence.tokens) {
        Tensor h({H}), c({H});
        for (size_t row : form_rows(tok)) {
            auto out = lstm_step(params_.word_lstm, embed_row(params_.char_emb, row), h, c);
            h = std::move(out.h);
            c = std::move(out.c);
        }
        e.push_back(std::move(h));
    }
    return e;
}

std::vector<Tensor> MorseModel::context_embeddings(const std::vector<Tensor>& e) const {
    const size_t H = config_.hidden;
    const size_t n = e.size();
    if (n == 0) throw DataError("context encoder: empty input");
    std::vector<Tensor> c(n, Tensor({2 * H}));
    if (!config_.use_context) return c;

    Tensor h({H}), cc({H});
    for (size_t i = 0; i < n; ++i) {
        auto out = lstm_step(params_.ctx_fwd, e[i], h, cc);
        h = std::move(out.h);
        cc = std::move(out.c);
        for (size_t k = 0; k < H; ++k) c[i][k] = h[k];
    }
    h = Tensor({H});
    cc = Tensor({H});
    for (size_t i = n; i-- > 0;) {
        auto out = lstm_step(params_.ctx_bwd, e[i], h, cc);
        h = std::move(out.h);
        cc = std::move(out.c);
        for (size_t k = 0; k < H; ++k) c[i][H + k] = h[k];
    }
    return c;
}

Tensor MorseModel::output_embedding(const std::vector<size_t>& window_rows) const {
    const size_t H = config_.hidden;
    Tensor h({H});
    if (!config_.use_output_encoder || window_rows.empty()) return h;
    Tensor c({H});
    for (size_t row : window_rows) {
        auto out = lstm_step(params_.out_lstm, embed_row(params_.feat_emb, row), h, c);
        h = std::move(out.h);
        c = std::move(out.c);
    }
    return h;
}

MorseModel::WindowState::WindowState(const MorseModel& model) : model_(&model) {
    const size_t H = model.config().hidden;
    h_ = Tensor({H});
    c_ = Tensor({H});
}

Tensor MorseModel::WindowState::current() const {
    const MorseConfig& cfg = model_->config();
    if (!cfg.use_output_encoder) return Tensor({cfg.hidden});
    if (cfg.carry_output_state) return h_;
    std::vector<size_t> rows;
    for (const auto& w : window_) rows.insert(rows.end(), w.begin(), w.end());
    return model_->output_embedding(rows);
}

void MorseModel::WindowState::push_word(const std::vector<size_t>& feature_rows) {
    const MorseConfig& cfg = model_->config();
    if (!cfg.use_output_encoder) return;
    if (cfg.carry_output_state) {
        for (size_t row : feature_rows) {
            auto out = lstm_step(model_->params().out_lstm,
                                 embed_row(model_->params().feat_emb, row), h_, c_);
            h_ = std::move(out.h);
            c_ = std::move(out.c);
        }
    } else {
        window_.push_back(feature_rows);
        if (window_.size() > 2) window_.pop_front();
    }
}

std::vector<size_t> MorseModel::feature_rows_of_ids(const std::vector<size_t>& ids) const {
    std::vector<size_t> rows;
    for (size_t id : ids) {
        if (id == vocab_.eow_id()) break;
        if (vocab_.is_feature_output(id)) rows.push_back(vocab_.feature_input_row_of_output(id));
    }
    return rows;
}

WordPrediction MorseModel::greedy_decode(const Tensor& c, const Tensor& e, const Tensor& o) const {
    const size_t H = config_.hidden;
    Tensor pre({H});
    matvec(params_.w_d, c.data(), pre.data());
    for (size_t k = 0; k < H; ++k) pre[k] += params_.w_db[k];
    Tensor d1 = relu(pre), c1({H});
    Tensor d2({H}), c2({H});
    for (size_t k = 0; k < H; ++k) d2[k] = e[k] + o[k];

    WordPrediction wp;
    size_t prev = vocab_.bow_id();
    for (size_t step = 0; step < config_.max_decode_len; ++step) {
        auto s1 = lstm_step(params_.dec1, embed_row(params_.dec_in_emb, prev), d1, c1);
        d1 = std::move(s1.h);
        c1 = std::move(s1.c);
        auto s2 = lstm_step(params_.dec2, d1, d2, c2);
        d2 = std::move(s2.h);
        c2 = std::move(s2.c);
        Tensor logits({vocab_.output_count()});
        matvec(params_.w_s, d2.data(), logits.data());
        for (size_t k = 0; k < logits.size(); ++k) logits[k] += params_.w_sb[k];
        size_t best = 0;
        for (size_t k = 1; k < logits.size(); ++k)
            if (logits[k] > logits[best]) best = k;  // ties keep the lowest index
        wp.ids.push_back(best);
        // same arithmetic as score_candidate, so rescoring the greedy
        // output reproduces log_prob exactly
        wp.log_prob -= softmax_xent(logits, best).loss;
        if (best == vocab_.eow_id()) return wp;
        prev = best;
    }
    wp.truncated = true;
    return wp;
}

double MorseModel::score_candidate(const Tensor& c, const Tensor& e, const Tensor& o,
                                   const AnalysisSequence& candidate) const {
    if (candidate.ids.empty()) throw DataError("score_candidate: empty candidate");
    if (candidate.ids.back() != vocab_.eow_id())
        throw DataError("score_candidate: candidate must end with EOW");
    const size_t H = config_.hidden;
    Tensor pre({H});
    matvec(params_.w_d, c.data(), pre.data());
    for (size_t k = 0; k < H; ++k) pre[k] += params_.w_db[k];
    Tensor d1 = relu(pre), c1({H});
    Tensor d2({H}), c2({H});
    for (size_t k = 0; k < H; ++k) d2[k] = e[k] + o[k];

    double log_prob = 0;
    size_t prev = vocab_.bow_id();
    for (size_t id : candidate.ids) {
        auto s1 = lstm_step(params_.dec1, embed_row(params_.dec_in_emb, prev), d1, c1);
        d1 = std::move(s1.h);
        c1 = std::move(s1.c);
        auto s2 = lstm_step(params_.dec2, d1, d2, c2);
        d2 = std::move(s2.h);
        c2 = std::move(s2.c);
        Tensor logits({vocab_.output_count()});
        matvec(params_.w_s, d2.data(), logits.data());
        for (size_t k = 0; k < logits.size(); ++k) logits[k] += params_.w_sb[k];
        log_prob -= softmax_xent(logits, id).loss;
        prev = id;
    }
    return log_prob;
}

std::pair<size_t, double> MorseModel::classify_tag(const Tensor& c) const {
    Tensor logits({tags_.size()});
    matvec(params_.tag_w, c.data(), logits.data());
    for (size_t k = 0; k < logits.size(); ++k) logits[k] += params_.tag_b[k];
    Tensor probs = softmax_vec(logits);
    size_t best = 0;
    for (size_t k = 1; k < probs.size(); ++k)
        if (probs[k] > probs[best]) best = k;
    return {best, std::log(probs[best])};
}

std::vector<WordPrediction> MorseModel::predict_sentence(const Sentence& sentence) const {
    auto e = word_embeddings(sentence);
    auto c = context_embeddings(e);
    std::vector<WordPrediction> preds;
    preds.reserve(sentence.tokens.size());
    if (config_.mode == Mode::whole_tag) {
        for (size_t i = 0; i < sentence.tokens.size(); ++i) {
            auto [tag, lp] = classify_tag(c[i]);
            WordPrediction wp;
            wp.tag_id = tag;
            wp.log_prob = lp;
            preds.push_back(std::move(wp));
        }
        return preds;
    }
    WindowState window(*this);
    for (size_t i = 0; i < sentence.tokens.size(); ++i) {
        WordPrediction wp = greedy_decode(c[i], e[i], window.current());
        window.push_word(feature_rows_of_ids(wp.ids));
        preds.push_back(std::move(wp));
    }
    return preds;
}

MorseModel::WordTrainResult MorseModel::decode_word_train(const Tensor& c, const Tensor& e,
                                                          const Tensor& o,
                                                          const AnalysisSequence& gold) const {
    if (gold.ids.empty()) throw DataError("decode_word_train: empty gold sequence");
    const size_t H = config_.hidden;
    Tensor pre({H});
    matvec(params_.w_d, c.data(), pre.data());
    for (size_t k = 0; k < H; ++k) pre[k] += params_.w_db[k];
    Tensor d1 = relu(pre), c1({H});
    Tensor d2({H}), c2({H});
    for (size_t k = 0; k < H; ++k) d2[k] = e[k] + o[k];

    WordTrainResult res;
    res.loss = 0;
    size_t prev = vocab_.bow_id();
    for (size_t id : gold.ids) {
        auto s1 = lstm_step(params_.dec1, embed_row(params_.dec_in_emb, prev), d1, c1);
        d1 = std::move(s1.h);
        c1 = std::move(s1.c);
        auto s2 = lstm_step(params_.dec2, d1, d2, c2);
        d2 = std::move(s2.h);
        c2 = std::move(s2.c);
        Tensor logits({vocab_.output_count()});
        matvec(params_.w_s, d2.data(), logits.data());
        for (size_t k = 0; k < logits.size(); ++k) logits[k] += params_.w_sb[k];
        auto sx = softmax_xent(logits, id);
        res.loss += sx.loss;
        res.step_probs.push_back(std::move(sx.probs));
        prev = id;
    }
    res.loss /= static_cast<double>(gold.ids.size());
    return res;
}

double MorseModel::sentence_loss(const Sentence& sentence) const {
    const size_t n = sentence.tokens.size();
    if (n == 0) throw DataError("sentence_loss: empty sentence");
    auto e = word_embeddings(sentence);
    auto c = context_embeddings(e);
    double total = 0;
    if (config_.mode == Mode::whole_tag) {
        for (size_t i = 0; i < n; ++i) {
            auto tag = tags_.find(composite_tag(sentence.tokens[i]));
            if (!tag) throw DataError("whole_tag training: unseen composite tag");
            Tensor logits({tags_.size()});
            matvec(params_.tag_w, c[i].data(), logits.data());
            for (size_t k = 0; k < logits.size(); ++k) logits[k] += params_.tag_b[k];
            total += softmax_xent(logits, *tag).loss;
        }
        return total / static_cast<double>(n);
    }
    if (config_.carry_output_state && config_.use_output_encoder) {
        WindowState window(*this);
        for (size_t i = 0; i < n; ++i) {
            total += decode_word_train(c[i], e[i], window.current(),
                                       target_for(sentence.tokens[i]))
                         .loss;
            std::vector<size_t> rows;
            for (const std::string& f : sentence.tokens[i].features)
                rows.push_back(vocab_.feature_input_row(f));
            window.push_word(rows);
        }
    } else {
        for (size_t i = 0; i < n; ++i) {
            Tensor o = output_embedding(gold_window_rows(sentence, i));
            total += decode_word_train(c[i], e[i], o, target_for(sentence.tokens[i])).loss;
        }
    }
    return total / static_cast<double>(n);
}

// ----------------------------------------------------------------- training

double MorseModel::sentence_loss_and_grads(const Sentence& sentence, MorseParams& grads,
                                           const DropoutState& ds) const {
    const size_t n = sentence.tokens.size();
    if (n == 0) throw DataError("training: empty sentence");
    const size_t H = config_.hidden;
    const MorseParams& P = params_;
    const bool drop = ds.on();
    const bool seq = config_.mode != Mode::whole_tag;

    // ---- forward: word encoder ----
    std::vector<WordEncTape> wt(n);
    for (size_t i = 0; i < n; ++i) {
        wt[i].rows = form_rows(sentence.tokens[i]);
        Tensor h({H}), c({H});
        for (size_t row : wt[i].rows) {
            Tensor emb = embed_row(P.char_emb, row);
            if (drop) {
                wt[i].emb_masks.push_back(dropout_mask(emb.size(), ds.rate, *ds.rng));
                apply_mask(emb, wt[i].emb_masks.back());
            }
            wt[i].steps.emplace_back();
            auto out = lstm_step(P.word_lstm, emb, h, c, &wt[i].steps.back());
            h = std::move(out.h);
            c = std::move(out.c);
        }
        if (drop) {
            wt[i].e_mask = dropout_mask(H, ds.rate, *ds.rng);
            apply_mask(h, wt[i].e_mask);
        }
        wt[i].e = std::move(h);
    }

    // ---- forward: context encoder ----
    CtxTape ctx;
    ctx.c.assign(n, Tensor({2 * H}));
    if (config_.use_context) {
        Tensor h({H}), cc({H});
        for (size_t i = 0; i < n; ++i) {
            ctx.fwd_steps.emplace_back();
            auto out = lstm_step(P.ctx_fwd, wt[i].e, h, cc, &ctx.fwd_steps.back());
            h = out.h;
            cc = std::move(out.c);
            if (drop) {
                ctx.fwd_masks.push_back(dropout_mask(H, ds.rate, *ds.rng));
                apply_mask(out.h, ctx.fwd_masks.back());
            }
            for (size_t k = 0; k < H; ++k) ctx.c[i][k] = out.h[k];
        }
        h = Tensor({H});
        cc = Tensor({H});
        for (size_t i = n; i-- > 0;) {
            ctx.bwd_steps.emplace_back();
            auto out = lstm_step(P.ctx_bwd, wt[i].e, h, cc, &ctx.bwd_steps.back());
            h = out.h;
            cc = std::move(out.c);
            if (drop) {
                ctx.bwd_masks.push_back(dropout_mask(H, ds.rate, *ds.rng));
                apply_mask(out.h, ctx.bwd_masks.back());
            }
            for (size_t k = 0; k < H; ++k) ctx.c[i][H + k] = out.h[k];
        }
    }

    // ---- forward: output encoder (gold features, teacher forcing) ----
    std::vector<OutTape> ot;
    CarryTape carry;
    std::vector<Tensor> o_list(n, Tensor({H}));
    if (config_.use_output_encoder && seq) {
        if (config_.carry_output_state) {
            carry.tap.resize(n);
            Tensor h({H}), cc({H});
            for (size_t i = 0; i < n; ++i) {
                carry.tap[i] = carry.steps.size();
                if (i > 0) {
                    Tensor o = h;
                    if (drop) {
                        carry.o_masks.push_back(dropout_mask(H, ds.rate, *ds.rng));
                        apply_mask(o, carry.o_masks.back());
                    }
                    o_list[i] = std::move(o);
                }
                for (const std::string& f : sentence.tokens[i].features) {
                    size_t row = vocab_.feature_input_row(f);
                    carry.rows.push_back(row);
                    Tensor emb = embed_row(P.feat_emb, row);
                    if (drop) {
                        carry.emb_masks.push_back(dropout_mask(emb.size(), ds.rate, *ds.rng));
                        apply_mask(emb, carry.emb_masks.back());
                    }
                    carry.steps.emplace_back();
                    auto out = lstm_step(P.out_lstm, emb, h, cc, &carry.steps.back());
                    h = std::move(out.h);
                    cc = std::move(out.c);
                }
            }
        } else {
            ot.resize(n);
            for (size_t i = 0; i < n; ++i) {
                ot[i].rows = gold_window_rows(sentence, i);
                if (ot[i].rows.empty()) continue;
                Tensor h({H}), cc({H});
                for (size_t row : ot[i].rows) {
                    Tensor emb = embed_row(P.feat_emb, row);
                    if (drop) {
                        ot[i].emb_masks.push_back(dropout_mask(emb.size(), ds.rate, *ds.rng));
                        apply_mask(emb, ot[i].emb_masks.back());
                    }
                    ot[i].steps.emplace_back();
                    auto out = lstm_step(P.out_lstm, emb, h, cc, &ot[i].steps.back());
                    h = std::move(out.h);
                    cc = std::move(out.c);
                }
                if (drop) {
                    ot[i].o_mask = dropout_mask(H, ds.rate, *ds.rng);
                    apply_mask(h, ot[i].o_mask);
                }
                ot[i].o = std::move(h);
                o_list[i] = ot[i].o;
            }
        }
    }

    // ---- forward: decoder / whole-tag head ----
    double total = 0;
    std::vector<WordDecTape> dt;
    std::vector<Tensor> tag_probs;
    std::vector<size_t> tag_targets;
    if (seq) {
        dt.resize(n);
        for (size_t i = 0; i < n; ++i) {
            AnalysisSequence gold = target_for(sentence.tokens[i]);
            WordDecTape& tape = dt[i];
            tape.pre = Tensor({H});
            matvec(P.w_d, ctx.c[i].data(), tape.pre.data());
            for (size_t k = 0; k < H; ++k) tape.pre[k] += P.w_db[k];
            Tensor d1 = relu(tape.pre), c1({H});
            Tensor d2({H}), c2({H});
            for (size_t k = 0; k < H; ++k) d2[k] = wt[i].e[k] + o_list[i][k];

            double word_loss = 0;
            size_t prev = vocab_.bow_id();
            for (size_t id : gold.ids) {
                DecStepTape st;
                st.input_id = prev;
                Tensor in = embed_row(P.dec_in_emb, prev);
                if (drop) {
                    st.in_mask = dropout_mask(in.size(), ds.rate, *ds.rng);
                    apply_mask(in, st.in_mask);
                }
                auto s1 = lstm_step(P.dec1, in, d1, c1, &st.s1);
                d1 = s1.h;
                c1 = std::move(s1.c);
                st.h1d = d1;
                if (drop) {
                    st.h1_mask = dropout_mask(H, ds.rate, *ds.rng);
                    apply_mask(st.h1d, st.h1_mask);
                }
                auto s2 = lstm_step(P.dec2, st.h1d, d2, c2, &st.s2);
                d2 = s2.h;
                c2 = std::move(s2.c);
                st.h2d = d2;
                if (drop) {
                    st.h2_mask = dropout_mask(H, ds.rate, *ds.rng);
                    apply_mask(st.h2d, st.h2_mask);
                }
                Tensor logits({vocab_.output_count()});
                matvec(P.w_s, st.h2d.data(), logits.data());
                for (size_t k = 0; k < logits.size(); ++k) logits[k] += P.w_sb[k];
                auto sx = softmax_xent(logits, id);
                word_loss += sx.loss;
                st.probs = std::move(sx.probs);
                st.target = id;
                tape.steps.push_back(std::move(st));
                prev = id;
            }
            total += word_loss / static_cast<double>(gold.ids.size());
        }
    } else {
        for (size_t i = 0; i < n; ++i) {
            auto tag = tags_.find(composite_tag(sentence.tokens[i]));
            if (!tag) throw DataError("whole_tag training: unseen composite tag");
            Tensor logits({tags_.size()});
            matvec(P.tag_w, ctx.c[i].data(), logits.data());
            for (size_t k = 0; k < logits.size(); ++k) logits[k] += P.tag_b[k];
            auto sx = softmax_xent(logits, *tag);
            total += sx.loss;
            tag_probs.push_back(std::move(sx.probs));
            tag_targets.push_back(*tag);
        }
    }
    const double loss = total / static_cast<double>(n);
    if (!std::isfinite(loss)) throw NumericError("training: non-finite loss");

    // ================================ backward ================================
    std::vector<Tensor> de(n, Tensor({H}));
    std::vector<Tensor> dcv(n, Tensor({2 * H}));
    std::vector<Tensor> dov(n, Tensor({H}));
    const double word_scale = 1.0 / static_cast<double>(n);

    if (seq) {
        for (size_t i = 0; i < n; ++i) {
            WordDecTape& tape = dt[i];
            const size_t steps = tape.steps.size();
            const double step_scale = word_scale / static_cast<double>(steps);
            Tensor dh1_next({H}), dc1_next({H}), dh2_next({H}), dc2_next({H});
            for (size_t j = steps; j-- > 0;) {
                DecStepTape& st = tape.steps[j];
                Tensor dlogits = st.probs;
                dlogits[st.target] -= 1.0;
                for (size_t k = 0; k < dlogits.size(); ++k) dlogits[k] *= step_scale;
                outer_acc(grads.w_s, dlogits.data(), st.h2d.data());
                for (size_t k = 0; k < dlogits.size(); ++k) grads.w_sb[k] += dlogits[k];
                Tensor dh2({H});
                matvec_transpose_acc(P.w_s, dlogits.data(), dh2.data());
                if (!st.h2_mask.empty()) apply_mask(dh2, st.h2_mask);
                add_inplace(dh2, dh2_next);
                auto g2 = lstm_backward(P.dec2, st.s2, dh2, dc2_next, grads.dec2);
                Tensor dh1 = std::move(g2.dx);
                if (!st.h1_mask.empty()) apply_mask(dh1, st.h1_mask);
                add_inplace(dh1, dh1_next);
                auto g1 = lstm_backward(P.dec1, st.s1, dh1, dc1_next, grads.dec1);
                Tensor din = std::move(g1.dx);
                if (!st.in_mask.empty()) apply_mask(din, st.in_mask);
                acc_row(grads.dec_in_emb, st.input_id, din);
                dh1_next = std::move(g1.dh_prev);
                dc1_next = std::move(g1.dc_prev);
                dh2_next = std::move(g2.dh_prev);
                dc2_next = std::move(g2.dc_prev);
            }
            // layer-2 initial hidden was e + o
            add_inplace(de[i], dh2_next);
            add_inplace(dov[i], dh2_next);
            // layer-1 initial hidden through relu / W_d
            Tensor dpre({H});
            for (size_t k = 0; k < H; ++k) dpre[k] = (tape.pre[k] > 0) ? dh1_next[k] : 0.0;
            outer_acc(grads.w_d, dpre.data(), ctx.c[i].data());
            for (size_t k = 0; k < H; ++k) grads.w_db[k] += dpre[k];
            matvec_transpose_acc(P.w_d, dpre.data(), dcv[i].data());
        }
    } else {
        for (size_t i = 0; i < n; ++i) {
            Tensor dlogits = tag_probs[i];
            dlogits[tag_targets[i]] -= 1.0;
            for (size_t k = 0; k < dlogits.size(); ++k) dlogits[k] *= word_scale;
            outer_acc(grads.tag_w, dlogits.data(), ctx.c[i].data());
            for (size_t k = 0; k < dlogits.size(); ++k) grads.tag_b[k] += dlogits[k];
            matvec_transpose_acc(P.tag_w, dlogits.data(), dcv[i].data());
        }
    }

    // ---- backward: output encoder ----
    if (config_.use_output_encoder && seq) {
        if (config_.carry_output_state) {
            // taps deliver gradient to the chain state at word boundaries
            std::vector<Tensor> tap_dh(carry.steps.size() + 1, Tensor({H}));
            size_t mask_idx = 0;
            for (size_t i = 1; i < n; ++i) {
                Tensor d = dov[i];
                if (!carry.o_masks.empty()) apply_mask(d, carry.o_masks[mask_idx]);
                ++mask_idx;
                add_inplace(tap_dh[carry.tap[i]], d);
            }
            Tensor dh({H}), dc({H});
            for (size_t t = carry.steps.size(); t-- > 0;) {
                add_inplace(dh, tap_dh[t + 1]);
                auto g = lstm_backward(P.out_lstm, carry.steps[t], dh, dc, grads.out_lstm);
                Tensor demb = std::move(g.dx);
                if (!carry.emb_masks.empty()) apply_mask(demb, carry.emb_masks[t]);
                acc_row(grads.feat_emb, carry.rows[t], demb);
                dh = std::move(g.dh_prev);
                dc = std::move(g.dc_prev);
            }
        } else {
            for (size_t i = 0; i < n; ++i) {
                if (ot[i].steps.empty()) continue;
                Tensor dh = dov[i];
                if (!ot[i].o_mask.empty()) apply_mask(dh, ot[i].o_mask);
                Tensor dc({H});
                for (size_t t = ot[i].steps.size(); t-- > 0;) {
                    auto g = lstm_backward(P.out_lstm, ot[i].steps[t], dh, dc, grads.out_lstm);
                    Tensor demb = std::move(g.dx);
                    if (!ot[i].emb_masks.empty()) apply_mask(demb, ot[i].emb_masks[t]);
                    acc_row(grads.feat_emb, ot[i].rows[t], demb);
                    dh = std::move(g.dh_prev);
                    dc = std::move(g.dc_prev);
                }
            }
        }
    }

    // ---- backward: context encoder ----
    if (config_.use_context) {
        Tensor dh({H}), dc({H});
        for (size_t i = n; i-- > 0;) {
            Tensor up({H});
            for (size_t k = 0; k < H; ++k) up[k] = dcv[i][k];
            if (!ctx.fwd_masks.empty()) apply_mask(up, ctx.fwd_masks[i]);
            add_inplace(dh, up);
            auto g = lstm_backward(P.ctx_fwd, ctx.fwd_steps[i], dh, dc, grads.ctx_fwd);
            add_inplace(de[i], g.dx);
            dh = std::move(g.dh_prev);
            dc = std::move(g.dc_prev);
        }
        dh = Tensor({H});
        dc = Tensor({H});
        for (size_t k = n; k-- > 0;) {
            const size_t word = n - 1 - k;  // bwd_steps[k] consumed e[n-1-k]
            Tensor up({H});
            for (size_t j = 0; j < H; ++j) up[j] = dcv[word][H + j];
            if (!ctx.bwd_masks.empty()) apply_mask(up, ctx.bwd_masks[k]);
            add_inplace(dh, up);
            auto g = lstm_backward(P.ctx_bwd, ctx.bwd_steps[k], dh, dc, grads.ctx_bwd);
            add_inplace(de[word], g.dx);
            dh = std::move(g.dh_prev);
            dc = std::move(g.dc_prev);
        }
    }

    // ---- backward: word encoder ----
    for (size_t i = 0; i < n; ++i) {
        Tensor dh = de[i];
        if (!wt[i].e_mask.empty()) apply_mask(dh, wt[i].e_mask);
        Tensor dc({H});
        for (size_t t = wt[i].steps.size(); t-- > 0;) {
            auto g = lstm_backward(P.word_lstm, wt[i].steps[t], dh, dc, grads.word_lstm);
            Tensor demb = std::move(g.dx);
            if (!wt[i].emb_masks.empty()) apply_mask(demb, wt[i].emb_masks[t]);
            acc_row(grads.char_emb, wt[i].rows[t], demb);
            dh = std::move(g.dh_prev);
            dc = std::move(g.dc_prev);
        }
    }

    return loss;
}

// ----------------------------------------------------------------- transfer

namespace {

void copy_tensor(Tensor& dst, const Tensor& src) {
    if (!dst.same_shape(src)) throw DataError("transfer: tensor shape mismatch");
    dst = src;
}

void copy_lstm(LSTMCellParams& dst, const LSTMCellParams& src) {
    copy_tensor(dst.w_x, src.w_x);
    copy_tensor(dst.w_h, src.w_h);
    copy_tensor(dst.b, src.b);
}

void copy_row(Tensor& dst, size_t dst_row, const Tensor& src, size_t src_row) {
    for (size_t j = 0; j < dst.cols(); ++j) dst(dst_row, j) = src(src_row, j);
}

}  // namespace

MorseModel transfer_init(const MorseModel& source, const Vocabulary& target_vocab,
                         const TagInventory& target_tags, Rng& rng) {
    const MorseConfig& cfg = source.config();
    const Vocabulary& sv = source.vocab();
    MorseModel target(cfg, target_vocab, target_tags);
    target.init_params(rng);
    MorseParams& tp = target.params();
    const MorseParams& sp = source.params();
    const bool seq = cfg.mode != Mode::whole_tag;

    copy_lstm(tp.word_lstm, sp.word_lstm);
    if (cfg.use_context) {
        copy_lstm(tp.ctx_fwd, sp.ctx_fwd);
        copy_lstm(tp.ctx_bwd, sp.ctx_bwd);
    }
    if (cfg.use_output_encoder) copy_lstm(tp.out_lstm, sp.out_lstm);
    if (seq) {
        copy_lstm(tp.dec1, sp.dec1);
        copy_lstm(tp.dec2, sp.dec2);
        copy_tensor(tp.w_d, sp.w_d);
        copy_tensor(tp.w_db, sp.w_db);
    }

    // char table: shared characters plus the UNK input row
    for (size_t i = 0; i < target_vocab.char_count(); ++i) {
        if (auto src = sv.char_index(target_vocab.char_at(i)))
            copy_row(tp.char_emb, i, sp.char_emb, *src);
    }
    copy_row(tp.char_emb, target_vocab.char_count(), sp.char_emb, sv.char_count());

    if (cfg.use_output_encoder) {
        for (size_t i = 0; i < target_vocab.feature_count(); ++i) {
            if (auto src = sv.feature_index(target_vocab.feature_at(i)))
                copy_row(tp.feat_emb, i, sp.feat_emb, *src);
        }
        copy_row(tp.feat_emb, target_vocab.feature_count(), sp.feat_emb, sv.feature_count());
    }

    if (seq) {
        // output-vocabulary mapping: characters and features by identity,
        // control tokens by kind
        auto map_output = [&](size_t tgt_id) -> std::optional<size_t> {
            if (tgt_id < target_vocab.char_count()) {
                if (auto src = sv.char_index(target_vocab.char_at(tgt_id))) return *src;
                return std::nullopt;
            }
            if (tgt_id < target_vocab.char_count() + target_vocab.feature_count()) {
                const std::string& f =
                    target_vocab.feature_at(tgt_id - target_vocab.char_count());
                if (auto src = sv.feature_index(f)) return sv.char_count() + *src;
                return std::nullopt;
            }
            if (tgt_id == target_vocab.bow_id()) return sv.bow_id();
            if (tgt_id == target_vocab.eow_id()) return sv.eow_id();
            if (tgt_id == target_vocab.unk_char_id()) return sv.unk_char_id();
            return sv.unk_feat_id();
        };
        for (size_t id = 0; id < target_vocab.output_count(); ++id) {
            if (auto src = map_output(id)) {
                copy_row(tp.dec_in_emb, id, sp.dec_in_emb, *src);
                copy_row(tp.w_s, id, sp.w_s, *src);
                tp.w_sb[id] = sp.w_sb[*src];
            } else {
                tp.w_sb[id] = 0;  // new output tokens: fresh Xavier row, zero bias
            }
        }
    } else {
        for (size_t i = 0; i < target_tags.size(); ++i) {
            if (auto src = source.tags().find(target_tags.tags[i])) {
                copy_row(tp.tag_w, i, sp.tag_w, *src);
                tp.tag_b[i] = sp.tag_b[*src];
            } else {
                tp.tag_b[i] = 0;
            }
        }
    }
    return target;
}

}  // namespace morse
