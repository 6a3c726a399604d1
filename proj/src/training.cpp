#include "morse/training.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <thread>

#include "morse/util.hpp"

namespace morse {

void TrainConfig::validate() const {
    if (lr <= 0) throw UsageError("train config: lr must be positive");
    if (decay_factor <= 0 || decay_factor >= 1)
        throw UsageError("train config: decay_factor must be in (0,1)");
    if (decay_patience < 1 || decay_patience >= stop_patience)
        throw UsageError("train config: need 1 <= decay_patience < stop_patience");
    if (dropout_rate < 0 || dropout_rate >= 1)
        throw UsageError("train config: dropout must be in [0,1)");
    if (max_epochs < 1) throw UsageError("train config: max_epochs must be >= 1");
    if (batch_sentences < 1) throw UsageError("train config: batch_sentences must be >= 1");
    if (clip_norm < 0) throw UsageError("train config: clip_norm must be >= 0");
}

bool schedule_step(TrainState& state, double dev_acc, const TrainConfig& cfg) {
    if (dev_acc > state.best_dev_acc) {
        state.best_dev_acc = dev_acc;
        state.epochs_since_improvement = 0;
        state.epochs_since_decay = 0;
        return true;
    }
    ++state.epochs_since_improvement;
    ++state.epochs_since_decay;
    if (state.epochs_since_decay == cfg.decay_patience) {
        state.lr *= cfg.decay_factor;
        state.epochs_since_decay = 0;
    }
    if (state.epochs_since_improvement >= cfg.stop_patience) state.stop = true;
    return false;
}

std::vector<std::vector<WordPrediction>> predict_corpus(const MorseModel& model,
                                                        const Corpus& corpus, size_t threads) {
    std::vector<std::vector<WordPrediction>> out(corpus.size());
    if (threads <= 1 || corpus.size() < 2) {
        for (size_t i = 0; i < corpus.size(); ++i) out[i] = model.predict_sentence(corpus[i]);
        return out;
    }
    std::atomic<size_t> next{0};
    auto worker = [&]() {
        while (true) {
            size_t i = next.fetch_add(1);
            if (i >= corpus.size()) break;
            out[i] = model.predict_sentence(corpus[i]);
        }
    };
    std::vector<std::thread> pool;
    for (size_t t = 0; t < std::min(threads, corpus.size()); ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    return out;
}

double exact_match_accuracy(const MorseModel& model, const Corpus& corpus) {
    size_t total = 0, correct = 0;
    for (const Sentence& sentence : corpus) {
        auto preds = model.predict_sentence(sentence);
        for (size_t i = 0; i < sentence.tokens.size(); ++i) {
            const Token& tok = sentence.tokens[i];
            ++total;
            if (model.config().mode == Mode::whole_tag) {
                if (preds[i].tag_id < model.tags().size() &&
                    model.tags().tags[preds[i].tag_id] == composite_tag(tok))
                    ++correct;
                continue;
            }
            DecodedAnalysis dec = decode_sequence(preds[i].ids, model.vocab());
            if (model.config().mode == Mode::joint) {
                if (dec.lemma == tok.lemma && dec.features == tok.features) ++correct;
            } else {
                if (dec.features == tok.features) ++correct;
            }
        }
    }
    if (total == 0) return 0;
    return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

TrainResult train(MorseModel model, const Corpus& train_corpus, const Corpus& dev_corpus,
                  const TrainConfig& cfg, const DevMetric& dev_metric,
                  const EpochCallback& on_epoch) {
    cfg.validate();
    if (train_corpus.empty() || dev_corpus.empty())
        throw DataError("train: empty training or dev split");

    DevMetric metric = dev_metric;
    if (!metric)
        metric = [](const MorseModel& m, const Corpus& d) { return exact_match_accuracy(m, d); };

    Rng rng(cfg.seed);
    TrainState state;
    state.lr = cfg.lr;

    TrainResult result;
    result.best_model = model;

    std::vector<size_t> order(train_corpus.size());
    std::iota(order.begin(), order.end(), 0);

    MorseParams grads = model.zero_grads();
    auto grad_list = grads.named_tensors();
    auto param_list = model.params().named_tensors();

    for (size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0;
        size_t batch_fill = 0;
        const double lr_in_effect = state.lr;

        auto apply_update = [&]() {
            if (batch_fill == 0) return;
            const double scale = 1.0 / static_cast<double>(batch_fill);
            if (batch_fill > 1)
                for (auto& [name, g] : grad_list) {
                    (void)name;
                    for (size_t k = 0; k < g->size(); ++k) (*g)[k] *= scale;
                }
            if (cfg.clip_norm > 0) {
                std::vector<std::pair<std::string, const Tensor*>> view;
                for (auto& [name, g] : grad_list) view.emplace_back(name, g);
                double norm = global_grad_norm(view);
                if (norm > cfg.clip_norm) {
                    const double s = cfg.clip_norm / norm;
                    for (auto& [name, g] : grad_list) {
                        (void)name;
                        for (size_t k = 0; k < g->size(); ++k) (*g)[k] *= s;
                    }
                }
            }
            for (size_t t = 0; t < param_list.size(); ++t)
                sgd_step(*param_list[t].second, *grad_list[t].second, lr_in_effect);
            for (auto& [name, g] : grad_list) {
                (void)name;
                g->fill(0);
            }
            batch_fill = 0;
        };

        for (size_t idx : order) {
            DropoutState ds{cfg.dropout_rate, &rng, true};
            double loss;
            try {
                loss = model.sentence_loss_and_grads(train_corpus[idx], grads, ds);
            } catch (const NumericError& e) {
                throw NumericError("epoch " + std::to_string(epoch) + ", sentence " +
                                   std::to_string(idx) + ": " + e.what());
            }
            loss_sum += loss;
            ++batch_fill;
            if (batch_fill == cfg.batch_sentences) apply_update();
        }
        apply_update();

        const double train_loss = loss_sum / static_cast<double>(train_corpus.size());
        const double dev_acc = metric(model, dev_corpus);
        result.history.push_back(EpochRecord{epoch, train_loss, dev_acc, lr_in_effect});
        if (on_epoch) on_epoch(result.history.back());

        if (schedule_step(state, dev_acc, cfg)) {
            result.best_model = model;
            result.best_dev_acc = dev_acc;
        }
        if (state.stop) break;
    }
    return result;
}

std::string history_log_header() { return "epoch\ttrain_loss\tdev_acc\tlr\n"; }

std::string epoch_log_line(const EpochRecord& r) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%zu\t%.6f\t%.4f\t%.12g\n", r.epoch, r.train_loss, r.dev_acc,
                  r.lr);
    return buf;
}

std::string history_to_log(const std::vector<EpochRecord>& history) {
    std::string out = history_log_header();
    for (const EpochRecord& r : history) out += epoch_log_line(r);
    return out;
}

}  // namespace morse
