#pragma once

#include <functional>
#include <vector>

#include "morse/model.hpp"

namespace morse {

struct TrainConfig {
    double lr = 1.6;
    double decay_factor = 0.8;
    size_t decay_patience = 5;
    size_t stop_patience = 10;
    double dropout_rate = 0.5;  // 0.3 suits high-resource corpora
    size_t max_epochs = 100;
    uint64_t seed = 1;
    size_t batch_sentences = 1;  // sentences per SGD update
    double clip_norm = 0;        // 0 disables global-norm clipping

    void validate() const;
};

struct EpochRecord {
    size_t epoch;
    double train_loss;
    double dev_acc;
    double lr;  // rate in effect during the epoch
};

struct TrainState {
    double lr = 0;
    double best_dev_acc = -1;
    size_t epochs_since_improvement = 0;  // stop counter
    size_t epochs_since_decay = 0;        // decay counter, resets when it fires
    bool stop = false;
};

/// Applies one scheduler transition after a dev evaluation. Improvement
/// (strictly greater accuracy) resets both counters; otherwise the lr
/// decays when the decay counter reaches its patience (and that counter
/// resets while the stop counter keeps running), and the stop flag is
/// set at stop patience. Returns true on improvement so the caller can
/// snapshot the model.
bool schedule_step(TrainState& state, double dev_acc, const TrainConfig& cfg);

using DevMetric = std::function<double(const MorseModel&, const Corpus&)>;

struct TrainResult {
    MorseModel best_model;
    double best_dev_acc = 0;
    std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Epoch loop: seeded shuffle, per-sentence BPTT + SGD, dev evaluation
/// with the model's own predictions feeding the output encoder, then the
/// decay/early-stop schedule. Returns the checkpoint with the best dev
/// accuracy. `on_epoch` fires after every epoch (live history logging).
TrainResult train(MorseModel model, const Corpus& train_corpus, const Corpus& dev_corpus,
                  const TrainConfig& cfg, const DevMetric& dev_metric = {},
                  const EpochCallback& on_epoch = {});

/// Mode-aware exact match: lemma+features (joint), features (tag_only),
/// or composite tag (whole_tag), as percentage.
double exact_match_accuracy(const MorseModel& model, const Corpus& corpus);

/// Deterministic parallel prediction; results are ordered by sentence
/// regardless of thread count.
std::vector<std::vector<WordPrediction>> predict_corpus(const MorseModel& model,
                                                        const Corpus& corpus, size_t threads = 1);

std::string history_log_header();
std::string epoch_log_line(const EpochRecord& record);
std::string history_to_log(const std::vector<EpochRecord>& history);

}  // namespace morse
