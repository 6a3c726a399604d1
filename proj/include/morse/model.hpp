#pragma once

#include <deque>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "morse/data.hpp"
#include "morse/kernels.hpp"
#include "morse/rng.hpp"
#include "morse/tensor.hpp"

namespace morse {

enum class Mode { joint, tag_only, whole_tag };

std::string mode_name(Mode mode);
std::optional<Mode> mode_from_name(std::string_view name);

struct MorseConfig {
    size_t hidden = 512;        // H
    size_t char_emb_size = 64;  // A
    size_t out_emb_size = 256;  // B
    Mode mode = Mode::joint;
    bool use_context = true;
    bool use_output_encoder = true;
    /// Output-encoder state handling: the default recomputes the encoder
    /// from zero state over the features of the previous two words; with
    /// this flag the state is carried across the whole sentence instead.
    bool carry_output_state = false;
    size_t max_decode_len = 64;

    /// Applies structural rules (whole_tag has no output encoder) and
    /// checks numeric fields.
    void normalize_and_validate();
};

/// All trainable tensors. Only tensors the configuration actually uses
/// are allocated; named_tensors() lists them in a fixed order shared by
/// SGD, checkpointing, transfer, and gradient checking.
struct MorseParams {
    Tensor char_emb;    // (|A|+1, A)  trailing UNK row
    Tensor feat_emb;    // (|T|+1, B)  output-encoder table, trailing UNK row
    Tensor dec_in_emb;  // (|Y|, B)    decoder previous-token table
    LSTMCellParams word_lstm, ctx_fwd, ctx_bwd, out_lstm, dec1, dec2;
    Tensor w_d, w_db;  // (H, 2H), (H)
    Tensor w_s, w_sb;  // (|Y|, H), (|Y|)
    Tensor tag_w, tag_b;  // (|T_tags|, 2H), (|T_tags|)  whole-tag head

    std::vector<std::pair<std::string, Tensor*>> named_tensors();
    std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;
};

struct DropoutState {
    double rate = 0;
    Rng* rng = nullptr;
    bool training = false;
    bool on() const { return training && rate > 0 && rng != nullptr; }
};

struct WordPrediction {
    std::vector<size_t> ids;  // sequence modes: output ids ending with EOW
    size_t tag_id = static_cast<size_t>(-1);  // whole-tag mode
    double log_prob = 0;
    bool truncated = false;
};

class MorseModel {
public:
    MorseModel() = default;
    MorseModel(MorseConfig config, Vocabulary vocab, TagInventory tags = {});

    void init_params(Rng& rng);

    const MorseConfig& config() const { return config_; }
    const Vocabulary& vocab() const { return vocab_; }
    const TagInventory& tags() const { return tags_; }
    MorseParams& params() { return params_; }
    const MorseParams& params() const { return params_; }

    MorseParams zero_grads() const;

    // --- encoders (inference path, dropout off) ---

    /// e_i: final word-encoder hidden state over the surface characters.
    std::vector<Tensor> word_embeddings(const Sentence& sentence) const;

    /// c_i = [forward ; backward] context states (zeros when the context
    /// encoder is ablated).
    std::vector<Tensor> context_embeddings(const std::vector<Tensor>& e) const;

    /// o from a feature-row window, run from zero state; empty window
    /// yields the zero vector.
    Tensor output_embedding(const std::vector<size_t>& window_rows) const;

    /// Tracks the output-encoder feed across a sentence during
    /// prediction/disambiguation (two-word window or carried state).
    class WindowState {
    public:
        explicit WindowState(const MorseModel& model);
        Tensor current() const;
        void push_word(const std::vector<size_t>& feature_rows);

    private:
        const MorseModel* model_;
        std::deque<std::vector<size_t>> window_;  // windowed mode: last two words
        Tensor h_, c_;                            // carried mode
        bool any_ = false;
    };

    /// Feature-table rows extracted from a predicted/candidate id
    /// sequence (feature-kind ids only; lemma characters are excluded).
    std::vector<size_t> feature_rows_of_ids(const std::vector<size_t>& ids) const;

    // --- decoding ---

    WordPrediction greedy_decode(const Tensor& c, const Tensor& e, const Tensor& o) const;
    double score_candidate(const Tensor& c, const Tensor& e, const Tensor& o,
                           const AnalysisSequence& candidate) const;
    /// Whole-tag head: (tag id, log probability) for the argmax tag.
    std::pair<size_t, double> classify_tag(const Tensor& c) const;

    std::vector<WordPrediction> predict_sentence(const Sentence& sentence) const;

    /// Teacher-forced loss and per-step probabilities for one word,
    /// dropout off. Diagnostic surface; training uses the sentence op.
    struct WordTrainResult {
        double loss;
        std::vector<Tensor> step_probs;
    };
    WordTrainResult decode_word_train(const Tensor& c, const Tensor& e, const Tensor& o,
                                      const AnalysisSequence& gold) const;

    // --- training ---

    /// Mean per-word loss of a sentence, no gradients, dropout off.
    double sentence_loss(const Sentence& sentence) const;

    /// Full forward/backward pass; gradients accumulate into `grads`.
    double sentence_loss_and_grads(const Sentence& sentence, MorseParams& grads,
                                   const DropoutState& dropout = {}) const;

    /// Gold decoder target for a token under the configured mode.
    AnalysisSequence target_for(const Token& token) const;

private:
    MorseConfig config_;
    Vocabulary vocab_;
    TagInventory tags_;
    MorseParams params_;

    std::vector<size_t> form_rows(const Token& token) const;
    std::vector<size_t> gold_window_rows(const Sentence& sentence, size_t word) const;
};

MorseParams init_morse_params(const MorseConfig& config, const Vocabulary& vocab, size_t tag_count,
                              Rng& rng);
void validate_shapes(const MorseParams& params, const MorseConfig& config, const Vocabulary& vocab,
                     size_t tag_count);

/// Copies compatible weights from a trained source model into a fresh
/// model over the target vocabulary: LSTM blocks and dense projections
/// transfer exactly, embedding / output rows transfer for symbols present
/// in both vocabularies, new rows are Xavier-initialized (zero for bias
/// entries).
MorseModel transfer_init(const MorseModel& source, const Vocabulary& target_vocab,
                         const TagInventory& target_tags, Rng& rng);

}  // namespace morse
