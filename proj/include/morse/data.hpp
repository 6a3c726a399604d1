#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "morse/util.hpp"

namespace morse {

/// One analyzed token. `features` starts with the part-of-speech and may
/// contain "^DB" markers separating inflectional groups.
struct Token {
    std::string form;
    std::string lemma;
    std::vector<std::string> features;
};

struct Sentence {
    std::vector<Token> tokens;
};

using Corpus = std::vector<Sentence>;

/// CoNLL-U: FORM from column 2, LEMMA from column 3, features are
/// [UPOSTAG] ++ FEATS split on '|' ("_" FEATS leaves the POS alone).
/// Multiword ranges ("3-4") and empty nodes ("5.1") are skipped.
Corpus parse_conllu(std::string_view text);
std::string serialize_conllu(const Corpus& corpus);

/// One token per line: "surface<WS>lemma+Feat+...^DB+Feat+...". Sentences
/// are delimited by blank lines; "<S...>" / "</S...>" marker lines are
/// also accepted as boundaries and otherwise ignored.
Corpus parse_trmor(std::string_view text);
std::string serialize_trmor(const Corpus& corpus);

/// "lemma+Feat+...": "^DB" glued to the preceding feature becomes a
/// standalone feature token.
std::pair<std::string, std::vector<std::string>> parse_analysis(std::string_view text);
std::string serialize_analysis(const std::string& lemma, const std::vector<std::string>& features);

/// Symbol inventories built from the training split. Output vocabulary
/// lays out lemma characters first, then features, then the four control
/// tokens BOW, EOW, UNK_CHAR, UNK_FEAT.
class Vocabulary {
public:
    static Vocabulary build(const Corpus& train);

    size_t char_count() const { return chars_.size(); }
    size_t feature_count() const { return features_.size(); }
    size_t output_count() const { return chars_.size() + features_.size() + 4; }

    size_t bow_id() const { return chars_.size() + features_.size(); }
    size_t eow_id() const { return chars_.size() + features_.size() + 1; }
    size_t unk_char_id() const { return chars_.size() + features_.size() + 2; }
    size_t unk_feat_id() const { return chars_.size() + features_.size() + 3; }

    bool is_char_output(size_t id) const { return id < chars_.size() || id == unk_char_id(); }
    bool is_feature_output(size_t id) const {
        return (id >= chars_.size() && id < chars_.size() + features_.size()) ||
               id == unk_feat_id();
    }

    uint32_t char_at(size_t index) const { return chars_[index]; }
    const std::string& feature_at(size_t index) const { return features_[index]; }

    std::optional<size_t> char_index(uint32_t cp) const;
    std::optional<size_t> feature_index(std::string_view f) const;

    /// Output-vocabulary id of a lemma character / feature; unknowns map
    /// to the UNK control tokens.
    size_t output_id_of_char(uint32_t cp) const;
    size_t output_id_of_feature(std::string_view f) const;

    /// Embedding-table rows for encoder inputs: one row per known symbol
    /// plus a trailing UNK row.
    size_t char_input_rows() const { return chars_.size() + 1; }
    size_t feature_input_rows() const { return features_.size() + 1; }
    size_t char_input_row(uint32_t cp) const;
    size_t feature_input_row(std::string_view f) const;
    /// Feature-table row for an output id of feature kind (UNK_FEAT maps
    /// to the UNK row).
    size_t feature_input_row_of_output(size_t output_id) const;

    void serialize(std::string& out) const;
    static Vocabulary deserialize(std::string_view bytes, size_t& offset);
    uint64_t hash() const;

private:
    std::vector<uint32_t> chars_;
    std::vector<std::string> features_;
    std::unordered_map<uint32_t, size_t> char_index_;
    std::unordered_map<std::string, size_t> feature_index_;

    void add_char(uint32_t cp);
    void add_feature(const std::string& f);
};

/// Decoder target: lemma characters, then features, terminated by EOW.
struct AnalysisSequence {
    std::vector<size_t> ids;
};

AnalysisSequence encode_target(const Token& token, const Vocabulary& vocab);
/// Features-only target used by the tag-only mode.
AnalysisSequence encode_target_tags(const Token& token, const Vocabulary& vocab);

struct DecodedAnalysis {
    std::string lemma;
    std::vector<std::string> features;
};

/// Maps output ids back to symbols; UNK_CHAR decodes to U+FFFD and
/// UNK_FEAT to "<UNK>". Stops at the first EOW. Char/feature ids may be
/// interleaved in model output; chars join the lemma in emission order.
DecodedAnalysis decode_sequence(const std::vector<size_t>& ids, const Vocabulary& vocab);

std::string composite_tag(const Token& token);
std::string composite_tag(const std::vector<std::string>& features);

struct CorpusStats {
    size_t distinct_tags = 0;      // |T|
    size_t distinct_features = 0;  // |F|
    double unseen_tag_pct = 0;     // |R|
    double rare_tag_pct = 0;
    size_t rare_threshold = 0;
    size_t train_sentences = 0, train_tokens = 0;
    size_t test_sentences = 0, test_tokens = 0;
};

CorpusStats corpus_stats(const Corpus& train, const Corpus& test, size_t rare_threshold);

size_t count_tokens(const Corpus& corpus);
std::unordered_map<std::string, size_t> tag_counts(const Corpus& corpus);
std::unordered_map<std::string, size_t> lemma_counts(const Corpus& corpus);

/// Composite-tag inventory for the whole-tag classifier head.
struct TagInventory {
    std::vector<std::string> tags;
    std::unordered_map<std::string, size_t> index;

    static TagInventory build(const Corpus& train);
    std::optional<size_t> find(const std::string& tag) const;
    size_t size() const { return tags.size(); }
};

}  // namespace morse
