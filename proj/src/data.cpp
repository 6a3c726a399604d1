#include "morse/data.hpp"

#include <algorithm>
#include <sstream>

namespace morse {

namespace {

bool is_marker_line(std::string_view line) {
    // "<S>", "<S attr=..>", "</S>" and similar sentence markers
    return !line.empty() && line.front() == '<';
}

void flush_sentence(Corpus& corpus, Sentence& current) {
    if (!current.tokens.empty()) {
        corpus.push_back(std::move(current));
        current = Sentence{};
    }
}

}  // namespace

Corpus parse_conllu(std::string_view text) {
    if (trim(text).empty()) throw DataError("conllu: empty input");
    Corpus corpus;
    Sentence current;
    size_t line_no = 0;
    for (const auto& raw : split(text, '\n')) {
        ++line_no;
        std::string_view line = raw;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) {
            flush_sentence(corpus, current);
            continue;
        }
        if (line.front() == '#') continue;
        std::vector<std::string> cols = split(line, '\t');
        if (cols.size() != 10)
            throw DataError("conllu: line " + std::to_string(line_no) + ": expected 10 columns, got " +
                            std::to_string(cols.size()));
        const std::string& id = cols[0];
        if (id.find('-') != std::string::npos) continue;  // multiword range
        if (id.find('.') != std::string::npos) continue;  // empty node
        Token tok;
        tok.form = cols[1];
        tok.lemma = cols[2];
        tok.features.push_back(cols[3]);
        if (cols[5] != "_" && !cols[5].empty()) {
            for (auto& f : split(cols[5], '|')) tok.features.push_back(std::move(f));
        }
        if (tok.form.empty()) throw DataError("conllu: line " + std::to_string(line_no) + ": empty FORM");
        current.tokens.push_back(std::move(tok));
    }
    flush_sentence(corpus, current);
    if (corpus.empty()) throw DataError("conllu: no sentences found");
    return corpus;
}

std::string serialize_conllu(const Corpus& corpus) {
    std::string out;
    for (size_t si = 0; si < corpus.size(); ++si) {
        if (si) out += '\n';
        const Sentence& s = corpus[si];
        for (size_t i = 0; i < s.tokens.size(); ++i) {
            const Token& t = s.tokens[i];
            std::vector<std::string> feats(t.features.begin() + 1, t.features.end());
            out += std::to_string(i + 1);
            out += '\t';
            out += t.form;
            out += '\t';
            out += t.lemma;
            out += '\t';
            out += t.features.empty() ? "_" : t.features.front();
            out += "\t_\t";
            out += feats.empty() ? "_" : join(feats, "|");
            out += "\t_\t_\t_\t_\n";
        }
    }
    return out;
}

std::pair<std::string, std::vector<std::string>> parse_analysis(std::string_view text) {
    size_t plus = text.find('+');
    if (plus == std::string_view::npos) throw DataError("analysis missing '+': " + std::string(text));
    std::string lemma(text.substr(0, plus));
    if (lemma.empty()) throw DataError("analysis with empty lemma: " + std::string(text));
    std::vector<std::string> features;
    for (const auto& piece : split(text.substr(plus + 1), '+')) {
        if (piece.empty()) throw DataError("analysis with empty feature: " + std::string(text));
        // "Nom^DB" carries a derivational boundary glued to the feature
        size_t db = piece.find("^DB");
        if (db == std::string::npos) {
            features.push_back(piece);
        } else if (db == 0 && piece.size() == 3) {
            features.emplace_back("^DB");
        } else {
            std::string_view rest = piece;
            while (true) {
                size_t cut = rest.find("^DB");
                if (cut == std::string_view::npos) {
                    if (!rest.empty()) features.emplace_back(rest);
                    break;
                }
                if (cut > 0) features.emplace_back(rest.substr(0, cut));
                features.emplace_back("^DB");
                rest = rest.substr(cut + 3);
            }
        }
    }
    if (features.empty()) throw DataError("analysis with no features: " + std::string(text));
    return {std::move(lemma), std::move(features)};
}

std::string serialize_analysis(const std::string& lemma, const std::vector<std::string>& features) {
    std::string out = lemma;
    for (const std::string& f : features) {
        if (f == "^DB") {
            out += "^DB";  // glued, no '+'
        } else {
            out += '+';
            out += f;
        }
    }
    return out;
}

Corpus parse_trmor(std::string_view text) {
    if (trim(text).empty()) throw DataError("trmor: empty input");
    Corpus corpus;
    Sentence current;
    size_t line_no = 0;
    for (const auto& raw : split(text, '\n')) {
        ++line_no;
        std::string_view line = trim(raw);
        if (line.empty()) {
            flush_sentence(corpus, current);
            continue;
        }
        if (is_marker_line(line)) {
            if (line.substr(0, 2) == "</") flush_sentence(corpus, current);
            continue;
        }
        size_t ws = line.find_first_of(" \t");
        if (ws == std::string_view::npos)
            throw DataError("trmor: line " + std::to_string(line_no) + ": expected 'surface analysis'");
        Token tok;
        tok.form = std::string(line.substr(0, ws));
        std::string_view rest = trim(line.substr(ws + 1));
        try {
            auto [lemma, features] = parse_analysis(rest);
            tok.lemma = std::move(lemma);
            tok.features = std::move(features);
        } catch (const DataError& e) {
            throw DataError("trmor: line " + std::to_string(line_no) + ": " + e.what());
        }
        current.tokens.push_back(std::move(tok));
    }
    flush_sentence(corpus, current);
    if (corpus.empty()) throw DataError("trmor: no sentences found");
    return corpus;
}

std::string serialize_trmor(const Corpus& corpus) {
    std::string out;
    for (size_t si = 0; si < corpus.size(); ++si) {
        if (si) out += '\n';
        for (const Token& t : corpus[si].tokens) {
            out += t.form;
            out += '\t';
            out += serialize_analysis(t.lemma, t.features);
            out += '\n';
        }
    }
    return out;
}

void Vocabulary::add_char(uint32_t cp) {
    if (char_index_.emplace(cp, chars_.size()).second) chars_.push_back(cp);
}

void Vocabulary::add_feature(const std::string& f) {
    if (feature_index_.emplace(f, features_.size()).second) features_.push_back(f);
}

Vocabulary Vocabulary::build(const Corpus& train) {
    if (train.empty()) throw DataError("vocabulary: empty corpus");
    Vocabulary v;
    for (const Sentence& s : train) {
        for (const Token& t : s.tokens) {
            // gold tokens carry at least a part of speech, and a
            // derivational boundary separates groups rather than
            // opening or closing the sequence
            if (t.features.empty()) throw DataError("gold token without features: " + t.form);
            if (t.features.front() == "^DB" || t.features.back() == "^DB")
                throw DataError("gold analysis with leading/trailing ^DB: " + t.form);
            for (uint32_t cp : utf8_decode(t.form)) v.add_char(cp);
            for (uint32_t cp : utf8_decode(t.lemma)) v.add_char(cp);
            for (const std::string& f : t.features) v.add_feature(f);
        }
    }
    return v;
}

std::optional<size_t> Vocabulary::char_index(uint32_t cp) const {
    auto it = char_index_.find(cp);
    if (it == char_index_.end()) return std::nullopt;
    return it->second;
}

std::optional<size_t> Vocabulary::feature_index(std::string_view f) const {
    auto it = feature_index_.find(std::string(f));
    if (it == feature_index_.end()) return std::nullopt;
    return it->second;
}

size_t Vocabulary::output_id_of_char(uint32_t cp) const {
    auto idx = char_index(cp);
    return idx ? *idx : unk_char_id();
}

size_t Vocabulary::output_id_of_feature(std::string_view f) const {
    auto idx = feature_index(f);
    return idx ? chars_.size() + *idx : unk_feat_id();
}

size_t Vocabulary::char_input_row(uint32_t cp) const {
    auto idx = char_index(cp);
    return idx ? *idx : chars_.size();
}

size_t Vocabulary::feature_input_row(std::string_view f) const {
    auto idx = feature_index(f);
    return idx ? *idx : features_.size();
}

size_t Vocabulary::feature_input_row_of_output(size_t output_id) const {
    if (output_id == unk_feat_id()) return features_.size();
    if (output_id >= chars_.size() && output_id < chars_.size() + features_.size())
        return output_id - chars_.size();
    throw std::invalid_argument("feature_input_row_of_output: not a feature id");
}

void Vocabulary::serialize(std::string& out) const {
    auto put_u64 = [&out](uint64_t v) {
        for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    };
    put_u64(chars_.size());
    for (uint32_t cp : chars_) put_u64(cp);
    put_u64(features_.size());
    for (const std::string& f : features_) {
        put_u64(f.size());
        out += f;
    }
}

Vocabulary Vocabulary::deserialize(std::string_view bytes, size_t& offset) {
    auto get_u64 = [&bytes, &offset]() -> uint64_t {
        if (offset + 8 > bytes.size()) throw DataError("vocabulary: truncated data");
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<uint64_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
        offset += 8;
        return v;
    };
    Vocabulary v;
    uint64_t n_chars = get_u64();
    for (uint64_t i = 0; i < n_chars; ++i) v.add_char(static_cast<uint32_t>(get_u64()));
    uint64_t n_feats = get_u64();
    for (uint64_t i = 0; i < n_feats; ++i) {
        uint64_t len = get_u64();
        if (offset + len > bytes.size()) throw DataError("vocabulary: truncated feature");
        v.add_feature(std::string(bytes.substr(offset, len)));
        offset += len;
    }
    if (v.chars_.size() != n_chars || v.features_.size() != n_feats)
        throw DataError("vocabulary: duplicate entries in serialized data");
    return v;
}

uint64_t Vocabulary::hash() const {
    std::string bytes;
    serialize(bytes);
    return fnv1a64(bytes);
}

AnalysisSequence encode_target(const Token& token, const Vocabulary& vocab) {
    AnalysisSequence seq;
    for (uint32_t cp : utf8_decode(token.lemma)) seq.ids.push_back(vocab.output_id_of_char(cp));
    for (const std::string& f : token.features) seq.ids.push_back(vocab.output_id_of_feature(f));
    seq.ids.push_back(vocab.eow_id());
    return seq;
}

AnalysisSequence encode_target_tags(const Token& token, const Vocabulary& vocab) {
    AnalysisSequence seq;
    for (const std::string& f : token.features) seq.ids.push_back(vocab.output_id_of_feature(f));
    seq.ids.push_back(vocab.eow_id());
    return seq;
}

DecodedAnalysis decode_sequence(const std::vector<size_t>& ids, const Vocabulary& vocab) {
    DecodedAnalysis out;
    for (size_t id : ids) {
        if (id == vocab.eow_id()) break;
        if (id == vocab.bow_id()) continue;
        if (id == vocab.unk_char_id()) {
            utf8_append(out.lemma, 0xFFFDu);
        } else if (id == vocab.unk_feat_id()) {
            out.features.emplace_back("<UNK>");
        } else if (id < vocab.char_count()) {
            utf8_append(out.lemma, vocab.char_at(id));
        } else if (id < vocab.char_count() + vocab.feature_count()) {
            out.features.push_back(vocab.feature_at(id - vocab.char_count()));
        } else {
            throw std::invalid_argument("decode_sequence: id out of range");
        }
    }
    return out;
}

std::string composite_tag(const std::vector<std::string>& features) { return join(features, "+"); }

std::string composite_tag(const Token& token) { return composite_tag(token.features); }

size_t count_tokens(const Corpus& corpus) {
    size_t n = 0;
    for (const Sentence& s : corpus) n += s.tokens.size();
    return n;
}

std::unordered_map<std::string, size_t> tag_counts(const Corpus& corpus) {
    std::unordered_map<std::string, size_t> counts;
    for (const Sentence& s : corpus)
        for (const Token& t : s.tokens) ++counts[composite_tag(t)];
    return counts;
}

std::unordered_map<std::string, size_t> lemma_counts(const Corpus& corpus) {
    std::unordered_map<std::string, size_t> counts;
    for (const Sentence& s : corpus)
        for (const Token& t : s.tokens) ++counts[t.lemma];
    return counts;
}

CorpusStats corpus_stats(const Corpus& train, const Corpus& test, size_t rare_threshold) {
    if (train.empty() || test.empty()) throw DataError("corpus_stats: empty split");
    CorpusStats stats;
    stats.rare_threshold = rare_threshold;
    stats.train_sentences = train.size();
    stats.train_tokens = count_tokens(train);
    stats.test_sentences = test.size();
    stats.test_tokens = count_tokens(test);

    auto counts = tag_counts(train);
    stats.distinct_tags = counts.size();

    std::unordered_map<std::string, bool> feature_seen;
    for (const Sentence& s : train)
        for (const Token& t : s.tokens)
            for (const std::string& f : t.features) feature_seen[f] = true;
    stats.distinct_features = feature_seen.size();

    size_t unseen = 0, rare = 0;
    for (const Sentence& s : test) {
        for (const Token& t : s.tokens) {
            auto it = counts.find(composite_tag(t));
            size_t c = (it == counts.end()) ? 0 : it->second;
            if (c == 0) ++unseen;
            if (c < rare_threshold) ++rare;
        }
    }
    stats.unseen_tag_pct = 100.0 * static_cast<double>(unseen) / static_cast<double>(stats.test_tokens);
    stats.rare_tag_pct = 100.0 * static_cast<double>(rare) / static_cast<double>(stats.test_tokens);
    return stats;
}

TagInventory TagInventory::build(const Corpus& train) {
    TagInventory inv;
    for (const Sentence& s : train) {
        for (const Token& t : s.tokens) {
            std::string tag = composite_tag(t);
            if (inv.index.emplace(tag, inv.tags.size()).second) inv.tags.push_back(std::move(tag));
        }
    }
    return inv;
}

std::optional<size_t> TagInventory::find(const std::string& tag) const {
    auto it = index.find(tag);
    if (it == index.end()) return std::nullopt;
    return it->second;
}

}  // namespace morse
