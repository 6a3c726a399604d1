#include "morse/synthlang.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <unordered_set>

#include "morse/config.hpp"

namespace morse {

void GrammarSpec::validate() const {
    if (stems.empty()) throw DataError("grammar: no stems");
    if (pos.empty()) throw DataError("grammar: empty pos");
    if (slots.empty()) throw DataError("grammar: no slots");
    std::unordered_set<std::string> stem_set(stems.begin(), stems.end());
    if (stem_set.size() != stems.size()) throw DataError("grammar: duplicate stems");
    for (const Slot& slot : slots) {
        if (slot.values.empty()) throw DataError("grammar: slot '" + slot.name + "' has no values");
        std::unordered_set<std::string> suffixes, feats;
        size_t total_weight = 0;
        for (const SlotValue& v : slot.values) {
            if (!suffixes.insert(v.suffix).second)
                throw DataError("grammar: slot '" + slot.name + "' has duplicate suffix '" +
                                v.suffix + "'");
            if (v.feature.empty() || !feats.insert(v.feature).second)
                throw DataError("grammar: slot '" + slot.name + "' has bad/duplicate feature");
            total_weight += v.weight;
        }
        if (total_weight == 0)
            throw DataError("grammar: slot '" + slot.name + "' has no samplable value");
    }
    if (derivation_prob < 0 || derivation_prob > 1)
        throw DataError("grammar: derivation_prob must be in [0,1]");
    if (derivation_prob > 0 && (!derivation || derivation->values.empty()))
        throw DataError("grammar: derivation_prob set but no derivation defined");
    if (min_len < 1 || max_len < min_len) throw DataError("grammar: bad sentence length range");
    for (const AgreementRule& r : agreements) {
        if (r.src_slot >= slots.size() || r.dst_slot >= slots.size() ||
            r.src_value >= slots[r.src_slot].values.size() ||
            r.dst_value >= slots[r.dst_slot].values.size())
            throw DataError("grammar: agreement rule out of range");
    }
}

namespace {

std::pair<std::string, std::string> split_once(std::string_view s, char sep, const char* what) {
    size_t pos = s.find(sep);
    if (pos == std::string_view::npos)
        throw DataError(std::string("grammar: expected '") + sep + "' in " + what + ": " +
                        std::string(s));
    return {std::string(trim(s.substr(0, pos))), std::string(trim(s.substr(pos + 1)))};
}

std::vector<SlotValue> parse_values(std::string_view text, const char* what) {
    std::vector<SlotValue> values;
    for (const auto& piece : split(text, ',')) {
        auto [feature, suffix] = split_once(trim(piece), '=', what);
        SlotValue v{feature, suffix, 1};
        // "Feature=suffix@weight"
        size_t at = v.suffix.find('@');
        if (at != std::string::npos) {
            std::string w = v.suffix.substr(at + 1);
            v.suffix = v.suffix.substr(0, at);
            char* end = nullptr;
            v.weight = static_cast<size_t>(std::strtoull(w.c_str(), &end, 10));
            if (end == w.c_str() || *end != '\0')
                throw DataError(std::string("grammar: bad weight in ") + what + ": " + w);
        }
        values.push_back(std::move(v));
    }
    return values;
}

}  // namespace

GrammarSpec parse_grammar(std::string_view text) {
    FlatConfig cfg = FlatConfig::parse_text(text);
    GrammarSpec spec;
    spec.seed = cfg.get_u64("seed", spec.seed);
    for (const auto& stem : split(cfg.get_string("stems"), ',')) {
        std::string s(trim(stem));
        if (!s.empty()) spec.stems.push_back(std::move(s));
    }
    spec.pos = cfg.get_string("pos", "Noun");
    spec.min_len = static_cast<size_t>(cfg.get_int("min_len", 3));
    spec.max_len = static_cast<size_t>(cfg.get_int("max_len", 8));
    spec.n_sentences = static_cast<size_t>(cfg.get_int("n_sentences", 100));
    spec.derivation_prob = cfg.get_double("derivation_prob", 0.0);

    // slot = Case: Nom=, Acc=yi, Gen=nin
    for (const auto& line : cfg.get_all("slot")) {
        auto [name, body] = split_once(line, ':', "slot");
        Slot slot;
        slot.name = name;
        slot.values = parse_values(body, "slot value");
        spec.slots.push_back(std::move(slot));
    }
    // derivation = Adj: With=li, Without=siz
    if (auto deriv = cfg.get_optional("derivation")) {
        auto [dpos, body] = split_once(*deriv, ':', "derivation");
        Derivation d;
        d.pos = dpos;
        d.values = parse_values(body, "derivation value");
        spec.derivation = std::move(d);
    }
    // agreement = Case:Gen -> Poss:P3sg
    for (const auto& line : cfg.get_all("agreement")) {
        size_t arrow = line.find("->");
        if (arrow == std::string::npos) throw DataError("grammar: agreement needs '->'");
        auto [src_slot, src_val] = split_once(trim(line.substr(0, arrow)), ':', "agreement");
        auto [dst_slot, dst_val] = split_once(trim(line.substr(arrow + 2)), ':', "agreement");
        auto slot_index = [&spec](const std::string& name) -> size_t {
            for (size_t i = 0; i < spec.slots.size(); ++i)
                if (spec.slots[i].name == name) return i;
            throw DataError("grammar: agreement references unknown slot '" + name + "'");
        };
        auto value_index = [&spec](size_t slot, const std::string& feature) -> size_t {
            for (size_t i = 0; i < spec.slots[slot].values.size(); ++i)
                if (spec.slots[slot].values[i].feature == feature) return i;
            throw DataError("grammar: agreement references unknown value '" + feature + "'");
        };
        AgreementRule rule;
        rule.src_slot = slot_index(src_slot);
        rule.src_value = value_index(rule.src_slot, src_val);
        rule.dst_slot = slot_index(dst_slot);
        rule.dst_value = value_index(rule.dst_slot, dst_val);
        spec.agreements.push_back(rule);
    }
    cfg.reject_unknown();
    spec.validate();
    return spec;
}

std::vector<Analysis> enumerate_parses(const GrammarSpec& spec, const std::string& surface) {
    std::vector<Analysis> parses;
    for (const std::string& stem : spec.stems) {
        if (surface.size() < stem.size() || surface.compare(0, stem.size(), stem) != 0) continue;
        struct Frame {
            size_t offset;
            size_t slot;
            std::vector<std::string> features;
        };
        std::vector<Frame> stack;
        stack.push_back(Frame{stem.size(), 0, {spec.pos}});
        while (!stack.empty()) {
            Frame f = std::move(stack.back());
            stack.pop_back();
            if (f.slot == spec.slots.size()) {
                if (f.offset == surface.size()) {
                    parses.push_back(Analysis{stem, f.features});
                } else if (spec.derivation) {
                    std::string_view rest(surface.data() + f.offset, surface.size() - f.offset);
                    for (const SlotValue& dv : spec.derivation->values) {
                        if (rest == dv.suffix) {
                            Analysis a{stem, f.features};
                            a.features.push_back("^DB");
                            a.features.push_back(spec.derivation->pos);
                            a.features.push_back(dv.feature);
                            parses.push_back(std::move(a));
                        }
                    }
                }
                continue;
            }
            // push in reverse so value order is explored first-to-last
            const Slot& slot = spec.slots[f.slot];
            for (size_t vi = slot.values.size(); vi-- > 0;) {
                const SlotValue& v = slot.values[vi];
                if (surface.compare(f.offset, v.suffix.size(), v.suffix) == 0 &&
                    f.offset + v.suffix.size() <= surface.size()) {
                    Frame next = f;
                    next.offset += v.suffix.size();
                    ++next.slot;
                    next.features.push_back(v.feature);
                    stack.push_back(std::move(next));
                }
            }
        }
    }
    return parses;
}

SynthResult generate(const GrammarSpec& spec, size_t n_sentences, uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    auto weighted_pick = [&rng](const std::vector<SlotValue>& values) {
        size_t total = 0;
        for (const SlotValue& v : values) total += v.weight;
        size_t r = rng.below(total);
        for (size_t i = 0; i < values.size(); ++i) {
            if (r < values[i].weight) return i;
            r -= values[i].weight;
        }
        return values.size() - 1;
    };
    SynthResult result;
    for (size_t si = 0; si < n_sentences; ++si) {
        Sentence sentence;
        std::vector<TokenCandidates> sent_cands;
        const size_t len = spec.min_len + rng.below(spec.max_len - spec.min_len + 1);
        std::vector<size_t> prev_choice(spec.slots.size(), 0);
        bool has_prev = false;
        for (size_t wi = 0; wi < len; ++wi) {
            Token tok;
            tok.lemma = spec.stems[rng.below(spec.stems.size())];
            tok.form = tok.lemma;
            tok.features.push_back(spec.pos);
            std::vector<size_t> choice(spec.slots.size());
            for (size_t s = 0; s < spec.slots.size(); ++s)
                choice[s] = weighted_pick(spec.slots[s].values);
            if (has_prev) {
                for (const AgreementRule& r : spec.agreements)
                    if (prev_choice[r.src_slot] == r.src_value) choice[r.dst_slot] = r.dst_value;
            }
            for (size_t s = 0; s < spec.slots.size(); ++s) {
                const SlotValue& v = spec.slots[s].values[choice[s]];
                tok.features.push_back(v.feature);
                tok.form += v.suffix;
            }
            if (spec.derivation && rng.uniform() < spec.derivation_prob) {
                const SlotValue& dv = spec.derivation->values[weighted_pick(spec.derivation->values)];
                tok.features.push_back("^DB");
                tok.features.push_back(spec.derivation->pos);
                tok.features.push_back(dv.feature);
                tok.form += dv.suffix;
            }
            prev_choice = choice;
            has_prev = true;

            TokenCandidates tc;
            tc.form = tok.form;
            tc.gold = Analysis{tok.lemma, tok.features};
            tc.candidates = enumerate_parses(spec, tok.form);
            bool gold_found = false;
            for (const Analysis& cand : tc.candidates)
                if (cand == tc.gold) gold_found = true;
            if (!gold_found)
                throw NumericError("synthlang: generated analysis not among its own parses");
            sent_cands.push_back(std::move(tc));
            sentence.tokens.push_back(std::move(tok));
        }
        result.corpus.push_back(std::move(sentence));
        result.candidates.push_back(std::move(sent_cands));
    }
    return result;
}

namespace {

double unseen_pct_of(const Corpus& corpus, const std::vector<bool>& in_test) {
    std::unordered_map<std::string, size_t> train_tags;
    size_t test_tokens = 0, unseen = 0;
    for (size_t i = 0; i < corpus.size(); ++i) {
        if (in_test[i]) continue;
        for (const Token& t : corpus[i].tokens) ++train_tags[composite_tag(t)];
    }
    for (size_t i = 0; i < corpus.size(); ++i) {
        if (!in_test[i]) continue;
        for (const Token& t : corpus[i].tokens) {
            ++test_tokens;
            if (!train_tags.count(composite_tag(t))) ++unseen;
        }
    }
    if (test_tokens == 0) return 0;
    return 100.0 * static_cast<double>(unseen) / static_cast<double>(test_tokens);
}

}  // namespace

std::pair<Corpus, Corpus> split_with_unseen_tags(const Corpus& corpus, double target_unseen_pct,
                                                 uint64_t seed) {
    if (corpus.size() < 4) throw DataError("split_with_unseen_tags: corpus too small");
    if (target_unseen_pct < 0 || target_unseen_pct > 100)
        throw DataError("split_with_unseen_tags: target must be a percentage");
    const double tolerance = (target_unseen_pct == 0) ? 0.0 : 2.0;

    Rng rng(seed);
    std::vector<size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    std::vector<bool> in_test(corpus.size(), false);
    const size_t test_n = std::max<size_t>(1, corpus.size() / 3);
    for (size_t i = 0; i < test_n; ++i) in_test[order[i]] = true;

    auto distance = [&](const std::vector<bool>& assign) {
        return std::abs(unseen_pct_of(corpus, assign) - target_unseen_pct);
    };
    auto split_sizes = [&](const std::vector<bool>& assign) {
        std::pair<size_t, size_t> sizes{0, 0};  // train, test
        for (bool t : assign) (t ? sizes.second : sizes.first) += 1;
        return sizes;
    };

    // three move kinds, always taking the best distance improvement:
    // single sentence in either direction, or holding out one composite
    // tag entirely (all train sentences containing it move to test) --
    // the only way a frequent tag can become unseen
    double current = distance(in_test);
    const size_t max_moves = 4 * corpus.size();
    for (size_t iter = 0; iter < max_moves && current > tolerance; ++iter) {
        double best = current;
        std::vector<bool> best_assign;
        auto [train_left, test_left] = split_sizes(in_test);

        for (size_t i = 0; i < corpus.size(); ++i) {
            if (in_test[i] && test_left <= 1) continue;
            if (!in_test[i] && train_left <= 1) continue;
            std::vector<bool> trial = in_test;
            trial[i] = !trial[i];
            const double d = distance(trial);
            if (d < best) {
                best = d;
                best_assign = std::move(trial);
            }
        }

        std::vector<std::string> tags_in_train;
        {
            std::unordered_map<std::string, bool> seen;
            for (size_t i = 0; i < corpus.size(); ++i) {
                if (in_test[i]) continue;
                for (const Token& t : corpus[i].tokens) {
                    std::string tag = composite_tag(t);
                    if (!seen[tag]) {
                        seen[tag] = true;
                        tags_in_train.push_back(std::move(tag));
                    }
                }
            }
        }
        for (const std::string& tag : tags_in_train) {
            std::vector<bool> trial = in_test;
            size_t moved = 0;
            for (size_t i = 0; i < corpus.size(); ++i) {
                if (trial[i]) continue;
                for (const Token& t : corpus[i].tokens) {
                    if (composite_tag(t) == tag) {
                        trial[i] = true;
                        ++moved;
                        break;
                    }
                }
            }
            if (moved == 0 || moved >= train_left) continue;  // keep train non-empty
            const double d = distance(trial);
            if (d < best) {
                best = d;
                best_assign = std::move(trial);
            }
        }

        if (best_assign.empty()) break;  // no move improves
        in_test = std::move(best_assign);
        current = best;
    }
    if (current > tolerance)
        throw DataError("split_with_unseen_tags: target " + std::to_string(target_unseen_pct) +
                        "% unreachable for this corpus");

    Corpus train, test;
    for (size_t i = 0; i < corpus.size(); ++i) (in_test[i] ? test : train).push_back(corpus[i]);
    if (train.empty() || test.empty())
        throw DataError("split_with_unseen_tags: degenerate split");
    return {std::move(train), std::move(test)};
}

}  // namespace morse
