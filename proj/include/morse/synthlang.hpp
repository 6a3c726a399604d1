#pragma once

#include <optional>
#include <string>
#include <vector>

#include "morse/data.hpp"
#include "morse/eval.hpp"
#include "morse/rng.hpp"

namespace morse {

/// Deterministic generator of agglutinative toy corpora. Words are a
/// stem plus one suffix per morphological slot (optionally followed by a
/// derivational group); composite tags are compositional, so splits with
/// unseen combinations of seen features are constructible. Homographic
/// suffixes across slots inject ambiguity; agreement rules make the
/// ambiguity resolvable from context.

struct SlotValue {
    std::string feature;
    std::string suffix;
    /// Sampling weight; a zero-weight value is never drawn freely but can
    /// still be forced by an agreement rule (and always parses).
    size_t weight = 1;
};

struct Slot {
    std::string name;
    std::vector<SlotValue> values;
};

struct Derivation {
    std::string pos;  // part of speech after the boundary
    std::vector<SlotValue> values;
};

/// "if the previous word took src_value in src_slot, this word takes
/// dst_value in dst_slot"
struct AgreementRule {
    size_t src_slot, src_value;
    size_t dst_slot, dst_value;
};

struct GrammarSpec {
    uint64_t seed = 1;
    std::vector<std::string> stems;
    std::string pos = "Noun";
    std::vector<Slot> slots;
    double derivation_prob = 0;
    std::optional<Derivation> derivation;
    size_t min_len = 3, max_len = 8;
    size_t n_sentences = 100;
    std::vector<AgreementRule> agreements;

    void validate() const;
};

/// Grammar file: flat "key = value" lines with repeatable "slot" /
/// "agreement" keys. See the README for the format.
GrammarSpec parse_grammar(std::string_view text);

struct SynthResult {
    Corpus corpus;
    CandidateSet candidates;  // aligned with the corpus; gold always present
};

SynthResult generate(const GrammarSpec& spec, size_t n_sentences, uint64_t seed);

/// All grammar-consistent analyses of a surface form, in deterministic
/// order (stems, then slot values, then derivations).
std::vector<Analysis> enumerate_parses(const GrammarSpec& spec, const std::string& surface);

/// Greedy sentence reassignment until the test split's unseen-tag
/// percentage lands within +-2 points of the target (exactly 0 for a
/// zero target). Deterministic given the seed; every sentence ends up in
/// exactly one split.
std::pair<Corpus, Corpus> split_with_unseen_tags(const Corpus& corpus, double target_unseen_pct,
                                                 uint64_t seed);

}  // namespace morse
