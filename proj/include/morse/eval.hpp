#pragma once

#include <optional>
#include <string>
#include <vector>

#include "morse/data.hpp"
#include "morse/model.hpp"

namespace morse {

struct Analysis {
    std::string lemma;
    std::vector<std::string> features;

    bool operator==(const Analysis& other) const = default;
};

Analysis analysis_of(const Token& token);
Analysis analysis_of(const DecodedAnalysis& decoded);

/// Evaluation masking: every digit in the lemma becomes '#', every
/// "Prop" feature is removed. Applied identically to gold and prediction
/// before comparison; idempotent.
Analysis mask_analysis(const Analysis& a);

enum class MatchScope { lemma_tag, tag_only };

/// Token-level exact-match percentage, order-sensitive on the feature
/// sequence. Throws on length mismatch.
double exact_accuracy(const std::vector<Analysis>& preds, const std::vector<Analysis>& golds,
                      MatchScope scope);

/// Micro-averaged F1 percentage over per-token feature multisets,
/// ignoring the lemma. Empty prediction/gold sets yield 0 by convention.
double feature_f1(const std::vector<Analysis>& preds, const std::vector<Analysis>& golds);
/// Macro variant: mean per-feature-label F1.
double feature_f1_macro(const std::vector<Analysis>& preds, const std::vector<Analysis>& golds);

enum class BucketKind { tag, lemma };

struct BucketRow {
    std::string label;  // "0", "<5", ">=5", ...
    size_t n_tokens = 0;
    double lemma_tag_acc = 0;
    double tag_acc = 0;
};

/// Partition of test tokens by training-split frequency of the gold
/// composite tag (or gold lemma), with per-bucket accuracies. Thresholds
/// must be strictly increasing and >= 1; buckets are
/// {0}, [1,t1), [t1,t2), ..., [tk,inf).
std::vector<BucketRow> bucket_report(const Corpus& train, const std::vector<Analysis>& golds,
                                     const std::vector<Analysis>& preds,
                                     const std::vector<Analysis>& masked_golds,
                                     const std::vector<Analysis>& masked_preds, BucketKind kind,
                                     const std::vector<size_t>& thresholds);

struct AmbiguityReport {
    double ambiguous_acc = 0;
    double unambiguous_acc = 0;
    double total_acc = 0;
    size_t n_ambiguous = 0;
    size_t n_unambiguous = 0;
};

AmbiguityReport ambiguity_report(const std::vector<Analysis>& preds,
                                 const std::vector<Analysis>& golds,
                                 const std::vector<bool>& is_ambiguous, MatchScope scope);

/// Ambiguity flags from corpora: a token is ambiguous when its surface
/// form carries two or more distinct gold analyses anywhere in the given
/// corpora (approximation used when no candidate file is available).
std::vector<bool> ambiguity_from_corpora(const Corpus& test,
                                         const std::vector<const Corpus*>& reference);

// ---------------------------------------------------------------- candidates

struct TokenCandidates {
    std::string form;
    Analysis gold;
    std::vector<Analysis> candidates;
};

/// Per-sentence candidate lists; "form<TAB>gold<TAB>cand1<TAB>cand2..."
/// lines with blank lines between sentences.
using CandidateSet = std::vector<std::vector<TokenCandidates>>;

CandidateSet parse_candidates(std::string_view text);
std::string serialize_candidates(const CandidateSet& cands);

std::vector<bool> ambiguity_from_candidates(const CandidateSet& cands);

/// Left-to-right decoder rescoring: per token the candidate with the
/// highest teacher-forced log probability wins (ties keep the first
/// listed) and its features feed the output-encoder window for the
/// following words. Returns chosen candidate indices per sentence.
std::vector<std::vector<size_t>> disambiguate(const MorseModel& model, const CandidateSet& cands);

// ---------------------------------------------------------------- reports

struct EvalReport {
    size_t n_tokens = 0;
    bool masked = true;
    double lemma_tag_acc = 0;
    double tag_acc = 0;
    double feature_f1 = 0;
    std::optional<double> feature_f1_macro;
    std::optional<AmbiguityReport> ambiguity;
    std::vector<BucketRow> tag_buckets;    // present when a train split is supplied
    std::vector<BucketRow> lemma_buckets;
};

struct EvalOptions {
    bool mask = true;
    bool macro_f1 = false;
    std::vector<size_t> tag_thresholds{100};
    std::vector<size_t> lemma_thresholds{5};
    MatchScope ambiguity_scope = MatchScope::lemma_tag;
};

EvalReport evaluate(const std::vector<std::string>& forms, const std::vector<Analysis>& preds,
                    const std::vector<Analysis>& golds, const Corpus* train_for_buckets,
                    const CandidateSet* candidates, const Corpus* test_for_ambiguity,
                    const EvalOptions& options);

std::string report_to_kv(const EvalReport& report);
std::string report_to_json(const EvalReport& report);

// ------------------------------------------------------------- aggregation

struct RunAggregate {
    double mean = 0;
    double stddev = 0;  // sample, n-1 denominator
    size_t n = 0;
};

RunAggregate aggregate_runs(const std::vector<double>& values);  // needs n >= 2

/// Two-sided Welch t-test p-value. Zero variance on both sides yields
/// p=1 for equal means and p=0 otherwise.
double welch_p_value(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace morse
