#include "morse/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace morse {

Analysis analysis_of(const Token& token) { return Analysis{token.lemma, token.features}; }

Analysis analysis_of(const DecodedAnalysis& decoded) {
    return Analysis{decoded.lemma, decoded.features};
}

Analysis mask_analysis(const Analysis& a) {
    Analysis out;
    out.lemma.reserve(a.lemma.size());
    for (char ch : a.lemma) out.lemma.push_back((ch >= '0' && ch <= '9') ? '#' : ch);
    for (const std::string& f : a.features)
        if (f != "Prop") out.features.push_back(f);
    return out;
}

namespace {

bool matches(const Analysis& pred, const Analysis& gold, MatchScope scope) {
    if (pred.features != gold.features) return false;
    return scope == MatchScope::tag_only || pred.lemma == gold.lemma;
}

double pct(size_t num, size_t den) {
    return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double exact_accuracy(const std::vector<Analysis>& preds, const std::vector<Analysis>& golds,
                      MatchScope scope) {
    if (preds.size() != golds.size()) throw DataError("exact_accuracy: length mismatch");
    size_t correct = 0;
    for (size_t i = 0; i < preds.size(); ++i)
        if (matches(preds[i], golds[i], scope)) ++correct;
    return pct(correct, preds.size());
}

namespace {

size_t multiset_intersection(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::unordered_map<std::string, size_t> counts;
    for (const auto& x : a) ++counts[x];
    size_t tp = 0;
    for (const auto& x : b) {
        auto it = counts.find(x);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++tp;
        }
    }
    return tp;
}

}  // namespace

double feature_f1(const std::vector<Analysis>& preds, const std::vector<Analysis>& golds) {
    if (preds.size() != golds.size()) throw DataError("feature_f1: length mismatch");
    size_t tp = 0, pred_len = 0, gold_len = 0;
    for (size_t i = 0; i < preds.size(); ++i) {
        tp += multiset_intersection(preds[i].features, golds[i].features);
        pred_len += preds[i].features.size();
        gold_len += golds[i].features.size();
    }
    if (pred_len == 0 || gold_len == 0 || tp == 0) return 0;
    const double p = static_cast<double>(tp) / static_cast<double>(pred_len);
    const double r = static_cast<double>(tp) / static_cast<double>(gold_len);
    return 100.0 * 2.0 * p * r / (p + r);
}

double feature_f1_macro(const std::vector<Analysis>& preds, const std::vector<Analysis>& golds) {
    if (preds.size() != golds.size()) throw DataError("feature_f1: length mismatch");
    // per-label TP / predicted / gold counts over all tokens
    std::map<std::string, std::array<size_t, 3>> table;  // tp, pred, gold
    for (size_t i = 0; i < preds.size(); ++i) {
        std::unordered_map<std::string, size_t> pc, gc;
        for (const auto& f : preds[i].features) ++pc[f];
        for (const auto& f : golds[i].features) ++gc[f];
        for (const auto& [f, n] : pc) {
            auto& row = table[f];
            row[1] += n;
            auto it = gc.find(f);
            if (it != gc.end()) row[0] += std::min(n, it->second);
        }
        for (const auto& [f, n] : gc) table[f][2] += n;
    }
    if (table.empty()) return 0;
    double sum = 0;
    for (const auto& [f, row] : table) {
        (void)f;
        const auto [tp, np, ng] = row;
        if (tp == 0 || np == 0 || ng == 0) continue;
        const double p = static_cast<double>(tp) / static_cast<double>(np);
        const double r = static_cast<double>(tp) / static_cast<double>(ng);
        sum += 2.0 * p * r / (p + r);
    }
    return 100.0 * sum / static_cast<double>(table.size());
}

std::vector<BucketRow> bucket_report(const Corpus& train, const std::vector<Analysis>& golds,
                                     const std::vector<Analysis>& preds,
                                     const std::vector<Analysis>& masked_golds,
                                     const std::vector<Analysis>& masked_preds, BucketKind kind,
                                     const std::vector<size_t>& thresholds) {
    (void)golds;
    if (preds.size() != golds.size() || masked_golds.size() != golds.size() ||
        masked_preds.size() != golds.size())
        throw DataError("bucket_report: length mismatch");
    if (thresholds.empty()) throw DataError("bucket_report: need at least one threshold");
    for (size_t i = 0; i < thresholds.size(); ++i) {
        if (thresholds[i] < 1 || (i > 0 && thresholds[i] <= thresholds[i - 1]))
            throw DataError("bucket_report: thresholds must be >= 1 and strictly increasing");
    }

    auto counts = (kind == BucketKind::tag) ? tag_counts(train) : lemma_counts(train);

    const size_t n_buckets = thresholds.size() + 2;  // {0}, ranges, top
    std::vector<BucketRow> rows(n_buckets);
    rows[0].label = "0";
    for (size_t i = 0; i < thresholds.size(); ++i)
        rows[i + 1].label = "<" + std::to_string(thresholds[i]);
    rows.back().label = ">=" + std::to_string(thresholds.back());

    std::vector<size_t> correct_lt(n_buckets, 0), correct_tag(n_buckets, 0);
    for (size_t i = 0; i < golds.size(); ++i) {
        const std::string key =
            (kind == BucketKind::tag) ? composite_tag(golds[i].features) : golds[i].lemma;
        auto it = counts.find(key);
        const size_t c = (it == counts.end()) ? 0 : it->second;
        size_t b = 0;
        if (c > 0) {
            b = n_buckets - 1;
            for (size_t t = 0; t < thresholds.size(); ++t) {
                if (c < thresholds[t]) {
                    b = t + 1;
                    break;
                }
            }
        }
        ++rows[b].n_tokens;
        if (matches(masked_preds[i], masked_golds[i], MatchScope::lemma_tag)) ++correct_lt[b];
        if (matches(masked_preds[i], masked_golds[i], MatchScope::tag_only)) ++correct_tag[b];
    }
    for (size_t b = 0; b < n_buckets; ++b) {
        rows[b].lemma_tag_acc = pct(correct_lt[b], rows[b].n_tokens);
        rows[b].tag_acc = pct(correct_tag[b], rows[b].n_tokens);
    }
    return rows;
}

AmbiguityReport ambiguity_report(const std::vector<Analysis>& preds,
                                 const std::vector<Analysis>& golds,
                                 const std::vector<bool>& is_ambiguous, MatchScope scope) {
    if (preds.size() != golds.size() || is_ambiguous.size() != golds.size())
        throw DataError("ambiguity_report: length mismatch");
    AmbiguityReport rep;
    size_t amb_ok = 0, unamb_ok = 0;
    for (size_t i = 0; i < preds.size(); ++i) {
        const bool ok = matches(preds[i], golds[i], scope);
        if (is_ambiguous[i]) {
            ++rep.n_ambiguous;
            amb_ok += ok;
        } else {
            ++rep.n_unambiguous;
            unamb_ok += ok;
        }
    }
    rep.ambiguous_acc = pct(amb_ok, rep.n_ambiguous);
    rep.unambiguous_acc = pct(unamb_ok, rep.n_unambiguous);
    rep.total_acc = pct(amb_ok + unamb_ok, rep.n_ambiguous + rep.n_unambiguous);
    return rep;
}

std::vector<bool> ambiguity_from_corpora(const Corpus& test,
                                         const std::vector<const Corpus*>& reference) {
    std::unordered_map<std::string, std::unordered_set<std::string>> seen;
    for (const Corpus* corpus : reference)
        for (const Sentence& s : *corpus)
            for (const Token& t : s.tokens)
                seen[t.form].insert(serialize_analysis(t.lemma, t.features));
    std::vector<bool> out;
    for (const Sentence& s : test)
        for (const Token& t : s.tokens) out.push_back(seen[t.form].size() >= 2);
    return out;
}

CandidateSet parse_candidates(std::string_view text) {
    CandidateSet out;
    std::vector<TokenCandidates> current;
    size_t line_no = 0;
    for (const auto& raw : split(text, '\n')) {
        ++line_no;
        std::string_view line = trim(raw);
        if (line.empty()) {
            if (!current.empty()) out.push_back(std::move(current));
            current.clear();
            continue;
        }
        auto cols = split(line, '\t');
        if (cols.size() < 3)
            throw DataError("candidates: line " + std::to_string(line_no) +
                            ": expected form, gold and at least one candidate");
        TokenCandidates tc;
        tc.form = cols[0];
        auto [glemma, gfeats] = parse_analysis(cols[1]);
        tc.gold = Analysis{std::move(glemma), std::move(gfeats)};
        for (size_t i = 2; i < cols.size(); ++i) {
            auto [lemma, feats] = parse_analysis(cols[i]);
            tc.candidates.push_back(Analysis{std::move(lemma), std::move(feats)});
        }
        current.push_back(std::move(tc));
    }
    if (!current.empty()) out.push_back(std::move(current));
    if (out.empty()) throw DataError("candidates: empty file");
    return out;
}

std::string serialize_candidates(const CandidateSet& cands) {
    std::string out;
    for (size_t si = 0; si < cands.size(); ++si) {
        if (si) out += '\n';
        for (const TokenCandidates& tc : cands[si]) {
            out += tc.form;
            out += '\t';
            out += serialize_analysis(tc.gold.lemma, tc.gold.features);
            for (const Analysis& cand : tc.candidates) {
                out += '\t';
                out += serialize_analysis(cand.lemma, cand.features);
            }
            out += '\n';
        }
    }
    return out;
}

std::vector<bool> ambiguity_from_candidates(const CandidateSet& cands) {
    std::vector<bool> out;
    for (const auto& sentence : cands)
        for (const TokenCandidates& tc : sentence) out.push_back(tc.candidates.size() >= 2);
    return out;
}

namespace {

AnalysisSequence candidate_sequence(const Analysis& cand, const MorseModel& model) {
    Token tok;
    tok.form = "x";
    tok.lemma = cand.lemma;
    tok.features = cand.features;
    return model.target_for(tok);
}

}  // namespace

std::vector<std::vector<size_t>> disambiguate(const MorseModel& model, const CandidateSet& cands) {
    if (model.config().mode == Mode::whole_tag)
        throw DataError("disambiguation needs a sequence-decoder model");
    std::vector<std::vector<size_t>> choices;
    for (const auto& sent_cands : cands) {
        Sentence sentence;
        for (const TokenCandidates& tc : sent_cands) {
            Token tok;
            tok.form = tc.form;
            sentence.tokens.push_back(std::move(tok));
        }
        auto e = model.word_embeddings(sentence);
        auto c = model.context_embeddings(e);
        MorseModel::WindowState window(model);
        std::vector<size_t> chosen;
        for (size_t i = 0; i < sent_cands.size(); ++i) {
            const auto& cand_list = sent_cands[i].candidates;
            if (cand_list.empty()) throw DataError("disambiguate: empty candidate list");
            Tensor o = window.current();
            size_t best = 0;
            double best_score = 0;
            for (size_t k = 0; k < cand_list.size(); ++k) {
                double score =
                    model.score_candidate(c[i], e[i], o, candidate_sequence(cand_list[k], model));
                if (k == 0 || score > best_score) {  // ties keep the first listed
                    best = k;
                    best_score = score;
                }
            }
            chosen.push_back(best);
            window.push_word(
                model.feature_rows_of_ids(candidate_sequence(cand_list[best], model).ids));
        }
        choices.push_back(std::move(chosen));
    }
    return choices;
}

EvalReport evaluate(const std::vector<std::string>& forms, const std::vector<Analysis>& preds,
                    const std::vector<Analysis>& golds, const Corpus* train_for_buckets,
                    const CandidateSet* candidates, const Corpus* test_for_ambiguity,
                    const EvalOptions& options) {
    if (preds.size() != golds.size() || forms.size() != golds.size())
        throw DataError("evaluate: prediction/gold misalignment");
    EvalReport rep;
    rep.n_tokens = golds.size();
    rep.masked = options.mask;

    std::vector<Analysis> mp = preds, mg = golds;
    if (options.mask) {
        for (auto& a : mp) a = mask_analysis(a);
        for (auto& a : mg) a = mask_analysis(a);
    }

    rep.lemma_tag_acc = exact_accuracy(mp, mg, MatchScope::lemma_tag);
    rep.tag_acc = exact_accuracy(mp, mg, MatchScope::tag_only);
    rep.feature_f1 = feature_f1(mp, mg);
    if (options.macro_f1) rep.feature_f1_macro = feature_f1_macro(mp, mg);

    if (train_for_buckets) {
        rep.tag_buckets =
            bucket_report(*train_for_buckets, golds, preds, mg, mp, BucketKind::tag,
                          options.tag_thresholds);
        rep.lemma_buckets =
            bucket_report(*train_for_buckets, golds, preds, mg, mp, BucketKind::lemma,
                          options.lemma_thresholds);
    }

    std::vector<bool> amb;
    if (candidates) {
        amb = ambiguity_from_candidates(*candidates);
    } else if (test_for_ambiguity) {
        std::vector<const Corpus*> refs{test_for_ambiguity};
        if (train_for_buckets) refs.push_back(train_for_buckets);
        amb = ambiguity_from_corpora(*test_for_ambiguity, refs);
    }
    if (!amb.empty()) {
        if (amb.size() != golds.size()) throw DataError("evaluate: ambiguity flags misaligned");
        rep.ambiguity = ambiguity_report(mp, mg, amb, options.ambiguity_scope);
    }
    return rep;
}

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

}  // namespace

std::string report_to_kv(const EvalReport& rep) {
    std::string out;
    auto kv = [&out](const std::string& k, const std::string& v) { out += k + "\t" + v + "\n"; };
    kv("n_tokens", std::to_string(rep.n_tokens));
    kv("masked", rep.masked ? "true" : "false");
    kv("lemma_tag_acc", fmt(rep.lemma_tag_acc));
    kv("tag_acc", fmt(rep.tag_acc));
    kv("feature_f1", fmt(rep.feature_f1));
    if (rep.feature_f1_macro) kv("feature_f1_macro", fmt(*rep.feature_f1_macro));
    if (rep.ambiguity) {
        kv("ambiguous_acc", fmt(rep.ambiguity->ambiguous_acc));
        kv("unambiguous_acc", fmt(rep.ambiguity->unambiguous_acc));
        kv("total_acc", fmt(rep.ambiguity->total_acc));
        kv("n_ambiguous", std::to_string(rep.ambiguity->n_ambiguous));
        kv("n_unambiguous", std::to_string(rep.ambiguity->n_unambiguous));
    }
    auto buckets = [&](const char* prefix, const std::vector<BucketRow>& rows) {
        for (const BucketRow& r : rows) {
            kv(std::string(prefix) + "[" + r.label + "].tokens", std::to_string(r.n_tokens));
            kv(std::string(prefix) + "[" + r.label + "].tag_acc", fmt(r.tag_acc));
            kv(std::string(prefix) + "[" + r.label + "].lemma_tag_acc", fmt(r.lemma_tag_acc));
        }
    };
    buckets("tag_bucket", rep.tag_buckets);
    buckets("lemma_bucket", rep.lemma_buckets);
    return out;
}

std::string report_to_json(const EvalReport& rep) {
    nlohmann::json j;
    j["n_tokens"] = rep.n_tokens;
    j["masked"] = rep.masked;
    j["lemma_tag_acc"] = rep.lemma_tag_acc;
    j["tag_acc"] = rep.tag_acc;
    j["feature_f1"] = rep.feature_f1;
    if (rep.feature_f1_macro) j["feature_f1_macro"] = *rep.feature_f1_macro;
    if (rep.ambiguity) {
        j["ambiguity"] = {{"ambiguous_acc", rep.ambiguity->ambiguous_acc},
                          {"unambiguous_acc", rep.ambiguity->unambiguous_acc},
                          {"total_acc", rep.ambiguity->total_acc},
                          {"n_ambiguous", rep.ambiguity->n_ambiguous},
                          {"n_unambiguous", rep.ambiguity->n_unambiguous}};
    }
    auto bucket_json = [](const std::vector<BucketRow>& rows) {
        nlohmann::json arr = nlohmann::json::array();
        for (const BucketRow& r : rows)
            arr.push_back({{"range", r.label},
                           {"tokens", r.n_tokens},
                           {"tag_acc", r.tag_acc},
                           {"lemma_tag_acc", r.lemma_tag_acc}});
        return arr;
    };
    if (!rep.tag_buckets.empty()) j["tag_buckets"] = bucket_json(rep.tag_buckets);
    if (!rep.lemma_buckets.empty()) j["lemma_buckets"] = bucket_json(rep.lemma_buckets);
    return j.dump(2) + "\n";
}

RunAggregate aggregate_runs(const std::vector<double>& values) {
    if (values.size() < 2) throw DataError("aggregate_runs: need at least two runs");
    RunAggregate agg;
    agg.n = values.size();
    for (double v : values) agg.mean += v;
    agg.mean /= static_cast<double>(agg.n);
    double ss = 0;
    for (double v : values) ss += (v - agg.mean) * (v - agg.mean);
    agg.stddev = std::sqrt(ss / static_cast<double>(agg.n - 1));
    return agg;
}

namespace {

// regularized incomplete beta via Lentz continued fraction
double betacf(double a, double b, double x) {
    const int max_iter = 200;
    const double eps = 3e-14, fpmin = 1e-300;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::abs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < eps) break;
    }
    return h;
}

double inc_beta(double a, double b, double x) {
    if (x <= 0) return 0;
    if (x >= 1) return 1;
    const double ln_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

}  // namespace

double welch_p_value(const std::vector<double>& a, const std::vector<double>& b) {
    RunAggregate sa = aggregate_runs(a), sb = aggregate_runs(b);
    const double va = sa.stddev * sa.stddev / static_cast<double>(sa.n);
    const double vb = sb.stddev * sb.stddev / static_cast<double>(sb.n);
    if (va + vb == 0) return (sa.mean == sb.mean) ? 1.0 : 0.0;
    const double t = (sa.mean - sb.mean) / std::sqrt(va + vb);
    const double df = (va + vb) * (va + vb) /
                      (va * va / static_cast<double>(sa.n - 1) +
                       vb * vb / static_cast<double>(sb.n - 1));
    // two-sided p from the Student t distribution
    const double x = df / (df + t * t);
    return inc_beta(df / 2.0, 0.5, x);
}

}  // namespace morse
