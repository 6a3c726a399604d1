#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "morse/checkpoint.hpp"
#include "morse/config.hpp"
#include "morse/data.hpp"
#include "morse/eval.hpp"
#include "morse/kernels.hpp"
#include "morse/model.hpp"
#include "morse/synthlang.hpp"
#include "morse/training.hpp"
#include "morse/util.hpp"

namespace fs = std::filesystem;
using namespace morse;
using ordered_json = nlohmann::ordered_json;

namespace {

// distinct sub-streams derived from the config seed
constexpr uint64_t kInitStream = 0xD1B54A32D192ED03ull;
constexpr uint64_t kJitterStream = 0x8CB92BA72F3D8DD7ull;

struct Manifest {
    std::string command;
    std::string config_path;
    std::vector<std::pair<std::string, std::string>> resolved;
    uint64_t seed = 0;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();
};

void ensure_fresh(const fs::path& path, bool force) {
    if (!force && fs::exists(path))
        throw UsageError("output already exists: " + path.string() + " (use --force)");
}

fs::path prepare_out_dir(const std::string& out) {
    fs::path dir(out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create output directory: " + out);
    return dir;
}

void write_manifest(const fs::path& out_dir, const Manifest& m, bool force) {
    ordered_json j;
    j["command"] = m.command;
    if (!m.config_path.empty()) j["config"] = m.config_path;
    ordered_json rc = ordered_json::object();
    for (const auto& [k, v] : m.resolved) rc[k] = v;
    j["resolved_config"] = rc;
    j["seed"] = m.seed;
    ordered_json inputs = ordered_json::array();
    for (const std::string& path : m.inputs) {
        char digest[32];
        std::snprintf(digest, sizeof(digest), "%016llx",
                      static_cast<unsigned long long>(fnv1a64(read_file(path))));
        inputs.push_back({{"path", path}, {"fnv1a64", digest}});
    }
    j["inputs"] = inputs;
    ordered_json outputs = ordered_json::array();
    for (const std::string& path : m.outputs) outputs.push_back(path);
    j["outputs"] = outputs;
    const auto elapsed = std::chrono::steady_clock::now() - m.started;
    j["duration_seconds"] = std::chrono::duration<double>(elapsed).count();
    fs::path path = out_dir / "manifest.json";
    ensure_fresh(path, force);
    write_file(path.string(), j.dump(2) + "\n");
}

// append-only epoch log, one line per epoch as training progresses
class HistoryLog {
public:
    explicit HistoryLog(const std::string& path) : out_(path, std::ios::trunc) {
        if (!out_) throw DataError("cannot open history log: " + path);
        out_ << history_log_header();
        out_.flush();
    }
    EpochCallback callback() {
        return [this](const EpochRecord& r) {
            out_ << epoch_log_line(r);
            out_.flush();
        };
    }

private:
    std::ofstream out_;
};

Corpus load_corpus(const std::string& path, const std::string& format) {
    std::string text = read_file(path);
    if (format == "trmor") return parse_trmor(text);
    if (format == "conllu") return parse_conllu(text);
    throw UsageError("unknown corpus format '" + format + "' (expected trmor or conllu)");
}

struct TrainSetup {
    std::string train_file, dev_file, format;
    MorseConfig mcfg;
    TrainConfig tcfg;
    std::vector<std::pair<std::string, std::string>> resolved;
};

TrainSetup parse_train_config(FlatConfig& cfg) {
    TrainSetup s;
    s.train_file = cfg.get_string("train_file");
    s.dev_file = cfg.get_string("dev_file");
    s.format = cfg.get_string("format", "trmor");

    std::string mode = cfg.get_string("mode", "joint");
    auto m = mode_from_name(mode);
    if (!m) throw UsageError("config: unknown mode '" + mode + "'");
    s.mcfg.mode = *m;
    s.mcfg.hidden = static_cast<size_t>(cfg.get_int("hidden_size", 512));
    s.mcfg.char_emb_size = static_cast<size_t>(cfg.get_int("char_emb_size", 64));
    s.mcfg.out_emb_size = static_cast<size_t>(cfg.get_int("output_emb_size", 256));
    s.mcfg.use_context = cfg.get_bool("use_context", true);
    s.mcfg.use_output_encoder = cfg.get_bool("use_output_encoder", true);
    s.mcfg.carry_output_state = cfg.get_bool("carry_output_state", false);
    s.mcfg.max_decode_len = static_cast<size_t>(cfg.get_int("max_decode_len", 64));
    s.mcfg.normalize_and_validate();

    s.tcfg.lr = cfg.get_double("lr", 1.6);
    s.tcfg.decay_factor = cfg.get_double("decay_factor", 0.8);
    s.tcfg.decay_patience = static_cast<size_t>(cfg.get_int("decay_patience", 5));
    s.tcfg.stop_patience = static_cast<size_t>(cfg.get_int("stop_patience", 10));
    s.tcfg.dropout_rate = cfg.get_double("dropout", 0.5);
    s.tcfg.max_epochs = static_cast<size_t>(cfg.get_int("max_epochs", 100));
    s.tcfg.batch_sentences = static_cast<size_t>(cfg.get_int("batch_sentences", 1));
    s.tcfg.clip_norm = cfg.get_double("clip_norm", 0.0);
    s.tcfg.seed = cfg.get_u64("seed", 1);
    s.tcfg.validate();

    auto rec = [&s](const std::string& k, const std::string& v) { s.resolved.emplace_back(k, v); };
    rec("train_file", s.train_file);
    rec("dev_file", s.dev_file);
    rec("format", s.format);
    rec("mode", mode_name(s.mcfg.mode));
    rec("hidden_size", std::to_string(s.mcfg.hidden));
    rec("char_emb_size", std::to_string(s.mcfg.char_emb_size));
    rec("output_emb_size", std::to_string(s.mcfg.out_emb_size));
    rec("use_context", s.mcfg.use_context ? "true" : "false");
    rec("use_output_encoder", s.mcfg.use_output_encoder ? "true" : "false");
    rec("carry_output_state", s.mcfg.carry_output_state ? "true" : "false");
    rec("max_decode_len", std::to_string(s.mcfg.max_decode_len));
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%g", s.tcfg.lr);
    rec("lr", buf);
    std::snprintf(buf, sizeof(buf), "%g", s.tcfg.decay_factor);
    rec("decay_factor", buf);
    rec("decay_patience", std::to_string(s.tcfg.decay_patience));
    rec("stop_patience", std::to_string(s.tcfg.stop_patience));
    std::snprintf(buf, sizeof(buf), "%g", s.tcfg.dropout_rate);
    rec("dropout", buf);
    rec("max_epochs", std::to_string(s.tcfg.max_epochs));
    rec("batch_sentences", std::to_string(s.tcfg.batch_sentences));
    std::snprintf(buf, sizeof(buf), "%g", s.tcfg.clip_norm);
    rec("clip_norm", buf);
    rec("seed", std::to_string(s.tcfg.seed));
    return s;
}

MorseModel build_model(const TrainSetup& s, const Corpus& train) {
    Vocabulary vocab = Vocabulary::build(train);
    TagInventory tags;
    if (s.mcfg.mode == Mode::whole_tag) tags = TagInventory::build(train);
    MorseModel model(s.mcfg, std::move(vocab), std::move(tags));
    Rng rng(s.tcfg.seed ^ kInitStream);
    model.init_params(rng);
    return model;
}

std::string predictions_to_trmor(const MorseModel& model, const Corpus& corpus,
                                 const std::vector<std::vector<WordPrediction>>& preds) {
    std::string out;
    for (size_t si = 0; si < corpus.size(); ++si) {
        if (si) out += '\n';
        for (size_t ti = 0; ti < corpus[si].tokens.size(); ++ti) {
            const WordPrediction& wp = preds[si][ti];
            std::string lemma;
            std::vector<std::string> features;
            if (model.config().mode == Mode::whole_tag) {
                features = split(model.tags().tags[wp.tag_id], '+');
            } else {
                DecodedAnalysis dec = decode_sequence(wp.ids, model.vocab());
                lemma = std::move(dec.lemma);
                features = std::move(dec.features);
            }
            // placeholders keep degenerate predictions parseable; they can
            // never match a real gold analysis
            if (lemma.empty()) lemma = "_";
            if (features.empty()) features.push_back("<NONE>");
            out += corpus[si].tokens[ti].form;
            out += '\t';
            out += serialize_analysis(lemma, features);
            out += '\n';
        }
    }
    return out;
}

void check_alignment(const Corpus& gold, const Corpus& pred) {
    if (gold.size() != pred.size())
        throw DataError("prediction/gold sentence count mismatch: " + std::to_string(pred.size()) +
                        " vs " + std::to_string(gold.size()));
    for (size_t i = 0; i < gold.size(); ++i) {
        if (gold[i].tokens.size() != pred[i].tokens.size())
            throw DataError("sentence " + std::to_string(i + 1) + ": token count mismatch");
        for (size_t t = 0; t < gold[i].tokens.size(); ++t)
            if (gold[i].tokens[t].form != pred[i].tokens[t].form)
                throw DataError("sentence " + std::to_string(i + 1) + ", token " +
                                std::to_string(t + 1) + ": form mismatch");
    }
}

std::vector<size_t> parse_thresholds(const std::string& text) {
    std::vector<size_t> out;
    for (const auto& piece : split(text, ',')) {
        auto t = trim(piece);
        if (t.empty()) continue;
        out.push_back(static_cast<size_t>(std::stoull(std::string(t))));
    }
    if (out.empty()) throw UsageError("empty threshold list");
    return out;
}

// ------------------------------------------------------------------ commands

int cmd_train(const std::string& config_path, const std::string& out, long long seed_override,
              bool force) {
    Manifest man;
    man.command = "train";
    man.config_path = config_path;
    FlatConfig cfg = FlatConfig::parse_file(config_path);
    TrainSetup setup = parse_train_config(cfg);
    cfg.reject_unknown();
    if (seed_override >= 0) {
        setup.tcfg.seed = static_cast<uint64_t>(seed_override);
        for (auto& [k, v] : setup.resolved)
            if (k == "seed") v = std::to_string(setup.tcfg.seed);
    }
    man.resolved = setup.resolved;
    man.seed = setup.tcfg.seed;
    man.inputs = {setup.train_file, setup.dev_file};

    fs::path dir = prepare_out_dir(out);
    fs::path ckpt = dir / "model.ckpt", hist = dir / "history.log";
    ensure_fresh(ckpt, force);
    ensure_fresh(hist, force);

    Corpus train_corpus = load_corpus(setup.train_file, setup.format);
    Corpus dev_corpus = load_corpus(setup.dev_file, setup.format);
    MorseModel model = build_model(setup, train_corpus);

    HistoryLog hist_log(hist.string());
    TrainResult result =
        train(std::move(model), train_corpus, dev_corpus, setup.tcfg, {}, hist_log.callback());

    save_checkpoint(ckpt.string(), result.best_model);
    man.outputs = {ckpt.string(), hist.string()};
    write_manifest(dir, man, force);
    std::printf("epochs\t%zu\nbest_dev_acc\t%.4f\ncheckpoint\t%s\n", result.history.size(),
                result.best_dev_acc, ckpt.string().c_str());
    return 0;
}

int cmd_predict(const std::string& ckpt, const std::string& input, const std::string& format,
                const std::string& out, size_t threads, bool force) {
    Manifest man;
    man.command = "predict";
    man.inputs = {ckpt, input};
    fs::path dir = prepare_out_dir(out);
    fs::path pred_path = dir / "predictions.txt";
    ensure_fresh(pred_path, force);

    MorseModel model = load_checkpoint(ckpt);
    // an empty sentence list yields an empty predictions file
    Corpus corpus;
    if (!trim(read_file(input)).empty()) corpus = load_corpus(input, format);
    auto preds = predict_corpus(model, corpus, threads);
    write_file(pred_path.string(), predictions_to_trmor(model, corpus, preds));
    man.outputs = {pred_path.string()};
    man.seed = 0;
    write_manifest(dir, man, force);
    std::printf("tokens\t%zu\npredictions\t%s\n", count_tokens(corpus), pred_path.string().c_str());
    return 0;
}

int cmd_eval(const std::string& pred_file, const std::string& gold_file, const std::string& format,
             const std::string& train_file, const std::string& cand_file, bool no_mask,
             bool macro_f1, const std::string& tag_thresholds, const std::string& lemma_thresholds,
             const std::string& out, bool force) {
    Manifest man;
    man.command = "eval";
    man.inputs = {pred_file, gold_file};
    fs::path dir = prepare_out_dir(out);
    fs::path txt = dir / "report.txt", js = dir / "report.json";
    ensure_fresh(txt, force);
    ensure_fresh(js, force);

    Corpus gold = load_corpus(gold_file, format);
    Corpus pred = parse_trmor(read_file(pred_file));
    check_alignment(gold, pred);

    std::vector<std::string> forms;
    std::vector<Analysis> golds, preds;
    for (const Sentence& s : gold)
        for (const Token& t : s.tokens) {
            forms.push_back(t.form);
            golds.push_back(analysis_of(t));
        }
    for (const Sentence& s : pred)
        for (const Token& t : s.tokens) preds.push_back(analysis_of(t));

    Corpus train;
    CandidateSet cands;
    EvalOptions opt;
    opt.mask = !no_mask;
    opt.macro_f1 = macro_f1;
    opt.tag_thresholds = parse_thresholds(tag_thresholds);
    opt.lemma_thresholds = parse_thresholds(lemma_thresholds);
    const Corpus* train_ptr = nullptr;
    const CandidateSet* cand_ptr = nullptr;
    if (!train_file.empty()) {
        train = load_corpus(train_file, format);
        train_ptr = &train;
        man.inputs.push_back(train_file);
    }
    if (!cand_file.empty()) {
        cands = parse_candidates(read_file(cand_file));
        cand_ptr = &cands;
        man.inputs.push_back(cand_file);
    }

    EvalReport report = evaluate(forms, preds, golds, train_ptr, cand_ptr, &gold, opt);
    std::string kv = report_to_kv(report);
    write_file(txt.string(), kv);
    write_file(js.string(), report_to_json(report));
    man.outputs = {txt.string(), js.string()};
    write_manifest(dir, man, force);
    std::fputs(kv.c_str(), stdout);
    return 0;
}

int cmd_disamb(const std::string& ckpt, const std::string& cand_file, const std::string& out,
               bool no_mask, bool force) {
    Manifest man;
    man.command = "disamb";
    man.inputs = {ckpt, cand_file};
    fs::path dir = prepare_out_dir(out);
    fs::path choice_path = dir / "choices.txt", txt = dir / "report.txt", js = dir / "report.json";
    ensure_fresh(choice_path, force);
    ensure_fresh(txt, force);
    ensure_fresh(js, force);

    MorseModel model = load_checkpoint(ckpt);
    CandidateSet cands = parse_candidates(read_file(cand_file));
    auto choices = disambiguate(model, cands);

    std::string choices_text;
    std::vector<std::string> forms;
    std::vector<Analysis> golds, preds;
    for (size_t si = 0; si < cands.size(); ++si) {
        if (si) choices_text += '\n';
        for (size_t ti = 0; ti < cands[si].size(); ++ti) {
            const Analysis& chosen = cands[si][ti].candidates[choices[si][ti]];
            choices_text += cands[si][ti].form;
            choices_text += '\t';
            choices_text += serialize_analysis(chosen.lemma, chosen.features);
            choices_text += '\n';
            forms.push_back(cands[si][ti].form);
            golds.push_back(cands[si][ti].gold);
            preds.push_back(chosen);
        }
    }
    write_file(choice_path.string(), choices_text);

    EvalOptions opt;
    opt.mask = !no_mask;
    EvalReport report = evaluate(forms, preds, golds, nullptr, &cands, nullptr, opt);
    std::string kv = report_to_kv(report);
    write_file(txt.string(), kv);
    write_file(js.string(), report_to_json(report));
    man.outputs = {choice_path.string(), txt.string(), js.string()};
    write_manifest(dir, man, force);
    std::fputs(kv.c_str(), stdout);
    return 0;
}

int cmd_transfer(const std::string& hr_config_path, const std::string& lr_config_path,
                 const std::string& out, bool force) {
    Manifest man;
    man.command = "transfer";
    man.config_path = hr_config_path + "," + lr_config_path;

    FlatConfig hr_cfg = FlatConfig::parse_file(hr_config_path);
    TrainSetup hr = parse_train_config(hr_cfg);
    hr_cfg.reject_unknown();
    FlatConfig lr_cfg = FlatConfig::parse_file(lr_config_path);
    TrainSetup lr = parse_train_config(lr_cfg);
    lr_cfg.reject_unknown();

    const MorseConfig &a = hr.mcfg, &b = lr.mcfg;
    if (a.hidden != b.hidden || a.char_emb_size != b.char_emb_size ||
        a.out_emb_size != b.out_emb_size || a.mode != b.mode || a.use_context != b.use_context ||
        a.use_output_encoder != b.use_output_encoder ||
        a.carry_output_state != b.carry_output_state)
        throw DataError("transfer: high/low-resource model configurations are incompatible");

    // the transfer scheme pretrains the donor for exactly 10 epochs
    hr.tcfg.max_epochs = 10;
    hr.tcfg.stop_patience = 1000;
    hr.tcfg.validate();

    man.seed = lr.tcfg.seed;
    man.inputs = {hr.train_file, hr.dev_file, lr.train_file, lr.dev_file};
    for (const auto& [k, v] : hr.resolved) man.resolved.emplace_back("hr." + k, v);
    for (const auto& [k, v] : lr.resolved) man.resolved.emplace_back("lr." + k, v);

    fs::path dir = prepare_out_dir(out);
    fs::path hr_ckpt = dir / "hr_model.ckpt", hr_hist = dir / "hr_history.log";
    fs::path ckpt = dir / "model.ckpt", hist = dir / "history.log";
    for (const auto& p : {hr_ckpt, hr_hist, ckpt, hist}) ensure_fresh(p, force);

    Corpus hr_train = load_corpus(hr.train_file, hr.format);
    Corpus hr_dev = load_corpus(hr.dev_file, hr.format);
    MorseModel hr_model = build_model(hr, hr_train);
    HistoryLog hr_log(hr_hist.string());
    TrainResult hr_result =
        train(std::move(hr_model), hr_train, hr_dev, hr.tcfg, {}, hr_log.callback());
    save_checkpoint(hr_ckpt.string(), hr_result.best_model);

    Corpus lr_train = load_corpus(lr.train_file, lr.format);
    Corpus lr_dev = load_corpus(lr.dev_file, lr.format);
    Vocabulary lr_vocab = Vocabulary::build(lr_train);
    TagInventory lr_tags;
    if (lr.mcfg.mode == Mode::whole_tag) lr_tags = TagInventory::build(lr_train);
    Rng rng(lr.tcfg.seed ^ kInitStream);
    MorseModel lr_model = transfer_init(hr_result.best_model, lr_vocab, lr_tags, rng);
    HistoryLog lr_log(hist.string());
    TrainResult lr_result =
        train(std::move(lr_model), lr_train, lr_dev, lr.tcfg, {}, lr_log.callback());
    save_checkpoint(ckpt.string(), lr_result.best_model);

    man.outputs = {hr_ckpt.string(), hr_hist.string(), ckpt.string(), hist.string()};
    write_manifest(dir, man, force);
    std::printf("hr_epochs\t%zu\nhr_best_dev_acc\t%.4f\nlr_epochs\t%zu\nlr_best_dev_acc\t%.4f\n",
                hr_result.history.size(), hr_result.best_dev_acc, lr_result.history.size(),
                lr_result.best_dev_acc);
    return 0;
}

int cmd_stats(const std::string& train_file, const std::string& test_file,
              const std::string& format, size_t threshold, const std::string& out, bool force) {
    Manifest man;
    man.command = "stats";
    man.inputs = {train_file, test_file};
    fs::path dir = prepare_out_dir(out);
    fs::path txt = dir / "stats.txt";
    ensure_fresh(txt, force);

    Corpus train = load_corpus(train_file, format);
    Corpus test = load_corpus(test_file, format);
    CorpusStats stats = corpus_stats(train, test, threshold);

    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "train_sentences\t%zu\ntrain_tokens\t%zu\ntest_sentences\t%zu\n"
                  "test_tokens\t%zu\ndistinct_tags\t%zu\ndistinct_features\t%zu\n"
                  "unseen_tag_pct\t%.4f\nrare_threshold\t%zu\nrare_tag_pct\t%.4f\n",
                  stats.train_sentences, stats.train_tokens, stats.test_sentences,
                  stats.test_tokens, stats.distinct_tags, stats.distinct_features,
                  stats.unseen_tag_pct, stats.rare_threshold, stats.rare_tag_pct);
    write_file(txt.string(), buf);

    fs::path js = dir / "stats.json";
    ensure_fresh(js, force);
    ordered_json j;
    j["train"] = {{"sentences", stats.train_sentences}, {"tokens", stats.train_tokens}};
    j["test"] = {{"sentences", stats.test_sentences}, {"tokens", stats.test_tokens}};
    j["distinct_tags"] = stats.distinct_tags;
    j["distinct_features"] = stats.distinct_features;
    j["unseen_tag_pct"] = stats.unseen_tag_pct;
    j["rare_threshold"] = stats.rare_threshold;
    j["rare_tag_pct"] = stats.rare_tag_pct;
    write_file(js.string(), j.dump(2) + "\n");
    man.outputs = {txt.string(), js.string()};
    write_manifest(dir, man, force);
    std::fputs(buf, stdout);
    return 0;
}

int cmd_synth(const std::string& spec_path, const std::string& out, long long n_override,
              double unseen_target, bool force) {
    Manifest man;
    man.command = "synth";
    man.config_path = spec_path;
    man.inputs = {spec_path};
    fs::path dir = prepare_out_dir(out);
    fs::path corpus_path = dir / "corpus.trmor", cand_path = dir / "candidates.tsv";
    ensure_fresh(corpus_path, force);
    ensure_fresh(cand_path, force);

    GrammarSpec spec = parse_grammar(read_file(spec_path));
    const size_t n = n_override > 0 ? static_cast<size_t>(n_override) : spec.n_sentences;
    man.seed = spec.seed;
    SynthResult result = generate(spec, n, spec.seed);
    write_file(corpus_path.string(), serialize_trmor(result.corpus));
    write_file(cand_path.string(), serialize_candidates(result.candidates));
    man.outputs = {corpus_path.string(), cand_path.string()};

    if (unseen_target >= 0) {
        fs::path train_path = dir / "train.trmor", test_path = dir / "test.trmor";
        ensure_fresh(train_path, force);
        ensure_fresh(test_path, force);
        auto [train, test] = split_with_unseen_tags(result.corpus, unseen_target, spec.seed + 1);
        write_file(train_path.string(), serialize_trmor(train));
        write_file(test_path.string(), serialize_trmor(test));
        CorpusStats stats = corpus_stats(train, test, 5);
        std::printf("achieved_unseen_tag_pct\t%.4f\n", stats.unseen_tag_pct);
        man.outputs.push_back(train_path.string());
        man.outputs.push_back(test_path.string());
    }
    write_manifest(dir, man, force);
    std::printf("sentences\t%zu\ntokens\t%zu\n", result.corpus.size(),
                count_tokens(result.corpus));
    return 0;
}

int cmd_gradcheck(const std::string& config_path, const std::string& out, size_t n_sentences,
                  double epsilon, double tolerance, bool force) {
    Manifest man;
    man.command = "gradcheck";
    man.config_path = config_path;
    FlatConfig cfg = FlatConfig::parse_file(config_path);
    TrainSetup setup = parse_train_config(cfg);
    cfg.reject_unknown();
    man.resolved = setup.resolved;
    man.seed = setup.tcfg.seed;
    man.inputs = {setup.train_file};
    fs::path dir = prepare_out_dir(out);
    fs::path txt = dir / "gradcheck.txt";
    ensure_fresh(txt, force);

    Corpus corpus = load_corpus(setup.train_file, setup.format);
    if (corpus.size() > n_sentences) corpus.resize(n_sentences);
    MorseModel model = build_model(setup, corpus);

    // evaluate at a generic point: fresh init leaves biases exactly zero,
    // where relu kinks sit inside the finite-difference step
    Rng jitter(setup.tcfg.seed ^ kJitterStream);
    for (auto& [name, t] : model.params().named_tensors()) {
        (void)name;
        for (size_t i = 0; i < t->size(); ++i) (*t)[i] += jitter.uniform(-0.02, 0.02);
    }

    MorseParams grads = model.zero_grads();
    for (const Sentence& s : corpus) model.sentence_loss_and_grads(s, grads);
    const double scale = 1.0 / static_cast<double>(corpus.size());
    for (auto& [name, g] : grads.named_tensors()) {
        (void)name;
        for (size_t i = 0; i < g->size(); ++i) (*g)[i] *= scale;
    }

    auto loss_fn = [&model, &corpus]() {
        double total = 0;
        for (const Sentence& s : corpus) total += model.sentence_loss(s);
        return total / static_cast<double>(corpus.size());
    };
    GradCheckReport report = grad_check(loss_fn, model.params().named_tensors(),
                                        std::as_const(grads).named_tensors(), epsilon, tolerance);
    write_file(txt.string(), report.to_string());
    man.outputs = {txt.string()};
    write_manifest(dir, man, force);
    std::printf("max_rel_err\t%.3e\ntolerance\t%.3e\n%s\n", report.max_rel_err, tolerance,
                report.passed() ? "PASS" : "FAIL");
    if (!report.passed()) throw NumericError("gradient check failed");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"morse: joint morphological analysis toolkit"};
    app.require_subcommand(1);

    std::string config, out, ckpt, input, format = "trmor";
    std::string pred_file, gold_file, train_file, cand_file;
    std::string hr_config, lr_config, spec_path;
    std::string tag_thresholds = "100", lemma_thresholds = "5";
    long long seed_override = -1, n_override = -1;
    size_t threads = 1, threshold = 5, gc_sentences = 2;
    double unseen_target = -1, epsilon = 1e-5, tolerance = 1e-4;
    bool force = false, no_mask = false, macro_f1 = false;

    auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
    train_cmd->add_option("--config", config, "train config file")->required();
    train_cmd->add_option("--out", out, "output directory")->required();
    train_cmd->add_option("--seed", seed_override, "override the config seed");
    train_cmd->add_flag("--force", force, "overwrite existing outputs");

    auto* predict_cmd = app.add_subcommand("predict", "analyze a corpus with a trained model");
    predict_cmd->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    predict_cmd->add_option("--input", input, "input corpus")->required();
    predict_cmd->add_option("--format", format, "corpus format (trmor|conllu)");
    predict_cmd->add_option("--out", out, "output directory")->required();
    predict_cmd->add_option("--threads", threads, "prediction worker threads");
    predict_cmd->add_flag("--force", force, "overwrite existing outputs");

    auto* eval_cmd = app.add_subcommand("eval", "score predictions against gold analyses");
    eval_cmd->add_option("--pred", pred_file, "predictions file")->required();
    eval_cmd->add_option("--gold", gold_file, "gold corpus")->required();
    eval_cmd->add_option("--format", format, "gold corpus format (trmor|conllu)");
    eval_cmd->add_option("--train", train_file, "training corpus for frequency buckets");
    eval_cmd->add_option("--candidates", cand_file, "candidate file for the ambiguity split");
    eval_cmd->add_option("--tag-thresholds", tag_thresholds, "tag bucket thresholds");
    eval_cmd->add_option("--lemma-thresholds", lemma_thresholds, "lemma bucket thresholds");
    eval_cmd->add_flag("--no-mask", no_mask, "skip digit and Prop masking");
    eval_cmd->add_flag("--macro-f1", macro_f1, "also report macro-averaged feature F1");
    eval_cmd->add_option("--out", out, "output directory")->required();
    eval_cmd->add_flag("--force", force, "overwrite existing outputs");

    auto* disamb_cmd = app.add_subcommand("disamb", "pick analyses from candidate lists");
    disamb_cmd->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    disamb_cmd->add_option("--candidates", cand_file, "candidate file")->required();
    disamb_cmd->add_flag("--no-mask", no_mask, "skip digit and Prop masking");
    disamb_cmd->add_option("--out", out, "output directory")->required();
    disamb_cmd->add_flag("--force", force, "overwrite existing outputs");

    auto* transfer_cmd =
        app.add_subcommand("transfer", "pretrain on a high-resource corpus, then fine-tune");
    transfer_cmd->add_option("--hr-config", hr_config, "high-resource train config")->required();
    transfer_cmd->add_option("--lr-config", lr_config, "low-resource train config")->required();
    transfer_cmd->add_option("--out", out, "output directory")->required();
    transfer_cmd->add_flag("--force", force, "overwrite existing outputs");

    auto* stats_cmd = app.add_subcommand("stats", "corpus statistics (|T|, |F|, |R|)");
    stats_cmd->add_option("--train", train_file, "training corpus")->required();
    stats_cmd->add_option("--test", gold_file, "test corpus")->required();
    stats_cmd->add_option("--format", format, "corpus format (trmor|conllu)");
    stats_cmd->add_option("--threshold", threshold, "rare-tag threshold");
    stats_cmd->add_option("--out", out, "output directory")->required();
    stats_cmd->add_flag("--force", force, "overwrite existing outputs");

    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus from a grammar");
    synth_cmd->add_option("--spec", spec_path, "grammar spec file")->required();
    synth_cmd->add_option("--sentences", n_override, "override sentence count");
    synth_cmd->add_option("--unseen-target", unseen_target,
                          "also emit a train/test split with this unseen-tag percentage");
    synth_cmd->add_option("--out", out, "output directory")->required();
    synth_cmd->add_flag("--force", force, "overwrite existing outputs");

    auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of the full model");
    gc_cmd->add_option("--config", config, "train config file")->required();
    gc_cmd->add_option("--sentences", gc_sentences, "number of sentences to check");
    gc_cmd->add_option("--epsilon", epsilon, "finite-difference step");
    gc_cmd->add_option("--tolerance", tolerance, "max relative error");
    gc_cmd->add_option("--out", out, "output directory")->required();
    gc_cmd->add_flag("--force", force, "overwrite existing outputs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;  // usage errors exit 1
    }

    try {
        if (train_cmd->parsed()) return cmd_train(config, out, seed_override, force);
        if (predict_cmd->parsed()) return cmd_predict(ckpt, input, format, out, threads, force);
        if (eval_cmd->parsed())
            return cmd_eval(pred_file, gold_file, format, train_file, cand_file, no_mask, macro_f1,
                            tag_thresholds, lemma_thresholds, out, force);
        if (disamb_cmd->parsed()) return cmd_disamb(ckpt, cand_file, out, no_mask, force);
        if (transfer_cmd->parsed()) return cmd_transfer(hr_config, lr_config, out, force);
        if (stats_cmd->parsed())
            return cmd_stats(train_file, gold_file, format, threshold, out, force);
        if (synth_cmd->parsed()) return cmd_synth(spec_path, out, n_override, unseen_target, force);
        if (gc_cmd->parsed()) return cmd_gradcheck(config, out, gc_sentences, epsilon, tolerance, force);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
