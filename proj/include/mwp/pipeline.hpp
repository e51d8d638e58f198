#pragma once

// End-to-end experiment driver behind the `mwp` command line tool:
// prepare -> pretrain -> train -> eval, plus single-question solving.
//
// Output directory layout:
//   manifest.txt                       resolved run manifest + hash
//   vocab.swv                          subword vocabulary
//   prepared/rep<R>/<DATASET>.{train,test}.jsonl
//   pretrain/model.ckpt, pretrain/loss.csv
//   rep<R>/model.ckpt, rep<R>/loss.csv, rep<R>/model.e<EPOCH>.ckpt
//   report.json, examples.jsonl

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mwp/checkpoint.hpp"
#include "mwp/corpus.hpp"
#include "mwp/expression.hpp"
#include "mwp/metrics.hpp"
#include "mwp/model.hpp"
#include "mwp/tagging.hpp"
#include "mwp/tokenizer.hpp"
#include "mwp/trainer.hpp"

namespace mwp {

namespace fs = std::filesystem;

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitRuntime = 3 };

class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Parsed run configuration. Relative paths are resolved against the
/// manifest file's directory.
struct RunManifest {
    int type = 2;
    Notation notation = Notation::Postfix;
    bool pretrain = false;
    std::uint64_t seed = 1;
    std::map<std::string, std::string> datasets;  // name -> path
    std::string pretrain_corpus;
    std::string out;
    std::size_t iterations = 300;
    std::size_t pretrain_iterations = 30;
    std::size_t batch_size = 128;
    int repetitions = 3;
    double train_fraction = 0.95;
    std::size_t vocab_size = SubwordVocabulary::kDefaultSize;
    double learning_rate = 1e-3;
    double dropout = 0.10;
    double clip_norm = 5.0;
    std::size_t patience = 10;
    double decay = 0.5;
    std::size_t checkpoint_every = 0;
    std::size_t max_decode_len = 64;
    bool number_words = false;
    // Architecture overrides on top of the Type preset (0 = preset value).
    std::size_t num_layers = 0;
    std::size_t num_heads = 0;
    std::size_t model_depth = 0;
    std::size_t ff_depth = 0;

    TransformerConfig model_config(std::size_t vocab) const {
        TransformerConfig c = TransformerConfig::preset(type, vocab);
        if (num_layers) c.num_layers = num_layers;
        if (num_heads) c.num_heads = num_heads;
        if (model_depth) c.model_depth = model_depth;
        if (ff_depth) c.ff_depth = ff_depth;
        c.dropout = dropout;
        c.validate();
        return c;
    }

    TrainPlan plan_for(int repetition) const {
        TrainPlan p;
        p.batch_size = batch_size;
        p.iterations = iterations;
        p.pretrain_iterations = pretrain_iterations;
        p.initial_lr = learning_rate;
        p.plateau.patience = patience;
        p.plateau.factor = decay;
        p.clip_norm = clip_norm;
        p.seed = mix_seed(seed, static_cast<std::uint64_t>(repetition));
        p.checkpoint_every = checkpoint_every;
        return p;
    }

    /// Canonical key=value rendering of every setting except `out`;
    /// dataset and corpus files contribute their content hash, not path.
    std::string canonical() const {
        std::map<std::string, std::string> kv;
        auto num = [](double v) {
            char buf[40];
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            return std::string(buf);
        };
        kv["type"] = std::to_string(type);
        kv["notation"] = std::string(to_string(notation));
        kv["pretrain"] = pretrain ? "true" : "false";
        kv["seed"] = std::to_string(seed);
        for (const auto& [name, path] : datasets)
            kv["dataset." + name] = fs::exists(path) ? hex64(fnv1a(read_file(path))) : "missing";
        if (!pretrain_corpus.empty())
            kv["pretrain_corpus"] = fs::exists(pretrain_corpus) ? hex64(fnv1a(read_file(pretrain_corpus))) : "missing";
        kv["iterations"] = std::to_string(iterations);
        kv["pretrain_iterations"] = std::to_string(pretrain_iterations);
        kv["batch_size"] = std::to_string(batch_size);
        kv["repetitions"] = std::to_string(repetitions);
        kv["train_fraction"] = num(train_fraction);
        kv["vocab_size"] = std::to_string(vocab_size);
        kv["learning_rate"] = num(learning_rate);
        kv["dropout"] = num(dropout);
        kv["clip_norm"] = num(clip_norm);
        kv["patience"] = std::to_string(patience);
        kv["decay"] = num(decay);
        kv["checkpoint_every"] = std::to_string(checkpoint_every);
        kv["max_decode_len"] = std::to_string(max_decode_len);
        kv["number_words"] = number_words ? "true" : "false";
        kv["num_layers"] = std::to_string(num_layers);
        kv["num_heads"] = std::to_string(num_heads);
        kv["model_depth"] = std::to_string(model_depth);
        kv["ff_depth"] = std::to_string(ff_depth);
        std::string out;
        for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
        return out;
    }

    std::string hash() const { return hex64(fnv1a(canonical())); }

    /// Applies one `key = value` setting.
    void set(const std::string& key, const std::string& value, const fs::path& base = {}) {
        auto path = [&](const std::string& p) { return (fs::path(p).is_absolute() || base.empty()) ? p : (base / p).string(); };
        auto to_bool = [&](const std::string& v) {
            if (v == "true" || v == "1" || v == "yes") return true;
            if (v == "false" || v == "0" || v == "no") return false;
            throw UsageError("expected a boolean for " + key + ", got '" + v + "'");
        };
        try {
            if (key == "type") {
                type = std::stoi(value);
                if (type < 1 || type > 3) throw UsageError("type must be 1, 2 or 3");
            } else if (key == "notation") {
                auto n = notation_from_string(value);
                if (!n) throw UsageError("notation must be infix, prefix or postfix");
                notation = *n;
            } else if (key == "pretrain") pretrain = to_bool(value);
            else if (key == "seed") seed = std::stoull(value);
            else if (key.rfind("dataset.", 0) == 0 && key.size() > 8) datasets[key.substr(8)] = path(value);
            else if (key == "pretrain_corpus") pretrain_corpus = path(value);
            else if (key == "out") out = path(value);
            else if (key == "iterations") iterations = std::stoul(value);
            else if (key == "pretrain_iterations") pretrain_iterations = std::stoul(value);
            else if (key == "batch_size") batch_size = std::stoul(value);
            else if (key == "repetitions") repetitions = std::stoi(value);
            else if (key == "train_fraction") train_fraction = std::stod(value);
            else if (key == "vocab_size") vocab_size = std::stoul(value);
            else if (key == "learning_rate") learning_rate = std::stod(value);
            else if (key == "dropout") dropout = std::stod(value);
            else if (key == "clip_norm") clip_norm = std::stod(value);
            else if (key == "patience") patience = std::stoul(value);
            else if (key == "decay") decay = std::stod(value);
            else if (key == "checkpoint_every") checkpoint_every = std::stoul(value);
            else if (key == "max_decode_len") max_decode_len = std::stoul(value);
            else if (key == "number_words") number_words = to_bool(value);
            else if (key == "num_layers") num_layers = std::stoul(value);
            else if (key == "num_heads") num_heads = std::stoul(value);
            else if (key == "model_depth") model_depth = std::stoul(value);
            else if (key == "ff_depth") ff_depth = std::stoul(value);
            else throw UsageError("unknown manifest key '" + key + "'");
        } catch (const std::logic_error& e) {
            if (dynamic_cast<const UsageError*>(&e)) throw;
            throw UsageError("bad value for " + key + ": '" + value + "'");
        }
    }

    void validate() const {
        if (datasets.empty()) throw UsageError("manifest names no dataset (dataset.<NAME> = path)");
        if (out.empty()) throw UsageError("manifest has no output directory (out = DIR or --out)");
        if (repetitions < 1) throw UsageError("repetitions must be >= 1");
        if (batch_size < 1) throw UsageError("batch_size must be >= 1");
        if (!(decay > 0.0 && decay < 1.0)) throw UsageError("decay must be in (0, 1)");
        if (!(learning_rate > 0.0)) throw UsageError("learning_rate must be positive");
        if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw UsageError("train_fraction must be in (0, 1)");
    }

    static RunManifest parse(std::string_view text, const fs::path& base = {}) {
        RunManifest m;
        std::istringstream in{std::string(text)};
        std::string line;
        std::size_t n = 0;
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string{};
            return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
        };
        while (std::getline(in, line)) {
            ++n;
            line = trim(line.substr(0, line.find('#')));
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw UsageError("manifest line " + std::to_string(n) + ": expected key = value");
            m.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), base);
        }
        return m;
    }

    static RunManifest load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw UsageError("cannot read manifest " + path);
        std::ostringstream ss;
        ss << f.rdbuf();
        return parse(ss.str(), fs::path(path).parent_path());
    }
};

namespace detail {

inline void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path.string());
    f << text;
}

inline fs::path rep_dir(const RunManifest& m, int r) { return fs::path(m.out) / ("rep" + std::to_string(r)); }

inline fs::path prepared_path(const RunManifest& m, int r, const std::string& dataset, const char* part) {
    return fs::path(m.out) / "prepared" / ("rep" + std::to_string(r)) / (dataset + "." + part + ".jsonl");
}

inline std::vector<PreparedExample> read_prepared(const fs::path& path) {
    if (!fs::exists(path)) throw DataError("missing " + path.string() + " (run `mwp prepare` first)");
    std::vector<PreparedExample> out;
    std::istringstream in(read_file(path.string()));
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(prepared_from_json(nlohmann::json::parse(line)));
    return out;
}

inline SubwordVocabulary read_vocab(const RunManifest& m) {
    const fs::path p = fs::path(m.out) / "vocab.swv";
    if (!fs::exists(p)) throw DataError("missing " + p.string() + " (run `mwp prepare` first)");
    return SubwordVocabulary::load(p.string());
}

inline void stamp(Checkpoint& ck, const RunManifest& m, const std::string& stage) {
    ck.meta["run.manifest_hash"] = m.hash();
    ck.meta["run.notation"] = std::string(to_string(m.notation));
    ck.meta["run.stage"] = stage;
}

}  // namespace detail

/// Tags every dataset, renders targets in the manifest notation, writes
/// the splits for each repetition and builds the vocabulary over all
/// questions, targets and (if configured) the pre-training text.
inline void cmd_prepare(const RunManifest& m, std::ostream& log = std::cout) {
    m.validate();
    TaggingOptions topts;
    topts.number_words = m.number_words;
    std::vector<std::string> vocab_corpus;
    std::map<std::string, std::vector<PreparedExample>> prepared;
    for (const auto& [name, path] : m.datasets) {
        if (!fs::exists(path)) throw DataError("dataset " + name + ": no such file " + path);
        const auto records = load_dataset(path);
        prepared[name] = prepare(records, m.notation, topts);
        std::size_t unmatched = 0;
        for (const auto& p : prepared[name]) {
            vocab_corpus.push_back(p.source);
            vocab_corpus.push_back(p.target);
            unmatched += p.unmatched_values.empty() ? 0 : 1;
        }
        log << name << ": " << records.size() << " problems";
        if (unmatched) log << " (" << unmatched << " with equation numbers absent from the question)";
        log << "\n";
    }
    if (!m.pretrain_corpus.empty()) {
        if (!fs::exists(m.pretrain_corpus)) throw DataError("no such pre-training corpus " + m.pretrain_corpus);
        for (auto& s : load_pretraining_text(m.pretrain_corpus)) vocab_corpus.push_back(std::move(s));
    }
    const auto vocab = SubwordVocabulary::build(vocab_corpus, m.vocab_size);
    detail::write_text(fs::path(m.out) / "vocab.swv", vocab.serialize());
    log << "vocabulary: " << vocab.size() << " tokens\n";

    for (int r = 1; r <= m.repetitions; ++r) {
        for (const auto& [name, examples] : prepared) {
            const Split s = split(examples.size(), {m.seed, m.train_fraction, r});
            std::string train, test;
            for (std::size_t i : s.train) train += to_json(examples[i]).dump() + "\n";
            for (std::size_t i : s.test) test += to_json(examples[i]).dump() + "\n";
            detail::write_text(detail::prepared_path(m, r, name, "train"), train);
            detail::write_text(detail::prepared_path(m, r, name, "test"), test);
        }
    }
    detail::write_text(fs::path(m.out) / "manifest.txt", m.canonical() + "hash=" + m.hash() + "\n");
}

/// Empty-target pre-training from a seed initialisation; writes
/// pretrain/model.ckpt and pretrain/loss.csv.
inline void cmd_pretrain(const RunManifest& m, std::ostream& log = std::cout) {
    m.validate();
    if (m.pretrain_corpus.empty()) throw UsageError("pretrain needs pretrain_corpus in the manifest");
    const auto vocab = detail::read_vocab(m);
    const auto config = m.model_config(vocab.size());
    const auto sentences = load_pretraining_text(m.pretrain_corpus);
    std::vector<std::vector<TokenId>> encoded;
    for (const auto& s : sentences) encoded.push_back(vocab.encode(s));
    const TrainPlan plan = m.plan_for(0);
    auto state = start_state(init_params<float>(config, plan.seed), plan);
    const auto curve = pretrain<float>(state, config, encoded, plan, [&](const auto&, const EpochRecord& r) {
        log << "pretrain epoch " << r.epoch << " loss " << r.loss << "\n";
    });
    Checkpoint ck = to_checkpoint(state, config);
    detail::stamp(ck, m, "pretrain");
    const fs::path dir = fs::path(m.out) / "pretrain";
    fs::create_directories(dir);
    save_checkpoint((dir / "model.ckpt").string(), ck);
    detail::write_text(dir / "loss.csv", loss_curve_csv(curve));
}

/// Trains one repetition (or all when repetition == 0). With `resume`,
/// an existing rep<R>/model.ckpt is continued and epoch numbering carries on.
inline void cmd_train(const RunManifest& m, int repetition = 0, bool resume = false, std::ostream& log = std::cout) {
    m.validate();
    const auto vocab = detail::read_vocab(m);
    const auto config = m.model_config(vocab.size());
    const int first = repetition == 0 ? 1 : repetition;
    const int last = repetition == 0 ? m.repetitions : repetition;
    for (int r = first; r <= last; ++r) {
        std::vector<Example> data;
        for (const auto& [name, path] : m.datasets)
            for (const auto& p : detail::read_prepared(detail::prepared_path(m, r, name, "train")))
                data.emplace_back(vocab.encode(p.source), vocab.encode(p.target));
        const TrainPlan plan = m.plan_for(r);
        const fs::path dir = detail::rep_dir(m, r);
        const fs::path ckpt_path = dir / "model.ckpt";
        TrainState<float> state;
        std::string csv = "epoch,loss,lr\n";
        if (resume && fs::exists(ckpt_path)) {
            const Checkpoint ck = load_checkpoint(ckpt_path.string());
            if (ck.config != config) throw DataError("checkpoint " + ckpt_path.string() + " has a different config");
            state = from_checkpoint(ck, plan);
            if (fs::exists(dir / "loss.csv")) csv = read_file((dir / "loss.csv").string());
        } else if (m.pretrain) {
            const fs::path pre = fs::path(m.out) / "pretrain" / "model.ckpt";
            if (!fs::exists(pre)) throw DataError("missing " + pre.string() + " (run `mwp pretrain` first)");
            const Checkpoint ck = load_checkpoint(pre.string());
            if (ck.config != config) throw DataError("pre-trained checkpoint has a different config");
            state = start_state(ck.params(), plan);
        } else {
            state = start_state(init_params<float>(config, plan.seed), plan);
        }
        fs::create_directories(dir);
        auto save = [&](const TrainState<float>& s, const fs::path& path) {
            Checkpoint ck = to_checkpoint(s, config);
            detail::stamp(ck, m, "train");
            ck.meta["run.repetition"] = std::to_string(r);
            save_checkpoint(path.string(), ck);
        };
        const auto curve = train<float>(state, config, data, plan, [&](const TrainState<float>& s, const EpochRecord& e) {
            log << "rep " << r << " epoch " << e.epoch << " loss " << e.loss << " lr " << e.lr << "\n";
            if (plan.checkpoint_every && e.epoch % plan.checkpoint_every == 0)
                save(s, dir / ("model.e" + std::to_string(e.epoch) + ".ckpt"));
        });
        save(state, ckpt_path);
        detail::write_text(dir / "loss.csv", csv + loss_curve_csv(curve, false));
    }
}

/// Greedy-decodes a tagged question and scores it against its reference.
inline ExampleResult evaluate_example(const ParamSet<float>& params, const TransformerConfig& config,
                                      const SubwordVocabulary& vocab, const PreparedExample& ex, Notation notation,
                                      std::size_t max_len, const std::string& dataset = {}) {
    ExampleResult r;
    r.id = ex.id;
    r.dataset = dataset;
    r.prediction = vocab.decode(greedy_decode(params, config, vocab.encode(ex.source), max_len));
    r.reference = ex.target;
    r.bleu2 = bleu2(r.prediction, r.reference);
    r.token_exact = whitespace_tokens(r.prediction) == whitespace_tokens(r.reference);
    r.correct = answer_correct(r.prediction, notation, ex.tag_map, ex.answer);
    if (r.correct) r.answer_expression = detag(r.prediction, ex.tag_map);
    return r;
}

/// Scores every repetition's checkpoint on its test splits; writes
/// report.json and examples.jsonl and returns the report.
inline EvalReport cmd_eval(const RunManifest& m, std::ostream& log = std::cout) {
    m.validate();
    const auto vocab = detail::read_vocab(m);
    const auto config = m.model_config(vocab.size());
    EvalReport report;
    report.provenance["manifest_hash"] = m.hash();
    report.provenance["notation"] = std::string(to_string(m.notation));
    report.provenance["type"] = std::to_string(m.type);
    report.provenance["pretrain"] = m.pretrain ? "true" : "false";
    std::string lines;
    for (int r = 1; r <= m.repetitions; ++r) {
        const fs::path ckpt = detail::rep_dir(m, r) / "model.ckpt";
        if (!fs::exists(ckpt)) throw DataError("missing " + ckpt.string() + " (run `mwp train` first)");
        const Checkpoint ck = load_checkpoint(ckpt.string());
        if (ck.config != config) throw DataError("checkpoint " + ckpt.string() + " has a different config");
        const auto params = ck.params();
        RunReport run;
        run.repetition = r;
        for (const auto& [name, path] : m.datasets) {
            std::vector<ExampleResult> results;
            for (const auto& ex : detail::read_prepared(detail::prepared_path(m, r, name, "test"))) {
                results.push_back(evaluate_example(params, config, vocab, ex, m.notation, m.max_decode_len, name));
                lines += to_json(results.back(), r).dump() + "\n";
            }
            run.datasets.push_back(score_dataset(name, results));
            const auto& d = run.datasets.back();
            log << "rep " << r << " " << name << ": bleu2 " << d.bleu_avg << " accuracy " << d.correct << "/" << d.total
                << "\n";
        }
        report.runs.push_back(std::move(run));
    }
    finalize(report);
    detail::write_text(fs::path(m.out) / "report.json", to_json(report).dump(2) + "\n");
    detail::write_text(fs::path(m.out) / "examples.jsonl", lines);
    log << "final accuracy " << report.final_accuracy << " bleu2 " << report.final_bleu << "\n";
    return report;
}

struct Solution {
    std::string tagged_question;
    std::string tagged_expression;
    std::string expression;  // detagged
    std::optional<double> answer;
    std::string failure;
};

/// Tags the question, decodes, restores numbers and evaluates. Failures
/// (unknown tags, unparseable output, division by zero) are reported in
/// `failure` rather than thrown.
inline Solution solve(const Checkpoint& ck, const SubwordVocabulary& vocab, const std::string& question,
                      std::size_t max_len = 64, const TaggingOptions& topts = {}) {
    Solution s;
    auto it = ck.meta.find("run.notation");
    const Notation notation =
        it != ck.meta.end() ? notation_from_string(it->second).value_or(Notation::Postfix) : Notation::Postfix;
    const TaggedText tagged = tag_question_only(question, topts);
    s.tagged_question = tagged.text;
    s.tagged_expression = vocab.decode(greedy_decode(ck.params(), ck.config, vocab.encode(tagged.text), max_len));
    try {
        s.expression = detag(s.tagged_expression, tagged.tag_map);
        s.answer = evaluate(parse_notation(s.expression, notation));
    } catch (const std::exception& e) {
        s.failure = e.what();
    }
    return s;
}

}  // namespace mwp
