#pragma once

// Canonical JSONL word-problem datasets, notation-specific training pairs,
// reproducible train/test splits and the plain-text pre-training corpus.
//
// Dataset line format:
//   {"id": "...", "question": "...", "equation": "(13 - 4) * 9", "answer": 81}

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "mwp/expression.hpp"
#include "mwp/random.hpp"
#include "mwp/tagging.hpp"

namespace mwp {

class CorpusError : public std::runtime_error {
public:
    enum class Kind { MalformedLine, AnswerMismatch, UnparseableEquation, EmptyCorpus, Io };
    CorpusError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

struct MwpRecord {
    std::string id;
    std::string question;
    std::string equation;  // infix
    double answer = 0.0;
};

/// Parses JSONL text; blank lines are skipped, line numbers are 1-based.
inline std::vector<MwpRecord> parse_dataset(std::string_view text) {
    std::vector<MwpRecord> out;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        MwpRecord r;
        try {
            const auto j = nlohmann::json::parse(line);
            r.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
            r.question = j.at("question").get<std::string>();
            r.equation = j.at("equation").get<std::string>();
            r.answer = j.at("answer").get<double>();
        } catch (const nlohmann::json::exception& e) {
            throw CorpusError(CorpusError::Kind::MalformedLine, "MalformedLine(" + std::to_string(n) + "): " + e.what());
        }
        double value = 0.0;
        try {
            value = evaluate(parse_infix(r.equation));
        } catch (const ExpressionError& e) {
            throw CorpusError(CorpusError::Kind::UnparseableEquation, "UnparseableEquation(" + r.id + "): " + e.what());
        }
        if (!values_match(value, r.answer))
            throw CorpusError(CorpusError::Kind::AnswerMismatch, "AnswerMismatch(" + r.id + "): equation gives " +
                                                                     format_number(value) + ", answer is " +
                                                                     format_number(r.answer));
        out.push_back(std::move(r));
    }
    return out;
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CorpusError(CorpusError::Kind::Io, "cannot read " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline std::vector<MwpRecord> load_dataset(const std::string& path) { return parse_dataset(read_file(path)); }

/// A record ready for the network: tagged question and tagged target in
/// one notation, plus what is needed to score a prediction.
struct PreparedExample {
    std::string id;
    std::string source;  // tagged question
    std::string target;  // tagged expression in the chosen notation
    TagMap tag_map;
    double answer = 0.0;
    std::vector<double> unmatched_values;
};

inline PreparedExample prepare_one(const MwpRecord& r, Notation notation, const TaggingOptions& options = {}) {
    const TaggedProblem tp = tag(r.question, r.equation, options);
    PreparedExample p;
    p.id = r.id;
    p.source = tp.tagged_question;
    p.target = render(parse_infix(tp.tagged_equation), notation);
    p.tag_map = tp.tag_map;
    p.answer = r.answer;
    p.unmatched_values = tp.unmatched_values;
    return p;
}

inline std::vector<PreparedExample> prepare(const std::vector<MwpRecord>& records, Notation notation,
                                            const TaggingOptions& options = {}) {
    std::vector<PreparedExample> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(prepare_one(r, notation, options));
    return out;
}

inline nlohmann::json to_json(const PreparedExample& p) {
    nlohmann::json tags = nlohmann::json::object();
    for (const auto& [k, v] : p.tag_map) tags[std::to_string(k)] = v;
    return {{"id", p.id}, {"source", p.source}, {"target", p.target}, {"tags", tags},
            {"answer", p.answer}, {"unmatched", p.unmatched_values}};
}

inline PreparedExample prepared_from_json(const nlohmann::json& j) {
    PreparedExample p;
    p.id = j.at("id").get<std::string>();
    p.source = j.at("source").get<std::string>();
    p.target = j.at("target").get<std::string>();
    for (const auto& [k, v] : j.at("tags").items()) p.tag_map[std::stoi(k)] = v.get<double>();
    p.answer = j.at("answer").get<double>();
    p.unmatched_values = j.at("unmatched").get<std::vector<double>>();
    return p;
}

struct SplitPlan {
    std::uint64_t seed = 1;
    double train_fraction = 0.95;
    int repetition = 1;
};

struct Split {
    std::vector<std::size_t> train;  // indices into the input, ascending
    std::vector<std::size_t> test;
};

/// Shuffles indices with a stream derived from (seed, repetition) and
/// takes the first floor(fraction * P) for training.
inline Split split(std::size_t count, const SplitPlan& plan) {
    if (!(plan.train_fraction > 0.0 && plan.train_fraction <= 1.0))
        throw std::invalid_argument("train_fraction must be in (0, 1]");
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i) order[i] = i;
    Rng rng(mix_seed(plan.seed, 0x5117 + static_cast<std::uint64_t>(plan.repetition)));
    fisher_yates(std::span<std::size_t>(order), rng);
    const auto n_train =
        static_cast<std::size_t>(std::floor(plan.train_fraction * static_cast<double>(count) + 1e-9));
    Split s;
    s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

/// One sentence per line; blank lines dropped, later duplicates dropped.
inline std::vector<std::string> parse_pretraining_text(std::string_view text) {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        if (seen.insert(line).second) out.push_back(line);
    }
    if (out.empty()) throw CorpusError(CorpusError::Kind::EmptyCorpus, "EmptyCorpus");
    return out;
}

inline std::vector<std::string> load_pretraining_text(const std::string& path) {
    return parse_pretraining_text(read_file(path));
}

}  // namespace mwp
