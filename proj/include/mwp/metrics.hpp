#pragma once

// BLEU-2 and answer-level accuracy, with the per-dataset / per-model /
// per-repetition averaging used in reports.

#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mwp/expression.hpp"
#include "mwp/tagging.hpp"

namespace mwp {

class MetricsError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline std::vector<std::string> whitespace_tokens(std::string_view s) {
    std::vector<std::string> out;
    std::istringstream in{std::string(s)};
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

/// Sentence BLEU with uniform unigram/bigram weights and brevity penalty
/// exp(min(0, 1 - r/c)). Unsmoothed: no bigram match gives 0. Candidates
/// shorter than two tokens are scored on unigrams alone.
inline double bleu2(const std::vector<std::string>& candidate, const std::vector<std::string>& reference) {
    if (reference.empty()) throw MetricsError("EmptyReference");
    if (candidate.empty()) return 0.0;

    auto clipped = [&](std::size_t n) {
        std::map<std::vector<std::string>, int> ref_counts, cand_counts;
        for (std::size_t i = 0; i + n <= reference.size(); ++i)
            ++ref_counts[{reference.begin() + static_cast<std::ptrdiff_t>(i),
                          reference.begin() + static_cast<std::ptrdiff_t>(i + n)}];
        for (std::size_t i = 0; i + n <= candidate.size(); ++i)
            ++cand_counts[{candidate.begin() + static_cast<std::ptrdiff_t>(i),
                           candidate.begin() + static_cast<std::ptrdiff_t>(i + n)}];
        int matched = 0;
        for (const auto& [gram, count] : cand_counts) {
            auto it = ref_counts.find(gram);
            if (it != ref_counts.end()) matched += std::min(count, it->second);
        }
        return static_cast<double>(matched) / static_cast<double>(candidate.size() + 1 - n);
    };

    const double c = static_cast<double>(candidate.size());
    const double r = static_cast<double>(reference.size());
    const double bp = std::exp(std::min(0.0, 1.0 - r / c));
    const double p1 = clipped(1);
    if (candidate.size() < 2) return bp * p1;
    const double p2 = clipped(2);
    if (p1 == 0.0 || p2 == 0.0) return 0.0;
    return bp * std::exp(0.5 * std::log(p1) + 0.5 * std::log(p2));
}

inline double bleu2(std::string_view candidate, std::string_view reference) {
    return bleu2(whitespace_tokens(candidate), whitespace_tokens(reference));
}

/// True iff the detagged prediction parses in `notation` and evaluates to
/// `answer` within a relative tolerance. Never throws.
inline bool answer_correct(std::string_view prediction, Notation notation, const TagMap& tags, double answer,
                           double rel_tol = 1e-6) {
    try {
        const Expression e = parse_notation(detag(prediction, tags), notation);
        return values_match(evaluate(e), answer, rel_tol);
    } catch (const std::exception&) {
        return false;
    }
}

struct ExampleResult {
    std::string id;
    std::string dataset;
    std::string prediction;  // tagged, as generated
    std::string reference;   // tagged target
    std::string answer_expression;  // detagged prediction, empty if it failed
    double bleu2 = 0.0;
    bool correct = false;
    bool token_exact = false;
};

struct DatasetScore {
    std::string name;
    double bleu_avg = 0.0;
    std::size_t correct = 0;
    std::size_t total = 0;
    std::size_t token_exact = 0;

    double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

/// Mean of per-example BLEU-2 plus correct/total counts.
inline DatasetScore score_dataset(const std::string& name, const std::vector<ExampleResult>& results) {
    DatasetScore s;
    s.name = name;
    s.total = results.size();
    for (const auto& r : results) {
        s.bleu_avg += r.bleu2;
        s.correct += r.correct ? 1 : 0;
        s.token_exact += r.token_exact ? 1 : 0;
    }
    if (!results.empty()) s.bleu_avg /= static_cast<double>(results.size());
    return s;
}

/// Model average over N datasets: (1/N) sum of per-dataset BLEU averages.
inline double model_bleu_average(const std::vector<DatasetScore>& datasets) {
    if (datasets.empty()) throw MetricsError("no datasets");
    double sum = 0.0;
    for (const auto& d : datasets) sum += d.bleu_avg;
    return sum / static_cast<double>(datasets.size());
}

/// (1/N) sum over datasets of C/P.
inline double mean_accuracy(const std::vector<DatasetScore>& datasets) {
    if (datasets.empty()) throw MetricsError("no datasets");
    double sum = 0.0;
    for (const auto& d : datasets) sum += d.accuracy();
    return sum / static_cast<double>(datasets.size());
}

/// (1/R) sum over runs of (1/N) sum over datasets of C/P.
inline double repetition_average(const std::vector<std::vector<DatasetScore>>& runs) {
    if (runs.empty()) throw MetricsError("no runs");
    double sum = 0.0;
    for (const auto& run : runs) sum += mean_accuracy(run);
    return sum / static_cast<double>(runs.size());
}

struct RunReport {
    int repetition = 1;
    std::vector<DatasetScore> datasets;
    double model_bleu = 0.0;
    double accuracy = 0.0;
};

struct EvalReport {
    std::map<std::string, std::string> provenance;
    std::vector<RunReport> runs;
    double final_accuracy = 0.0;
    double final_bleu = 0.0;
};

/// Fills the run and report averages from their components.
inline void finalize(RunReport& run) {
    run.model_bleu = model_bleu_average(run.datasets);
    run.accuracy = mean_accuracy(run.datasets);
}

inline void finalize(EvalReport& report) {
    std::vector<std::vector<DatasetScore>> all;
    double bleu = 0.0;
    for (auto& run : report.runs) {
        finalize(run);
        all.push_back(run.datasets);
        bleu += run.model_bleu;
    }
    report.final_accuracy = repetition_average(all);
    report.final_bleu = bleu / static_cast<double>(report.runs.size());
}

inline nlohmann::json to_json(const EvalReport& report) {
    nlohmann::json j;
    j["provenance"] = report.provenance;
    j["runs"] = nlohmann::json::array();
    for (const auto& run : report.runs) {
        nlohmann::json r;
        r["repetition"] = run.repetition;
        r["model_bleu2"] = run.model_bleu;
        r["accuracy"] = run.accuracy;
        r["datasets"] = nlohmann::json::array();
        for (const auto& d : run.datasets)
            r["datasets"].push_back({{"name", d.name},
                                     {"bleu2", d.bleu_avg},
                                     {"correct", d.correct},
                                     {"total", d.total},
                                     {"accuracy", d.accuracy()},
                                     {"token_exact", d.token_exact}});
        j["runs"].push_back(std::move(r));
    }
    j["final_accuracy"] = report.final_accuracy;
    j["final_bleu2"] = report.final_bleu;
    return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport report;
    report.provenance = j.at("provenance").get<std::map<std::string, std::string>>();
    for (const auto& r : j.at("runs")) {
        RunReport run;
        run.repetition = r.at("repetition").get<int>();
        run.model_bleu = r.at("model_bleu2").get<double>();
        run.accuracy = r.at("accuracy").get<double>();
        for (const auto& d : r.at("datasets")) {
            DatasetScore s;
            s.name = d.at("name").get<std::string>();
            s.bleu_avg = d.at("bleu2").get<double>();
            s.correct = d.at("correct").get<std::size_t>();
            s.total = d.at("total").get<std::size_t>();
            s.token_exact = d.at("token_exact").get<std::size_t>();
            run.datasets.push_back(s);
        }
        report.runs.push_back(std::move(run));
    }
    report.final_accuracy = j.at("final_accuracy").get<double>();
    report.final_bleu = j.at("final_bleu2").get<double>();
    return report;
}

/// One JSONL line: id, prediction, reference, bleu2, correct (+ context).
inline nlohmann::json to_json(const ExampleResult& r, int repetition) {
    return {{"id", r.id},
            {"dataset", r.dataset},
            {"repetition", repetition},
            {"prediction", r.prediction},
            {"reference", r.reference},
            {"answer_expression", r.answer_expression},
            {"bleu2", r.bleu2},
            {"correct", r.correct},
            {"token_exact", r.token_exact}};
}

}  // namespace mwp
