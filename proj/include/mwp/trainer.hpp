#pragma once

// Sequence cross-entropy, Adam, plateau learning-rate decay and the
// teacher-forced training loops (empty-target pre-training and
// expression fine-tuning).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mwp/checkpoint.hpp"
#include "mwp/model.hpp"
#include "mwp/random.hpp"

namespace mwp {

class TrainingError : public std::runtime_error {
public:
    enum class Kind { NonFiniteLogits, NonFiniteGradient, EmptyDataset, EmptyCorpus };
    TrainingError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// Mean over examples of (mean over non-PAD target positions of
/// -log p(target)). logits[b] is T x V, targets[b] has T entries.
template <typename T>
double sequence_loss(const std::vector<Matrix<T>>& logits, const std::vector<std::vector<TokenId>>& targets,
                     TokenId pad = SubwordVocabulary::kPad) {
    if (logits.size() != targets.size() || logits.empty()) throw ShapeError("sequence_loss: batch size");
    double total = 0.0;
    for (std::size_t b = 0; b < logits.size(); ++b) {
        const auto& L = logits[b];
        if (L.rows != targets[b].size()) throw ShapeError("sequence_loss: target length");
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t t = 0; t < L.rows; ++t) {
            const TokenId y = targets[b][t];
            if (y == pad) continue;
            if (y < 0 || static_cast<std::size_t>(y) >= L.cols) throw ShapeError("sequence_loss: target out of range");
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < L.cols; ++j) {
                if (!std::isfinite(static_cast<double>(L(t, j))))
                    throw TrainingError(TrainingError::Kind::NonFiniteLogits, "NonFiniteLogits");
                mx = std::max(mx, static_cast<double>(L(t, j)));
            }
            double z = 0.0;
            for (std::size_t j = 0; j < L.cols; ++j) z += std::exp(static_cast<double>(L(t, j)) - mx);
            sum += -(static_cast<double>(L(t, static_cast<std::size_t>(y))) - mx - std::log(z));
            ++count;
        }
        if (count > 0) total += sum / static_cast<double>(count);
    }
    return total / static_cast<double>(logits.size());
}

/// Forward + backward over a batch. Gradients of the sequence_loss
/// objective are added into `grads`; returns the loss.
template <typename T>
double accumulate_gradients(const ParamSet<T>& params, const TransformerConfig& config, const Batch& batch,
                            ParamSet<T>& grads, Rng* dropout_rng) {
    double total = 0.0;
    const T inv_batch = T{1} / static_cast<T>(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        Graph<T> g(true);
        TransformerGraph<T> net(g, params, config, &grads, dropout_rng);
        Var memory = net.encode(batch.encoder[b]);
        Var logits = net.decode(memory, batch.decoder_input[b]);
        const auto& tgt = batch.target[b];
        const auto live = static_cast<std::size_t>(
            std::count_if(tgt.begin(), tgt.end(), [](TokenId t) { return t != SubwordVocabulary::kPad; }));
        std::vector<T> weights(tgt.size(), T{0});
        for (std::size_t t = 0; t < tgt.size(); ++t)
            if (tgt[t] != SubwordVocabulary::kPad) weights[t] = inv_batch / static_cast<T>(live);
        Var loss = g.cross_entropy(logits, tgt, weights);
        const T value = g.value(loss).data[0];
        if (!std::isfinite(static_cast<double>(value)))
            throw TrainingError(TrainingError::Kind::NonFiniteLogits, "NonFiniteLogits");
        total += static_cast<double>(value);
        g.backward(loss);
    }
    return total;
}

/// Scales gradients so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping. max_norm <= 0 disables clipping.
template <typename T>
double clip_global_norm(ParamSet<T>& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& [name, g] : grads)
        for (T x : g.data) sq += static_cast<double>(x) * static_cast<double>(x);
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const T s = static_cast<T>(max_norm / norm);
        for (auto& [name, g] : grads)
            for (T& x : g.data) x *= s;
    }
    return norm;
}

struct AdamHyper {
    double beta1 = 0.95;
    double beta2 = 0.99;
    double epsilon = 1e-9;
};

template <typename T>
struct OptimizerState {
    std::int64_t step = 0;
    double learning_rate = 1e-3;
    AdamHyper hyper;
    ParamSet<T> first_moment;
    ParamSet<T> second_moment;

    static OptimizerState zeros(const ParamSet<T>& params, double lr) {
        OptimizerState s;
        s.learning_rate = lr;
        s.first_moment = zeros_like(params);
        s.second_moment = zeros_like(params);
        return s;
    }
};

/// Bias-corrected Adam update, in place.
template <typename T>
void adam_step(ParamSet<T>& params, const ParamSet<T>& grads, OptimizerState<T>& state) {
    for (const auto& [name, g] : grads)
        for (T x : g.data)
            if (!std::isfinite(static_cast<double>(x)))
                throw TrainingError(TrainingError::Kind::NonFiniteGradient, "NonFiniteGradient in " + name);
    if (state.first_moment.empty()) {
        state.first_moment = zeros_like(params);
        state.second_moment = zeros_like(params);
    }
    ++state.step;
    const auto& h = state.hyper;
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
    for (auto& [name, w] : params) {
        const auto& g = grads.at(name);
        auto& m = state.first_moment.at(name);
        auto& v = state.second_moment.at(name);
        if (!g.same_shape(w)) throw ShapeError("adam_step: gradient shape for " + name);
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = static_cast<double>(g.data[i]);
            const double mi = h.beta1 * static_cast<double>(m.data[i]) + (1.0 - h.beta1) * gi;
            const double vi = h.beta2 * static_cast<double>(v.data[i]) + (1.0 - h.beta2) * gi * gi;
            m.data[i] = static_cast<T>(mi);
            v.data[i] = static_cast<T>(vi);
            const double update = state.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + h.epsilon);
            w.data[i] = static_cast<T>(static_cast<double>(w.data[i]) - update);
        }
    }
}

struct PlateauRule {
    std::size_t patience = 10;
    double factor = 0.5;
    double min_delta = 1e-4;
    double floor = 1e-6;
};

/// Reduce-on-plateau: after `patience` consecutive observations that fail
/// to beat the best loss by min_delta, LR <- max(LR * factor, floor).
struct PlateauScheduler {
    PlateauRule rule;
    double best = std::numeric_limits<double>::infinity();
    std::size_t stale = 0;

    double observe(double loss, double lr) {
        if (loss < best - rule.min_delta) {
            best = loss;
            stale = 0;
            return lr;
        }
        if (++stale >= rule.patience) {
            stale = 0;
            return std::max(lr * rule.factor, rule.floor);
        }
        return lr;
    }
};

/// Replays a loss history through the plateau rule and returns the final LR.
inline double lr_schedule(std::span<const double> history, double initial_lr, const PlateauRule& rule = {}) {
    PlateauScheduler s{rule};
    double lr = initial_lr;
    for (double loss : history) lr = s.observe(loss, lr);
    return lr;
}

struct TrainPlan {
    std::size_t batch_size = 128;
    std::size_t iterations = 300;
    std::size_t pretrain_iterations = 30;
    double initial_lr = 1e-3;
    PlateauRule plateau;
    double clip_norm = 5.0;
    std::uint64_t seed = 1;
    /// Write a checkpoint every N epochs (0: only at the end).
    std::size_t checkpoint_every = 0;
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double loss = 0.0;
    double lr = 0.0;
};

/// Everything needed to continue a run exactly where it stopped.
template <typename T>
struct TrainState {
    ParamSet<T> params;
    OptimizerState<T> optimizer;
    PlateauScheduler scheduler;
    std::size_t epochs_done = 0;
};

using Example = std::pair<std::vector<TokenId>, std::vector<TokenId>>;

/// Runs epochs epochs_done+1 .. `until`: per-epoch Fisher-Yates shuffle
/// seeded by (seed, epoch), mini-batches of plan.batch_size, dropout on,
/// gradient clipping, Adam, then one plateau-rule observation of the
/// epoch's mean loss. `on_epoch` is called after every epoch.
template <typename T>
std::vector<EpochRecord> run_epochs(TrainState<T>& state, const TransformerConfig& config,
                                    const std::vector<Example>& data, const TrainPlan& plan, std::size_t until,
                                    const std::function<void(const TrainState<T>&, const EpochRecord&)>& on_epoch = {}) {
    if (data.empty()) throw TrainingError(TrainingError::Kind::EmptyDataset, "EmptyDataset");
    if (plan.batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
    std::vector<EpochRecord> curve;
    std::vector<std::size_t> order(data.size());
    while (state.epochs_done < until) {
        const std::size_t epoch = state.epochs_done + 1;
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng(mix_seed(plan.seed, 2 * epoch));
        fisher_yates(std::span<std::size_t>(order), shuffle_rng);
        Rng dropout_rng(mix_seed(plan.seed, 2 * epoch + 1));
        const double lr = state.optimizer.learning_rate;
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += plan.batch_size) {
            const std::size_t stop = std::min(order.size(), start + plan.batch_size);
            std::vector<Example> chunk;
            for (std::size_t i = start; i < stop; ++i) chunk.push_back(data[order[i]]);
            const Batch batch = make_batch(chunk, config.max_seq_len);
            ParamSet<T> grads = zeros_like(state.params);
            const double batch_loss = accumulate_gradients(state.params, config, batch, grads,
                                                           config.dropout > 0.0 ? &dropout_rng : nullptr);
            clip_global_norm(grads, plan.clip_norm);
            adam_step(state.params, grads, state.optimizer);
            loss_sum += batch_loss * static_cast<double>(chunk.size());
        }
        const EpochRecord rec{epoch, loss_sum / static_cast<double>(data.size()), lr};
        state.optimizer.learning_rate = state.scheduler.observe(rec.loss, lr);
        state.epochs_done = epoch;
        curve.push_back(rec);
        if (on_epoch) on_epoch(state, rec);
    }
    return curve;
}

/// Fresh training state: parameters from `params`, zero moments, LR from the plan.
template <typename T>
TrainState<T> start_state(ParamSet<T> params, const TrainPlan& plan) {
    TrainState<T> s;
    s.optimizer = OptimizerState<T>::zeros(params, plan.initial_lr);
    s.params = std::move(params);
    s.scheduler.rule = plan.plateau;
    return s;
}

/// Empty-target pre-training: each sentence maps to the target
/// [START, END], so the only supervised prediction is END.
template <typename T>
std::vector<EpochRecord> pretrain(TrainState<T>& state, const TransformerConfig& config,
                                  const std::vector<std::vector<TokenId>>& sentences, const TrainPlan& plan,
                                  const std::function<void(const TrainState<T>&, const EpochRecord&)>& on_epoch = {}) {
    if (sentences.empty()) throw TrainingError(TrainingError::Kind::EmptyCorpus, "EmptyCorpus");
    std::vector<Example> data;
    data.reserve(sentences.size());
    for (const auto& s : sentences) data.emplace_back(s, std::vector<TokenId>{});
    return run_epochs(state, config, data, plan, plan.pretrain_iterations, on_epoch);
}

/// Expression fine-tuning for plan.iterations epochs (resumes from
/// state.epochs_done).
template <typename T>
std::vector<EpochRecord> train(TrainState<T>& state, const TransformerConfig& config, const std::vector<Example>& data,
                               const TrainPlan& plan,
                               const std::function<void(const TrainState<T>&, const EpochRecord&)>& on_epoch = {}) {
    return run_epochs(state, config, data, plan, plan.iterations, on_epoch);
}

inline std::string loss_curve_csv(const std::vector<EpochRecord>& curve, bool header = true) {
    std::string out = header ? "epoch,loss,lr\n" : "";
    char buf[96];
    for (const auto& r : curve) {
        std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g\n", r.epoch, r.loss, r.lr);
        out += buf;
    }
    return out;
}

namespace detail {

inline std::string exact(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

/// Packs a float training state into a checkpoint (params, Adam moments,
/// step, LR, plateau counters, epochs done).
inline Checkpoint to_checkpoint(const TrainState<float>& s, const TransformerConfig& config) {
    Checkpoint ck;
    ck.config = config;
    ck.put_section("param/", s.params);
    ck.put_section("adam.m/", s.optimizer.first_moment);
    ck.put_section("adam.v/", s.optimizer.second_moment);
    ck.meta["train.epochs_done"] = std::to_string(s.epochs_done);
    ck.meta["train.adam_step"] = std::to_string(s.optimizer.step);
    ck.meta["train.lr"] = detail::exact(s.optimizer.learning_rate);
    ck.meta["train.plateau_best"] = detail::exact(s.scheduler.best);
    ck.meta["train.plateau_stale"] = std::to_string(s.scheduler.stale);
    return ck;
}

/// Inverse of to_checkpoint. Missing optimizer sections give fresh moments.
inline TrainState<float> from_checkpoint(const Checkpoint& ck, const TrainPlan& plan) {
    TrainState<float> s = start_state(ck.params(), plan);
    auto meta = [&](const char* key) -> std::optional<std::string> {
        auto it = ck.meta.find(key);
        return it == ck.meta.end() ? std::nullopt : std::optional<std::string>(it->second);
    };
    auto m = ck.section("adam.m/");
    auto v = ck.section("adam.v/");
    if (!m.empty()) {
        s.optimizer.first_moment = std::move(m);
        s.optimizer.second_moment = std::move(v);
    }
    if (auto x = meta("train.epochs_done")) s.epochs_done = std::stoul(*x);
    if (auto x = meta("train.adam_step")) s.optimizer.step = std::stoll(*x);
    if (auto x = meta("train.lr")) s.optimizer.learning_rate = std::stod(*x);
    if (auto x = meta("train.plateau_best")) s.scheduler.best = std::stod(*x);
    if (auto x = meta("train.plateau_stale")) s.scheduler.stale = std::stoul(*x);
    return s;
}

}  // namespace mwp
