#pragma once

// Encoder-decoder Transformer (post-norm residual blocks, sinusoidal
// positions, shared input embedding, untied output projection).

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mwp/random.hpp"
#include "mwp/tensor.hpp"
#include "mwp/tokenizer.hpp"

namespace mwp {

struct TransformerConfig {
    std::size_t num_layers = 1;
    std::size_t num_heads = 8;
    std::size_t model_depth = 256;
    std::size_t ff_depth = 512;
    double dropout = 0.10;
    std::size_t max_seq_len = 128;
    std::size_t vocab_size = 0;

    /// Type 1: 4 layers, depth 512, feed-forward 1024.
    static TransformerConfig type1(std::size_t vocab) { return {4, 8, 512, 1024, 0.10, 128, vocab}; }
    /// Type 2: 2 layers, depth 256, feed-forward 1024.
    static TransformerConfig type2(std::size_t vocab) { return {2, 8, 256, 1024, 0.10, 128, vocab}; }
    /// Type 3: 1 layer, depth 256, feed-forward 512.
    static TransformerConfig type3(std::size_t vocab) { return {1, 8, 256, 512, 0.10, 128, vocab}; }

    static TransformerConfig preset(int type, std::size_t vocab) {
        switch (type) {
            case 1: return type1(vocab);
            case 2: return type2(vocab);
            case 3: return type3(vocab);
            default: throw std::invalid_argument("transformer type must be 1, 2 or 3");
        }
    }

    std::size_t head_depth() const { return model_depth / num_heads; }

    void validate() const {
        if (num_layers < 1 || num_heads < 1 || model_depth < 1 || ff_depth < 1 || max_seq_len < 1 || vocab_size < 1)
            throw std::invalid_argument("TransformerConfig: all dimensions must be >= 1");
        if (model_depth % num_heads != 0)
            throw std::invalid_argument("TransformerConfig: model_depth must be divisible by num_heads");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("TransformerConfig: dropout must be in [0,1)");
    }

    bool operator==(const TransformerConfig&) const = default;
};

/// Named parameter tensors (or same-shaped gradients / moments).
template <typename T>
using ParamSet = std::map<std::string, Matrix<T>>;

namespace detail {

struct ParamShape {
    std::size_t rows, cols;
    enum class Init { Glorot, Zero, One } init;
};

inline void attention_shapes(std::map<std::string, ParamShape>& out, const std::string& p, std::size_t d) {
    for (const char* w : {"wq", "wk", "wv", "wo"}) out[p + w] = {d, d, ParamShape::Init::Glorot};
    for (const char* b : {"bq", "bk", "bv", "bo"}) out[p + b] = {1, d, ParamShape::Init::Zero};
}

inline void ffn_norm_shapes(std::map<std::string, ParamShape>& out, const std::string& p, const TransformerConfig& c,
                            int norms) {
    out[p + "ff.w1"] = {c.model_depth, c.ff_depth, ParamShape::Init::Glorot};
    out[p + "ff.b1"] = {1, c.ff_depth, ParamShape::Init::Zero};
    out[p + "ff.w2"] = {c.ff_depth, c.model_depth, ParamShape::Init::Glorot};
    out[p + "ff.b2"] = {1, c.model_depth, ParamShape::Init::Zero};
    for (int i = 1; i <= norms; ++i) {
        out[p + "norm" + std::to_string(i) + ".gain"] = {1, c.model_depth, ParamShape::Init::One};
        out[p + "norm" + std::to_string(i) + ".offset"] = {1, c.model_depth, ParamShape::Init::Zero};
    }
}

inline std::string layer_prefix(const char* stack, std::size_t layer) {
    return std::string(stack) + "." + std::to_string(layer) + ".";
}

}  // namespace detail

/// Every parameter name with its shape and initialisation rule.
inline std::map<std::string, detail::ParamShape> parameter_layout(const TransformerConfig& c) {
    using detail::ParamShape;
    std::map<std::string, ParamShape> out;
    out["embedding"] = {c.vocab_size, c.model_depth, ParamShape::Init::Glorot};
    out["output.w"] = {c.model_depth, c.vocab_size, ParamShape::Init::Glorot};
    out["output.b"] = {1, c.vocab_size, ParamShape::Init::Zero};
    for (std::size_t l = 0; l < c.num_layers; ++l) {
        const std::string enc = detail::layer_prefix("encoder", l);
        detail::attention_shapes(out, enc + "self.", c.model_depth);
        detail::ffn_norm_shapes(out, enc, c, 2);
        const std::string dec = detail::layer_prefix("decoder", l);
        detail::attention_shapes(out, dec + "self.", c.model_depth);
        detail::attention_shapes(out, dec + "cross.", c.model_depth);
        detail::ffn_norm_shapes(out, dec, c, 3);
    }
    return out;
}

/// Glorot-uniform projections and embedding (bound sqrt(6/(fan_in+fan_out))),
/// zero offsets/biases, unit gains. Deterministic in `seed`.
template <typename T = float>
ParamSet<T> init_params(const TransformerConfig& config, std::uint64_t seed) {
    config.validate();
    ParamSet<T> params;
    Rng rng(mix_seed(seed, 0x1417));
    for (const auto& [name, shape] : parameter_layout(config)) {
        Matrix<T> m(shape.rows, shape.cols);
        switch (shape.init) {
            case detail::ParamShape::Init::Zero: break;
            case detail::ParamShape::Init::One: m.fill(T{1}); break;
            case detail::ParamShape::Init::Glorot: {
                const double bound = std::sqrt(6.0 / static_cast<double>(shape.rows + shape.cols));
                for (auto& x : m.data) x = static_cast<T>((2.0 * uniform01(rng) - 1.0) * bound);
                break;
            }
        }
        params.emplace(name, std::move(m));
    }
    return params;
}

template <typename T>
ParamSet<T> zeros_like(const ParamSet<T>& params) {
    ParamSet<T> out;
    for (const auto& [name, m] : params) out.emplace(name, Matrix<T>(m.rows, m.cols));
    return out;
}

/// Throws ShapeError unless `params` has exactly the layout of `config`.
template <typename T>
void check_params(const ParamSet<T>& params, const TransformerConfig& config) {
    const auto layout = parameter_layout(config);
    if (layout.size() != params.size()) throw ShapeError("parameter count does not match config");
    for (const auto& [name, shape] : layout) {
        auto it = params.find(name);
        if (it == params.end()) throw ShapeError("missing parameter " + name);
        if (it->second.rows != shape.rows || it->second.cols != shape.cols)
            throw ShapeError("parameter " + name + " has shape " + std::to_string(it->second.rows) + "x" +
                             std::to_string(it->second.cols) + ", expected " + std::to_string(shape.rows) + "x" +
                             std::to_string(shape.cols));
    }
}

/// Padded token batch. decoder_input[b] = START + target[b][..T-1].
struct Batch {
    std::vector<std::vector<TokenId>> encoder;
    std::vector<std::vector<TokenId>> decoder_input;
    std::vector<std::vector<TokenId>> target;

    std::size_t size() const { return encoder.size(); }
};

/// Builds a PAD-aligned teacher-forcing batch from (source, target) id
/// sequences. Targets get END appended; sources are cut to max_seq_len and
/// targets to max_seq_len - 1.
inline Batch make_batch(const std::vector<std::pair<std::vector<TokenId>, std::vector<TokenId>>>& pairs,
                        std::size_t max_seq_len) {
    Batch b;
    std::size_t s_len = 1, t_len = 1;
    for (const auto& [src, tgt] : pairs) {
        s_len = std::max(s_len, std::min(src.size(), max_seq_len));
        t_len = std::max(t_len, std::min(tgt.size(), max_seq_len - 1) + 1);
    }
    for (const auto& [src, tgt] : pairs) {
        std::vector<TokenId> enc(s_len, SubwordVocabulary::kPad);
        std::copy_n(src.begin(), std::min(src.size(), s_len), enc.begin());
        std::vector<TokenId> full;
        full.assign(tgt.begin(), tgt.begin() + static_cast<std::ptrdiff_t>(std::min(tgt.size(), max_seq_len - 1)));
        full.push_back(SubwordVocabulary::kEnd);
        std::vector<TokenId> dec(t_len, SubwordVocabulary::kPad), out(t_len, SubwordVocabulary::kPad);
        dec[0] = SubwordVocabulary::kStart;
        for (std::size_t i = 0; i < full.size(); ++i) {
            out[i] = full[i];
            if (i + 1 < full.size()) dec[i + 1] = full[i];
        }
        b.encoder.push_back(std::move(enc));
        b.decoder_input.push_back(std::move(dec));
        b.target.push_back(std::move(out));
    }
    return b;
}

/// Sinusoidal position table: sin on even columns, cos on odd columns.
template <typename T>
Matrix<T> positional_encoding(std::size_t length, std::size_t depth) {
    Matrix<T> pe(length, depth);
    for (std::size_t pos = 0; pos < length; ++pos)
        for (std::size_t i = 0; i < depth; ++i) {
            const double rate = std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(depth));
            const double angle = static_cast<double>(pos) / rate;
            pe(pos, i) = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    return pe;
}

/// Attention probability matrices collected during a forward pass, in
/// execution order (encoder self, then decoder self / cross per layer).
template <typename T>
struct AttentionTrace {
    std::vector<Matrix<T>> weights;
};

/// Wires one example through the network on a Graph. Parameters are bound
/// once per graph; gradients (if given) accumulate into `grads`.
template <typename T>
class TransformerGraph {
public:
    TransformerGraph(Graph<T>& g, const ParamSet<T>& params, const TransformerConfig& config, ParamSet<T>* grads,
                     Rng* dropout_rng, AttentionTrace<T>* trace = nullptr)
        : g_(g), config_(config), rng_(dropout_rng), trace_(trace) {
        for (const auto& [name, m] : params) vars_[name] = g_.parameter(m, grads ? &grads->at(name) : nullptr);
    }

    /// Encoder stack over a PAD-padded source sequence.
    Var encode(const std::vector<TokenId>& src) {
        check_ids(src);
        src_ = src;
        Var x = embed(src);
        const std::size_t s = src.size();
        std::vector<unsigned char> mask(s * s);
        for (std::size_t i = 0; i < s; ++i)
            for (std::size_t j = 0; j < s; ++j) mask[i * s + j] = src[j] != SubwordVocabulary::kPad;
        for (std::size_t l = 0; l < config_.num_layers; ++l) {
            const std::string p = detail::layer_prefix("encoder", l);
            x = residual_norm(x, attention(p + "self.", x, x, mask), p + "norm1.");
            x = residual_norm(x, feed_forward(p, x), p + "norm2.");
        }
        return x;
    }

    /// Decoder stack; returns T x V logits. `memory` must come from encode().
    Var decode(Var memory, const std::vector<TokenId>& tgt_in) {
        check_ids(tgt_in);
        Var y = embed(tgt_in);
        const std::size_t t = tgt_in.size(), s = src_.size();
        std::vector<unsigned char> self_mask(t * t), cross_mask(t * s);
        for (std::size_t i = 0; i < t; ++i) {
            for (std::size_t j = 0; j < t; ++j) self_mask[i * t + j] = j <= i && tgt_in[j] != SubwordVocabulary::kPad;
            for (std::size_t j = 0; j < s; ++j) cross_mask[i * s + j] = src_[j] != SubwordVocabulary::kPad;
        }
        for (std::size_t l = 0; l < config_.num_layers; ++l) {
            const std::string p = detail::layer_prefix("decoder", l);
            y = residual_norm(y, attention(p + "self.", y, y, self_mask), p + "norm1.");
            y = residual_norm(y, attention(p + "cross.", y, memory, cross_mask), p + "norm2.");
            y = residual_norm(y, feed_forward(p, y), p + "norm3.");
        }
        return g_.add_row(g_.matmul(y, vars_.at("output.w")), vars_.at("output.b"));
    }

private:
    void check_ids(const std::vector<TokenId>& ids) const {
        if (ids.empty()) throw ShapeError("empty sequence");
        if (ids.size() > config_.max_seq_len) throw ShapeError("sequence longer than max_seq_len");
        for (TokenId id : ids)
            if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size)
                throw ShapeError("IdOutOfRange: token id " + std::to_string(id));
    }

    Var dropout(Var x) { return rng_ ? g_.dropout(x, config_.dropout, *rng_) : x; }

    Var embed(const std::vector<TokenId>& ids) {
        Var e = g_.scale(g_.embedding(vars_.at("embedding"), ids), static_cast<T>(std::sqrt(static_cast<double>(config_.model_depth))));
        return dropout(g_.add(e, g_.constant(positional_encoding<T>(ids.size(), config_.model_depth))));
    }

    Var linear(Var x, const std::string& w, const std::string& b) {
        return g_.add_row(g_.matmul(x, vars_.at(w)), vars_.at(b));
    }

    Var attention(const std::string& p, Var query_src, Var kv_src, const std::vector<unsigned char>& mask) {
        Var q = linear(query_src, p + "wq", p + "bq");
        Var k = linear(kv_src, p + "wk", p + "bk");
        Var v = linear(kv_src, p + "wv", p + "bv");
        const std::size_t dh = config_.head_depth();
        const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
        std::vector<Var> heads;
        for (std::size_t h = 0; h < config_.num_heads; ++h) {
            Var qh = g_.slice_cols(q, h * dh, dh);
            Var kh = g_.slice_cols(k, h * dh, dh);
            Var vh = g_.slice_cols(v, h * dh, dh);
            Var probs = g_.masked_softmax(g_.scale(g_.matmul_nt(qh, kh), scale), mask);
            if (trace_) trace_->weights.push_back(g_.value(probs));
            heads.push_back(g_.matmul(probs, vh));
        }
        return linear(g_.concat_cols(heads), p + "wo", p + "bo");
    }

    Var feed_forward(const std::string& p, Var x) {
        Var h = g_.relu(linear(x, p + "ff.w1", p + "ff.b1"));
        return linear(h, p + "ff.w2", p + "ff.b2");
    }

    Var residual_norm(Var x, Var sub, const std::string& norm) {
        return g_.layer_norm(g_.add(x, dropout(sub)), vars_.at(norm + "gain"), vars_.at(norm + "offset"));
    }

    Graph<T>& g_;
    const TransformerConfig& config_;
    Rng* rng_;
    AttentionTrace<T>* trace_;
    std::map<std::string, Var> vars_;
    std::vector<TokenId> src_;
};

/// Logits [B][T x V]. Dropout is applied only when `dropout_rng` is given.
template <typename T>
std::vector<Matrix<T>> forward(const ParamSet<T>& params, const TransformerConfig& config, const Batch& batch,
                               Rng* dropout_rng = nullptr, AttentionTrace<T>* trace = nullptr) {
    if (batch.decoder_input.size() != batch.size() || batch.target.size() != batch.size())
        throw ShapeError("ShapeMismatch: batch components differ in size");
    std::vector<Matrix<T>> out;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        Graph<T> g(false);
        TransformerGraph<T> net(g, params, config, nullptr, dropout_rng, trace);
        Var memory = net.encode(batch.encoder[b]);
        out.push_back(g.value(net.decode(memory, batch.decoder_input[b])));
    }
    return out;
}

/// Argmax decoding (ties to the lowest id) until END or `max_len` tokens.
/// The returned sequence excludes START and END.
template <typename T>
std::vector<TokenId> greedy_decode(const ParamSet<T>& params, const TransformerConfig& config,
                                   std::vector<TokenId> source, std::size_t max_len) {
    if (source.empty()) source.push_back(SubwordVocabulary::kPad);
    if (source.size() > config.max_seq_len) source.resize(config.max_seq_len);
    max_len = std::min(max_len, config.max_seq_len - 1);
    Graph<T> g(false);
    TransformerGraph<T> net(g, params, config, nullptr, nullptr);
    Var memory = net.encode(source);
    std::vector<TokenId> prefix{SubwordVocabulary::kStart};
    std::vector<TokenId> out;
    while (out.size() < max_len) {
        const Matrix<T>& logits = g.value(net.decode(memory, prefix));
        const auto last = logits.row(logits.rows - 1);
        std::size_t best = 0;
        for (std::size_t j = 1; j < last.size(); ++j)
            if (last[j] > last[best]) best = j;
        const auto id = static_cast<TokenId>(best);
        if (id == SubwordVocabulary::kEnd) break;
        out.push_back(id);
        prefix.push_back(id);
    }
    return out;
}

}  // namespace mwp
