#pragma once

// Invertible byte-pair subword vocabulary with atomic tag/operator tokens.
//
// ID layout: 0 PAD, 1 START, 2 END, then atomic tokens (<n1>..<nMAX>, the
// same tags in angle-bracket glyphs, operators, parentheses), then the 256
// single bytes, then merged pieces in merge order. Text is split into
// atomic tokens and "chunks" (an optional leading space followed by a run
// of non-space bytes, or a lone space); merges never cross chunk boundaries. Unseen bytes always have a
// single-byte piece, so every string round-trips.

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mwp/expression.hpp"

namespace mwp {

using TokenId = std::int32_t;

class TokenizerError : public std::runtime_error {
public:
    enum class Kind { EmptyCorpus, UnknownId, BadFile };
    TokenizerError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

class SubwordVocabulary {
public:
    static constexpr TokenId kPad = 0;
    static constexpr TokenId kStart = 1;
    static constexpr TokenId kEnd = 2;
    static constexpr int kMaxTags = 16;
    static constexpr std::size_t kDefaultSize = 8192;

    /// Greedy pair merging by frequency (ties: lowest left id, then lowest
    /// right id) until `target_size` tokens or no pair occurs twice.
    static SubwordVocabulary build(const std::vector<std::string>& corpus, std::size_t target_size = kDefaultSize) {
        if (corpus.empty()) throw TokenizerError(TokenizerError::Kind::EmptyCorpus, "EmptyCorpus");
        SubwordVocabulary v = base();

        // Distinct chunks with their counts, each as a working id sequence.
        std::map<std::string, std::int64_t> chunk_counts;
        for (const auto& text : corpus)
            v.split(text, [&](std::string_view piece, bool atomic) {
                if (!atomic) ++chunk_counts[std::string(piece)];
            });
        std::vector<std::vector<TokenId>> words;
        std::vector<std::int64_t> counts;
        for (const auto& [chunk, n] : chunk_counts) {
            std::vector<TokenId> ids;
            for (unsigned char c : chunk) ids.push_back(v.byte_id(c));
            words.push_back(std::move(ids));
            counts.push_back(n);
        }

        // Incremental pair statistics: counts ordered by (-count, left, right)
        // and, per pair, the words it occurs in.
        using Pair = std::pair<TokenId, TokenId>;
        std::map<Pair, std::int64_t> pair_count;
        std::set<std::tuple<std::int64_t, TokenId, TokenId>> ranked;
        std::map<Pair, std::set<std::size_t>> where;
        auto adjust = [&](std::size_t w, std::int64_t sign) {
            const auto& ids = words[w];
            for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
                const Pair p{ids[i], ids[i + 1]};
                std::int64_t& n = pair_count[p];
                if (n > 0) ranked.erase({-n, p.first, p.second});
                n += sign * counts[w];
                if (n > 0) ranked.insert({-n, p.first, p.second});
                if (sign > 0) where[p].insert(w);
            }
        };
        for (std::size_t w = 0; w < words.size(); ++w) adjust(w, +1);

        while (v.tokens_.size() < target_size && !ranked.empty()) {
            const auto [neg, left, right] = *ranked.begin();
            if (-neg < 2) break;
            const Pair best{left, right};
            const TokenId merged = v.add_merge(left, right);
            const std::set<std::size_t> affected = where[best];
            for (std::size_t w : affected) {
                adjust(w, -1);
                apply_merge(words[w], best, merged);
                adjust(w, +1);
            }
            where.erase(best);
        }
        return v;
    }

    std::size_t size() const { return tokens_.size(); }
    const std::string& piece(TokenId id) const {
        check_id(id);
        return tokens_[static_cast<std::size_t>(id)].text;
    }

    /// Never emits PAD, START or END.
    std::vector<TokenId> encode(std::string_view text) const {
        std::vector<TokenId> out;
        split(text, [&](std::string_view piece, bool atomic) {
            if (atomic) {
                out.push_back(atomic_.at(std::string(piece)));
                return;
            }
            std::vector<TokenId> ids;
            for (unsigned char c : piece) ids.push_back(byte_id(c));
            merge_by_rank(ids);
            out.insert(out.end(), ids.begin(), ids.end());
        });
        return out;
    }

    /// Control tokens decode to nothing.
    std::string decode(const std::vector<TokenId>& ids) const {
        std::string out;
        for (TokenId id : ids) {
            check_id(id);
            if (id > kEnd) out += tokens_[static_cast<std::size_t>(id)].text;
        }
        return out;
    }

    /// `SWV1 <size>` header, then one line per id: kind, optional merge
    /// operands, escaped text.
    std::string serialize() const {
        std::string out = "SWV1 " + std::to_string(tokens_.size()) + "\n";
        for (const auto& t : tokens_) {
            out += t.kind;
            if (t.kind == 'M') out += " " + std::to_string(t.left) + " " + std::to_string(t.right);
            out += " " + escape(t.text) + "\n";
        }
        return out;
    }

    static SubwordVocabulary deserialize(std::string_view data) {
        std::istringstream in{std::string(data)};
        std::string line;
        std::size_t declared = 0;
        if (!std::getline(in, line) || line.rfind("SWV1 ", 0) != 0)
            throw TokenizerError(TokenizerError::Kind::BadFile, "missing SWV1 header");
        declared = std::stoul(line.substr(5));
        SubwordVocabulary v = base();
        std::size_t index = 0;
        while (std::getline(in, line)) {
            if (index < v.tokens_.size()) {
                const Token& expect = v.tokens_[index];
                if (line.empty() || line[0] != expect.kind || unescape(line.substr(2)) != expect.text)
                    throw TokenizerError(TokenizerError::Kind::BadFile, "reserved layout mismatch at id " + std::to_string(index));
            } else {
                std::istringstream fields(line);
                char kind = 0;
                TokenId left = 0, right = 0;
                fields >> kind >> left >> right;
                if (kind != 'M' || !fields || left < 0 || right < 0 ||
                    static_cast<std::size_t>(left) >= v.tokens_.size() || static_cast<std::size_t>(right) >= v.tokens_.size())
                    throw TokenizerError(TokenizerError::Kind::BadFile, "bad merge line " + std::to_string(index));
                v.add_merge(left, right);
            }
            ++index;
        }
        if (v.tokens_.size() != declared)
            throw TokenizerError(TokenizerError::Kind::BadFile, "token count does not match header");
        return v;
    }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw TokenizerError(TokenizerError::Kind::BadFile, "cannot write " + path);
        f << serialize();
    }

    static SubwordVocabulary load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw TokenizerError(TokenizerError::Kind::BadFile, "cannot read " + path);
        std::ostringstream ss;
        ss << f.rdbuf();
        return deserialize(ss.str());
    }

    static std::string escape(std::string_view s) {
        static constexpr char kHex[] = "0123456789ABCDEF";
        std::string out;
        for (unsigned char c : s) {
            if (c == '\\') {
                out += "\\\\";
            } else if (c < 0x21 || c >= 0x7f) {
                out += "\\x";
                out += kHex[c >> 4];
                out += kHex[c & 15];
            } else {
                out += static_cast<char>(c);
            }
        }
        return out;
    }

    static std::string unescape(std::string_view s) {
        std::string out;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] != '\\') {
                out += s[i];
            } else if (i + 1 < s.size() && s[i + 1] == '\\') {
                out += '\\';
                ++i;
            } else if (i + 3 < s.size() && s[i + 1] == 'x') {
                out += static_cast<char>(std::stoi(std::string(s.substr(i + 2, 2)), nullptr, 16));
                i += 3;
            } else {
                throw TokenizerError(TokenizerError::Kind::BadFile, "bad escape");
            }
        }
        return out;
    }

private:
    struct Token {
        char kind;  // R reserved, A atomic, B byte, M merge
        std::string text;
        TokenId left = -1;
        TokenId right = -1;
    };

    static SubwordVocabulary base() {
        SubwordVocabulary v;
        v.tokens_.push_back({'R', "<pad>"});
        v.tokens_.push_back({'R', "<start>"});
        v.tokens_.push_back({'R', "<end>"});
        std::vector<std::string> atoms;
        for (int k = 1; k <= kMaxTags; ++k) atoms.push_back(tag_token(k));
        for (int k = 1; k <= kMaxTags; ++k) atoms.push_back("\xE2\x9F\xA8n" + std::to_string(k) + "\xE2\x9F\xA9");
        for (const char* op : {"+", "-", "*", "/", "(", ")"}) atoms.emplace_back(op);
        for (auto& a : atoms) {
            v.atomic_[a] = static_cast<TokenId>(v.tokens_.size());
            v.tokens_.push_back({'A', a});
        }
        v.first_byte_ = static_cast<TokenId>(v.tokens_.size());
        for (int b = 0; b < 256; ++b) v.tokens_.push_back({'B', std::string(1, static_cast<char>(b))});
        return v;
    }

    TokenId byte_id(unsigned char c) const { return first_byte_ + c; }

    TokenId add_merge(TokenId left, TokenId right) {
        const auto id = static_cast<TokenId>(tokens_.size());
        tokens_.push_back({'M', tokens_[static_cast<std::size_t>(left)].text + tokens_[static_cast<std::size_t>(right)].text,
                           left, right});
        merge_rank_[{left, right}] = id;
        return id;
    }

    void check_id(TokenId id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
            throw TokenizerError(TokenizerError::Kind::UnknownId, "UnknownId(" + std::to_string(id) + ")");
    }

    static void apply_merge(std::vector<TokenId>& ids, std::pair<TokenId, TokenId> pair, TokenId merged) {
        std::size_t w = 0;
        for (std::size_t r = 0; r < ids.size(); ++r) {
            if (r + 1 < ids.size() && ids[r] == pair.first && ids[r + 1] == pair.second) {
                ids[w++] = merged;
                ++r;
            } else {
                ids[w++] = ids[r];
            }
        }
        ids.resize(w);
    }

    // Replays merges in training order: repeatedly merge the adjacent pair
    // whose merged id is smallest.
    void merge_by_rank(std::vector<TokenId>& ids) const {
        while (ids.size() > 1) {
            TokenId best = -1;
            std::pair<TokenId, TokenId> best_pair{};
            for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
                auto it = merge_rank_.find({ids[i], ids[i + 1]});
                if (it != merge_rank_.end() && (best < 0 || it->second < best)) {
                    best = it->second;
                    best_pair = it->first;
                }
            }
            if (best < 0) return;
            apply_merge(ids, best_pair, best);
        }
    }

    std::size_t atomic_length_at(std::string_view text, std::size_t i) const {
        const char c = text[i];
        if (c == '+' || c == '-' || c == '*' || c == '/' || c == '(' || c == ')') return 1;
        if (c == '<') {
            for (std::size_t len = 4; len <= 5 && i + len <= text.size(); ++len)
                if (atomic_.count(std::string(text.substr(i, len)))) return len;
        } else if (c == '\xE2') {
            for (std::size_t len = 8; len <= 9 && i + len <= text.size(); ++len)
                if (atomic_.count(std::string(text.substr(i, len)))) return len;
        }
        return 0;
    }

    template <typename Fn>
    void split(std::string_view text, Fn&& emit) const {
        std::size_t i = 0;
        while (i < text.size()) {
            if (std::size_t n = atomic_length_at(text, i)) {
                emit(text.substr(i, n), true);
                i += n;
                continue;
            }
            std::size_t j = i;
            if (text[j] == ' ') ++j;
            while (j < text.size() && text[j] != ' ' && atomic_length_at(text, j) == 0) ++j;
            emit(text.substr(i, j - i), false);
            i = j;
        }
    }

    struct PairHash {
        std::size_t operator()(const std::pair<TokenId, TokenId>& p) const noexcept {
            return std::hash<std::int64_t>{}((static_cast<std::int64_t>(p.first) << 32) ^ p.second);
        }
    };

    std::vector<Token> tokens_;
    std::map<std::string, TokenId> atomic_;
    std::unordered_map<std::pair<TokenId, TokenId>, TokenId, PairHash> merge_rank_;
    TokenId first_byte_ = 0;
};

}  // namespace mwp
