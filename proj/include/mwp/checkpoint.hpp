#pragma once

// Checkpoint container:
//   "MWPCKPT1"
//   u32 header length, header bytes ("key=value\n" lines, sorted by key)
//   u32 tensor count, then per tensor:
//     u32 name length, name bytes, u32 rows, u32 cols, rows*cols float32
// All integers and floats little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "mwp/model.hpp"

namespace mwp {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Checkpoint {
    TransformerConfig config;
    std::map<std::string, std::string> meta;
    std::map<std::string, Matrix<float>> tensors;

    /// Tensors whose name starts with `prefix`, prefix stripped.
    ParamSet<float> section(const std::string& prefix) const {
        ParamSet<float> out;
        for (const auto& [name, m] : tensors)
            if (name.rfind(prefix, 0) == 0) out.emplace(name.substr(prefix.size()), m);
        return out;
    }

    void put_section(const std::string& prefix, const ParamSet<float>& set) {
        for (const auto& [name, m] : set) tensors[prefix + name] = m;
    }

    ParamSet<float> params() const { return section("param/"); }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

inline std::uint32_t get_u32(std::string_view in, std::size_t& pos) {
    if (pos + 4 > in.size()) throw CheckpointError("truncated checkpoint");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    pos += 4;
    return v;
}

inline std::map<std::string, std::string> config_fields(const TransformerConfig& c) {
    std::ostringstream dropout;
    dropout.precision(17);
    dropout << c.dropout;
    return {{"config.num_layers", std::to_string(c.num_layers)},
            {"config.num_heads", std::to_string(c.num_heads)},
            {"config.model_depth", std::to_string(c.model_depth)},
            {"config.ff_depth", std::to_string(c.ff_depth)},
            {"config.dropout", dropout.str()},
            {"config.max_seq_len", std::to_string(c.max_seq_len)},
            {"config.vocab_size", std::to_string(c.vocab_size)}};
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
    std::map<std::string, std::string> header = ck.meta;
    for (auto& [k, v] : detail::config_fields(ck.config)) header[k] = v;
    std::string head;
    for (const auto& [k, v] : header) {
        if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
            throw CheckpointError("header key/value may not contain '=' or newline: " + k);
        head += k + "=" + v + "\n";
    }
    std::string out = "MWPCKPT1";
    detail::put_u32(out, static_cast<std::uint32_t>(head.size()));
    out += head;
    detail::put_u32(out, static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& [name, m] : ck.tensors) {
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        detail::put_u32(out, static_cast<std::uint32_t>(m.rows));
        detail::put_u32(out, static_cast<std::uint32_t>(m.cols));
        for (float x : m.data) detail::put_u32(out, std::bit_cast<std::uint32_t>(x));
    }
    return out;
}

/// Parses and validates: every "param/" tensor must match the config layout.
inline Checkpoint deserialize_checkpoint(std::string_view in) {
    if (in.substr(0, 8) != "MWPCKPT1") throw CheckpointError("not a checkpoint (bad magic)");
    std::size_t pos = 8;
    const std::uint32_t head_len = detail::get_u32(in, pos);
    if (pos + head_len > in.size()) throw CheckpointError("truncated header");
    std::istringstream head{std::string(in.substr(pos, head_len))};
    pos += head_len;
    Checkpoint ck;
    std::string line;
    std::map<std::string, std::string> header;
    while (std::getline(head, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw CheckpointError("bad header line: " + line);
        header[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto take = [&](const std::string& key) -> std::string {
        auto it = header.find(key);
        if (it == header.end()) throw CheckpointError("missing header field " + key);
        std::string v = it->second;
        header.erase(it);
        return v;
    };
    ck.config.num_layers = std::stoul(take("config.num_layers"));
    ck.config.num_heads = std::stoul(take("config.num_heads"));
    ck.config.model_depth = std::stoul(take("config.model_depth"));
    ck.config.ff_depth = std::stoul(take("config.ff_depth"));
    ck.config.dropout = std::stod(take("config.dropout"));
    ck.config.max_seq_len = std::stoul(take("config.max_seq_len"));
    ck.config.vocab_size = std::stoul(take("config.vocab_size"));
    ck.meta = std::move(header);

    const std::uint32_t count = detail::get_u32(in, pos);
    for (std::uint32_t t = 0; t < count; ++t) {
        const std::uint32_t name_len = detail::get_u32(in, pos);
        if (pos + name_len > in.size()) throw CheckpointError("truncated tensor name");
        std::string name(in.substr(pos, name_len));
        pos += name_len;
        const std::uint32_t rows = detail::get_u32(in, pos);
        const std::uint32_t cols = detail::get_u32(in, pos);
        if (static_cast<std::uint64_t>(rows) * cols * 4 > in.size() - pos) throw CheckpointError("truncated tensor " + name);
        Matrix<float> m(rows, cols);
        for (auto& x : m.data) x = std::bit_cast<float>(detail::get_u32(in, pos));
        ck.tensors.emplace(std::move(name), std::move(m));
    }
    if (pos != in.size()) throw CheckpointError("trailing bytes after tensors");
    try {
        ck.config.validate();
        check_params(ck.params(), ck.config);
    } catch (const std::invalid_argument& e) {
        throw CheckpointError(std::string("checkpoint does not match its config: ") + e.what());
    }
    return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    const std::string bytes = serialize_checkpoint(ck);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot write " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot read " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return deserialize_checkpoint(ss.str());
}

}  // namespace mwp
