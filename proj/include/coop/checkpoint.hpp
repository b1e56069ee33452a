#pragma once

// Binary checkpoint format, digest-verified.
//
//   magic "COOPCKP1" | u32 version | config block | provenance block |
//   weights block | 32-byte digest
//
// config block:  6 x i32 (n_layers, d_model, n_heads, vocab, context, freeze)
// provenance:    u8 has_base + 32-byte base digest, i64 seed, i64 train_steps,
//                string domain_label, string method, f64 param_ratio
// weights block: u32 array count, then per array: string name, u64 count,
//                count x f64, little-endian, in canonical layout order
//
// The digest is SHA-256 over the config and weights bytes exactly as stored —
// provenance is excluded, so retraining for zero steps re-labels a checkpoint
// without changing its identity. Loading re-derives the digest and rejects any
// mismatch, truncation, unknown magic or version, or array layout that
// disagrees with the config.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "common.hpp"
#include "digest.hpp"
#include "model.hpp"

namespace coop {

struct provenance {
    std::string base_digest; // 64-char lowercase hex, or empty
    int64_t seed = 0;
    int64_t train_steps = 0;
    std::string domain_label;
    std::string method;       // e.g. "specialist", "monolithic", "weight_average"
    double param_ratio = 0.0; // vs a reference model, when meaningful
};

struct checkpoint {
    model_config cfg;
    provenance prov;
    std::vector<std::pair<std::string, std::vector<double>>> weights; // canonical order
    std::string digest; // lowercase hex; filled by save/load/refresh_digest
};

namespace ckpt_detail {

constexpr char magic[8] = {'C', 'O', 'O', 'P', 'C', 'K', 'P', '1'};
constexpr uint32_t version = 1;

inline void put_bytes(std::string& buf, const void* p, size_t n) {
    buf.append(reinterpret_cast<const char*>(p), n);
}
template <class T>
void put(std::string& buf, T v) {
    put_bytes(buf, &v, sizeof(T));
}
inline void put_str(std::string& buf, const std::string& s) {
    put<uint32_t>(buf, uint32_t(s.size()));
    put_bytes(buf, s.data(), s.size());
}

struct reader {
    const uint8_t* p;
    size_t n;
    size_t off = 0;

    void need(size_t k) const {
        if (off + k > n)
            throw validation_error("checkpoint: unexpected end of file (truncated?)");
    }
    template <class T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, p + off, sizeof(T));
        off += sizeof(T);
        return v;
    }
    std::string get_str() {
        const uint32_t len = get<uint32_t>();
        need(len);
        std::string s(reinterpret_cast<const char*>(p + off), len);
        off += len;
        return s;
    }
    const uint8_t* raw(size_t k) {
        need(k);
        const uint8_t* r = p + off;
        off += k;
        return r;
    }
};

inline std::string hex_of(const uint8_t* raw32) {
    digest256 d;
    std::memcpy(d.data(), raw32, 32);
    return hex(d);
}

inline void unhex32(const std::string& hexstr, uint8_t* out32) {
    if (hexstr.size() != 64)
        throw validation_error(cat("checkpoint: digest must be 64 hex chars, got ",
                                   hexstr.size()));
    auto nib = [&](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return 10 + c - 'a';
        throw validation_error(cat("checkpoint: bad hex character '", c, "' in digest"));
    };
    for (int i = 0; i < 32; ++i)
        out32[i] = uint8_t(nib(hexstr[2 * i]) << 4 | nib(hexstr[2 * i + 1]));
}

} // namespace ckpt_detail

// digest over the config + weights bytes exactly as serialize_checkpoint
// stores them; provenance is excluded so re-labelling (e.g. zero-step
// training) keeps a checkpoint's identity
inline std::string compute_digest(const checkpoint& ck) {
    using namespace ckpt_detail;
    std::string hashed;
    for (int v : {ck.cfg.n_layers, ck.cfg.d_model, ck.cfg.n_heads, ck.cfg.vocab,
                  ck.cfg.context, ck.cfg.freeze_layers})
        put<int32_t>(hashed, v);
    const auto layout = array_layout(ck.cfg);
    if (ck.weights.size() != layout.size())
        throw validation_error(cat("checkpoint: ", ck.weights.size(),
                                   " weight arrays, config requires ", layout.size()));
    put<uint32_t>(hashed, uint32_t(ck.weights.size()));
    for (size_t i = 0; i < layout.size(); ++i) {
        const auto& [name, data] = ck.weights[i];
        put_str(hashed, name);
        put<uint64_t>(hashed, data.size());
        put_bytes(hashed, data.data(), data.size() * sizeof(double));
    }
    return sha256_hex(hashed.data(), hashed.size());
}

inline std::string serialize_checkpoint(checkpoint& ck) {
    using namespace ckpt_detail;
    ck.cfg.validate();
    std::string buf;
    put_bytes(buf, magic, sizeof(magic));
    put<uint32_t>(buf, version);

    const size_t config_begin = buf.size();
    for (int v : {ck.cfg.n_layers, ck.cfg.d_model, ck.cfg.n_heads, ck.cfg.vocab,
                  ck.cfg.context, ck.cfg.freeze_layers})
        put<int32_t>(buf, v);
    const size_t config_end = buf.size();

    uint8_t base_raw[32] = {0};
    const bool has_base = !ck.prov.base_digest.empty();
    if (has_base) unhex32(ck.prov.base_digest, base_raw);
    put<uint8_t>(buf, has_base ? 1 : 0);
    put_bytes(buf, base_raw, 32);
    put<int64_t>(buf, ck.prov.seed);
    put<int64_t>(buf, ck.prov.train_steps);
    put_str(buf, ck.prov.domain_label);
    put_str(buf, ck.prov.method);
    put<double>(buf, ck.prov.param_ratio);

    const size_t weights_begin = buf.size();
    const auto layout = array_layout(ck.cfg);
    if (ck.weights.size() != layout.size())
        throw validation_error(cat("checkpoint: ", ck.weights.size(),
                                   " weight arrays, config requires ", layout.size()));
    put<uint32_t>(buf, uint32_t(ck.weights.size()));
    for (size_t i = 0; i < layout.size(); ++i) {
        const auto& [name, data] = ck.weights[i];
        size_t want = 1;
        for (int d : layout[i].shape) want *= size_t(d);
        if (name != layout[i].name || data.size() != want)
            throw validation_error(cat("checkpoint: weight array ", i, " '", name, "' (",
                                       data.size(), " values) does not match layout '",
                                       layout[i].name, "' (", want, " values)"));
        put_str(buf, name);
        put<uint64_t>(buf, data.size());
        put_bytes(buf, data.data(), data.size() * sizeof(double));
    }
    const size_t weights_end = buf.size();

    // digest covers config + weights bytes exactly as stored
    std::string hashed;
    hashed.append(buf, config_begin, config_end - config_begin);
    hashed.append(buf, weights_begin, weights_end - weights_begin);
    const digest256 d = sha256(hashed.data(), hashed.size());
    ck.digest = hex(d);
    put_bytes(buf, d.data(), d.size());
    return buf;
}

inline void save_checkpoint(checkpoint& ck, const std::string& path) {
    const std::string buf = serialize_checkpoint(ck);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw validation_error(cat("checkpoint: cannot open '", path, "' for writing"));
    f.write(buf.data(), std::streamsize(buf.size()));
    if (!f) throw validation_error(cat("checkpoint: write failed for '", path, "'"));
}

inline checkpoint parse_checkpoint(const uint8_t* data, size_t len, const std::string& what) {
    using namespace ckpt_detail;
    reader rd{data, len};

    const uint8_t* m = rd.raw(sizeof(magic));
    if (std::memcmp(m, magic, sizeof(magic)) != 0)
        throw validation_error(cat("checkpoint: '", what, "' is not a checkpoint file (bad magic)"));
    const uint32_t ver = rd.get<uint32_t>();
    if (ver != version)
        throw validation_error(cat("checkpoint: '", what, "' has format version ", ver,
                                   ", this build reads version ", version));

    checkpoint ck;
    const size_t config_begin = rd.off;
    ck.cfg.n_layers = rd.get<int32_t>();
    ck.cfg.d_model = rd.get<int32_t>();
    ck.cfg.n_heads = rd.get<int32_t>();
    ck.cfg.vocab = rd.get<int32_t>();
    ck.cfg.context = rd.get<int32_t>();
    ck.cfg.freeze_layers = rd.get<int32_t>();
    const size_t config_end = rd.off;
    ck.cfg.validate();

    const uint8_t has_base = rd.get<uint8_t>();
    const uint8_t* base_raw = rd.raw(32);
    if (has_base) ck.prov.base_digest = hex_of(base_raw);
    ck.prov.seed = rd.get<int64_t>();
    ck.prov.train_steps = rd.get<int64_t>();
    ck.prov.domain_label = rd.get_str();
    ck.prov.method = rd.get_str();
    ck.prov.param_ratio = rd.get<double>();

    const size_t weights_begin = rd.off;
    const auto layout = array_layout(ck.cfg);
    const uint32_t count = rd.get<uint32_t>();
    if (count != layout.size())
        throw validation_error(cat("checkpoint: '", what, "' stores ", count,
                                   " weight arrays, config requires ", layout.size()));
    ck.weights.reserve(count);
    for (size_t i = 0; i < count; ++i) {
        std::string name = rd.get_str();
        const uint64_t n = rd.get<uint64_t>();
        size_t want = 1;
        for (int d : layout[i].shape) want *= size_t(d);
        if (name != layout[i].name || n != want)
            throw validation_error(cat("checkpoint: '", what, "' array ", i, " '", name,
                                       "' (", n, " values) does not match layout '",
                                       layout[i].name, "' (", want, " values)"));
        const uint8_t* raw = rd.raw(size_t(n) * sizeof(double));
        std::vector<double> vals(n);
        std::memcpy(vals.data(), raw, size_t(n) * sizeof(double));
        ck.weights.push_back({std::move(name), std::move(vals)});
    }
    const size_t weights_end = rd.off;

    const uint8_t* stored = rd.raw(32);
    std::string hashed;
    hashed.append(reinterpret_cast<const char*>(data + config_begin), config_end - config_begin);
    hashed.append(reinterpret_cast<const char*>(data + weights_begin), weights_end - weights_begin);
    const std::string recomputed = sha256_hex(hashed.data(), hashed.size());
    if (recomputed != hex_of(stored))
        throw validation_error(cat("checkpoint: '", what,
                                   "' digest mismatch (file corrupt or tampered)"));
    ck.digest = recomputed;
    return ck;
}

inline checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw validation_error(cat("checkpoint: cannot open '", path, "'"));
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_checkpoint(reinterpret_cast<const uint8_t*>(buf.data()), buf.size(), path);
}

// model <-> checkpoint

inline checkpoint to_checkpoint(const model& m, provenance prov = {}) {
    checkpoint ck;
    ck.cfg = m.cfg;
    ck.prov = std::move(prov);
    ck.weights.reserve(m.params.size());
    for (const auto& [name, t] : m.params) ck.weights.push_back({name, t.data()});
    ck.digest = compute_digest(ck);
    return ck;
}

inline model to_model(const checkpoint& ck) {
    ck.cfg.validate();
    const auto layout = array_layout(ck.cfg);
    if (ck.weights.size() != layout.size())
        throw validation_error(cat("checkpoint: ", ck.weights.size(),
                                   " weight arrays, config requires ", layout.size()));
    model m;
    m.cfg = ck.cfg;
    m.params.reserve(layout.size());
    for (size_t i = 0; i < layout.size(); ++i) {
        if (ck.weights[i].first != layout[i].name)
            throw validation_error(cat("checkpoint: array '", ck.weights[i].first,
                                       "' out of order, expected '", layout[i].name, "'"));
        m.params.push_back({layout[i].name, tensor(layout[i].shape, ck.weights[i].second)});
    }
    return m;
}

} // namespace coop
