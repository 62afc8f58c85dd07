#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "unmixsr/optim.hpp"

namespace unmixsr {

// Versioned binary container for a named parameter set plus optimizer
// moments. Values are raw little-endian doubles, so a save/load cycle
// reproduces forward outputs bit-exactly.
struct Checkpoint {
    struct Record {
        std::string name;
        Shape shape;
        std::vector<double> data;
    };

    std::uint32_t version = 1;
    std::string kind;  // "unmix" or "sr"
    std::uint32_t epoch = 0;
    std::uint64_t config_hash = 0;
    std::map<std::string, std::string> meta;
    std::vector<Record> params;
    bool has_adam = false;
    std::int64_t adam_t = 0;
    std::vector<std::vector<double>> adam_m, adam_v;  // aligned with params
};

namespace detail {

inline void ck_write_u32(std::ofstream& f, std::uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void ck_write_i64(std::ofstream& f, std::int64_t v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void ck_write_u64(std::ofstream& f, std::uint64_t v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void ck_write_str(std::ofstream& f, const std::string& s) {
    ck_write_u32(f, static_cast<std::uint32_t>(s.size()));
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline void ck_write_doubles(std::ofstream& f, const std::vector<double>& v) {
    ck_write_u64(f, v.size());
    f.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
}

inline std::uint32_t ck_read_u32(std::ifstream& f) {
    std::uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!f) throw IoError("truncated checkpoint");
    return v;
}
inline std::int64_t ck_read_i64(std::ifstream& f) {
    std::int64_t v = 0;
    f.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!f) throw IoError("truncated checkpoint");
    return v;
}
inline std::uint64_t ck_read_u64(std::ifstream& f) {
    std::uint64_t v = 0;
    f.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!f) throw IoError("truncated checkpoint");
    return v;
}
inline std::string ck_read_str(std::ifstream& f) {
    std::uint32_t n = ck_read_u32(f);
    if (n > (1u << 20)) throw IoError("implausible string length in checkpoint");
    std::string s(n, '\0');
    f.read(s.data(), n);
    if (!f) throw IoError("truncated checkpoint");
    return s;
}
inline std::vector<double> ck_read_doubles(std::ifstream& f) {
    std::uint64_t n = ck_read_u64(f);
    if (n > (1ull << 32)) throw IoError("implausible payload length in checkpoint");
    std::vector<double> v(n);
    f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 8));
    if (!f) throw IoError("truncated checkpoint");
    return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write("UXCK", 4);
    detail::ck_write_u32(f, ck.version);
    detail::ck_write_str(f, ck.kind);
    detail::ck_write_u32(f, ck.epoch);
    detail::ck_write_u64(f, ck.config_hash);
    detail::ck_write_u32(f, static_cast<std::uint32_t>(ck.meta.size()));
    for (const auto& [k, v] : ck.meta) {
        detail::ck_write_str(f, k);
        detail::ck_write_str(f, v);
    }
    detail::ck_write_u32(f, static_cast<std::uint32_t>(ck.params.size()));
    for (const auto& rec : ck.params) {
        detail::ck_write_str(f, rec.name);
        detail::ck_write_u32(f, static_cast<std::uint32_t>(rec.shape.size()));
        for (int d : rec.shape) detail::ck_write_u32(f, static_cast<std::uint32_t>(d));
        detail::ck_write_doubles(f, rec.data);
    }
    f.put(ck.has_adam ? 1 : 0);
    if (ck.has_adam) {
        detail::ck_write_i64(f, ck.adam_t);
        detail::ck_write_u32(f, static_cast<std::uint32_t>(ck.adam_m.size()));
        for (const auto& m : ck.adam_m) detail::ck_write_doubles(f, m);
        for (const auto& v : ck.adam_v) detail::ck_write_doubles(f, v);
    }
    if (!f) throw IoError("short write: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for reading: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::string(magic, 4) != "UXCK") throw IoError("bad magic in checkpoint " + path);
    Checkpoint ck;
    ck.version = detail::ck_read_u32(f);
    if (ck.version != 1) throw IoError("unsupported checkpoint version in " + path);
    ck.kind = detail::ck_read_str(f);
    ck.epoch = detail::ck_read_u32(f);
    ck.config_hash = detail::ck_read_u64(f);
    std::uint32_t nmeta = detail::ck_read_u32(f);
    for (std::uint32_t i = 0; i < nmeta; ++i) {
        std::string k = detail::ck_read_str(f);
        ck.meta[k] = detail::ck_read_str(f);
    }
    std::uint32_t nparams = detail::ck_read_u32(f);
    ck.params.resize(nparams);
    for (auto& rec : ck.params) {
        rec.name = detail::ck_read_str(f);
        std::uint32_t ndim = detail::ck_read_u32(f);
        rec.shape.resize(ndim);
        for (auto& d : rec.shape) d = static_cast<int>(detail::ck_read_u32(f));
        rec.data = detail::ck_read_doubles(f);
        if (static_cast<std::int64_t>(rec.data.size()) != shape_numel(rec.shape))
            throw IoError("record payload does not match its shape in " + path);
    }
    int has_adam = f.get();
    if (has_adam == std::ifstream::traits_type::eof()) throw IoError("truncated checkpoint");
    ck.has_adam = has_adam != 0;
    if (ck.has_adam) {
        ck.adam_t = detail::ck_read_i64(f);
        std::uint32_t nadam = detail::ck_read_u32(f);
        if (nadam > nparams) throw IoError("optimizer state exceeds parameter count in " + path);
        ck.adam_m.resize(nadam);
        for (auto& m : ck.adam_m) m = detail::ck_read_doubles(f);
        ck.adam_v.resize(nadam);
        for (auto& v : ck.adam_v) v = detail::ck_read_doubles(f);
    }
    return ck;
}

// Snapshot of live parameters (and optionally optimizer state) in
// registration order.
inline Checkpoint make_checkpoint(const std::string& kind, std::uint32_t epoch,
                                  const std::vector<Parameter*>& params, const Adam* adam = nullptr,
                                  std::map<std::string, std::string> meta = {}) {
    Checkpoint ck;
    ck.kind = kind;
    ck.epoch = epoch;
    ck.meta = std::move(meta);
    for (const Parameter* p : params)
        ck.params.push_back({p->name, p->tensor.shape(), p->tensor.value()});
    std::string hash_src = kind;
    for (const auto& rec : ck.params) {
        hash_src += rec.name;
        for (int d : rec.shape) hash_src += "," + std::to_string(d);
    }
    ck.config_hash = fnv1a64(hash_src);
    if (adam) {
        ck.has_adam = true;
        ck.adam_t = adam->step_count();
        for (const auto& slot : adam->slots()) {
            ck.adam_m.push_back(slot.m);
            ck.adam_v.push_back(slot.v);
        }
    }
    return ck;
}

// Restores parameter values by name; every live parameter must be present
// with a matching shape.
inline void apply_checkpoint(const Checkpoint& ck, const std::vector<Parameter*>& params,
                             Adam* adam = nullptr) {
    std::map<std::string, const Checkpoint::Record*> by_name;
    for (const auto& rec : ck.params) by_name[rec.name] = &rec;
    for (Parameter* p : params) {
        auto it = by_name.find(p->name);
        if (it == by_name.end())
            throw ConfigError("checkpoint is missing parameter " + p->name);
        if (it->second->shape != p->tensor.shape())
            throw ConfigError("checkpoint shape mismatch for " + p->name + ": file has " +
                              shape_str(it->second->shape) + ", network has " +
                              shape_str(p->tensor.shape()));
        p->tensor.value() = it->second->data;
    }
    if (adam && ck.has_adam) {
        if (ck.adam_m.size() != params.size())
            throw ConfigError("checkpoint optimizer state does not match parameter count");
        std::vector<Adam::Slot> slots(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            slots[i].m = ck.adam_m[i];
            slots[i].v = ck.adam_v[i];
        }
        adam->restore(ck.adam_t, std::move(slots));
    }
}

}  // namespace unmixsr
