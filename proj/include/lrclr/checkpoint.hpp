#pragma once

// Binary checkpoint. Layout, all integers little-endian:
//
//   "LRCK"  u32 version  u32 entry_count
//   entry_count x { u32 name_len, name bytes, u32 rank, rank x u64 dim,
//                   prod(dims) x f64 value }
//   u64 step  u64 seed  u32 config_len  config text (key = value lines)

#include <bit>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "lrclr/config.hpp"
#include "lrclr/io.hpp"
#include "lrclr/model.hpp"

namespace lrclr {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> values;
    bool operator==(const CheckpointEntry&) const = default;
};

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::vector<CheckpointEntry> entries;
    std::uint64_t step = 0;
    std::uint64_t seed = 0;
    std::string config_text;
    bool operator==(const Checkpoint&) const = default;
};

namespace detail {

class ByteWriter {
  public:
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
    void bytes(std::string_view s) { out_.append(s); }
    std::string take() { return std::move(out_); }

  private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    std::string out_;
};

class ByteReader {
  public:
    explicit ByteReader(std::string_view in) : in_(in) {}
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    double f64() { return std::bit_cast<double>(get(8)); }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s(in_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    bool at_end() const { return pos_ == in_.size(); }

  private:
    void need(std::size_t n) const {
        if (in_.size() - pos_ < n) throw IncompatibleCheckpoint("checkpoint is truncated");
    }
    std::uint64_t get(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    std::string_view in_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
    detail::ByteWriter w;
    w.bytes("LRCK");
    w.u32(ck.version);
    w.u32(static_cast<std::uint32_t>(ck.entries.size()));
    for (const auto& e : ck.entries) {
        std::size_t n = 1;
        for (auto d : e.shape) n *= d;
        if (n != e.values.size()) throw ContractError("checkpoint entry " + e.name + " shape/value count mismatch");
        w.u32(static_cast<std::uint32_t>(e.name.size()));
        w.bytes(e.name);
        w.u32(static_cast<std::uint32_t>(e.shape.size()));
        for (auto d : e.shape) w.u64(d);
        for (double v : e.values) w.f64(v);
    }
    w.u64(ck.step);
    w.u64(ck.seed);
    w.u32(static_cast<std::uint32_t>(ck.config_text.size()));
    w.bytes(ck.config_text);
    return w.take();
}

inline Checkpoint parse_checkpoint(std::string_view bytes) {
    detail::ByteReader r(bytes);
    if (r.bytes(4) != "LRCK") throw IncompatibleCheckpoint("not a checkpoint (bad magic)");
    Checkpoint ck;
    ck.version = r.u32();
    if (ck.version != kCheckpointVersion) {
        throw IncompatibleCheckpoint("checkpoint version " + std::to_string(ck.version) + ", expected " +
                                     std::to_string(kCheckpointVersion));
    }
    const std::uint32_t count = r.u32();
    std::set<std::string> seen;
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        e.name = r.bytes(r.u32());
        if (!seen.insert(e.name).second) throw IncompatibleCheckpoint("duplicate checkpoint entry " + e.name);
        const std::uint32_t rank = r.u32();
        std::size_t n = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            e.shape.push_back(static_cast<std::size_t>(r.u64()));
            n *= e.shape.back();
        }
        if (n > bytes.size() / 8) throw IncompatibleCheckpoint("checkpoint entry " + e.name + " is truncated");
        e.values.resize(n);
        for (auto& v : e.values) v = r.f64();
        ck.entries.push_back(std::move(e));
    }
    ck.step = r.u64();
    ck.seed = r.u64();
    ck.config_text = r.bytes(r.u32());
    if (!r.at_end()) throw IncompatibleCheckpoint("trailing bytes after checkpoint");
    return ck;
}

inline Checkpoint make_checkpoint(LrclrModel& model, const RunConfig& cfg, std::uint64_t step) {
    Checkpoint ck;
    ck.step = step;
    ck.seed = cfg.seed;
    ck.config_text = config_to_text(cfg);
    for (auto& [name, p] : model.named_parameters()) {
        auto data = p.data();
        ck.entries.push_back({name, p.shape(), {data.begin(), data.end()}});
    }
    return ck;
}

// Copies entry values into the model. Every parameter must appear exactly
// once with a matching shape.
inline void load_parameters(LrclrModel& model, const Checkpoint& ck) {
    std::map<std::string, const CheckpointEntry*> by_name;
    for (const auto& e : ck.entries) by_name[e.name] = &e;
    std::size_t used = 0;
    for (auto& [name, p] : model.named_parameters()) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw IncompatibleCheckpoint("checkpoint lacks parameter " + name);
        if (it->second->shape != p.shape()) throw IncompatibleCheckpoint("shape mismatch for parameter " + name);
        auto dst = p.mutable_data();
        std::copy(it->second->values.begin(), it->second->values.end(), dst.begin());
        ++used;
    }
    if (used != ck.entries.size()) throw IncompatibleCheckpoint("checkpoint has entries the model does not know");
}

struct LoadedModel {
    RunConfig config;
    LrclrModel model;
    std::uint64_t step = 0;
};

// Rebuilds the model described by the checkpoint's config snapshot.
inline LoadedModel restore(const Checkpoint& ck) {
    LoadedModel out;
    try {
        out.config = parse_config(ck.config_text);
    } catch (const ConfigError& e) {
        throw IncompatibleCheckpoint(std::string("checkpoint config snapshot: ") + e.what());
    }
    out.model = LrclrModel(out.config);
    load_parameters(out.model, ck);
    out.step = ck.step;
    return out;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    write_file_atomic(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

}  // namespace lrclr
