#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "xferlab/error.hpp"
#include "xferlab/io.hpp"
#include "xferlab/model.hpp"

namespace xferlab {

// Checkpoint container, all integers and doubles little-endian:
//
//   magic "XFLCKPT\0" | u32 version
//   u64 channels, height, width, num_classes, width_multiplier
//   u32 group_count, then per group: str name, u8 trainable, f64 learning_rate
//   u32 entry_count, then per entry: str name, u8 kind (0 param, 1 buffer),
//       u32 rank, u64 dims[rank], f64 values[prod(dims)]
//
// str = u32 length + bytes. Entries appear in model traversal order, so equal
// model states serialize to identical bytes.

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::string_view kCheckpointMagic{"XFLCKPT\0", 8};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian hosts");

class ByteWriter {
public:
    template <class T>
    void put(T v) {
        char buf[sizeof(T)];
        std::memcpy(buf, &v, sizeof(T));
        bytes_.append(buf, sizeof(T));
    }
    void put_str(std::string_view s) {
        put(static_cast<std::uint32_t>(s.size()));
        bytes_.append(s);
    }
    void put_raw(std::string_view s) { bytes_.append(s); }
    std::string take() { return std::move(bytes_); }

private:
    std::string bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

    template <class T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string get_str() {
        const auto n = get<std::uint32_t>();
        need(n);
        std::string s(bytes_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    std::string_view get_raw(std::size_t n) {
        need(n);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw DataError("checkpoint truncated");
    }
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(Model& model) {
    detail::ByteWriter w;
    w.put_raw(kCheckpointMagic);
    w.put(kCheckpointVersion);
    const auto& spec = model.spec();
    for (std::uint64_t v : {spec.input.channels, spec.input.height, spec.input.width, spec.num_classes, spec.width})
        w.put(v);
    w.put(static_cast<std::uint32_t>(model.group_count()));
    for (std::size_t i = 0; i < model.group_count(); ++i) {
        const auto& g = model.group(i);
        w.put_str(g.name);
        w.put(static_cast<std::uint8_t>(g.trainable ? 1 : 0));
        w.put(g.learning_rate);
    }
    const auto params = model.parameters();
    const auto buffers = model.buffers();
    w.put(static_cast<std::uint32_t>(params.size() + buffers.size()));
    for (const auto& p : params) {
        w.put_str(p.name);
        w.put(std::uint8_t{0});
        w.put(static_cast<std::uint32_t>(p.value.ndim()));
        for (auto d : p.value.shape()) w.put(static_cast<std::uint64_t>(d));
        for (double v : p.value.data()) w.put(v);
    }
    for (const auto& b : buffers) {
        w.put_str(b.name);
        w.put(std::uint8_t{1});
        w.put(std::uint32_t{1});
        w.put(static_cast<std::uint64_t>(b.values->size()));
        for (double v : *b.values) w.put(v);
    }
    return w.take();
}

/// Rebuilds a model from checkpoint bytes. The architecture is recreated
/// from the stored descriptor, then every named array is overwritten.
inline Model deserialize_checkpoint(std::string_view bytes) {
    detail::ByteReader r(bytes);
    if (r.get_raw(kCheckpointMagic.size()) != kCheckpointMagic) throw DataError("not a checkpoint file");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    }
    ModelSpec spec;
    spec.input.channels = r.get<std::uint64_t>();
    spec.input.height = r.get<std::uint64_t>();
    spec.input.width = r.get<std::uint64_t>();
    spec.num_classes = r.get<std::uint64_t>();
    spec.width = r.get<std::uint64_t>();
    Model model = build_micro_resnet(spec.input, spec.num_classes, spec.width, 0);

    const auto groups = r.get<std::uint32_t>();
    if (groups != model.group_count()) throw DataError("checkpoint group count mismatch");
    std::vector<double> lrs;
    for (std::uint32_t i = 0; i < groups; ++i) {
        const auto name = r.get_str();
        if (name != model.group(i).name) throw DataError("checkpoint group '" + name + "' out of order");
        const bool trainable = r.get<std::uint8_t>() != 0;
        lrs.push_back(r.get<double>());
        const std::string names[] = {name};
        model.set_trainable(names, trainable);
    }
    for (std::size_t i = 0; i < lrs.size(); ++i) model.group(i).learning_rate = lrs[i];

    std::map<std::string, Tensor> params;
    for (auto& p : model.parameters()) params.emplace(p.name, p.value);
    std::map<std::string, std::vector<double>*> buffers;
    for (auto& b : model.buffers()) buffers.emplace(b.name, b.values);

    const auto entries = r.get<std::uint32_t>();
    if (entries != params.size() + buffers.size()) throw DataError("checkpoint entry count mismatch");
    for (std::uint32_t e = 0; e < entries; ++e) {
        const auto name = r.get_str();
        const auto kind = r.get<std::uint8_t>();
        const auto rank = r.get<std::uint32_t>();
        Shape shape;
        for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.get<std::uint64_t>());
        std::span<double> dst;
        if (kind == 0) {
            auto it = params.find(name);
            if (it == params.end()) throw DataError("checkpoint has unknown parameter '" + name + "'");
            if (it->second.shape() != shape) {
                throw DataError("checkpoint parameter '" + name + "' has shape " + shape_str(shape) +
                                ", model expects " + shape_str(it->second.shape()));
            }
            dst = it->second.data();
        } else {
            auto it = buffers.find(name);
            if (it == buffers.end() || rank != 1 || shape[0] != it->second->size()) {
                throw DataError("checkpoint has unexpected buffer '" + name + "'");
            }
            dst = *it->second;
        }
        for (auto& v : dst) v = r.get<double>();
    }
    if (!r.done()) throw DataError("trailing bytes after checkpoint");
    return model;
}

inline void save_checkpoint(Model& model, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_checkpoint(model));
}

inline Model load_checkpoint(const std::filesystem::path& path) {
    return deserialize_checkpoint(read_file(path));
}

}  // namespace xferlab
