#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mindkit/hash.hpp"
#include "mindkit/tensor.hpp"

#include "json.hpp"

namespace mindkit {

// "TNSR" container: magic, u8 version=1, u8 rank, little-endian u32 extents,
// little-endian f32 payload. All persisted weights and features use it.

namespace detail {

template <typename T>
void write_le(std::ostream& out, T v) {
    unsigned char buf[sizeof(T)];
    for (size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((static_cast<uint64_t>(v) >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
    unsigned char buf[sizeof(T)];
    in.read(reinterpret_cast<char*>(buf), sizeof(T));
    uint64_t v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
    return static_cast<T>(v);
}

}  // namespace detail

inline void write_tnsr(const std::string& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IOFailure("cannot write " + path);
    out.write("TNSR", 4);
    out.put(1);
    out.put(static_cast<char>(t.rank()));
    for (int e : t.shape) detail::write_le<uint32_t>(out, static_cast<uint32_t>(e));
    for (float v : t.data) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        detail::write_le<uint32_t>(out, bits);
    }
    if (!out) throw IOFailure("short write: " + path);
}

inline Tensor read_tnsr(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOFailure("cannot read " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "TNSR") throw IOFailure("bad magic in " + path);
    int version = in.get();
    if (version != 1) throw IOFailure("unsupported TNSR version in " + path);
    int rank = in.get();
    if (rank < 1 || rank > 8) throw IOFailure("bad rank in " + path);
    Shape shape(static_cast<size_t>(rank));
    for (int i = 0; i < rank; ++i) shape[static_cast<size_t>(i)] = static_cast<int>(detail::read_le<uint32_t>(in));
    size_t n = shape_numel(shape);
    std::vector<float> data(n);
    for (size_t i = 0; i < n; ++i) {
        uint32_t bits = detail::read_le<uint32_t>(in);
        std::memcpy(&data[i], &bits, 4);
    }
    if (!in) throw IOFailure("truncated TNSR: " + path);
    return Tensor(std::move(shape), std::move(data));
}

// A named bundle of tensors: directory of .tnsr files plus a manifest naming
// each tensor and carrying a content hash of the whole set.
struct TensorBundle {
    std::map<std::string, Tensor> tensors;

    Tensor& operator[](const std::string& name) { return tensors[name]; }
    const Tensor& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw IOFailure("bundle is missing tensor: " + name);
        return it->second;
    }
    bool contains(const std::string& name) const { return tensors.count(name) > 0; }

    std::string content_hash() const {
        Hasher h;
        for (const auto& [name, t] : tensors) {
            h.update(name);
            for (int e : t.shape) h.update(static_cast<uint64_t>(e));
            h.update(t.data);
        }
        return h.hex();
    }

    void save(const std::string& dir) const {
        namespace fs = std::filesystem;
        fs::create_directories(dir);
        nlohmann::json meta;
        meta["format"] = "tnsr-bundle";
        meta["hash"] = content_hash();
        auto& names = meta["tensors"] = nlohmann::json::array();
        for (const auto& [name, t] : tensors) {
            write_tnsr(dir + "/" + name + ".tnsr", t);
            names.push_back(name);
        }
        std::ofstream out(dir + "/bundle.json");
        if (!out) throw IOFailure("cannot write bundle manifest in " + dir);
        out << meta.dump(2) << "\n";
    }

    static TensorBundle load(const std::string& dir) {
        std::ifstream in(dir + "/bundle.json");
        if (!in) throw IOFailure("missing bundle manifest: " + dir + "/bundle.json");
        nlohmann::json meta = nlohmann::json::parse(in);
        TensorBundle b;
        for (const auto& name : meta.at("tensors")) {
            std::string n = name.get<std::string>();
            b.tensors.emplace(n, read_tnsr(dir + "/" + n + ".tnsr"));
        }
        if (meta.contains("hash") && meta["hash"].get<std::string>() != b.content_hash())
            throw IOFailure("bundle hash mismatch in " + dir);
        return b;
    }
};

}  // namespace mindkit
