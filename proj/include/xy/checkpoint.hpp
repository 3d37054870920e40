#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "xy/autodiff.hpp"
#include "xy/common.hpp"

namespace xy {

// Checkpoint layout (little-endian throughout):
//   "XYCK" | u32 version | u32 count |
//   per entry: u16 name_len | name | u8 rank | u32 dim[rank] | f64 data[numel]
inline constexpr uint32_t kCheckpointVersion = 1;

namespace io {

template <typename T>
void write_le(std::ostream& os, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    os.write(buf, sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    char buf[sizeof(T)];
    is.read(buf, sizeof(T));
    XY_CHECK(is.good(), "unexpected end of stream");
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

}  // namespace io

struct NamedTensor {
    std::string name;
    ad::Tensor tensor;
};

inline void write_checkpoint(std::ostream& os, const std::vector<NamedTensor>& entries) {
    os.write("XYCK", 4);
    io::write_le<uint32_t>(os, kCheckpointVersion);
    io::write_le<uint32_t>(os, static_cast<uint32_t>(entries.size()));
    for (const auto& e : entries) {
        XY_CHECK(e.name.size() <= 0xffff, "tensor name too long");
        io::write_le<uint16_t>(os, static_cast<uint16_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        io::write_le<uint8_t>(os, static_cast<uint8_t>(e.tensor.rank()));
        for (int d : e.tensor.shape()) io::write_le<uint32_t>(os, static_cast<uint32_t>(d));
        for (real v : e.tensor.v()) io::write_le<double>(os, static_cast<double>(v));
    }
    XY_CHECK(os.good(), "checkpoint write failed");
}

inline std::vector<NamedTensor> read_checkpoint(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    XY_CHECK(is.good() && std::memcmp(magic, "XYCK", 4) == 0, "bad checkpoint magic");
    const uint32_t version = io::read_le<uint32_t>(is);
    XY_CHECK(version == kCheckpointVersion, "unsupported checkpoint version");
    const uint32_t count = io::read_le<uint32_t>(is);
    std::vector<NamedTensor> entries;
    entries.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t name_len = io::read_le<uint16_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        XY_CHECK(is.good(), "truncated checkpoint entry name");
        const uint8_t rank = io::read_le<uint8_t>(is);
        XY_CHECK(rank >= 1 && rank <= 4, "bad tensor rank in checkpoint");
        std::vector<int> shape(rank);
        for (auto& d : shape) {
            const uint32_t dim = io::read_le<uint32_t>(is);
            XY_CHECK(dim >= 1 && dim <= (1u << 28), "bad tensor dim in checkpoint");
            d = static_cast<int>(dim);
        }
        ad::Tensor t = ad::Tensor::zeros(shape);
        for (auto& v : t.v()) v = static_cast<real>(io::read_le<double>(is));
        entries.push_back({std::move(name), std::move(t)});
    }
    return entries;
}

inline void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& entries) {
    std::ofstream os(path, std::ios::binary);
    XY_CHECK(os.is_open(), "cannot open for write: " + path);
    write_checkpoint(os, entries);
}

inline std::vector<NamedTensor> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    XY_CHECK(is.is_open(), "cannot open for read: " + path);
    return read_checkpoint(is);
}

// loads by name into an existing parameter set; every name must match a
// parameter of identical shape, and every parameter must be covered
inline void restore_parameters(std::vector<ad::Parameter*>& params, const std::vector<NamedTensor>& entries) {
    std::vector<bool> covered(params.size(), false);
    for (const auto& e : entries) {
        bool found = false;
        for (size_t i = 0; i < params.size(); ++i) {
            if (params[i]->name != e.name) continue;
            XY_CHECK(params[i]->tensor.shape() == e.tensor.shape(),
                     "checkpoint shape mismatch for " + e.name);
            params[i]->tensor.v() = e.tensor.v();
            covered[i] = true;
            found = true;
            break;
        }
        XY_CHECK(found, "checkpoint has unknown tensor: " + e.name);
    }
    for (size_t i = 0; i < params.size(); ++i)
        XY_CHECK(covered[i], "checkpoint missing tensor: " + params[i]->name);
}

}  // namespace xy
