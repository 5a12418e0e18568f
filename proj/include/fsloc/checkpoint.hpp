#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "fsloc/model.hpp"
#include "fsloc/tensor.hpp"

namespace fsloc {

// Checkpoint layout (all integers little-endian uint32, values raw IEEE-754
// little-endian in declaration order):
//   magic "FSLC" | version=1 | scalar_size (4 or 8) | entry count
//   per entry: name_len | name bytes | ndim | dims... | values
//
// Round-trips bit-exactly: values are written and read as raw bytes.

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw IoError("truncated checkpoint");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline bool host_little_endian() {
    const std::uint32_t probe = 1;
    return *reinterpret_cast<const unsigned char*>(&probe) == 1;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const std::vector<NamedParam<T>>& params) {
    if (!detail::host_little_endian())
        throw IoError("checkpoint format is little-endian; big-endian hosts unsupported");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(detail::msg("cannot write checkpoint ", path));
    out.write("FSLC", 4);
    detail::write_u32(out, 1);
    detail::write_u32(out, static_cast<std::uint32_t>(sizeof(T)));
    detail::write_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        detail::write_u32(out, static_cast<std::uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        detail::write_u32(out, static_cast<std::uint32_t>(p.tensor.ndim()));
        for (int i = 0; i < p.tensor.ndim(); ++i)
            detail::write_u32(out, static_cast<std::uint32_t>(p.tensor.dim(i)));
        out.write(reinterpret_cast<const char*>(p.tensor.data()),
                  static_cast<std::streamsize>(p.tensor.numel() * sizeof(T)));
    }
    if (!out) throw IoError(detail::msg("short write to checkpoint ", path));
}

// Loads values into an existing parameter list; any architecture mismatch
// produces an explicit name/shape diff.
template <typename T>
void load_checkpoint(const std::string& path, const std::vector<NamedParam<T>>& params) {
    if (!detail::host_little_endian())
        throw IoError("checkpoint format is little-endian; big-endian hosts unsupported");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(detail::msg("cannot open checkpoint ", path));
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "FSLC")
        throw IoError(detail::msg(path, ": not a checkpoint file"));
    const auto version = detail::read_u32(in);
    if (version != 1) throw IoError(detail::msg(path, ": unknown version ", version));
    const auto scalar = detail::read_u32(in);
    if (scalar != sizeof(T))
        throw IoError(detail::msg(path, ": stores ", scalar * 8, "-bit values, runtime wants ",
                                  sizeof(T) * 8, "-bit"));
    const auto count = detail::read_u32(in);
    if (count != params.size())
        throw IoError(detail::msg(path, ": holds ", count, " tensors, architecture expects ",
                                  params.size()));
    for (const auto& p : params) {
        const auto name_len = detail::read_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (name != p.name)
            throw IoError(detail::msg(path, ": tensor '", name, "' where architecture expects '",
                                      p.name, "'"));
        const auto ndim = detail::read_u32(in);
        Shape shape(ndim);
        for (auto& d : shape) d = static_cast<int>(detail::read_u32(in));
        if (!(shape == p.tensor.shape()))
            throw IoError(detail::msg(path, ": tensor '", name, "' has shape ",
                                      shape_str(shape), ", architecture expects ",
                                      shape_str(p.tensor.shape())));
        Tensor<T> target = p.tensor;
        in.read(reinterpret_cast<char*>(target.data_mut()),
                static_cast<std::streamsize>(target.numel() * sizeof(T)));
        if (!in) throw IoError(detail::msg(path, ": truncated values for '", name, "'"));
    }
}

}  // namespace fsloc
