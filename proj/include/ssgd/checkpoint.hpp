#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "ssgd/errors.hpp"
#include "ssgd/params.hpp"

namespace ssgd {

namespace detail {

// All multi-byte fields are little-endian on disk regardless of host order.
inline std::uint64_t to_le64(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        std::uint64_t r = 0;
        for (int i = 0; i < 8; ++i) r = (r << 8) | ((v >> (8 * i)) & 0xFF);
        return r;
    }
    return v;
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
    const std::uint64_t le = to_le64(v);
    os.write(reinterpret_cast<const char*>(&le), 8);
}

inline void write_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64(os, bits);
}

inline std::uint64_t read_u64(std::istream& is, const char* field) {
    std::uint64_t le = 0;
    is.read(reinterpret_cast<char*>(&le), 8);
    if (!is) throw FormatError(std::string("checkpoint: truncated while reading ") + field);
    return to_le64(le);
}

inline double read_f64(std::istream& is, const char* field) {
    const std::uint64_t bits = read_u64(is, field);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

} // namespace detail

/// Writes a ParamSet as a flat binary container: u64 group count, then per
/// group u64 name length, the UTF-8 name, u8 kind, u64 rank, u64 extents,
/// and the raw IEEE-754 values. Everything multi-byte is little-endian.
inline void save_checkpoint(const std::string& path, const ParamSet& params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("checkpoint: cannot open '" + path + "' for writing");
    detail::write_u64(os, params.group_count());
    for (const ParamGroup& g : params) {
        detail::write_u64(os, g.name.size());
        os.write(g.name.data(), static_cast<std::streamsize>(g.name.size()));
        const std::uint8_t kind = static_cast<std::uint8_t>(g.kind);
        os.write(reinterpret_cast<const char*>(&kind), 1);
        detail::write_u64(os, g.values.rank());
        for (std::size_t a = 0; a < g.values.rank(); ++a) {
            detail::write_u64(os, g.values.extent(a));
        }
        for (std::size_t i = 0; i < g.values.size(); ++i) {
            detail::write_f64(os, g.values[i]);
        }
    }
    os.flush();
    if (!os) throw IoError("checkpoint: write to '" + path + "' failed");
}

/// Reads a container written by save_checkpoint; the round trip is
/// bit-exact. Structural problems raise FormatError, I/O problems IoError.
inline ParamSet load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open '" + path + "' for reading");
    const std::uint64_t group_count = detail::read_u64(is, "group count");
    ParamSet params;
    for (std::uint64_t gi = 0; gi < group_count; ++gi) {
        const std::uint64_t name_len = detail::read_u64(is, "name length");
        if (name_len > (1u << 20)) {
            throw FormatError("checkpoint: implausible name length " + std::to_string(name_len));
        }
        std::string name(name_len, '\0');
        is.read(name.data(), static_cast<std::streamsize>(name_len));
        if (!is) throw FormatError("checkpoint: truncated while reading name");
        std::uint8_t kind_byte = 0;
        is.read(reinterpret_cast<char*>(&kind_byte), 1);
        if (!is) throw FormatError("checkpoint: truncated while reading kind");
        if (kind_byte > static_cast<std::uint8_t>(ParamKind::bias)) {
            throw FormatError("checkpoint: unknown kind byte " + std::to_string(kind_byte) +
                              " for group '" + name + "'");
        }
        const std::uint64_t rank = detail::read_u64(is, "rank");
        if (rank > 8) throw FormatError("checkpoint: implausible rank " + std::to_string(rank));
        Shape shape(rank);
        for (std::uint64_t a = 0; a < rank; ++a) {
            shape[a] = detail::read_u64(is, "extent");
        }
        const std::size_t numel = shape_numel(shape);
        std::vector<double> data(numel);
        for (std::size_t i = 0; i < numel; ++i) data[i] = detail::read_f64(is, "values");
        params.add(std::move(name), static_cast<ParamKind>(kind_byte),
                   Tensor(std::move(shape), std::move(data)));
    }
    // The container must end exactly where the last group ends.
    char extra;
    if (is.read(&extra, 1)) {
        throw FormatError("checkpoint: trailing bytes after last group");
    }
    return params;
}

} // namespace ssgd
