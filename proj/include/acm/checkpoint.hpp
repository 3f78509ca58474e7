// SPDX-License-Identifier: Apache-2.0
//
// Named-tensor archive: name -> shape -> little-endian float64 payload.
// Checkpoints are directories holding tensors.bin plus a manifest.json
// written by the caller ("format_version": "v1").

#pragma once

#include "acm/tensor.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace acm {

struct ArchiveEntry {
    std::string name;
    std::vector<int> shape;
    std::vector<double> data;
};

namespace detail {

constexpr std::uint32_t kArchiveMagic = 0x544d4341; // "ACMT"

template <typename T>
void put(std::ofstream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("tensor archive: truncated file");
    return v;
}

} // namespace detail

inline void write_tensor_archive(const std::string& path, const std::vector<ArchiveEntry>& entries) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("tensor archive: cannot open for write: " + path);
    detail::put<std::uint32_t>(os, detail::kArchiveMagic);
    detail::put<std::uint32_t>(os, 1u);
    detail::put<std::uint64_t>(os, entries.size());
    for (const ArchiveEntry& e : entries) {
        detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(e.shape.size()));
        std::uint64_t n = 1;
        for (int d : e.shape) {
            detail::put<std::int64_t>(os, d);
            n *= static_cast<std::uint64_t>(d);
        }
        if (n != e.data.size()) throw std::runtime_error("tensor archive: shape/data mismatch for " + e.name);
        os.write(reinterpret_cast<const char*>(e.data.data()),
                 static_cast<std::streamsize>(e.data.size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("tensor archive: write failed: " + path);
}

inline std::vector<ArchiveEntry> read_tensor_archive(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("tensor archive: cannot open: " + path);
    if (detail::get<std::uint32_t>(is) != detail::kArchiveMagic) {
        throw std::runtime_error("tensor archive: bad magic in " + path);
    }
    if (detail::get<std::uint32_t>(is) != 1u) throw std::runtime_error("tensor archive: unsupported version");
    const std::uint64_t count = detail::get<std::uint64_t>(is);
    std::vector<ArchiveEntry> entries;
    entries.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        ArchiveEntry e;
        const std::uint32_t len = detail::get<std::uint32_t>(is);
        e.name.resize(len);
        is.read(e.name.data(), len);
        const std::uint32_t ndim = detail::get<std::uint32_t>(is);
        std::uint64_t n = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            const std::int64_t dim = detail::get<std::int64_t>(is);
            e.shape.push_back(static_cast<int>(dim));
            n *= static_cast<std::uint64_t>(dim);
        }
        e.data.resize(n);
        is.read(reinterpret_cast<char*>(e.data.data()), static_cast<std::streamsize>(n * sizeof(double)));
        if (!is) throw std::runtime_error("tensor archive: truncated payload in " + path);
        entries.push_back(std::move(e));
    }
    return entries;
}

// Exact byte image of a tensor's values, for freeze audits.
inline std::string tensor_bytes(const Tensor& t) {
    std::string s(t.value().size() * sizeof(double), '\0');
    std::memcpy(s.data(), t.value().data(), s.size());
    return s;
}

} // namespace acm
