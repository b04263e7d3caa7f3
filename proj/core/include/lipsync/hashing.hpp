#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "lipsync/tensor.hpp"

namespace lipsync {

inline uint64_t fnv1a64(const void* data, size_t bytes, uint64_t seed = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

template <typename T>
uint64_t tensor_hash(const TensorT<T>& t) {
    uint64_t h = fnv1a64(t.shape().data(), t.shape().size() * sizeof(int64_t));
    return fnv1a64(t.data(), size_t(t.numel()) * sizeof(T), h);
}

uint64_t file_hash(const std::filesystem::path& path);

}  // namespace lipsync
