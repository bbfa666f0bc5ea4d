#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace cadet {

using Rng = std::mt19937_64;

/// Derive an independent 64-bit seed from a master seed and a path of
/// stream ids. Streams with different paths never share state, so adding
/// samples or trials does not perturb draws already made for others.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
    std::vector<std::uint32_t> words;
    words.reserve(2 + 2 * path.size());
    auto push = [&words](std::uint64_t v) {
        words.push_back(static_cast<std::uint32_t>(v));
        words.push_back(static_cast<std::uint32_t>(v >> 32));
    };
    push(master);
    for (auto p : path) push(p);
    std::seed_seq seq(words.begin(), words.end());
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

inline Rng make_rng(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
    return Rng(derive_seed(master, path));
}

}  // namespace cadet
