#pragma once

#include <cstdint>
#include <random>

namespace ionmirror {

using Engine = std::mt19937_64;

/// Independent stream for run `stream` of an experiment seeded with
/// `master_seed`. The engine is seeded through std::seed_seq with the words
/// {lo(master), hi(master), lo(stream), hi(stream), kStreamTag}, so run i
/// gets the same numbers whether runs execute serially or in parallel.
Engine make_stream(std::uint64_t master_seed, std::uint64_t stream);

inline constexpr std::uint32_t kStreamTag = 0x696f6e6du;  // "ionm"

}  // namespace ionmirror
