#include "ionmirror/rng.hpp"

namespace ionmirror {

Engine make_stream(std::uint64_t master_seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(master_seed),
                    static_cast<std::uint32_t>(master_seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32),
                    kStreamTag};
  return Engine(seq);
}

}  // namespace ionmirror
