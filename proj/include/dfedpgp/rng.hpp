#pragma once

#include <cstdint>
#include <random>

namespace dfedpgp {

using Rng = std::mt19937_64;

// Every random stream in the simulator is keyed by (master seed, purpose,
// client, round). Subsystems never share a stream.
enum class Purpose : std::uint64_t {
  kPool = 1,
  kPartition = 2,
  kSplit = 3,
  kInit = 4,
  kTopology = 5,
  kBatchV = 6,
  kBatchU = 7,
  kHeterogeneity = 8,
  kDemo = 9,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t stream_seed(std::uint64_t master, Purpose purpose,
                                    std::uint64_t client = 0,
                                    std::uint64_t round = 0) {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ static_cast<std::uint64_t>(purpose));
  h = splitmix64(h ^ client);
  h = splitmix64(h ^ round);
  return h;
}

inline Rng make_stream(std::uint64_t master, Purpose purpose,
                       std::uint64_t client = 0, std::uint64_t round = 0) {
  return Rng(stream_seed(master, purpose, client, round));
}

}  // namespace dfedpgp
