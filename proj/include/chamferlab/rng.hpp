#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "chamferlab/matrix.hpp"

namespace chamferlab {

// Counter-based generator: draw i of stream (seed, stream_id) is
// splitmix64(key + i·φ), so independent streams are derived without shared
// state and draws never depend on call interleaving across streams.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // Uniform on [0, 1).
  double uniform();
  // Uniform integer in [0, n).
  std::size_t uniform_index(std::size_t n);
  double normal();

  RngStream derive(std::uint64_t child_id) const;

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

// Standard normal matrix of the given shape.
Matrix gauss(RngStream& rng, std::size_t rows, std::size_t cols);

// Fisher-Yates permutation of [0, n).
std::vector<std::size_t> permutation(RngStream& rng, std::size_t n);

}  // namespace chamferlab
