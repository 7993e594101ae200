#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include "chamferlab/matrix.hpp"

namespace chamferlab {

// CHLM binary matrix file: "CHLM", u32 version (1), u64 rows, u64 cols,
// then rows·cols little-endian f64 values in row-major order.
inline constexpr std::uint32_t kChlmVersion = 1;

std::string encode_chlm(const Matrix& m);
Matrix decode_chlm(std::string_view bytes);

void write_chlm(const std::filesystem::path& path, const Matrix& m);
Matrix read_chlm(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

// 64-bit FNV-1a. Used for projector ids, stage cache keys and file digests.
class Fnv1a {
 public:
  Fnv1a& bytes(const void* data, std::size_t n);
  Fnv1a& text(std::string_view s);
  Fnv1a& u64(std::uint64_t v);
  Fnv1a& f64(double v);
  Fnv1a& matrix(const Matrix& m);
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string hex64(std::uint64_t v);

}  // namespace chamferlab
