#include "chamferlab/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "chamferlab/errors.hpp"

namespace chamferlab {
namespace {

static_assert(std::endian::native == std::endian::little, "CHLM I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(std::string_view bytes, std::size_t& offset) {
  if (offset + sizeof(T) > bytes.size()) throw FormatError("CHLM: truncated header or payload");
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  offset += sizeof(T);
  return v;
}

}  // namespace

std::string encode_chlm(const Matrix& m) {
  std::string out = "CHLM";
  put<std::uint32_t>(out, kChlmVersion);
  put<std::uint64_t>(out, m.rows());
  put<std::uint64_t>(out, m.cols());
  out.append(reinterpret_cast<const char*>(m.data().data()), m.size() * sizeof(double));
  return out;
}

Matrix decode_chlm(std::string_view bytes) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != "CHLM") throw FormatError("CHLM: bad magic");
  std::size_t offset = 4;
  const auto version = take<std::uint32_t>(bytes, offset);
  if (version != kChlmVersion) throw FormatError("CHLM: unsupported version " + std::to_string(version));
  const auto rows = take<std::uint64_t>(bytes, offset);
  const auto cols = take<std::uint64_t>(bytes, offset);
  const std::size_t n = rows * cols;
  if (bytes.size() - offset != n * sizeof(double)) throw FormatError("CHLM: payload length mismatch");
  std::vector<double> data(n);
  std::memcpy(data.data(), bytes.data() + offset, n * sizeof(double));
  return Matrix(rows, cols, std::move(data));
}

void write_chlm(const std::filesystem::path& path, const Matrix& m) { write_text(path, encode_chlm(m)); }

Matrix read_chlm(const std::filesystem::path& path) { return decode_chlm(read_text(path)); }

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

Fnv1a& Fnv1a::bytes(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    state_ ^= p[i];
    state_ *= 0x100000001b3ULL;
  }
  return *this;
}

Fnv1a& Fnv1a::text(std::string_view s) {
  u64(s.size());
  return bytes(s.data(), s.size());
}

Fnv1a& Fnv1a::u64(std::uint64_t v) { return bytes(&v, sizeof v); }

Fnv1a& Fnv1a::f64(double v) { return bytes(&v, sizeof v); }

Fnv1a& Fnv1a::matrix(const Matrix& m) {
  u64(m.rows());
  u64(m.cols());
  return bytes(m.data().data(), m.size() * sizeof(double));
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace chamferlab
