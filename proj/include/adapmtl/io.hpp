#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "adapmtl/common.hpp"

// Little-endian binary primitives shared by the dataset, sparse-model, and
// checkpoint file formats.
namespace adapmtl::io {

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!os) throw DataError("write failed");
}

inline void read_bytes(std::istream& is, void* p, std::size_t n,
                       const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw DataError(std::string("truncated input while reading ") + what);
}

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  write_bytes(os, b, 4);
}

inline std::uint32_t read_u32(std::istream& is, const char* what = "u32") {
  unsigned char b[4];
  read_bytes(is, b, 4, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  write_bytes(os, b, 8);
}

inline std::uint64_t read_u64(std::istream& is, const char* what = "u64") {
  unsigned char b[8];
  read_bytes(is, b, 8, what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void write_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(os, bits);
}

inline double read_f64(std::istream& is, const char* what = "f64") {
  const std::uint64_t bits = read_u64(is, what);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

inline void write_f64_array(std::ostream& os, const std::vector<double>& v) {
  for (double x : v) write_f64(os, x);
}

inline std::vector<double> read_f64_array(std::istream& is, std::size_t n,
                                          const char* what = "f64 array") {
  std::vector<double> v(n);
  for (auto& x : v) x = read_f64(is, what);
  return v;
}

inline void write_magic(std::ostream& os, const char magic[4]) {
  write_bytes(os, magic, 4);
}

inline void expect_magic(std::istream& is, const char magic[4],
                         const char* what) {
  char b[4];
  read_bytes(is, b, 4, what);
  if (std::memcmp(b, magic, 4) != 0)
    throw DataError(std::string("bad magic bytes; not a ") + what + " file");
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  return os;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open for reading: " + path);
  return is;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  os << text;
  if (!os) throw DataError("write failed: " + path);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open for reading: " + path);
  std::string text((std::istreambuf_iterator<char>(is)),
                   std::istreambuf_iterator<char>());
  return text;
}

}  // namespace adapmtl::io
