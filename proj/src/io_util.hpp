#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "protlang/errors.hpp"

// Internal binary/file helpers shared by the checkpoint and embedding writers.
namespace protlang::ioutil {

inline void write_bytes(std::ofstream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void write_u32(std::ofstream& os, std::uint32_t v) { write_bytes(os, &v, 4); }
inline void write_u64(std::ofstream& os, std::uint64_t v) { write_bytes(os, &v, 8); }

inline void read_bytes(std::ifstream& is, void* p, std::size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw FormatError(std::string("truncated file while reading ") + what);
}

inline std::uint32_t read_u32(std::ifstream& is, const char* what) {
  std::uint32_t v = 0;
  read_bytes(is, &v, 4, what);
  return v;
}

inline std::uint64_t read_u64(std::ifstream& is, const char* what) {
  std::uint64_t v = 0;
  read_bytes(is, &v, 8, what);
  return v;
}

inline std::ifstream open_read(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path + " for reading");
  return is;
}

// Writes via <path>.tmp then renames; partial output never lands on path.
template <class Fn>
void atomic_write(const std::string& path, Fn&& body) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp + " for writing");
    body(os);
    os.flush();
    if (!os.good()) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename " + tmp + " -> " + path + ": " + ec.message());
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path + " for reading");
  std::string s((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return s;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  atomic_write(path, [&](std::ofstream& os) { os.write(text.data(), static_cast<std::streamsize>(text.size())); });
}

}  // namespace protlang::ioutil
