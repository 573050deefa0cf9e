#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sidrec {

// Little-endian binary writer/reader with byte-offset error reporting.

class BinWriter {
 public:
  explicit BinWriter(const std::string& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot open for writing: " + path);
  }

  void magic(const char* m) { out_.write(m, 4); }
  void u16(uint16_t v) { put(&v, 2); }
  void u32(uint32_t v) { put(&v, 4); }
  void u64(uint64_t v) { put(&v, 8); }
  void f32(float v) { put(&v, 4); }
  void f32_array(const float* p, size_t n) { out_.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * 4)); }
  void bytes(const void* p, size_t n) { out_.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

  void close() {
    out_.close();
    if (!out_) throw std::runtime_error("write failed: " + path_);
  }

 private:
  void put(const void* p, size_t n) { out_.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  std::string path_;
  std::ofstream out_;
};

class BinReader {
 public:
  explicit BinReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error("cannot open for reading: " + path);
  }

  void magic(const char* expect) {
    char m[4];
    get(m, 4, "magic");
    if (std::memcmp(m, expect, 4) != 0)
      throw std::runtime_error(path_ + ": bad magic at byte offset 0, expected \"" + expect + "\"");
  }
  uint16_t u16() { uint16_t v; get(&v, 2, "u16"); return v; }
  uint32_t u32() { uint32_t v; get(&v, 4, "u32"); return v; }
  uint64_t u64() { uint64_t v; get(&v, 8, "u64"); return v; }
  float f32() { float v; get(&v, 4, "f32"); return v; }
  void f32_array(float* p, size_t n) { get(p, n * 4, "f32 array"); }
  std::string str() {
    uint32_t n = u32();
    if (n > (1u << 24)) fail("string length");
    std::string s(n, '\0');
    get(s.data(), n, "string");
    return s;
  }
  size_t offset() { return static_cast<size_t>(in_.tellg()); }

  [[noreturn]] void fail(const std::string& what) {
    throw std::runtime_error(path_ + ": malformed " + what + " at byte offset " + std::to_string(last_offset_));
  }

 private:
  void get(void* p, size_t n, const char* what) {
    last_offset_ = static_cast<size_t>(in_.tellg());
    in_.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in_.gcount()) != n) fail(what);
  }
  std::string path_;
  std::ifstream in_;
  size_t last_offset_ = 0;
};

}  // namespace sidrec
