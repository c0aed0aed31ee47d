#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "array.hpp"

namespace pv::binio {

// Little-endian primitives. The build targets little-endian hosts; writes are
// plain memory dumps of fixed-width types.

inline void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}
inline void put_f64(std::ostream& os, double v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}
inline void put_u8(std::ostream& os, std::uint8_t v) {
  os.write(reinterpret_cast<const char*>(&v), 1);
}

class Reader {
public:
  Reader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}

  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  double f64() { return get<double>(); }
  std::uint8_t u8() { return get<std::uint8_t>(); }

  void raw(void* dst, std::size_t n) {
    is_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n)
      fail(ErrKind::Format, path_ + ": truncated at byte offset " + std::to_string(off_));
    off_ += n;
  }

  void expect_magic(const char m[4]) {
    char got[4];
    raw(got, 4);
    if (std::string(got, 4) != std::string(m, 4))
      fail(ErrKind::Format, path_ + ": bad magic at offset " + std::to_string(off_ - 4) +
                                " (expected " + std::string(m, 4) + ")");
  }

  std::size_t offset() const { return off_; }
  const std::string& path() const { return path_; }

private:
  template <class T>
  T get() {
    T v;
    raw(&v, sizeof(T));
    return v;
  }
  std::istream& is_;
  std::string path_;
  std::size_t off_ = 0;
};

inline void put_array(std::ostream& os, const Array& a) {
  put_u32(os, static_cast<std::uint32_t>(a.ndim()));
  for (auto e : a.shape) put_u32(os, static_cast<std::uint32_t>(e));
  os.write(reinterpret_cast<const char*>(a.data.data()),
           static_cast<std::streamsize>(a.data.size() * 8));
}

inline Array get_array(Reader& r) {
  std::uint32_t nd = r.u32();
  if (nd > 8) fail(ErrKind::Format, r.path() + ": implausible ndim " + std::to_string(nd));
  std::vector<std::size_t> shape(nd);
  for (auto& e : shape) e = r.u32();
  Array a = Array::zeros(shape);
  r.raw(a.data.data(), a.data.size() * 8);
  return a;
}

// Write-then-rename so a failed write never clobbers an existing file.
template <class Fn>
void atomic_write(const std::string& path, Fn&& write_fn) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) fail(ErrKind::Io, "cannot open " + tmp + " for writing");
    write_fn(os);
    os.flush();
    if (!os) fail(ErrKind::Io, "write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrKind::Io, "rename " + tmp + " -> " + path + ": " + ec.message());
}

}  // namespace pv::binio
