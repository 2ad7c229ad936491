#pragma once

// Checkpoint format "BHG1" (all integers little-endian):
//
//   bytes 0..3   magic "BHG1"
//   bytes 4..7   uint32 record count
//   per record:
//     uint32     name length L
//     L bytes    parameter name (UTF-8, no terminator)
//     uint32     rows
//     uint32     cols
//     rows*cols  float64 values, row-major, IEEE-754 little-endian
//
// Only parameter values are stored; optimizer state is not part of the file.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <set>
#include <string>

#include "bhygnn/errors.hpp"
#include "bhygnn/nn.hpp"

namespace bhygnn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is defined little-endian; big-endian hosts unsupported");

namespace ckpt_detail {

inline void write_u32(std::FILE* f, std::uint32_t v) {
  if (std::fwrite(&v, sizeof v, 1, f) != 1) throw DataError("checkpoint: write failed");
}

inline std::uint32_t read_u32(std::FILE* f, const std::string& path) {
  std::uint32_t v = 0;
  if (std::fread(&v, sizeof v, 1, f) != 1)
    throw DataError("checkpoint truncated: " + path);
  return v;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

}  // namespace ckpt_detail

inline void save_checkpoint(const ParamStore& store, const std::string& path) {
  std::unique_ptr<std::FILE, ckpt_detail::FileCloser> f(std::fopen(path.c_str(), "wb"));
  if (!f) throw DataError("cannot write checkpoint: " + path);
  if (std::fwrite("BHG1", 1, 4, f.get()) != 4) throw DataError("checkpoint: write failed");
  ckpt_detail::write_u32(f.get(), static_cast<std::uint32_t>(store.all().size()));
  for (const auto& p : store.all()) {
    ckpt_detail::write_u32(f.get(), static_cast<std::uint32_t>(p->name.size()));
    if (std::fwrite(p->name.data(), 1, p->name.size(), f.get()) != p->name.size())
      throw DataError("checkpoint: write failed");
    ckpt_detail::write_u32(f.get(), static_cast<std::uint32_t>(p->value.rows()));
    ckpt_detail::write_u32(f.get(), static_cast<std::uint32_t>(p->value.cols()));
    const auto count = static_cast<std::size_t>(p->value.size());
    if (std::fwrite(p->value.data(), sizeof(double), count, f.get()) != count)
      throw DataError("checkpoint: write failed");
  }
}

// Loads values into an existing store; every stored record must match a
// parameter by name and shape, and every parameter must be present.
inline void load_checkpoint(ParamStore& store, const std::string& path) {
  std::unique_ptr<std::FILE, ckpt_detail::FileCloser> f(std::fopen(path.c_str(), "rb"));
  if (!f) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  if (std::fread(magic, 1, 4, f.get()) != 4 || std::memcmp(magic, "BHG1", 4) != 0)
    throw DataError("bad checkpoint magic in " + path);
  const std::uint32_t count = ckpt_detail::read_u32(f.get(), path);
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = ckpt_detail::read_u32(f.get(), path);
    std::string name(name_len, '\0');
    if (std::fread(name.data(), 1, name_len, f.get()) != name_len)
      throw DataError("checkpoint truncated: " + path);
    const std::uint32_t rows = ckpt_detail::read_u32(f.get(), path);
    const std::uint32_t cols = ckpt_detail::read_u32(f.get(), path);
    Parameter* p = store.find(name);
    if (!p) throw DataError("checkpoint has unknown parameter '" + name + "'");
    if (p->value.rows() != rows || p->value.cols() != cols)
      throw DataError("checkpoint shape mismatch for '" + name + "'");
    const auto n = static_cast<std::size_t>(p->value.size());
    if (std::fread(p->value.data(), sizeof(double), n, f.get()) != n)
      throw DataError("checkpoint truncated: " + path);
    seen.insert(name);
  }
  for (const auto& p : store.all())
    if (!seen.count(p->name))
      throw DataError("checkpoint missing parameter '" + p->name + "'");
}

}  // namespace bhygnn
