#include "mvvae/checkpoint.hpp"

#include <cstdio>
#include <filesystem>
#include <memory>

#include "mvvae/errors.hpp"

namespace mvvae {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_u32(std::FILE* f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  std::fwrite(b, 1, 4, f);
}

void write_u64(std::FILE* f, std::uint64_t v) {
  write_u32(f, static_cast<std::uint32_t>(v));
  write_u32(f, static_cast<std::uint32_t>(v >> 32));
}

std::uint32_t read_u32(std::FILE* f, const std::string& path) {
  unsigned char b[4];
  if (std::fread(b, 1, 4, f) != 4)
    throw DataError("checkpoint: truncated file: " + path);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t read_u64(std::FILE* f, const std::string& path) {
  const std::uint64_t lo = read_u32(f, path);
  const std::uint64_t hi = read_u32(f, path);
  return lo | (hi << 32);
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::filesystem::create_directories(std::filesystem::path(path).parent_path());
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw DataError("checkpoint: cannot open for writing: " + path);
  write_u32(f.get(), kCheckpointMagic);
  write_u32(f.get(), kCheckpointVersion);
  write_u64(f.get(), ckpt.seed);
  write_u32(f.get(), static_cast<std::uint32_t>(ckpt.config_text.size()));
  std::fwrite(ckpt.config_text.data(), 1, ckpt.config_text.size(), f.get());
  write_u32(f.get(), static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const auto& [name, t] : ckpt.arrays) {
    write_u32(f.get(), static_cast<std::uint32_t>(name.size()));
    std::fwrite(name.data(), 1, name.size(), f.get());
    write_u32(f.get(), static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) write_u32(f.get(), static_cast<std::uint32_t>(d));
    write_u32(f.get(), 0);  // dtype float64
    std::fwrite(t.data(), sizeof(double), t.size(), f.get());
  }
  if (std::ferror(f.get())) throw DataError("checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw DataError("checkpoint: missing file: " + path);
  if (read_u32(f.get(), path) != kCheckpointMagic)
    throw DataError("checkpoint: bad magic: " + path);
  Checkpoint ckpt;
  ckpt.version = read_u32(f.get(), path);
  if (ckpt.version != kCheckpointVersion)
    throw DataError("checkpoint: unsupported format version " +
                    std::to_string(ckpt.version) + ": " + path);
  ckpt.seed = read_u64(f.get(), path);
  const std::uint32_t cfg_len = read_u32(f.get(), path);
  ckpt.config_text.resize(cfg_len);
  if (cfg_len && std::fread(ckpt.config_text.data(), 1, cfg_len, f.get()) != cfg_len)
    throw DataError("checkpoint: truncated config: " + path);
  const std::uint32_t n_arrays = read_u32(f.get(), path);
  for (std::uint32_t a = 0; a < n_arrays; ++a) {
    const std::uint32_t name_len = read_u32(f.get(), path);
    std::string name(name_len, '\0');
    if (std::fread(name.data(), 1, name_len, f.get()) != name_len)
      throw DataError("checkpoint: truncated array name: " + path);
    const std::uint32_t ndim = read_u32(f.get(), path);
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = static_cast<int>(read_u32(f.get(), path));
    const std::uint32_t dtype = read_u32(f.get(), path);
    if (dtype != 0) throw DataError("checkpoint: unsupported dtype: " + path);
    Tensor t(shape);
    if (std::fread(t.data(), sizeof(double), t.size(), f.get()) != t.size())
      throw DataError("checkpoint: truncated array data: " + path);
    ckpt.arrays.emplace(std::move(name), std::move(t));
  }
  return ckpt;
}

}  // namespace mvvae
