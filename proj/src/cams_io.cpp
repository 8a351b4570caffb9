#include "wsss/cams_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "wsss/errors.hpp"

namespace wsss {

namespace {

constexpr char kMagic[4] = {'C', 'A', 'M', 'S'};
constexpr std::uint16_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void save_cams(const std::filesystem::path& file, const torch::Tensor& maps) {
  if (maps.dim() != 3) throw DataError("save_cams: expected [C,h,w] tensor");
  auto t = maps.to(torch::kFloat32).contiguous();
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("save_cams: cannot open " + file.string());
  out.write(kMagic, 4);
  write_pod<std::uint16_t>(out, kVersion);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.size(0)));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.size(1)));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.size(2)));
  out.write(reinterpret_cast<const char*>(t.data_ptr<float>()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
  if (!out) throw DataError("save_cams: short write to " + file.string());
}

torch::Tensor load_cams(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("load_cams: cannot open " + file.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("load_cams: bad magic in " + file.string());
  auto version = read_pod<std::uint16_t>(in);
  if (version != kVersion)
    throw DataError("load_cams: unsupported version in " + file.string());
  auto c = read_pod<std::uint32_t>(in);
  auto h = read_pod<std::uint32_t>(in);
  auto w = read_pod<std::uint32_t>(in);
  auto t = torch::empty({static_cast<long>(c), static_cast<long>(h),
                         static_cast<long>(w)},
                        torch::kFloat32);
  in.read(reinterpret_cast<char*>(t.data_ptr<float>()),
          static_cast<std::streamsize>(t.numel() * sizeof(float)));
  if (!in) throw DataError("load_cams: truncated file " + file.string());
  return t;
}

void TensorArchive::add(const std::string& name, const torch::Tensor& t) {
  entries.emplace_back(name, t.detach().contiguous().clone());
}

torch::Tensor TensorArchive::get(const std::string& name) const {
  for (const auto& [n, t] : entries)
    if (n == name) return t;
  throw DataError("TensorArchive: missing entry " + name);
}

bool TensorArchive::has(const std::string& name) const {
  for (const auto& [n, t] : entries)
    if (n == name) return true;
  return false;
}

void TensorArchive::save(const std::filesystem::path& file) const {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("TensorArchive: cannot open " + file.string());
  out.write("WTAR", 4);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, tensor] : entries) {
    auto t = tensor.contiguous();
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    std::uint8_t dtype = t.scalar_type() == torch::kFloat64 ? 1 : 0;
    if (dtype == 0) t = t.to(torch::kFloat32);
    write_pod<std::uint8_t>(out, dtype);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
    for (long d = 0; d < t.dim(); ++d)
      write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(t.size(d)));
    out.write(reinterpret_cast<const char*>(t.data_ptr()),
              static_cast<std::streamsize>(t.numel() * t.element_size()));
  }
  if (!out) throw DataError("TensorArchive: short write to " + file.string());
}

TensorArchive TensorArchive::load(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("TensorArchive: cannot open " + file.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "WTAR", 4) != 0)
    throw DataError("TensorArchive: bad magic in " + file.string());
  TensorArchive ar;
  auto count = read_pod<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name_len = read_pod<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    auto dtype = read_pod<std::uint8_t>(in);
    auto ndim = read_pod<std::uint32_t>(in);
    std::vector<long> sizes;
    for (std::uint32_t d = 0; d < ndim; ++d)
      sizes.push_back(static_cast<long>(read_pod<std::uint64_t>(in)));
    auto t = torch::empty(sizes, dtype == 1 ? torch::kFloat64 : torch::kFloat32);
    in.read(reinterpret_cast<char*>(t.data_ptr()),
            static_cast<std::streamsize>(t.numel() * t.element_size()));
    if (!in) throw DataError("TensorArchive: truncated file " + file.string());
    ar.entries.emplace_back(name, t);
  }
  return ar;
}

}  // namespace wsss
