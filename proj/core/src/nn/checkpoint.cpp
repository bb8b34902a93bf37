#include "dragtraffic/nn/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "dragtraffic/error.hpp"

namespace dragtraffic::nn {

namespace {

constexpr std::array<char, 8> kMagic = {'D', 'T', 'C', 'K', 'P', 'T', '\0', '\0'};
constexpr std::uint8_t kDtypeF64 = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string16(std::ostream& os, const std::string& s) {
  if (s.size() > 0xffff) throw ValidationError("checkpoint string too long");
  put<std::uint16_t>(os, static_cast<std::uint16_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw SchemaError("truncated checkpoint " + path.string());
  return v;
}

std::string get_bytes(std::istream& is, std::size_t n, const std::filesystem::path& path) {
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) throw SchemaError("truncated checkpoint " + path.string());
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw NotFoundError("cannot open checkpoint for writing: " + path.string());
  nlohmann::json meta = ckpt.metadata;
  meta["frozen_groups"] = ckpt.params.frozen_groups();
  const std::string meta_str = meta.dump();

  os.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::int64_t>(os, ckpt.step);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(meta_str.size()));
  os.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.params.entries().size()));
  for (const auto& [name, p] : ckpt.params.entries()) {
    put_string16(os, name);
    put_string16(os, p.group);
    put<std::uint8_t>(os, kDtypeF64);
    put<std::uint8_t>(os, static_cast<std::uint8_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(p.value.raw()), static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  }
  if (!os) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw NotFoundError("checkpoint not found: " + path.string());
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) throw SchemaError("not a checkpoint file: " + path.string());
  const auto version = get<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw SchemaError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  }
  Checkpoint ckpt;
  ckpt.step = get<std::int64_t>(is, path);
  const auto meta_len = get<std::uint32_t>(is, path);
  ckpt.metadata = nlohmann::json::parse(get_bytes(is, meta_len, path));
  const auto count = get<std::uint32_t>(is, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = get_bytes(is, get<std::uint16_t>(is, path), path);
    std::string group = get_bytes(is, get<std::uint16_t>(is, path), path);
    if (get<std::uint8_t>(is, path) != kDtypeF64) throw SchemaError("unsupported dtype for '" + name + "'");
    const auto rank = get<std::uint8_t>(is, path);
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(get<std::uint64_t>(is, path));
      n *= d;
    }
    std::vector<double> data(n);
    if (n && !is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(double)))) {
      throw SchemaError("truncated tensor '" + name + "' in " + path.string());
    }
    ckpt.params.add(std::move(name), std::move(group), Tensor(std::move(shape), std::move(data)));
  }
  if (auto it = ckpt.metadata.find("frozen_groups"); it != ckpt.metadata.end()) {
    for (const auto& gname : *it) ckpt.params.set_frozen(gname.get<std::string>(), true);
  }
  return ckpt;
}

}  // namespace dragtraffic::nn
