#include "fseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace fseg::ad {

namespace {

constexpr char kMagic[8] = {'F', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw ValidationError(std::string("checkpoint: truncated while reading ") + what);
  return value;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("checkpoint: cannot create " + path);

  out.write(kMagic, sizeof(kMagic));
  write_pod<uint32_t>(out, kCheckpointVersion);
  write_pod<uint32_t>(out, static_cast<uint32_t>(params.size()));
  for (const auto& [name, array] : params) {
    if (name.size() > 0xFFFF)
      throw ValidationError("checkpoint: tensor name too long: " + name);
    if (array.shape.rank() > 0xFF)
      throw ValidationError("checkpoint: tensor rank too large: " + name);
    write_pod<uint16_t>(out, static_cast<uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<uint8_t>(out, static_cast<uint8_t>(array.shape.rank()));
    for (int d = 0; d < array.shape.rank(); ++d)
      write_pod<uint32_t>(out, static_cast<uint32_t>(array.shape[d]));
    out.write(reinterpret_cast<const char*>(array.data.data()),
              static_cast<std::streamsize>(array.data.size() * sizeof(float)));
  }
  if (!out) throw Error("checkpoint: write failed for " + path);
}

ParamStore load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("checkpoint: cannot open " + path);

  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw ValidationError("checkpoint: bad magic in " + path);
  const uint32_t version = read_pod<uint32_t>(in, "version");
  if (version != kCheckpointVersion)
    throw ValidationError("checkpoint: unsupported version " + std::to_string(version));

  const uint32_t count = read_pod<uint32_t>(in, "tensor count");
  ParamStore params;
  for (uint32_t t = 0; t < count; ++t) {
    const uint16_t name_len = read_pod<uint16_t>(in, "name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw ValidationError("checkpoint: truncated name in " + path);

    const uint8_t rank = read_pod<uint8_t>(in, "rank");
    std::vector<int> dims(rank);
    for (uint8_t d = 0; d < rank; ++d) {
      const uint32_t extent = read_pod<uint32_t>(in, "dim");
      if (extent == 0 || extent > 1u << 24)
        throw ValidationError("checkpoint: implausible extent in " + path);
      dims[d] = static_cast<int>(extent);
    }
    ArrayF array{Shape(dims)};
    in.read(reinterpret_cast<char*>(array.data.data()),
            static_cast<std::streamsize>(array.data.size() * sizeof(float)));
    if (!in) throw ValidationError("checkpoint: truncated payload in " + path);
    params.emplace(std::move(name), std::move(array));
  }
  return params;
}

}  // namespace fseg::ad
