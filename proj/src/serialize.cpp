#include "auformer/serialize.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "auformer/errors.hpp"

namespace auf {

namespace {

constexpr uint16_t kVersion = 1;
constexpr int64_t kMaxDim = (1LL << 31) - 1;

void put_u16(std::ostream& os, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  if (!is.read(reinterpret_cast<char*>(b), 2)) throw FormatError("truncated file: expected u16");
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated file: expected u32");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

void put_f32_payload(std::ostream& os, const Tensor32& t) {
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * 4));
}

void get_f32_payload(std::istream& is, Tensor32& t) {
  if (!is.read(reinterpret_cast<char*>(t.data.data()),
               static_cast<std::streamsize>(t.data.size() * 4)))
    throw FormatError("truncated file: payload shorter than header dims");
}

void check_dims(const std::vector<int>& shape) {
  for (int d : shape)
    if (d < 1 || static_cast<int64_t>(d) > kMaxDim) throw FormatError("dim out of range");
}

}  // namespace

void save_tensors(const std::string& path, const NamedTensors& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write("AUFW", 4);
  put_u16(os, kVersion);
  put_u32(os, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    check_dims(t.shape);
    put_u16(os, static_cast<uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    os.put(static_cast<char>(t.rank()));
    for (int d : t.shape) put_u32(os, static_cast<uint32_t>(d));
  }
  for (const auto& [name, t] : tensors) put_f32_payload(os, t);
  if (!os) throw IoError("write failed: " + path);
}

NamedTensors load_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "AUFW", 4) != 0)
    throw FormatError("bad magic: not an AUFW weight file");
  const uint16_t ver = get_u16(is);
  if (ver != kVersion) throw FormatError("unsupported AUFW version " + std::to_string(ver));
  const uint32_t count = get_u32(is);
  NamedTensors out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t nlen = get_u16(is);
    std::string name(nlen, '\0');
    if (!is.read(name.data(), nlen)) throw FormatError("truncated file: tensor name");
    int rank = is.get();
    if (rank < 1 || rank > 8) throw FormatError("bad tensor rank");
    std::vector<int> shape(static_cast<size_t>(rank));
    for (auto& d : shape) {
      uint32_t v = get_u32(is);
      if (v < 1 || v > static_cast<uint32_t>(kMaxDim)) throw FormatError("dim out of range");
      d = static_cast<int>(v);
    }
    out.emplace_back(std::move(name), Tensor32::zeros(shape));
  }
  for (auto& [name, t] : out) get_f32_payload(is, t);
  return out;
}

void write_sample_tensor(const std::string& path, const Tensor32& t) {
  check_dims(t.shape);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write("AUTD", 4);
  put_u16(os, kVersion);
  os.put(static_cast<char>(t.rank()));
  for (int d : t.shape) put_u32(os, static_cast<uint32_t>(d));
  put_f32_payload(os, t);
  if (!os) throw IoError("write failed: " + path);
}

Tensor32 read_sample_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "AUTD", 4) != 0)
    throw FormatError("bad magic: not an AUTD sample file");
  const uint16_t ver = get_u16(is);
  if (ver != kVersion) throw FormatError("unsupported AUTD version " + std::to_string(ver));
  int rank = is.get();
  if (rank < 1 || rank > 8) throw FormatError("bad tensor rank");
  std::vector<int> shape(static_cast<size_t>(rank));
  for (auto& d : shape) {
    uint32_t v = get_u32(is);
    if (v < 1 || v > static_cast<uint32_t>(kMaxDim)) throw FormatError("dim out of range");
    d = static_cast<int>(v);
  }
  Tensor32 t = Tensor32::zeros(shape);
  get_f32_payload(is, t);
  return t;
}

}  // namespace auf
