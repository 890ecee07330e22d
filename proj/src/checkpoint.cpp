#include "mmfuse/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "mmfuse/error.hpp"

namespace mmfuse {

namespace {

constexpr char kMagic[8] = {'M', 'M', 'F', 'U', 'S', 'E', 'v', '1'};
constexpr uint32_t kVersion = 1;

void put_u16(std::ostream& out, uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  out.write(b, 2);
}

void put_u32(std::ostream& out, uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

uint16_t get_u16(std::istream& in, const std::string& what) {
  unsigned char b[2];
  if (!in.read(reinterpret_cast<char*>(b), 2)) {
    throw IoError("checkpoint truncated while reading " + what);
  }
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t get_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw IoError("checkpoint truncated while reading " + what);
  }
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

const Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : arrays) {
    if (n == name) return &t;
  }
  return nullptr;
}

std::map<std::string, std::string> Checkpoint::config_map() const {
  std::map<std::string, std::string> out;
  std::istringstream in(config_text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos || line.empty() || line[0] == '#') continue;
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

void save_checkpoint_file(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write(kMagic, 8);
  put_u32(out, kVersion);
  put_u32(out, static_cast<uint32_t>(ckpt.config_text.size()));
  out.write(ckpt.config_text.data(),
            static_cast<std::streamsize>(ckpt.config_text.size()));
  for (const auto& [name, tensor] : ckpt.arrays) {
    if (name.size() > 0xffff) {
      throw ContractError("array name too long: " + name);
    }
    put_u16(out, static_cast<uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    out.put(static_cast<char>(tensor.rank()));
    for (int e : tensor.shape) put_u32(out, static_cast<uint32_t>(e));
    static_assert(sizeof(float) == 4, "float must be 32-bit");
    for (float v : tensor.data) {
      uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put_u32(out, bits);
    }
  }
  if (!out) throw IoError("short write to checkpoint: " + path);
}

Checkpoint load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError("checkpoint magic mismatch; not an MMFUSEv1 file: " + path);
  }
  const uint32_t version = get_u32(in, "version");
  if (version != kVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const uint32_t cfg_len = get_u32(in, "config length");
  ckpt.config_text.resize(cfg_len);
  if (cfg_len > 0 &&
      !in.read(ckpt.config_text.data(), static_cast<std::streamsize>(cfg_len))) {
    throw IoError("checkpoint truncated while reading the config block");
  }
  while (true) {
    int peek = in.peek();
    if (peek == std::char_traits<char>::eof()) break;
    const uint16_t name_len = get_u16(in, "array name length");
    std::string name(name_len, '\0');
    if (name_len > 0 &&
        !in.read(name.data(), static_cast<std::streamsize>(name_len))) {
      throw IoError("checkpoint truncated while reading an array name");
    }
    const int rank = in.get();
    if (rank == std::char_traits<char>::eof() || rank < 1) {
      throw IoError("checkpoint truncated in array '" + name + "' (rank)");
    }
    std::vector<int> shape;
    int64_t numel = 1;
    for (int i = 0; i < rank; ++i) {
      const uint32_t e = get_u32(in, "extent of array '" + name + "'");
      if (e == 0 || e > (1u << 30)) {
        throw IoError("array '" + name + "' has invalid extent " +
                      std::to_string(e));
      }
      shape.push_back(static_cast<int>(e));
      numel *= e;
    }
    Tensor<float> t(shape);
    for (int64_t i = 0; i < numel; ++i) {
      const uint32_t bits = get_u32(in, "payload of array '" + name + "'");
      std::memcpy(&t.data[i], &bits, 4);
    }
    ckpt.arrays.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

}  // namespace mmfuse
