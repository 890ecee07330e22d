#ifndef MMFUSE_CHECKPOINT_HPP_
#define MMFUSE_CHECKPOINT_HPP_

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mmfuse/tensor.hpp"

namespace mmfuse {

// On-disk layout (all integers little-endian):
//   8-byte magic "MMFUSEv1"
//   u32 version (currently 1)
//   u32 config-text length, then that many UTF-8 bytes (key=value lines)
//   repeated named arrays until EOF:
//     u16 name length + name bytes
//     u8 rank, then one u32 extent per axis
//     row-major float32 payload
struct Checkpoint {
  std::string config_text;
  std::vector<std::pair<std::string, Tensor<float>>> arrays;

  const Tensor<float>* find(const std::string& name) const;
  std::map<std::string, std::string> config_map() const;
};

void save_checkpoint_file(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint_file(const std::string& path);

}  // namespace mmfuse

#endif  // MMFUSE_CHECKPOINT_HPP_
