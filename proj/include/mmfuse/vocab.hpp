#ifndef MMFUSE_VOCAB_HPP_
#define MMFUSE_VOCAB_HPP_

#include <cctype>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmfuse/error.hpp"

namespace mmfuse {

// Fixed ids for the special tokens; everything else is assigned in
// first-appearance order by the corpus builder.
inline constexpr int kPadId = 0;
inline constexpr int kMaskId = 1;
inline constexpr int kClsId = 2;
inline constexpr int kEosId = 3;
inline constexpr int kUnkId = 4;

class Vocabulary {
 public:
  Vocabulary() {
    for (const char* s : {"[PAD]", "[MASK]", "[CLS]", "[EOS]", "[UNK]"}) {
      add(s);
    }
  }

  int add(const std::string& token) {
    auto it = ids_.find(token);
    if (it != ids_.end()) return it->second;
    tokens_.push_back(token);
    const int id = static_cast<int>(tokens_.size()) - 1;
    ids_.emplace(token, id);
    return id;
  }

  int id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnkId : it->second;
  }

  bool contains(const std::string& token) const { return ids_.count(token); }

  const std::string& token(int id) const {
    if (id < 0 || id >= size()) {
      throw ContractError("token id " + std::to_string(id) +
                          " outside vocabulary of size " +
                          std::to_string(size()));
    }
    return tokens_[static_cast<size_t>(id)];
  }

  int size() const { return static_cast<int>(tokens_.size()); }

  const std::vector<std::string>& tokens() const { return tokens_; }

  static std::vector<std::string> split_lower(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!cur.empty()) {
          out.push_back(cur);
          cur.clear();
        }
      } else {
        cur.push_back(static_cast<char>(
            std::tolower(static_cast<unsigned char>(c))));
      }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
  }

  std::vector<int> encode(const std::string& text) const {
    std::vector<int> out;
    for (const auto& tok : split_lower(text)) out.push_back(id(tok));
    return out;
  }

  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
      if (i) out.push_back(' ');
      out += token(ids[i]);
    }
    return out;
  }

  // FNV-1a over the ordered token list; stored in checkpoints so evaluate
  // can refuse a checkpoint trained against a different vocabulary.
  uint64_t hash() const {
    uint64_t h = 1469598103934665603ULL;
    for (const auto& t : tokens_) {
      for (char c : t) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
      }
      h ^= 0xff;
      h *= 1099511628211ULL;
    }
    return h;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace mmfuse

#endif  // MMFUSE_VOCAB_HPP_
