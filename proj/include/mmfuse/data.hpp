#ifndef MMFUSE_DATA_HPP_
#define MMFUSE_DATA_HPP_

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mmfuse/fusion.hpp"
#include "mmfuse/tensor.hpp"
#include "mmfuse/vocab.hpp"

namespace mmfuse {

// One synthetic dialogue grounded in a video feature grid. The last turn's
// system half is empty; its answer is the target.
struct CorpusRecord {
  std::string id;
  std::string split;  // train | val | test
  Tensor<float> video;  // {F, P, d_emb}
  std::string caption;
  std::vector<std::pair<std::string, std::string>> turns;
  std::string target;
  std::vector<std::string> references;
};

struct Corpus {
  int frames = 0, regions = 0, d_emb = 0;
  Vocabulary vocab;
  std::vector<CorpusRecord> records;

  const CorpusRecord* find(const std::string& id) const;
  std::vector<const CorpusRecord*> split(const std::string& name) const;
};

struct CorpusGenConfig {
  uint64_t seed = 0;
  int n_train = 2000;
  int n_val = 200;
  int n_test = 200;
  int frames = 4;
  int regions = 4;
  int turns_per_dialogue = 3;
  int d_emb = 32;
  double noise = 0.1;
};

// The latent state behind one record, kept around so tests can replay the
// question templates against the grid independently of the emitted text.
struct LatentRecord {
  std::string id;
  std::vector<int> colors;  // F·P cells, frame-major
  std::vector<int> shapes;
  // one (kind, frame, region) triple per turn; kind: 0 color-at, 1 shape-at,
  // 2 majority-shape (region unused)
  std::vector<std::array<int, 3>> questions;
};

// Rule oracle: the answer a question has given the latent grid.
std::string oracle_answer(const LatentRecord& latent, int turn_index,
                          int regions);

// Deterministic synthetic grounding corpus. Questions are answerable only
// from the video grid; the caption summarizes the global majority color,
// which no question asks about.
Corpus generate_corpus(const CorpusGenConfig& cfg,
                       std::vector<LatentRecord>* latents_out = nullptr);

void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

// Streaming reader; visits one record at a time without materializing the
// whole corpus.
void for_each_record(const std::string& path,
                     const std::function<void(const Corpus& header)>& on_header,
                     const std::function<void(CorpusRecord&&)>& on_record);

// Conversions into the model-facing view.
template <class T>
VideoFeatures<T> to_video(const Tensor<float>& grid) {
  Tensor<T> g(grid.shape);
  for (int64_t i = 0; i < grid.numel(); ++i)
    g.data[i] = static_cast<T>(grid.data[i]);
  return VideoFeatures<T>(std::move(g));
}

DialogueInstance to_instance(const CorpusRecord& rec, const Vocabulary& vocab);

}  // namespace mmfuse

#endif  // MMFUSE_DATA_HPP_
