#ifndef MMFUSE_TRAINER_HPP_
#define MMFUSE_TRAINER_HPP_

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "mmfuse/adam.hpp"
#include "mmfuse/checkpoint.hpp"
#include "mmfuse/config.hpp"
#include "mmfuse/data.hpp"
#include "mmfuse/generation.hpp"
#include "mmfuse/metrics.hpp"
#include "mmfuse/model.hpp"

namespace mmfuse {

// Model-facing view of one corpus split, with the ablation pooling already
// applied to the videos.
struct PreparedData {
  std::vector<DialogueInstance> dialogues;
  std::vector<VideoFeatures<float>> videos;
  std::vector<const CorpusRecord*> records;

  size_t size() const { return dialogues.size(); }
};

PreparedData prepare_split(const Corpus& corpus, const std::string& split,
                           AblationMode mode);

// Full run state for bit-exact resume: parameters, Adam moments, the RNG
// stream position and the epoch/step counters.
Checkpoint snapshot_run(const RunConfig& cfg, const Model<float>& model,
                        const AdamState<float>& opt, const Rng& rng,
                        int epoch_done, int64_t global_step, double best_val,
                        uint64_t vocab_hash);

struct RestoredRun {
  RunConfig config;
  Model<float> model;
  AdamState<float> opt;
  Rng rng;
  int epoch_done = 0;
  int64_t global_step = 0;
  double best_val = 0;
  uint64_t vocab_hash = 0;
};

RestoredRun restore_run(const Checkpoint& ckpt);

// Parameters only (evaluate / generate); geometry comes from the embedded
// config, the vocabulary size from the token-embedding array.
Model<float> model_from_checkpoint(const Checkpoint& ckpt,
                                   RunConfig* embedded_cfg = nullptr,
                                   uint64_t* vocab_hash = nullptr);

struct TrainOutcome {
  std::string final_checkpoint;
  std::string best_checkpoint;
  double best_val = 0;
  int64_t steps = 0;
  double last_combined = 0;
};

// Epochs of shuffled minibatches with per-step logging, per-epoch validation
// and best/final checkpoints under cfg.out.
TrainOutcome run_training(const RunConfig& cfg, const Corpus& corpus,
                          std::ostream& console);

struct EvalOutcome {
  ScoreReport scores;
  double grounding_accuracy = 0;
  double chance_level = 0.25;  // attribute inventories are 4-way
  int evaluated = 0;
  std::map<std::string, std::vector<std::string>> responses;  // detokenized
};

// Greedy decoding over a split plus multi-reference metrics and the
// exact-match grounding accuracy against the rule-oracle answers. With
// shuffle_videos every instance sees its neighbour's video instead.
EvalOutcome run_evaluation(const Model<float>& model, const Corpus& corpus,
                           const std::string& split, AblationMode mode,
                           bool shuffle_videos, const DecodeOptions& opts);

}  // namespace mmfuse

#endif  // MMFUSE_TRAINER_HPP_
