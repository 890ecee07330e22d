#ifndef MMFUSE_CONFIG_HPP_
#define MMFUSE_CONFIG_HPP_

#include <cstdint>
#include <map>
#include <string>

#include "mmfuse/data.hpp"
#include "mmfuse/fusion.hpp"
#include "mmfuse/generation.hpp"
#include "mmfuse/model.hpp"
#include "mmfuse/objectives.hpp"

namespace mmfuse {

// Everything a run needs, parseable from flat key=value text with CLI-flag
// overrides (flags win). Field names double as the config keys.
struct RunConfig {
  // model geometry
  int n_layers = 2;
  int n_heads = 4;
  int d_model = 64;
  int d_ff = 256;
  int max_seq_len = 160;
  double dropout = 0.1;
  int max_frames = 8;
  int max_regions = 8;
  int max_turns = 10;
  int max_text_len = 96;
  int d_mvm = 0;

  // synthetic corpus geometry
  int dialogues = 2000;
  int val_dialogues = 200;
  int test_dialogues = 200;
  int frames = 4;
  int regions = 4;
  int turns = 3;
  int d_emb = 32;
  double noise = 0.1;

  // objectives
  std::string objectives = "gen,mlm,mvm,mvt";
  double w_gen = 1.5;
  double w_mlm = 1.0;
  double w_mvm = 1.0;
  double w_mvt = 1.0;
  double mask_rate = 0.15;
  double corrupt_rate = 0.15;

  // optimization. The peak rate defaults above the paper's fine-tuning value
  // because this model trains from random initialization.
  double lr_peak = 1e-3;
  int64_t warmup = 500;
  double grad_clip = 1.0;
  int batch_size = 16;
  int epochs = 5;
  int64_t seed = -1;  // mandatory for train / ablate / make-corpus

  // decoding
  std::string strategy = "greedy";
  int k = 5;
  double temperature = 1.0;
  int max_new_tokens = 8;

  // ablation / evaluation controls
  std::string ablation = "full";
  std::string seeds;       // ablate: comma list; empty -> seed, seed+1, seed+2
  bool knockouts = false;  // ablate: add objective-knockout rows
  bool shuffle_videos = false;  // evaluate: mismatched-video control

  // paths
  std::string corpus;
  std::string checkpoint;
  std::string out = "run";

  // Visits every field in the canonical order; F must accept
  // (const char* key, T& field) for int, int64_t, double, bool, string.
  template <class Self, class F>
  static void visit_fields(Self& c, F&& f) {
    f("n_layers", c.n_layers);
    f("n_heads", c.n_heads);
    f("d_model", c.d_model);
    f("d_ff", c.d_ff);
    f("max_seq_len", c.max_seq_len);
    f("dropout", c.dropout);
    f("max_frames", c.max_frames);
    f("max_regions", c.max_regions);
    f("max_turns", c.max_turns);
    f("max_text_len", c.max_text_len);
    f("d_mvm", c.d_mvm);
    f("dialogues", c.dialogues);
    f("val_dialogues", c.val_dialogues);
    f("test_dialogues", c.test_dialogues);
    f("frames", c.frames);
    f("regions", c.regions);
    f("turns", c.turns);
    f("d_emb", c.d_emb);
    f("noise", c.noise);
    f("objectives", c.objectives);
    f("w_gen", c.w_gen);
    f("w_mlm", c.w_mlm);
    f("w_mvm", c.w_mvm);
    f("w_mvt", c.w_mvt);
    f("mask_rate", c.mask_rate);
    f("corrupt_rate", c.corrupt_rate);
    f("lr_peak", c.lr_peak);
    f("warmup", c.warmup);
    f("grad_clip", c.grad_clip);
    f("batch_size", c.batch_size);
    f("epochs", c.epochs);
    f("seed", c.seed);
    f("strategy", c.strategy);
    f("k", c.k);
    f("temperature", c.temperature);
    f("max_new_tokens", c.max_new_tokens);
    f("ablation", c.ablation);
    f("seeds", c.seeds);
    f("knockouts", c.knockouts);
    f("shuffle_videos", c.shuffle_videos);
    f("corpus", c.corpus);
    f("checkpoint", c.checkpoint);
    f("out", c.out);
  }

  std::string to_text() const;
  void apply(const std::map<std::string, std::string>& kv);
  static RunConfig from_file(const std::string& path);

  TransformerConfig transformer_config(int vocab_size) const;
  FusionConfig fusion_config() const;
  TrainOptions train_options() const;
  CorpusGenConfig corpus_config() const;
  DecodeOptions decode_options() const;
  ObjectiveToggles parse_objectives() const;
  AblationMode parse_ablation() const;

  // Throws ConfigError naming the offending field.
  void validate_common() const;
  void validate_train() const;
  void validate_corpus_gen() const;
};

}  // namespace mmfuse

#endif  // MMFUSE_CONFIG_HPP_
