#include "mmfuse/trainer.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

#include "mmfuse/error.hpp"
#include "mmfuse/objectives.hpp"

namespace mmfuse {

namespace {

constexpr uint64_t kValStream = 0x56414c3231ULL;  // validation RNG derivation

std::string hex_u64(uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "0x%016" PRIx64, v);
  return buf;
}

uint64_t parse_u64(const std::string& s, const std::string& what) {
  try {
    return std::stoull(s, nullptr, 0);
  } catch (const std::exception&) {
    throw IoError("checkpoint run state: bad " + what + " value '" + s + "'");
  }
}

std::string hexfloat(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

// Geometry fields that must agree between a resume config and the checkpoint.
const char* const kGeometryKeys[] = {
    "n_layers", "n_heads",    "d_model",     "d_ff",     "max_seq_len",
    "max_frames", "max_regions", "max_turns", "max_text_len", "d_mvm",
    "d_emb",    "ablation"};

std::map<std::string, std::string> config_kv(const RunConfig& cfg) {
  std::map<std::string, std::string> kv;
  std::istringstream in(cfg.to_text());
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

std::string format_log_line(int64_t step, double lr, const LossBundle& b) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "%" PRId64 "\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g", step, lr,
                b.gen, b.mlm, b.mvm, b.mvt, b.combined);
  return buf;
}

}  // namespace

PreparedData prepare_split(const Corpus& corpus, const std::string& split,
                           AblationMode mode) {
  PreparedData out;
  for (const auto& rec : corpus.records) {
    if (rec.split != split) continue;
    out.records.push_back(&rec);
    out.dialogues.push_back(to_instance(rec, corpus.vocab));
    out.videos.push_back(apply_ablation(to_video<float>(rec.video), mode));
  }
  return out;
}

Checkpoint snapshot_run(const RunConfig& cfg, const Model<float>& model,
                        const AdamState<float>& opt, const Rng& rng,
                        int epoch_done, int64_t global_step, double best_val,
                        uint64_t vocab_hash) {
  Checkpoint ckpt;
  std::ostringstream cfg_text;
  {
    // Paths stay out of the checkpoint: moving a run directory must not
    // change the checkpoint bytes.
    std::istringstream lines(cfg.to_text());
    std::string line;
    while (std::getline(lines, line)) {
      if (line.rfind("corpus=", 0) == 0 || line.rfind("checkpoint=", 0) == 0 ||
          line.rfind("out=", 0) == 0) {
        continue;
      }
      cfg_text << line << "\n";
    }
  }
  cfg_text << "run.adam_step=" << opt.step << "\n";
  cfg_text << "run.rng_state=" << hex_u64(rng.state()) << "\n";
  cfg_text << "run.rng_inc=" << hex_u64(rng.inc()) << "\n";
  cfg_text << "run.epoch_done=" << epoch_done << "\n";
  cfg_text << "run.global_step=" << global_step << "\n";
  cfg_text << "run.best_val=" << hexfloat(best_val) << "\n";
  cfg_text << "run.vocab_hash=" << hex_u64(vocab_hash) << "\n";
  ckpt.config_text = cfg_text.str();
  for (int i = 0; i < model.params.count(); ++i) {
    ckpt.arrays.emplace_back("param/" + model.params.name(i), model.params[i]);
  }
  for (int i = 0; i < model.params.count(); ++i) {
    ckpt.arrays.emplace_back("adam.m/" + model.params.name(i), opt.m[i]);
  }
  for (int i = 0; i < model.params.count(); ++i) {
    ckpt.arrays.emplace_back("adam.v/" + model.params.name(i), opt.v[i]);
  }
  return ckpt;
}

Model<float> model_from_checkpoint(const Checkpoint& ckpt,
                                   RunConfig* embedded_cfg,
                                   uint64_t* vocab_hash) {
  const auto kv = ckpt.config_map();
  RunConfig cfg;
  {
    std::map<std::string, std::string> plain;
    for (const auto& [key, value] : kv) {
      if (key.rfind("run.", 0) != 0) plain[key] = value;
    }
    cfg.apply(plain);
  }
  const Tensor<float>* tok = ckpt.find("param/token_embedding");
  if (tok == nullptr) {
    throw IoError("checkpoint lacks the token_embedding array");
  }
  const int vocab_size = tok->shape[0];
  Rng throwaway(0);
  Model<float> model = Model<float>::init(cfg.transformer_config(vocab_size),
                                          cfg.fusion_config(), throwaway);
  for (int i = 0; i < model.params.count(); ++i) {
    const std::string name = "param/" + model.params.name(i);
    const Tensor<float>* arr = ckpt.find(name);
    if (arr == nullptr) {
      throw IoError("checkpoint lacks array '" + name + "'");
    }
    if (arr->shape != model.params[i].shape) {
      throw IoError("checkpoint array '" + name + "' has shape " +
                    Tensor<float>::shape_str(arr->shape) + ", expected " +
                    Tensor<float>::shape_str(model.params[i].shape));
    }
    model.params[i] = *arr;
  }
  if (embedded_cfg != nullptr) *embedded_cfg = cfg;
  if (vocab_hash != nullptr) {
    auto it = kv.find("run.vocab_hash");
    *vocab_hash = it == kv.end() ? 0 : parse_u64(it->second, "vocab_hash");
  }
  return model;
}

RestoredRun restore_run(const Checkpoint& ckpt) {
  RestoredRun rr;
  rr.model = model_from_checkpoint(ckpt, &rr.config, &rr.vocab_hash);
  const auto kv = ckpt.config_map();
  auto need = [&kv](const char* key) -> std::string {
    auto it = kv.find(key);
    if (it == kv.end()) {
      throw IoError(std::string("checkpoint lacks run state key ") + key);
    }
    return it->second;
  };
  rr.opt = AdamState<float>::zeros_like(rr.model.params);
  rr.opt.step = static_cast<int64_t>(parse_u64(need("run.adam_step"),
                                               "adam_step"));
  for (int i = 0; i < rr.model.params.count(); ++i) {
    const std::string base = rr.model.params.name(i);
    const Tensor<float>* m = ckpt.find("adam.m/" + base);
    const Tensor<float>* v = ckpt.find("adam.v/" + base);
    if (m == nullptr || v == nullptr) {
      throw IoError("checkpoint lacks Adam state for '" + base + "'");
    }
    if (m->shape != rr.model.params[i].shape ||
        v->shape != rr.model.params[i].shape) {
      throw IoError("checkpoint Adam state for '" + base +
                    "' disagrees with the parameter shape");
    }
    rr.opt.m[i] = *m;
    rr.opt.v[i] = *v;
  }
  rr.rng.restore(parse_u64(need("run.rng_state"), "rng_state"),
                 parse_u64(need("run.rng_inc"), "rng_inc"));
  rr.epoch_done = static_cast<int>(parse_u64(need("run.epoch_done"),
                                             "epoch_done"));
  rr.global_step = static_cast<int64_t>(parse_u64(need("run.global_step"),
                                                  "global_step"));
  rr.best_val = std::strtod(need("run.best_val").c_str(), nullptr);
  return rr;
}

TrainOutcome run_training(const RunConfig& cfg, const Corpus& corpus,
                          std::ostream& console) {
  cfg.validate_train();
  const AblationMode mode = cfg.parse_ablation();
  PreparedData train = prepare_split(corpus, "train", mode);
  PreparedData val = prepare_split(corpus, "val", mode);
  if (train.size() == 0) {
    throw ConfigError("field corpus: no records in the train split");
  }
  const uint64_t vocab_hash = corpus.vocab.hash();
  const TrainOptions opts = cfg.train_options();

  Model<float> model;
  AdamState<float> opt;
  Rng rng(static_cast<uint64_t>(cfg.seed));
  int epoch_done = 0;
  int64_t gstep = 0;
  double best_val = std::numeric_limits<double>::infinity();
  const bool resuming = !cfg.checkpoint.empty();
  if (resuming) {
    RestoredRun rr = restore_run(load_checkpoint_file(cfg.checkpoint));
    if (rr.vocab_hash != vocab_hash) {
      throw VocabMismatchError(
          "checkpoint was trained against a different vocabulary (hash " +
          hex_u64(rr.vocab_hash) + " vs corpus " + hex_u64(vocab_hash) + ")");
    }
    const auto ours = config_kv(cfg);
    const auto theirs = config_kv(rr.config);
    for (const char* key : kGeometryKeys) {
      if (ours.at(key) != theirs.at(key)) {
        throw ConfigError(std::string("field ") + key +
                          ": resume value differs from the checkpoint (" +
                          ours.at(key) + " vs " + theirs.at(key) + ")");
      }
    }
    model = std::move(rr.model);
    opt = std::move(rr.opt);
    rng = rr.rng;
    epoch_done = rr.epoch_done;
    gstep = rr.global_step;
    best_val = rr.best_val;
  } else {
    model = Model<float>::init(cfg.transformer_config(corpus.vocab.size()),
                               cfg.fusion_config(), rng);
    opt = AdamState<float>::zeros_like(model.params);
  }

  namespace fs = std::filesystem;
  fs::create_directories(cfg.out);
  const std::string log_path = cfg.out + "/loss_log.tsv";
  const std::string final_path = cfg.out + "/final.ckpt";
  const std::string best_path = cfg.out + "/best.ckpt";
  std::ofstream log(log_path, resuming ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot open loss log: " + log_path);

  TrainOutcome outcome;
  outcome.best_val = best_val;
  std::vector<size_t> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = epoch_done + 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double last_combined = 0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(cfg.batch_size)) {
      const size_t stop =
          std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      std::vector<TrainItem<float>> batch;
      batch.reserve(stop - start);
      for (size_t i = start; i < stop; ++i) {
        batch.push_back(
            {&train.dialogues[order[i]], &train.videos[order[i]], false});
      }
      ++gstep;
      const LossBundle bundle =
          train_step(batch, model, opt, opts, gstep, rng);
      last_combined = bundle.combined;
      log << format_log_line(
                 gstep, lr_schedule(gstep, opts.lr_peak, opts.warmup_steps),
                 bundle)
          << "\n";
    }
    outcome.last_combined = last_combined;

    double vloss = std::numeric_limits<double>::quiet_NaN();
    if (val.size() > 0) {
      Rng vrng(static_cast<uint64_t>(cfg.seed) ^ kValStream);
      double sum = 0;
      int batches = 0;
      for (size_t start = 0; start < val.size();
           start += static_cast<size_t>(cfg.batch_size)) {
        const size_t stop =
            std::min(val.size(), start + static_cast<size_t>(cfg.batch_size));
        std::vector<TrainItem<float>> batch;
        for (size_t i = start; i < stop; ++i) {
          batch.push_back({&val.dialogues[i], &val.videos[i], false});
        }
        sum += evaluate_loss(batch, model, opts, vrng).combined;
        ++batches;
      }
      vloss = sum / batches;
      if (vloss < best_val) {
        best_val = vloss;
        save_checkpoint_file(snapshot_run(cfg, model, opt, rng, epoch, gstep,
                                          best_val, vocab_hash),
                             best_path);
      }
    }
    save_checkpoint_file(snapshot_run(cfg, model, opt, rng, epoch, gstep,
                                      best_val, vocab_hash),
                         final_path);
    console << "epoch " << epoch << "/" << cfg.epochs
            << " train_combined=" << last_combined;
    if (std::isfinite(vloss)) console << " val_combined=" << vloss;
    console << "\n";
  }
  if (val.size() == 0 || !fs::exists(best_path)) {
    // No validation split: the final state is the best we know of.
    if (fs::exists(final_path)) fs::copy_file(final_path, best_path,
                                              fs::copy_options::overwrite_existing);
  }
  outcome.final_checkpoint = final_path;
  outcome.best_checkpoint = best_path;
  outcome.best_val = best_val;
  outcome.steps = gstep;
  return outcome;
}

EvalOutcome run_evaluation(const Model<float>& model, const Corpus& corpus,
                           const std::string& split, AblationMode mode,
                           bool shuffle_videos, const DecodeOptions& opts) {
  PreparedData data = prepare_split(corpus, split, mode);
  if (data.size() == 0) {
    throw ContractError("no records in split '" + split + "'");
  }
  EvalOutcome out;
  std::vector<GenerateRequest<float>> requests;
  for (size_t i = 0; i < data.size(); ++i) {
    GenerateRequest<float> req;
    req.id = data.dialogues[i].id;
    req.dialogue = &data.dialogues[i];
    // Mismatched-video control: every instance sees its neighbour's video.
    req.video = shuffle_videos ? &data.videos[(i + 1) % data.size()]
                               : &data.videos[i];
    requests.push_back(req);
  }
  GenerateBatchResult<float> gen = batch_generate(requests, model, opts);
  for (const auto& [id, why] : gen.errors) {
    throw Error("generation failed for instance " + id + ": " + why);
  }

  std::map<std::string, std::vector<std::string>> responses;
  std::map<std::string, std::vector<std::vector<std::string>>> references;
  int exact = 0;
  for (size_t i = 0; i < data.size(); ++i) {
    const CorpusRecord& rec = *data.records[i];
    const std::vector<int>& ids = gen.responses.at(rec.id);
    std::vector<std::string> toks;
    for (int t : ids) toks.push_back(corpus.vocab.token(t));
    responses[rec.id] = toks;
    std::vector<std::vector<std::string>> refs;
    for (const auto& r : rec.references) {
      refs.push_back(Vocabulary::split_lower(r));
    }
    references[rec.id] = refs;
    if (toks == Vocabulary::split_lower(rec.target)) ++exact;
  }
  out.scores = evaluate_corpus(responses, references);
  out.grounding_accuracy =
      static_cast<double>(exact) / static_cast<double>(data.size());
  out.evaluated = static_cast<int>(data.size());
  out.responses = std::move(responses);
  return out;
}

}  // namespace mmfuse
