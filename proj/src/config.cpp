#include "mmfuse/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "mmfuse/error.hpp"

namespace mmfuse {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct Printer {
  std::ostringstream out;
  void operator()(const char* key, const int& v) { out << key << "=" << v << "\n"; }
  void operator()(const char* key, const int64_t& v) {
    out << key << "=" << v << "\n";
  }
  void operator()(const char* key, const double& v) {
    out << key << "=" << fmt_double(v) << "\n";
  }
  void operator()(const char* key, const bool& v) {
    out << key << "=" << (v ? "true" : "false") << "\n";
  }
  void operator()(const char* key, const std::string& v) {
    out << key << "=" << v << "\n";
  }
};

struct Setter {
  const std::map<std::string, std::string>* kv;
  std::map<std::string, bool>* used;

  template <class T>
  void assign(const char* key, T& field) {
    auto it = kv->find(key);
    if (it == kv->end()) return;
    (*used)[key] = true;
    parse(key, it->second, field);
  }
  void operator()(const char* key, int& v) { assign(key, v); }
  void operator()(const char* key, int64_t& v) { assign(key, v); }
  void operator()(const char* key, double& v) { assign(key, v); }
  void operator()(const char* key, bool& v) { assign(key, v); }
  void operator()(const char* key, std::string& v) { assign(key, v); }

  static void parse(const char* key, const std::string& s, int& v) {
    try {
      size_t pos = 0;
      v = std::stoi(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      throw ConfigError(std::string("field ") + key + ": '" + s +
                        "' is not an integer");
    }
  }
  static void parse(const char* key, const std::string& s, int64_t& v) {
    try {
      size_t pos = 0;
      v = std::stoll(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      throw ConfigError(std::string("field ") + key + ": '" + s +
                        "' is not an integer");
    }
  }
  static void parse(const char* key, const std::string& s, double& v) {
    try {
      size_t pos = 0;
      v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      throw ConfigError(std::string("field ") + key + ": '" + s +
                        "' is not a number");
    }
  }
  static void parse(const char* key, const std::string& s, bool& v) {
    if (s == "true" || s == "1") {
      v = true;
    } else if (s == "false" || s == "0") {
      v = false;
    } else {
      throw ConfigError(std::string("field ") + key + ": '" + s +
                        "' is not a boolean");
    }
  }
  static void parse(const char*, const std::string& s, std::string& v) {
    v = s;
  }
};

}  // namespace

std::string RunConfig::to_text() const {
  Printer p;
  visit_fields(*this, p);
  return p.out.str();
}

void RunConfig::apply(const std::map<std::string, std::string>& kv) {
  std::map<std::string, bool> used;
  Setter s{&kv, &used};
  visit_fields(*this, s);
  for (const auto& [key, value] : kv) {
    if (key.rfind("run.", 0) == 0) continue;  // checkpoint run-state keys
    if (!used.count(key)) {
      throw ConfigError("unknown config key: " + key);
    }
  }
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(n) +
                        " is not key=value: " + line);
    }
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  RunConfig cfg;
  cfg.apply(kv);
  return cfg;
}

TransformerConfig RunConfig::transformer_config(int vocab_size) const {
  TransformerConfig tc;
  tc.n_layers = n_layers;
  tc.n_heads = n_heads;
  tc.d_model = d_model;
  tc.d_ff = d_ff;
  tc.vocab_size = vocab_size;
  tc.max_seq_len = max_seq_len;
  tc.dropout_rate = dropout;
  return tc;
}

FusionConfig RunConfig::fusion_config() const {
  FusionConfig fc;
  fc.d_emb = d_emb;
  fc.max_frames = max_frames;
  fc.max_regions = max_regions;
  fc.max_turns = max_turns;
  fc.max_text_len = max_text_len;
  fc.d_mvm = d_mvm;
  return fc;
}

TrainOptions RunConfig::train_options() const {
  TrainOptions opts;
  opts.toggles = parse_objectives();
  opts.weights.gen = w_gen;
  opts.weights.mlm = w_mlm;
  opts.weights.mvm = w_mvm;
  opts.weights.mvt = w_mvt;
  opts.mask_rate = mask_rate;
  opts.corrupt_rate = corrupt_rate;
  opts.lr_peak = lr_peak;
  opts.warmup_steps = warmup;
  opts.grad_clip = grad_clip;
  return opts;
}

CorpusGenConfig RunConfig::corpus_config() const {
  CorpusGenConfig gc;
  gc.seed = static_cast<uint64_t>(seed);
  gc.n_train = dialogues;
  gc.n_val = val_dialogues;
  gc.n_test = test_dialogues;
  gc.frames = frames;
  gc.regions = regions;
  gc.turns_per_dialogue = turns;
  gc.d_emb = d_emb;
  gc.noise = noise;
  return gc;
}

DecodeOptions RunConfig::decode_options() const {
  DecodeOptions d;
  if (strategy == "greedy") {
    d.strategy = DecodeOptions::Strategy::Greedy;
  } else if (strategy == "top_k") {
    d.strategy = DecodeOptions::Strategy::TopK;
  } else {
    throw ConfigError("field strategy: expected greedy or top_k, got '" +
                      strategy + "'");
  }
  d.k = k;
  d.temperature = temperature;
  d.max_new_tokens = max_new_tokens;
  d.seed = seed < 0 ? 0 : static_cast<uint64_t>(seed);
  return d;
}

ObjectiveToggles RunConfig::parse_objectives() const {
  ObjectiveToggles t;
  t.gen = t.mlm = t.mvm = t.mvt = false;
  std::istringstream in(objectives);
  std::string item;
  bool any = false;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    any = true;
    if (item == "gen") {
      t.gen = true;
    } else if (item == "mlm") {
      t.mlm = true;
    } else if (item == "mvm") {
      t.mvm = true;
    } else if (item == "mvt") {
      t.mvt = true;
    } else {
      throw ConfigError("field objectives: unknown objective '" + item + "'");
    }
  }
  if (!any) throw ConfigError("field objectives: at least one required");
  return t;
}

AblationMode RunConfig::parse_ablation() const {
  if (ablation == "full") return AblationMode::Full;
  if (ablation == "spatial_only") return AblationMode::SpatialOnly;
  if (ablation == "temporal_only") return AblationMode::TemporalOnly;
  throw ConfigError(
      "field ablation: expected full, spatial_only or temporal_only, got '" +
      ablation + "'");
}

void RunConfig::validate_common() const {
  transformer_config(5).validate();  // vocab filled later; 5 = specials
  fusion_config().validate();
  parse_objectives();
  parse_ablation();
  decode_options().validate();
  if (!(mask_rate > 0.0 && mask_rate < 1.0)) {
    throw ConfigError("field mask_rate: must lie in (0, 1)");
  }
  if (!(corrupt_rate >= 0.0 && corrupt_rate < 1.0)) {
    throw ConfigError("field corrupt_rate: must lie in [0, 1)");
  }
  if (!(lr_peak > 0.0)) throw ConfigError("field lr_peak: must be > 0");
  if (warmup < 1) throw ConfigError("field warmup: must be >= 1");
  if (grad_clip < 0.0) throw ConfigError("field grad_clip: must be >= 0");
  if (batch_size < 1) throw ConfigError("field batch_size: must be >= 1");
  if (epochs < 1) throw ConfigError("field epochs: must be >= 1");
  if (w_gen < 0 || w_mlm < 0 || w_mvm < 0 || w_mvt < 0) {
    throw ConfigError("field w_*: loss weights must be >= 0");
  }
}

void RunConfig::validate_train() const {
  validate_common();
  if (seed < 0) {
    throw ConfigError("field seed: a seed is mandatory for this command");
  }
  if (corpus.empty()) throw ConfigError("field corpus: path required");
}

void RunConfig::validate_corpus_gen() const {
  if (seed < 0) {
    throw ConfigError("field seed: a seed is mandatory for this command");
  }
  if (dialogues < 1) throw ConfigError("field dialogues: must be >= 1");
  if (val_dialogues < 0 || test_dialogues < 0) {
    throw ConfigError("field val_dialogues/test_dialogues: must be >= 0");
  }
  if (frames < 1 || frames > max_frames) {
    throw ConfigError("field frames: must lie in [1, max_frames]");
  }
  if (regions < 1 || regions > max_regions) {
    throw ConfigError("field regions: must lie in [1, max_regions]");
  }
  if (turns < 1 || turns > max_turns) {
    throw ConfigError("field turns: must lie in [1, max_turns]");
  }
  if (d_emb < 1) throw ConfigError("field d_emb: must be >= 1");
  if (noise < 0) throw ConfigError("field noise: must be >= 0");
}

}  // namespace mmfuse
