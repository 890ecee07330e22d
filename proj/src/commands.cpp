#include "mmfuse/commands.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mmfuse/error.hpp"
#include "mmfuse/gradcheck.hpp"
#include "mmfuse/graph.hpp"
#include "mmfuse/trainer.hpp"

namespace mmfuse {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

// key=value echo of the resolved config plus the run's scores.
void write_text_report(const std::string& path, const RunConfig& cfg,
                       const std::vector<std::pair<std::string, std::string>>&
                           extra) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write report: " + path);
  for (const auto& [k, v] : extra) out << k << "=" << v << "\n";
  std::istringstream cfg_lines(cfg.to_text());
  std::string line;
  while (std::getline(cfg_lines, line)) out << "config." << line << "\n";
}

json config_json(const RunConfig& cfg) {
  json j;
  std::istringstream cfg_lines(cfg.to_text());
  std::string line;
  while (std::getline(cfg_lines, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) j[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return j;
}

json scores_json(const EvalOutcome& eval) {
  json per = json::array();
  for (const auto& ps : eval.scores.per_instance) {
    per.push_back(json{{"id", ps.id},
                       {"rouge_l", ps.rouge_l},
                       {"cider", ps.cider},
                       {"bleu_match", {ps.bleu_match[0], ps.bleu_match[1],
                                       ps.bleu_match[2], ps.bleu_match[3]}},
                       {"bleu_total", {ps.bleu_total[0], ps.bleu_total[1],
                                       ps.bleu_total[2], ps.bleu_total[3]}}});
  }
  return json{{"bleu1", eval.scores.bleu1},
              {"bleu2", eval.scores.bleu2},
              {"bleu3", eval.scores.bleu3},
              {"bleu4", eval.scores.bleu4},
              {"rouge_l", eval.scores.rouge_l},
              {"cider", eval.scores.cider},
              {"grounding_accuracy", eval.grounding_accuracy},
              {"chance_level", eval.chance_level},
              {"evaluated", eval.evaluated},
              {"per_instance", per}};
}

struct LoadedCheckpoint {
  Model<float> model;
  RunConfig config;
  uint64_t vocab_hash = 0;
};

LoadedCheckpoint load_model_for(const RunConfig& cfg, const Corpus& corpus) {
  if (cfg.checkpoint.empty()) {
    throw ConfigError("field checkpoint: path required");
  }
  LoadedCheckpoint lc;
  lc.model = model_from_checkpoint(load_checkpoint_file(cfg.checkpoint),
                                   &lc.config, &lc.vocab_hash);
  if (lc.vocab_hash != corpus.vocab.hash()) {
    throw VocabMismatchError(
        "checkpoint vocabulary hash does not match the corpus; it was "
        "trained against different data");
  }
  if (lc.model.tcfg.vocab_size != corpus.vocab.size()) {
    throw VocabMismatchError("checkpoint vocabulary size " +
                             std::to_string(lc.model.tcfg.vocab_size) +
                             " does not match corpus " +
                             std::to_string(corpus.vocab.size()));
  }
  return lc;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

int cmd_make_corpus(const RunConfig& cfg, std::ostream& console) {
  cfg.validate_corpus_gen();
  if (cfg.corpus.empty()) throw ConfigError("field corpus: path required");
  const Corpus corpus = generate_corpus(cfg.corpus_config());
  if (const auto dir = fs::path(cfg.corpus).parent_path(); !dir.empty()) {
    fs::create_directories(dir);
  }
  save_corpus(corpus, cfg.corpus);
  console << "wrote " << corpus.records.size() << " records ("
          << cfg.dialogues << " train / " << cfg.val_dialogues << " val / "
          << cfg.test_dialogues << " test), vocabulary "
          << corpus.vocab.size() << " tokens -> " << cfg.corpus << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, std::ostream& console) {
  cfg.validate_train();
  const Corpus corpus = load_corpus(cfg.corpus);
  const TrainOutcome outcome = run_training(cfg, corpus, console);
  console << "final checkpoint: " << outcome.final_checkpoint << "\n";
  console << "best checkpoint:  " << outcome.best_checkpoint
          << " (val_combined=" << fmt(outcome.best_val) << ")\n";
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, std::ostream& console) {
  if (cfg.corpus.empty()) throw ConfigError("field corpus: path required");
  const Corpus corpus = load_corpus(cfg.corpus);
  LoadedCheckpoint lc = load_model_for(cfg, corpus);
  // The ablation pooling is a property of the trained model.
  const AblationMode mode = lc.config.parse_ablation();
  DecodeOptions decode;  // evaluation always decodes greedily
  decode.max_new_tokens = cfg.max_new_tokens;
  const EvalOutcome eval = run_evaluation(lc.model, corpus, "test", mode,
                                          cfg.shuffle_videos, decode);

  fs::create_directories(cfg.out);
  std::vector<std::pair<std::string, std::string>> lines = {
      {"bleu1", fmt(eval.scores.bleu1)},
      {"bleu2", fmt(eval.scores.bleu2)},
      {"bleu3", fmt(eval.scores.bleu3)},
      {"bleu4", fmt(eval.scores.bleu4)},
      {"rouge_l", fmt(eval.scores.rouge_l)},
      {"cider", fmt(eval.scores.cider)},
      {"grounding_accuracy", fmt(eval.grounding_accuracy)},
      {"chance_level", fmt(eval.chance_level)},
      {"evaluated", std::to_string(eval.evaluated)},
      {"shuffle_videos", cfg.shuffle_videos ? "true" : "false"},
  };
  RunConfig echoed = lc.config;
  echoed.corpus = cfg.corpus;
  echoed.checkpoint = cfg.checkpoint;
  echoed.out = cfg.out;
  echoed.shuffle_videos = cfg.shuffle_videos;
  write_text_report(cfg.out + "/report.txt", echoed, lines);
  json j{{"scores", scores_json(eval)}, {"config", config_json(echoed)}};
  std::ofstream jf(cfg.out + "/report.json", std::ios::trunc);
  jf << j.dump(2) << "\n";

  for (const auto& [k, v] : lines) console << k << "=" << v << "\n";
  console << "reports: " << cfg.out << "/report.txt, " << cfg.out
          << "/report.json\n";
  return 0;
}

int cmd_generate(const RunConfig& cfg, const std::string& instance_id,
                 std::ostream& console) {
  if (cfg.corpus.empty()) throw ConfigError("field corpus: path required");
  const Corpus corpus = load_corpus(cfg.corpus);
  LoadedCheckpoint lc = load_model_for(cfg, corpus);
  const CorpusRecord* rec = corpus.find(instance_id);
  if (rec == nullptr) {
    throw UnknownIdError("no instance '" + instance_id + "' in " + cfg.corpus);
  }
  const AblationMode mode = lc.config.parse_ablation();
  DialogueInstance inst = to_instance(*rec, corpus.vocab);
  VideoFeatures<float> video =
      apply_ablation(to_video<float>(rec->video), mode);
  const std::vector<int> ids =
      generate(inst, video, lc.model, cfg.decode_options());
  std::vector<std::string> toks;
  for (int t : ids) toks.push_back(corpus.vocab.token(t));
  std::string text;
  for (size_t i = 0; i < toks.size(); ++i) {
    if (i) text += " ";
    text += toks[i];
  }
  console << text << "\n";
  return 0;
}

int cmd_gradcheck(const RunConfig& cfg, bool inject_fault,
                  std::ostream& console) {
  testhooks::negate_relu_backward = inject_fault;
  const GradCheckReport report =
      run_gradcheck(cfg.seed >= 0 ? static_cast<uint64_t>(cfg.seed) : 2026);
  testhooks::negate_relu_backward = false;
  for (const auto& [name, err] : report.per_param) {
    console << "  " << std::left << std::setw(28) << name << " max_rel_err="
            << fmt(err) << "\n";
  }
  console << "gradcheck: elements=" << report.elements_checked
          << " max_rel_err=" << fmt(report.max_rel_err) << " worst="
          << report.worst_param << " -> "
          << (report.pass() ? "PASS" : "FAIL") << "\n";
  return report.pass() ? 0 : 6;
}

int cmd_ablate(const RunConfig& cfg, std::ostream& console) {
  cfg.validate_train();
  const Corpus corpus = load_corpus(cfg.corpus);

  std::vector<int64_t> seeds;
  if (cfg.seeds.empty()) {
    seeds = {cfg.seed, cfg.seed + 1, cfg.seed + 2};
  } else {
    std::istringstream in(cfg.seeds);
    std::string item;
    while (std::getline(in, item, ',')) {
      if (item.empty()) continue;
      try {
        seeds.push_back(std::stoll(item));
      } catch (const std::exception&) {
        throw ConfigError("field seeds: '" + item + "' is not an integer");
      }
    }
    if (seeds.empty()) throw ConfigError("field seeds: empty list");
  }

  struct Variant {
    std::string name;
    std::string ablation;
    std::string objectives;
  };
  std::vector<Variant> variants = {
      {"full", "full", cfg.objectives},
      {"spatial_only", "spatial_only", cfg.objectives},
      {"temporal_only", "temporal_only", cfg.objectives},
  };
  if (cfg.knockouts) {
    auto drop = [&cfg](const std::string& what) {
      std::string out;
      std::istringstream in(cfg.objectives);
      std::string item;
      while (std::getline(in, item, ',')) {
        if (item.empty() || item == what) continue;
        if (!out.empty()) out += ",";
        out += item;
      }
      return out;
    };
    variants.push_back({"no_mlm", "full", drop("mlm")});
    variants.push_back({"no_mvm", "full", drop("mvm")});
    variants.push_back({"no_mvt", "full", drop("mvt")});
  }

  struct Row {
    std::string name;
    std::vector<double> accuracy;
    std::vector<double> cider;
    std::vector<double> bleu4;
    std::vector<double> rouge_l;
  };
  std::vector<Row> rows;
  fs::create_directories(cfg.out);

  for (const auto& variant : variants) {
    Row row;
    row.name = variant.name;
    for (int64_t seed : seeds) {
      RunConfig sub = cfg;
      sub.seed = seed;
      sub.ablation = variant.ablation;
      sub.objectives = variant.objectives;
      sub.out = cfg.out + "/" + variant.name + "_seed" + std::to_string(seed);
      console << "[ablate] training " << variant.name << " seed " << seed
              << "\n";
      run_training(sub, corpus, console);
      LoadedCheckpoint lc;
      lc.model = model_from_checkpoint(
          load_checkpoint_file(sub.out + "/best.ckpt"), &lc.config,
          &lc.vocab_hash);
      DecodeOptions decode;
      decode.max_new_tokens = cfg.max_new_tokens;
      const EvalOutcome eval =
          run_evaluation(lc.model, corpus, "test", sub.parse_ablation(),
                         /*shuffle_videos=*/false, decode);
      row.accuracy.push_back(eval.grounding_accuracy);
      row.cider.push_back(eval.scores.cider);
      row.bleu4.push_back(eval.scores.bleu4);
      row.rouge_l.push_back(eval.scores.rouge_l);
      console << "[ablate] " << variant.name << " seed " << seed
              << " grounding=" << fmt(eval.grounding_accuracy)
              << " cider=" << fmt(eval.scores.cider) << "\n";
    }
    rows.push_back(std::move(row));
  }

  // Directional check mirroring the spatio-temporal comparison; reported
  // either way, failures flagged rather than fatal.
  const double full_mean = mean_of(rows[0].accuracy);
  const double spatial_mean = mean_of(rows[1].accuracy);
  const double temporal_mean = mean_of(rows[2].accuracy);
  const bool ordering_ok =
      full_mean >= spatial_mean && full_mean >= temporal_mean;

  std::ostringstream table;
  table << std::left << std::setw(16) << "variant";
  for (int64_t seed : seeds) table << std::setw(12) << ("acc@" + std::to_string(seed));
  table << std::setw(12) << "acc_mean" << std::setw(12) << "acc_std"
        << std::setw(12) << "cider" << std::setw(12) << "bleu4"
        << std::setw(12) << "rouge_l" << "\n";
  for (const auto& row : rows) {
    table << std::setw(16) << row.name;
    for (double a : row.accuracy) table << std::setw(12) << fmt(a);
    table << std::setw(12) << fmt(mean_of(row.accuracy)) << std::setw(12)
          << fmt(stddev_of(row.accuracy)) << std::setw(12)
          << fmt(mean_of(row.cider)) << std::setw(12)
          << fmt(mean_of(row.bleu4)) << std::setw(12)
          << fmt(mean_of(row.rouge_l)) << "\n";
  }
  table << "ordering="
        << (ordering_ok ? "confirmed" : "violated (informational)") << "\n";

  std::ofstream tf(cfg.out + "/ablation.txt", std::ios::trunc);
  if (!tf) throw IoError("cannot write " + cfg.out + "/ablation.txt");
  tf << table.str();
  std::istringstream cfg_lines(cfg.to_text());
  std::string line;
  while (std::getline(cfg_lines, line)) tf << "config." << line << "\n";

  json jrows = json::array();
  for (const auto& row : rows) {
    jrows.push_back(json{{"variant", row.name},
                         {"accuracy", row.accuracy},
                         {"accuracy_mean", mean_of(row.accuracy)},
                         {"accuracy_std", stddev_of(row.accuracy)},
                         {"cider_mean", mean_of(row.cider)},
                         {"bleu4_mean", mean_of(row.bleu4)},
                         {"rouge_l_mean", mean_of(row.rouge_l)}});
  }
  json j{{"rows", jrows},
         {"ordering_confirmed", ordering_ok},
         {"seeds", seeds},
         {"config", config_json(cfg)}};
  std::ofstream jf(cfg.out + "/ablation.json", std::ios::trunc);
  jf << j.dump(2) << "\n";

  console << table.str();
  console << "reports: " << cfg.out << "/ablation.txt, " << cfg.out
          << "/ablation.json\n";
  return 0;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) != nullptr) return 2;
  if (dynamic_cast<const NumericError*>(&e) != nullptr) return 3;
  if (dynamic_cast<const VocabMismatchError*>(&e) != nullptr) return 4;
  if (dynamic_cast<const UnknownIdError*>(&e) != nullptr) return 5;
  return 1;
}

}  // namespace mmfuse
