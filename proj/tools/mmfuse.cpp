#include <cstdlib>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "mmfuse/commands.hpp"
#include "mmfuse/config.hpp"
#include "mmfuse/error.hpp"

namespace {

std::string dashify(const std::string& key) {
  std::string out = key;
  for (char& c : out) {
    if (c == '_') c = '-';
  }
  return out;
}

// Every config key is reachable as --key (underscores become dashes); the
// collected strings are applied on top of the config file, so flags win.
struct OptionAdder {
  CLI::App* cmd;
  std::map<std::string, std::string>* kv;

  template <class T>
  void operator()(const char* key, T&) {
    const std::string name = "--" + dashify(key);
    std::map<std::string, std::string>* sink = kv;
    const std::string k = key;
    cmd->add_option_function<std::string>(
        name, [sink, k](const std::string& v) { (*sink)[k] = v; });
  }

  void operator()(const char* key, bool&) {
    const std::string name = "--" + dashify(key);
    std::map<std::string, std::string>* sink = kv;
    const std::string k = key;
    cmd->add_flag_function(name, [sink, k](int64_t) { (*sink)[k] = "true"; });
  }
};

void add_config_options(CLI::App* cmd, std::string* config_path,
                        std::map<std::string, std::string>* kv) {
  cmd->add_option("--config", *config_path, "flat key=value config file");
  mmfuse::RunConfig scratch;
  OptionAdder adder{cmd, kv};
  mmfuse::RunConfig::visit_fields(scratch, adder);
}

mmfuse::RunConfig resolve(const std::string& config_path,
                          const std::map<std::string, std::string>& kv) {
  mmfuse::RunConfig cfg;
  if (!config_path.empty()) cfg = mmfuse::RunConfig::from_file(config_path);
  cfg.apply(kv);
  return cfg;
}

void check_thread_cap() {
  const char* env = std::getenv("MMFUSE_THREADS");
  if (env == nullptr) return;
  try {
    if (std::stoi(env) < 1) {
      throw mmfuse::ConfigError("MMFUSE_THREADS must be >= 1");
    }
  } catch (const mmfuse::ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw mmfuse::ConfigError(std::string("MMFUSE_THREADS is not an integer: ") +
                              env);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multimodal fused-decoder training and evaluation harness"};
  app.require_subcommand(1);

  struct SubState {
    std::string config_path;
    std::map<std::string, std::string> kv;
  };
  SubState make_corpus, train, evaluate, generate, gradcheck, ablate;
  std::string instance_id;
  bool inject_fault = false;

  CLI::App* c_make = app.add_subcommand(
      "make-corpus", "generate the synthetic grounding corpus");
  add_config_options(c_make, &make_corpus.config_path, &make_corpus.kv);

  CLI::App* c_train =
      app.add_subcommand("train", "multi-task training on a corpus");
  add_config_options(c_train, &train.config_path, &train.kv);

  CLI::App* c_eval = app.add_subcommand(
      "evaluate", "greedy decoding plus metrics on the test split");
  add_config_options(c_eval, &evaluate.config_path, &evaluate.kv);

  CLI::App* c_gen =
      app.add_subcommand("generate", "decode one instance and print it");
  add_config_options(c_gen, &generate.config_path, &generate.kv);
  c_gen->add_option("instance_id", instance_id, "corpus instance id")
      ->required();

  CLI::App* c_grad = app.add_subcommand(
      "gradcheck", "finite-difference verification of every gradient");
  add_config_options(c_grad, &gradcheck.config_path, &gradcheck.kv);
  c_grad->add_flag("--inject-fault", inject_fault,
                   "flip a backward rule to prove the check catches it");

  CLI::App* c_abl = app.add_subcommand(
      "ablate", "train and compare full / spatial_only / temporal_only");
  add_config_options(c_abl, &ablate.config_path, &ablate.kv);

  CLI11_PARSE(app, argc, argv);

  try {
    check_thread_cap();
    if (c_make->parsed()) {
      return mmfuse::cmd_make_corpus(
          resolve(make_corpus.config_path, make_corpus.kv), std::cout);
    }
    if (c_train->parsed()) {
      return mmfuse::cmd_train(resolve(train.config_path, train.kv),
                               std::cout);
    }
    if (c_eval->parsed()) {
      return mmfuse::cmd_evaluate(resolve(evaluate.config_path, evaluate.kv),
                                  std::cout);
    }
    if (c_gen->parsed()) {
      return mmfuse::cmd_generate(resolve(generate.config_path, generate.kv),
                                  instance_id, std::cout);
    }
    if (c_grad->parsed()) {
      return mmfuse::cmd_gradcheck(
          resolve(gradcheck.config_path, gradcheck.kv), inject_fault,
          std::cout);
    }
    if (c_abl->parsed()) {
      return mmfuse::cmd_ablate(resolve(ablate.config_path, ablate.kv),
                                std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return mmfuse::exit_code_for(e);
  }
  return 1;
}
