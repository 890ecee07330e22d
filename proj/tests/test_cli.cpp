#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "mmfuse/commands.hpp"
#include "mmfuse/error.hpp"

namespace fs = std::filesystem;

namespace {

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() /
          ("mmfuse_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string path(const std::string& name) const {
    return (dir / name).string();
  }
};

int run(const std::string& args, const Workspace& ws,
        std::string* output = nullptr, const std::string& env = "") {
  const std::string out_file = ws.path("cmd_output.txt");
  const std::string cmd = env + (env.empty() ? "" : " ") + MMFUSE_BIN_PATH +
                          " " + args + " > " + out_file + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (output != nullptr) {
    std::ifstream in(out_file);
    std::ostringstream os;
    os << in.rdbuf();
    *output = os.str();
  }
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Small enough to train in about a second.
const char* kTinyFlags =
    " --n-layers 1 --n-heads 2 --d-model 16 --d-ff 32 --d-emb 8"
    " --frames 2 --regions 2 --dialogues 16 --val-dialogues 4"
    " --test-dialogues 4 --batch-size 8 --epochs 2 --warmup 10"
    " --lr-peak 2e-3";

void make_tiny_corpus(const Workspace& ws, const std::string& name,
                      int corpus_seed, int frames = 2) {
  std::string out;
  const int rc = run("make-corpus --corpus " + ws.path(name) + " --seed " +
                         std::to_string(corpus_seed) + " --dialogues 16" +
                         " --val-dialogues 4 --test-dialogues 4 --frames " +
                         std::to_string(frames) + " --regions 2 --d-emb 8",
                     ws, &out);
  REQUIRE(rc == 0);
}

}  // namespace

TEST_CASE("exit code mapping") {
  CHECK(mmfuse::exit_code_for(mmfuse::ConfigError("x")) == 2);
  CHECK(mmfuse::exit_code_for(mmfuse::NumericError("x")) == 3);
  CHECK(mmfuse::exit_code_for(mmfuse::VocabMismatchError("x")) == 4);
  CHECK(mmfuse::exit_code_for(mmfuse::UnknownIdError("x")) == 5);
  CHECK(mmfuse::exit_code_for(mmfuse::IoError("x")) == 1);
  CHECK(mmfuse::exit_code_for(std::runtime_error("x")) == 1);
}

TEST_CASE("train twice with one seed gives identical logs and checkpoints") {
  Workspace ws;
  make_tiny_corpus(ws, "c.jsonl", 3);
  std::string out;
  for (const char* dir : {"runA", "runB"}) {
    const int rc = run("train --corpus " + ws.path("c.jsonl") + " --seed 11" +
                           kTinyFlags + " --out " + ws.path(dir),
                       ws, &out);
    REQUIRE_MESSAGE(rc == 0, out);
  }
  CHECK(slurp(ws.path("runA/loss_log.tsv")) ==
        slurp(ws.path("runB/loss_log.tsv")));
  CHECK(slurp(ws.path("runA/final.ckpt")) == slurp(ws.path("runB/final.ckpt")));
  CHECK(slurp(ws.path("runA/best.ckpt")) == slurp(ws.path("runB/best.ckpt")));

  // loss log shape: step, lr, gen, mlm, mvm, mvt, combined
  std::istringstream log(slurp(ws.path("runA/loss_log.tsv")));
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    ++lines;
    int tabs = 0;
    for (char c : line) tabs += c == '\t' ? 1 : 0;
    CHECK(tabs == 6);
  }
  CHECK(lines == 4);  // 16 dialogues / batch 8 * 2 epochs
}

TEST_CASE("config file plus flag overrides, flags win") {
  Workspace ws;
  make_tiny_corpus(ws, "c.jsonl", 3);
  {
    std::ofstream cfg(ws.path("run.cfg"));
    cfg << "epochs=1\nbatch_size=8\nn_layers=1\nn_heads=2\nd_model=16\n"
        << "d_ff=32\nd_emb=8\nwarmup=10\nseed=11\n"
        << "corpus=" << ws.path("c.jsonl") << "\n"
        << "out=" << ws.path("cfg_run") << "\n";
  }
  std::string out;
  const int rc = run("train --config " + ws.path("run.cfg") +
                         " --epochs 2",  // override wins
                     ws, &out);
  REQUIRE_MESSAGE(rc == 0, out);
  std::istringstream log(slurp(ws.path("cfg_run/loss_log.tsv")));
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) ++lines;
  CHECK(lines == 4);  // 2 epochs, not the config file's 1

  // unknown keys are rejected with exit code 2
  {
    std::ofstream cfg(ws.path("bad.cfg"));
    cfg << "not_a_field=1\n";
  }
  CHECK(run("train --config " + ws.path("bad.cfg"), ws, &out) == 2);
  CHECK(out.find("not_a_field") != std::string::npos);
}

TEST_CASE("missing seed and invalid fields exit with code 2, naming the "
          "field") {
  Workspace ws;
  make_tiny_corpus(ws, "c.jsonl", 3);
  std::string out;
  CHECK(run("train --corpus " + ws.path("c.jsonl") + kTinyFlags, ws, &out) ==
        2);
  CHECK(out.find("seed") != std::string::npos);
  CHECK(run("train --corpus " + ws.path("c.jsonl") + " --seed 1 --epochs 0",
            ws, &out) == 2);
  CHECK(out.find("epochs") != std::string::npos);
  CHECK(run("train --corpus " + ws.path("c.jsonl") +
                " --seed 1 --objectives nope",
            ws, &out) == 2);
  CHECK(out.find("objectives") != std::string::npos);
}

TEST_CASE("evaluate: reproducible reports with a full config echo") {
  Workspace ws;
  make_tiny_corpus(ws, "c.jsonl", 3);
  std::string out;
  REQUIRE(run("train --corpus " + ws.path("c.jsonl") + " --seed 11" +
                  kTinyFlags + " --out " + ws.path("run"),
              ws, &out) == 0);
  const std::string eval_cmd = "evaluate --corpus " + ws.path("c.jsonl") +
                               " --checkpoint " + ws.path("run/best.ckpt") +
                               " --out " + ws.path("eval");
  REQUIRE_MESSAGE(run(eval_cmd, ws, &out) == 0, out);
  const std::string first_txt = slurp(ws.path("eval/report.txt"));
  const std::string first_json = slurp(ws.path("eval/report.json"));
  REQUIRE(run(eval_cmd, ws, &out) == 0);
  CHECK(slurp(ws.path("eval/report.txt")) == first_txt);
  CHECK(slurp(ws.path("eval/report.json")) == first_json);
  const std::string report = first_txt;
  CHECK(report.find("grounding_accuracy=") != std::string::npos);
  CHECK(report.find("config.seed=11") != std::string::npos);
  CHECK(report.find("config.d_model=16") != std::string::npos);
  CHECK(report.find("bleu4=") != std::string::npos);
}

TEST_CASE("evaluate refuses a checkpoint from another vocabulary: exit 4") {
  Workspace ws;
  make_tiny_corpus(ws, "c.jsonl", 3);
  make_tiny_corpus(ws, "other.jsonl", 3, /*frames=*/3);  // different vocab
  std::string out;
  REQUIRE(run("train --corpus " + ws.path("c.jsonl") + " --seed 11" +
                  kTinyFlags + " --out " + ws.path("run"),
              ws, &out) == 0);
  CHECK(run("evaluate --corpus " + ws.path("other.jsonl") + " --checkpoint " +
                ws.path("run/best.ckpt") + " --out " + ws.path("evalX"),
            ws, &out) == 4);
  CHECK(out.find("vocabulary") != std::string::npos);
}

TEST_CASE("generate: prints a response, rejects unknown ids with exit 5") {
  Workspace ws;
  make_tiny_corpus(ws, "c.jsonl", 3);
  std::string out;
  REQUIRE(run("train --corpus " + ws.path("c.jsonl") + " --seed 11" +
                  kTinyFlags + " --out " + ws.path("run"),
              ws, &out) == 0);
  REQUIRE(run("generate --corpus " + ws.path("c.jsonl") + " --checkpoint " +
                  ws.path("run/best.ckpt") + " test-0",
              ws, &out) == 0);
  CHECK_FALSE(out.empty());
  const std::string first = out;
  REQUIRE(run("generate --corpus " + ws.path("c.jsonl") + " --checkpoint " +
                  ws.path("run/best.ckpt") + " test-0",
              ws, &out) == 0);
  CHECK(out == first);  // greedy decode, deterministic

  // top_k with a fixed seed is reproducible too
  REQUIRE(run("generate --corpus " + ws.path("c.jsonl") + " --checkpoint " +
                  ws.path("run/best.ckpt") +
                  " --strategy top_k --k 3 --seed 21 test-1",
              ws, &out) == 0);
  const std::string sampled = out;
  REQUIRE(run("generate --corpus " + ws.path("c.jsonl") + " --checkpoint " +
                  ws.path("run/best.ckpt") +
                  " --strategy top_k --k 3 --seed 21 test-1",
              ws, &out) == 0);
  CHECK(out == sampled);

  CHECK(run("generate --corpus " + ws.path("c.jsonl") + " --checkpoint " +
                ws.path("run/best.ckpt") + " nonexistent-99",
            ws, &out) == 5);
}

TEST_CASE("gradcheck passes clean and fails under an injected fault") {
  Workspace ws;
  std::string out;
  CHECK(run("gradcheck", ws, &out) == 0);
  CHECK(out.find("PASS") != std::string::npos);
  CHECK(out.find("max_rel_err") != std::string::npos);
  CHECK(run("gradcheck --inject-fault", ws, &out) == 6);
  CHECK(out.find("FAIL") != std::string::npos);
}

TEST_CASE("MMFUSE_THREADS is validated") {
  Workspace ws;
  std::string out;
  CHECK(run("gradcheck", ws, &out, "MMFUSE_THREADS=2") == 0);
  CHECK(run("gradcheck", ws, &out, "MMFUSE_THREADS=zero") == 2);
  CHECK(run("gradcheck", ws, &out, "MMFUSE_THREADS=0") == 2);
}
