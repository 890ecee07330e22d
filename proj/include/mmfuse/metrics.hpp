#ifndef MMFUSE_METRICS_HPP_
#define MMFUSE_METRICS_HPP_

#include <map>
#include <string>
#include <vector>

namespace mmfuse {

// One candidate against its (nonempty, up to 6) reference set. Tokens arrive
// already lowercased by the corpus tokenizer.
struct EvalPair {
  std::string id;
  std::vector<std::string> candidate;
  std::vector<std::vector<std::string>> references;
};

// Corpus-level BLEU-n: geometric mean of clipped modified k-gram precisions
// for k = 1..n with uniform weights, times the brevity penalty computed from
// per-instance closest reference lengths (ties toward the shorter).
// No smoothing: zero matches at any order give 0.
double bleu(const std::vector<EvalPair>& pairs, int n);

// Mean over pairs of the best-reference LCS F-score with beta = 1.2.
double rouge_l(const std::vector<EvalPair>& pairs);

// Consensus tf-idf n-gram cosine (n = 1..4), scaled by 10/4 and averaged
// over references, then over pairs. Requires at least two instances so the
// idf is defined.
double cider(const std::vector<EvalPair>& pairs);

struct PairScores {
  std::string id;
  double rouge_l = 0;
  double cider = 0;
  // clipped matches / candidate totals per BLEU order
  long long bleu_match[4] = {0, 0, 0, 0};
  long long bleu_total[4] = {0, 0, 0, 0};
};

struct ScoreReport {
  double bleu1 = 0, bleu2 = 0, bleu3 = 0, bleu4 = 0;
  double rouge_l = 0, cider = 0;
  std::vector<PairScores> per_instance;
  std::vector<std::string> missing_ids;  // responses lacking a corpus entry
  std::vector<std::string> uncovered_ids;  // corpus entries lacking a response

  double bleu_n(int n) const {
    switch (n) {
      case 1: return bleu1;
      case 2: return bleu2;
      case 3: return bleu3;
      default: return bleu4;
    }
  }
};

// Joins responses with references by instance id, warns about (and skips)
// ids missing on either side, and assembles every metric. Throws if the
// intersection is empty.
ScoreReport evaluate_corpus(
    const std::map<std::string, std::vector<std::string>>& responses,
    const std::map<std::string, std::vector<std::vector<std::string>>>&
        references);

}  // namespace mmfuse

#endif  // MMFUSE_METRICS_HPP_
