#include "mmfuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mmfuse/error.hpp"

namespace mmfuse {

namespace {

using Tokens = std::vector<std::string>;
using Ngram = std::vector<std::string>;
using NgramCounts = std::map<Ngram, long long>;

NgramCounts count_ngrams(const Tokens& toks, int n) {
  NgramCounts out;
  if (static_cast<int>(toks.size()) < n) return out;
  for (size_t i = 0; i + n <= toks.size(); ++i) {
    Ngram gram(toks.begin() + static_cast<long>(i),
               toks.begin() + static_cast<long>(i) + n);
    out[gram] += 1;
  }
  return out;
}

void check_pairs(const std::vector<EvalPair>& pairs) {
  if (pairs.empty()) throw ContractError("metric over an empty pair set");
  for (const auto& p : pairs) {
    if (p.references.empty()) {
      throw ContractError("pair '" + p.id + "' has no references");
    }
  }
}

long long lcs_length(const Tokens& a, const Tokens& b) {
  const size_t m = a.size(), n = b.size();
  if (m == 0 || n == 0) return 0;
  std::vector<long long> prev(n + 1, 0), cur(n + 1, 0);
  for (size_t i = 1; i <= m; ++i) {
    for (size_t j = 1; j <= n; ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1
                                    : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[n];
}

double rouge_l_pair(const EvalPair& p) {
  if (p.candidate.empty()) return 0.0;
  const double beta2 = 1.2 * 1.2;
  double best = 0.0;
  for (const auto& ref : p.references) {
    if (ref.empty()) continue;
    const double lcs = static_cast<double>(lcs_length(p.candidate, ref));
    if (lcs == 0.0) continue;
    const double prec = lcs / static_cast<double>(p.candidate.size());
    const double rec = lcs / static_cast<double>(ref.size());
    const double f = (1.0 + beta2) * prec * rec / (rec + beta2 * prec);
    best = std::max(best, f);
  }
  return best;
}

// Clipped modified k-gram matches and candidate totals for one pair.
void bleu_tallies(const EvalPair& p, int k, long long* matched,
                  long long* total) {
  const NgramCounts cand = count_ngrams(p.candidate, k);
  NgramCounts max_ref;
  for (const auto& r : p.references) {
    for (const auto& [gram, cnt] : count_ngrams(r, k)) {
      auto& slot = max_ref[gram];
      slot = std::max(slot, cnt);
    }
  }
  for (const auto& [gram, cnt] : cand) {
    *total += cnt;
    auto it = max_ref.find(gram);
    if (it != max_ref.end()) *matched += std::min(cnt, it->second);
  }
}

struct CiderVec {
  std::map<Ngram, double> w;  // idf-weighted counts
  double norm = 0.0;
};

// Grams absent from every reference set have df = 0, clipped to 1, so they
// carry the full log(N) weight; they never match a reference but they do
// belong in the candidate norm.
CiderVec cider_vec(const Tokens& toks, int n,
                   const std::map<Ngram, double>& idf, double log_n) {
  CiderVec v;
  double sq = 0.0;
  for (const auto& [gram, cnt] : count_ngrams(toks, n)) {
    auto it = idf.find(gram);
    const double w =
        static_cast<double>(cnt) * (it == idf.end() ? log_n : it->second);
    v.w[gram] = w;
    sq += w * w;
  }
  v.norm = std::sqrt(sq);
  return v;
}

// Per-pair CIDEr against the corpus-level idf.
std::vector<double> cider_scores(const std::vector<EvalPair>& pairs) {
  const auto n_inst = static_cast<long long>(pairs.size());
  std::vector<double> scores(pairs.size(), 0.0);
  for (int n = 1; n <= 4; ++n) {
    // document frequency: instances whose reference set contains the gram
    std::map<Ngram, long long> df;
    for (const auto& p : pairs) {
      std::set<Ngram> seen;
      for (const auto& r : p.references) {
        for (const auto& [gram, cnt] : count_ngrams(r, n)) seen.insert(gram);
      }
      for (const auto& gram : seen) df[gram] += 1;
    }
    std::map<Ngram, double> idf;
    for (const auto& [gram, d] : df) {
      idf[gram] = std::log(static_cast<double>(n_inst) /
                           static_cast<double>(std::max<long long>(1, d)));
    }
    const double log_n = std::log(static_cast<double>(n_inst));
    for (size_t i = 0; i < pairs.size(); ++i) {
      const EvalPair& p = pairs[i];
      const CiderVec cand = cider_vec(p.candidate, n, idf, log_n);
      double ref_mean = 0.0;
      for (const auto& r : p.references) {
        const CiderVec ref = cider_vec(r, n, idf, log_n);
        if (cand.norm == 0.0 || ref.norm == 0.0) continue;
        // candidate counts clipped to the reference counts in the numerator
        double dot = 0.0;
        for (const auto& [gram, w] : cand.w) {
          auto it = ref.w.find(gram);
          if (it == ref.w.end()) continue;
          dot += std::min(w, it->second) * it->second;
        }
        ref_mean += dot / (cand.norm * ref.norm);
      }
      scores[i] += ref_mean / static_cast<double>(p.references.size());
    }
  }
  for (auto& s : scores) s *= 10.0 / 4.0;
  return scores;
}

}  // namespace

double bleu(const std::vector<EvalPair>& pairs, int n) {
  if (n < 1 || n > 4) throw ContractError("bleu order must be in [1, 4]");
  check_pairs(pairs);
  std::vector<long long> matched(static_cast<size_t>(n), 0);
  std::vector<long long> total(static_cast<size_t>(n), 0);
  long long cand_len = 0, ref_len = 0;
  for (const auto& p : pairs) {
    const long long c = static_cast<long long>(p.candidate.size());
    cand_len += c;
    // closest reference length, ties toward the shorter
    long long best_r = static_cast<long long>(p.references[0].size());
    for (const auto& r : p.references) {
      const long long rl = static_cast<long long>(r.size());
      const long long d_new = std::llabs(rl - c);
      const long long d_old = std::llabs(best_r - c);
      if (d_new < d_old || (d_new == d_old && rl < best_r)) best_r = rl;
    }
    ref_len += best_r;
    for (int k = 1; k <= n; ++k) {
      bleu_tallies(p, k, &matched[static_cast<size_t>(k - 1)],
                   &total[static_cast<size_t>(k - 1)]);
    }
  }
  double log_p = 0.0;
  for (int k = 0; k < n; ++k) {
    if (matched[static_cast<size_t>(k)] == 0 ||
        total[static_cast<size_t>(k)] == 0) {
      return 0.0;
    }
    log_p += std::log(static_cast<double>(matched[static_cast<size_t>(k)]) /
                      static_cast<double>(total[static_cast<size_t>(k)]));
  }
  if (cand_len == 0) return 0.0;
  const double bp =
      cand_len >= ref_len
          ? 1.0
          : std::exp(1.0 - static_cast<double>(ref_len) /
                               static_cast<double>(cand_len));
  return bp * std::exp(log_p / n);
}

double rouge_l(const std::vector<EvalPair>& pairs) {
  check_pairs(pairs);
  double sum = 0.0;
  for (const auto& p : pairs) sum += rouge_l_pair(p);
  return sum / static_cast<double>(pairs.size());
}

double cider(const std::vector<EvalPair>& pairs) {
  check_pairs(pairs);
  if (pairs.size() < 2) {
    throw ContractError(
        "cider needs at least two instances; the idf over a single-instance "
        "corpus is degenerate");
  }
  const std::vector<double> scores = cider_scores(pairs);
  double sum = 0.0;
  for (double s : scores) sum += s;
  return sum / static_cast<double>(scores.size());
}

ScoreReport evaluate_corpus(
    const std::map<std::string, std::vector<std::string>>& responses,
    const std::map<std::string, std::vector<std::vector<std::string>>>&
        references) {
  ScoreReport report;
  std::vector<EvalPair> pairs;
  for (const auto& [id, cand] : responses) {
    auto it = references.find(id);
    if (it == references.end()) {
      report.missing_ids.push_back(id);
      continue;
    }
    EvalPair p;
    p.id = id;
    p.candidate = cand;
    p.references = it->second;
    pairs.push_back(std::move(p));
  }
  for (const auto& [id, refs] : references) {
    if (!responses.count(id)) report.uncovered_ids.push_back(id);
  }
  if (pairs.empty()) {
    throw ContractError(
        "evaluate_corpus: no response id matches a corpus instance");
  }
  report.bleu1 = bleu(pairs, 1);
  report.bleu2 = bleu(pairs, 2);
  report.bleu3 = bleu(pairs, 3);
  report.bleu4 = bleu(pairs, 4);
  report.rouge_l = rouge_l(pairs);
  report.cider = cider(pairs);
  const std::vector<double> per_cider = cider_scores(pairs);
  for (size_t i = 0; i < pairs.size(); ++i) {
    PairScores ps;
    ps.id = pairs[i].id;
    ps.rouge_l = rouge_l_pair(pairs[i]);
    ps.cider = per_cider[i];
    for (int k = 1; k <= 4; ++k) {
      bleu_tallies(pairs[i], k, &ps.bleu_match[k - 1], &ps.bleu_total[k - 1]);
    }
    report.per_instance.push_back(std::move(ps));
  }
  return report;
}

}  // namespace mmfuse
