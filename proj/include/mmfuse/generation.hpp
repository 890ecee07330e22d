#ifndef MMFUSE_GENERATION_HPP_
#define MMFUSE_GENERATION_HPP_

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mmfuse/error.hpp"
#include "mmfuse/fusion.hpp"
#include "mmfuse/graph.hpp"
#include "mmfuse/model.hpp"
#include "mmfuse/rng.hpp"
#include "mmfuse/transformer.hpp"
#include "mmfuse/vocab.hpp"

namespace mmfuse {

struct DecodeOptions {
  enum class Strategy { Greedy, TopK };
  Strategy strategy = Strategy::Greedy;
  int k = 5;
  double temperature = 1.0;
  int max_new_tokens = 8;
  uint64_t seed = 0;

  void validate() const {
    if (strategy == Strategy::TopK && k < 1) {
      throw ConfigError("top_k decoding needs k >= 1");
    }
    if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
    if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
  }
};

namespace detail {

// Greedy ties break toward the lower id so decoding is deterministic.
inline int argmax_row(const std::vector<double>& row) {
  int best = 0;
  for (size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[static_cast<size_t>(best)]) best = static_cast<int>(j);
  }
  return best;
}

// Temperature first, then top-k truncation, then renormalization over the
// k survivors.
inline int sample_top_k(const std::vector<double>& logits, int k,
                        double temperature, Rng& rng) {
  const int v = static_cast<int>(logits.size());
  std::vector<int> order(static_cast<size_t>(v));
  for (int i = 0; i < v; ++i) order[static_cast<size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return logits[static_cast<size_t>(a)] > logits[static_cast<size_t>(b)];
  });
  const int kk = k < v ? k : v;
  double mx = logits[static_cast<size_t>(order[0])] / temperature;
  std::vector<double> probs(static_cast<size_t>(kk));
  double sum = 0;
  for (int i = 0; i < kk; ++i) {
    probs[static_cast<size_t>(i)] =
        std::exp(logits[static_cast<size_t>(order[static_cast<size_t>(i)])] /
                     temperature -
                 mx);
    sum += probs[static_cast<size_t>(i)];
  }
  const double u = rng.uniform() * sum;
  double acc = 0;
  for (int i = 0; i < kk; ++i) {
    acc += probs[static_cast<size_t>(i)];
    if (u < acc) return order[static_cast<size_t>(i)];
  }
  return order[static_cast<size_t>(kk - 1)];
}

}  // namespace detail

// Autoregressive decoding: rebuild the fused sequence with the partial
// response appended, read next-token logits at the last position, select per
// strategy, stop at [EOS] or the budget. The output never contains [EOS].
template <class T>
std::vector<int> generate(const DialogueInstance& context,
                          const VideoFeatures<T>& video, const Model<T>& m,
                          const DecodeOptions& opts) {
  opts.validate();
  DialogueInstance work = context;
  work.target.clear();
  {
    // Reject budgets that could not fit before spending any compute.
    const int base = 1 + video.frames() * video.regions() + work.text_len();
    if (base + opts.max_new_tokens > m.tcfg.max_seq_len) {
      throw CapacityError("context length " + std::to_string(base) +
                          " plus budget " + std::to_string(opts.max_new_tokens) +
                          " exceeds max_seq_len " +
                          std::to_string(m.tcfg.max_seq_len));
    }
  }
  Rng rng(opts.seed);
  std::vector<int> produced;
  for (int step = 0; step < opts.max_new_tokens; ++step) {
    Graph<T> g;
    BoundModel<T> b = bind(g, m);
    FusedBatch<T> fused = fuse_sequence(g, m, b, work, video);
    ForwardResult<T> fwd = transformer_forward(
        g, m, b, fused.embeddings, fused.mask, /*training=*/false, nullptr);
    const Tensor<T>& logits = g.value(fwd.logits);
    const int last = fused.length - 1;
    std::vector<double> row(static_cast<size_t>(m.tcfg.vocab_size));
    for (int j = 0; j < m.tcfg.vocab_size; ++j)
      row[static_cast<size_t>(j)] = static_cast<double>(logits.at(last, j));
    const int tok = opts.strategy == DecodeOptions::Strategy::Greedy
                        ? detail::argmax_row(row)
                        : detail::sample_top_k(row, opts.k, opts.temperature,
                                               rng);
    if (tok == kEosId) break;
    produced.push_back(tok);
    work.target.push_back(tok);
  }
  return produced;
}

template <class T>
struct GenerateBatchResult {
  std::map<std::string, std::vector<int>> responses;
  std::map<std::string, std::string> errors;
};

template <class T>
struct GenerateRequest {
  std::string id;
  const DialogueInstance* dialogue = nullptr;
  const VideoFeatures<T>* video = nullptr;
};

// Instances decode independently; per-instance failures are collected
// rather than aborting the sweep. The sampling stream is derived from the
// instance id, so results do not depend on slice order.
template <class T>
GenerateBatchResult<T> batch_generate(
    const std::vector<GenerateRequest<T>>& slice, const Model<T>& m,
    const DecodeOptions& opts) {
  GenerateBatchResult<T> out;
  for (const auto& req : slice) {
    DecodeOptions per = opts;
    uint64_t h = 1469598103934665603ULL;
    for (char c : req.id) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    per.seed = Rng::splitmix64(opts.seed ^ h);
    try {
      out.responses[req.id] = generate(*req.dialogue, *req.video, m, per);
    } catch (const Error& e) {
      out.errors[req.id] = e.what();
    }
  }
  return out;
}

}  // namespace mmfuse

#endif  // MMFUSE_GENERATION_HPP_
