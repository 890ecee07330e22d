#ifndef MMFUSE_TRANSFORMER_HPP_
#define MMFUSE_TRANSFORMER_HPP_

#include <cmath>
#include <vector>

#include "mmfuse/error.hpp"
#include "mmfuse/graph.hpp"
#include "mmfuse/model.hpp"
#include "mmfuse/rng.hpp"

namespace mmfuse {

// Disallowed attention pairs get this additive score instead of a true -inf,
// which would turn into NaN inside softmax.
inline constexpr double kMaskedScore = -1e9;

// Pairwise admissibility: allow(i, j) says position i may attend to j.
struct AttentionMask {
  int len = 0;
  std::vector<char> allow;  // len × len

  static AttentionMask causal(int n) {
    AttentionMask m;
    m.len = n;
    m.allow.assign(static_cast<size_t>(n) * n, 0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j <= i; ++j) m.allow[static_cast<size_t>(i) * n + j] = 1;
    return m;
  }

  bool at(int i, int j) const {
    return allow[static_cast<size_t>(i) * len + j] != 0;
  }

  template <class T>
  Tensor<T> additive() const {
    Tensor<T> t({len, len});
    for (int i = 0; i < len; ++i)
      for (int j = 0; j < len; ++j)
        t.at(i, j) = at(i, j) ? T(0) : static_cast<T>(kMaskedScore);
    return t;
  }
};

// Inverted dropout as a constant mask multiply; draws one uniform per element
// in row-major order so runs are reproducible from the seed.
template <class T>
typename Graph<T>::NodeId dropout(Graph<T>& g, typename Graph<T>::NodeId x,
                                  double rate, bool training, Rng* rng) {
  if (!training || rate <= 0.0) return x;
  const Tensor<T>& v = g.value(x);
  Tensor<T> mask(v.shape);
  const T keep = static_cast<T>(1.0 / (1.0 - rate));
  for (int64_t i = 0; i < mask.numel(); ++i)
    mask.data[i] = rng->uniform() < rate ? T(0) : keep;
  return g.mul(x, g.constant(std::move(mask)));
}

// Masked multi-head self-attention: per-head scaled dot-product with the
// additive mask, heads concatenated, then output-projected.
template <class T>
typename Graph<T>::NodeId multi_head_attention(
    Graph<T>& g, typename Graph<T>::NodeId x,
    typename Graph<T>::NodeId additive_mask, const BoundModel<T>& b,
    const LayerRefs& layer, const TransformerConfig& cfg,
    std::vector<typename Graph<T>::NodeId>* attn_weights = nullptr,
    bool training = false, Rng* dropout_rng = nullptr) {
  using NodeId = typename Graph<T>::NodeId;
  const int L = g.value(x).shape[0];
  if (L > cfg.max_seq_len) {
    throw CapacityError("sequence length " + std::to_string(L) +
                        " exceeds max_seq_len " +
                        std::to_string(cfg.max_seq_len));
  }
  const int dh = cfg.head_dim();
  const NodeId q = g.matmul(x, b[layer.wq]);
  const NodeId k = g.matmul(x, b[layer.wk]);
  const NodeId v = g.matmul(x, b[layer.wv]);
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<NodeId> heads;
  heads.reserve(cfg.n_heads);
  for (int h = 0; h < cfg.n_heads; ++h) {
    const int c0 = h * dh, c1 = (h + 1) * dh;
    const NodeId qh = g.slice_cols(q, c0, c1);
    const NodeId kh = g.slice_cols(k, c0, c1);
    const NodeId vh = g.slice_cols(v, c0, c1);
    NodeId scores = g.scale(g.matmul_nt(qh, kh), inv_sqrt);
    scores = g.add(scores, additive_mask);
    NodeId weights = g.softmax_rows(scores);
    if (attn_weights != nullptr) attn_weights->push_back(weights);
    // GPT-2 style attention dropout; doubles as exploration noise while the
    // attention patterns are still uniform.
    weights = dropout(g, weights, cfg.dropout_rate, training, dropout_rng);
    heads.push_back(g.matmul(weights, vh));
  }
  return g.matmul(g.concat_cols(heads), b[layer.wo]);
}

// Pre-norm block: x + Attn(LN(x)), then x + FFN(LN(x)). The feed-forward
// uses ReLU. Dropout sits on both residual branches and only fires when
// training.
template <class T>
typename Graph<T>::NodeId transformer_block(
    Graph<T>& g, typename Graph<T>::NodeId x,
    typename Graph<T>::NodeId additive_mask, const BoundModel<T>& b,
    const LayerRefs& layer, const TransformerConfig& cfg, bool training,
    Rng* dropout_rng) {
  using NodeId = typename Graph<T>::NodeId;
  const T eps = static_cast<T>(1e-5);
  NodeId h = g.layer_norm(x, b[layer.ln1_gain], b[layer.ln1_bias], eps);
  h = multi_head_attention(g, h, additive_mask, b, layer, cfg, nullptr,
                           training, dropout_rng);
  h = dropout(g, h, cfg.dropout_rate, training, dropout_rng);
  NodeId res = g.add(x, h);
  NodeId f = g.layer_norm(res, b[layer.ln2_gain], b[layer.ln2_bias], eps);
  f = g.relu(g.add_bias(g.matmul(f, b[layer.ff_w1]), b[layer.ff_b1]));
  f = g.add_bias(g.matmul(f, b[layer.ff_w2]), b[layer.ff_b2]);
  f = dropout(g, f, cfg.dropout_rate, training, dropout_rng);
  return g.add(res, f);
}

template <class T>
struct ForwardResult {
  typename Graph<T>::NodeId hidden;  // L×d after the final layer norm
  typename Graph<T>::NodeId logits;  // L×V via the tied token embedding
};

// Full decoder pass over an already-fused embedding sequence.
template <class T>
ForwardResult<T> transformer_forward(Graph<T>& g, const Model<T>& m,
                                     const BoundModel<T>& b,
                                     typename Graph<T>::NodeId fused,
                                     const AttentionMask& mask, bool training,
                                     Rng* dropout_rng) {
  using NodeId = typename Graph<T>::NodeId;
  const int L = g.value(fused).shape[0];
  if (L > m.tcfg.max_seq_len) {
    throw CapacityError("sequence length " + std::to_string(L) +
                        " exceeds max_seq_len " +
                        std::to_string(m.tcfg.max_seq_len));
  }
  if (mask.len != L) {
    throw DimensionError("attention mask length " + std::to_string(mask.len) +
                         " does not match sequence length " +
                         std::to_string(L));
  }
  const NodeId add_mask = g.constant(mask.template additive<T>());
  NodeId h = fused;
  for (const LayerRefs& layer : m.refs.layers) {
    h = transformer_block(g, h, add_mask, b, layer, m.tcfg, training,
                          dropout_rng);
  }
  const T eps = static_cast<T>(1e-5);
  h = g.layer_norm(h, b[m.refs.final_ln_gain], b[m.refs.final_ln_bias], eps);
  ForwardResult<T> out;
  out.hidden = h;
  out.logits = g.matmul_nt(h, b[m.refs.token_embedding]);
  return out;
}

}  // namespace mmfuse

#endif  // MMFUSE_TRANSFORMER_HPP_
