#ifndef MMFUSE_MODEL_HPP_
#define MMFUSE_MODEL_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "mmfuse/error.hpp"
#include "mmfuse/graph.hpp"
#include "mmfuse/params.hpp"
#include "mmfuse/rng.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse {

// Position kinds in a fused sequence. The values index the trainable
// modality-embedding table.
enum class Modality : int { Cls = 0, Vis = 1, Cap = 2, Usr = 3, Sys = 4 };
inline constexpr int kNumModalities = 5;

struct TransformerConfig {
  int n_layers = 2;
  int n_heads = 4;
  int d_model = 64;
  int d_ff = 256;
  int vocab_size = 0;
  int max_seq_len = 160;
  double dropout_rate = 0.1;

  int head_dim() const { return d_model / n_heads; }

  void validate() const {
    if (n_layers < 1) throw ConfigError("n_layers must be >= 1");
    if (n_heads < 1) throw ConfigError("n_heads must be >= 1");
    if (d_model < 1 || d_model % n_heads != 0) {
      throw ConfigError("d_model must be a positive multiple of n_heads");
    }
    if (d_ff < 1) throw ConfigError("d_ff must be >= 1");
    if (vocab_size < 5) throw ConfigError("vocab_size must cover specials");
    if (max_seq_len < 1) throw ConfigError("max_seq_len must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
      throw ConfigError("dropout_rate must lie in [0, 1)");
    }
  }
};

struct FusionConfig {
  int d_emb = 32;
  int max_frames = 8;
  int max_regions = 8;
  int max_turns = 10;    // turn ids 1..max_turns; 0 is reserved for captions
  int max_text_len = 96;
  int d_mvm = 0;         // 0 resolves to d_model

  void validate() const {
    if (d_emb < 1) throw ConfigError("d_emb must be >= 1");
    if (max_frames < 1 || max_regions < 1) {
      throw ConfigError("max_frames/max_regions must be >= 1");
    }
    if (max_turns < 1) throw ConfigError("max_turns must be >= 1");
    if (max_text_len < 1) throw ConfigError("max_text_len must be >= 1");
    if (d_mvm < 0) throw ConfigError("d_mvm must be >= 0");
  }
};

// Indices into the ParamStore, grouped by role.
struct LayerRefs {
  int wq, wk, wv, wo;
  int ln1_gain, ln1_bias;
  int ff_w1, ff_b1, ff_w2, ff_b2;
  int ln2_gain, ln2_bias;
};

struct ParamRefs {
  int token_embedding;
  int modality;
  int video_temporal;
  int video_position;
  int text_turn;
  int text_position;
  int video_proj;
  std::vector<LayerRefs> layers;
  int final_ln_gain, final_ln_bias;
  int mvm_out_proj, mvm_target_proj;
  int mvt_w, mvt_b;
};

// Every trainable array of the decoder stack, fusion encoders and objective
// heads. The output projection is tied to the token embedding, so it owns no
// array of its own.
template <class T>
struct Model {
  TransformerConfig tcfg;
  FusionConfig fcfg;
  ParamStore<T> params;
  ParamRefs refs;

  int d_mvm() const { return fcfg.d_mvm > 0 ? fcfg.d_mvm : tcfg.d_model; }

  static Model init(const TransformerConfig& tc, const FusionConfig& fc,
                    Rng& rng) {
    tc.validate();
    fc.validate();
    Model m;
    m.tcfg = tc;
    m.fcfg = fc;
    const int d = tc.d_model;
    const int dm = fc.d_mvm > 0 ? fc.d_mvm : d;

    auto weight = [&](const std::string& name, std::vector<int> shape) {
      return m.params.add(name, random_normal<T>(std::move(shape), 0.02, rng));
    };
    auto zeros = [&](const std::string& name, std::vector<int> shape) {
      return m.params.add(name, Tensor<T>::zeros(std::move(shape)));
    };
    auto ones = [&](const std::string& name, std::vector<int> shape) {
      return m.params.add(name, Tensor<T>::full(std::move(shape), T(1)));
    };

    // Encoding tables start larger than the 0.02 weight init: they are the
    // only thing distinguishing video cells (and turns) from each other, and
    // at 0.02 they drown under the projected feature content.
    auto table = [&](const std::string& name, std::vector<int> shape) {
      return m.params.add(name, random_normal<T>(std::move(shape), 0.1, rng));
    };
    m.refs.token_embedding = weight("token_embedding", {tc.vocab_size, d});
    m.refs.modality = table("fusion.modality", {kNumModalities, d});
    m.refs.video_temporal = table("fusion.video_temporal", {fc.max_frames, d});
    m.refs.video_position =
        table("fusion.video_position", {fc.max_regions, d});
    m.refs.text_turn = table("fusion.text_turn", {fc.max_turns + 1, d});
    m.refs.text_position = table("fusion.text_position", {fc.max_text_len, d});
    m.refs.video_proj = weight("fusion.video_proj", {fc.d_emb, d});

    auto attn_weight = [&](const std::string& name, std::vector<int> shape) {
      const double scale = 1.0 / std::sqrt(static_cast<double>(d));
      return m.params.add(name,
                          random_normal<T>(std::move(shape), scale, rng));
    };
    for (int l = 0; l < tc.n_layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      LayerRefs lr;
      lr.wq = attn_weight(p + "attn.wq", {d, d});
      lr.wk = attn_weight(p + "attn.wk", {d, d});
      lr.wv = attn_weight(p + "attn.wv", {d, d});
      lr.wo = weight(p + "attn.wo", {d, d});
      lr.ln1_gain = ones(p + "ln1.gain", {d});
      lr.ln1_bias = zeros(p + "ln1.bias", {d});
      lr.ff_w1 = weight(p + "ffn.w1", {d, tc.d_ff});
      lr.ff_b1 = zeros(p + "ffn.b1", {tc.d_ff});
      lr.ff_w2 = weight(p + "ffn.w2", {tc.d_ff, d});
      lr.ff_b2 = zeros(p + "ffn.b2", {d});
      lr.ln2_gain = ones(p + "ln2.gain", {d});
      lr.ln2_bias = zeros(p + "ln2.bias", {d});
      m.refs.layers.push_back(lr);
    }

    m.refs.final_ln_gain = ones("final_ln.gain", {d});
    m.refs.final_ln_bias = zeros("final_ln.bias", {d});
    m.refs.mvm_out_proj = weight("mvm.out_proj", {d, dm});
    m.refs.mvm_target_proj = weight("mvm.target_proj", {d, dm});
    m.refs.mvt_w = weight("mvt.w", {d, 1});
    m.refs.mvt_b = zeros("mvt.b", {1});

    if (m.params.total_elements() != expected_param_count(tc, fc)) {
      throw ContractError("parameter count formula out of sync with layout");
    }
    return m;
  }

  // Closed form for the total trainable element count:
  //   d·(V + 5 + F_max + P_max + (T_max+1) + L_text + d_emb)   embeddings
  // + n_layers·(4·d² + 2·d·d_ff + d_ff + 5·d)                  decoder stack
  // + 2·d                                                      final norm
  // + 2·d·d_mvm + d + 1                                        objective heads
  static int64_t expected_param_count(const TransformerConfig& tc,
                                      const FusionConfig& fc) {
    const int64_t d = tc.d_model;
    const int64_t dm = fc.d_mvm > 0 ? fc.d_mvm : d;
    int64_t n = d * (tc.vocab_size + kNumModalities + fc.max_frames +
                     fc.max_regions + (fc.max_turns + 1) + fc.max_text_len +
                     fc.d_emb);
    n += static_cast<int64_t>(tc.n_layers) *
         (4 * d * d + 2 * d * tc.d_ff + tc.d_ff + 5 * d);
    n += 2 * d;
    n += 2 * d * dm + d + 1;
    return n;
  }
};

// Per-graph leaf nodes for every parameter, aligned with the store.
template <class T>
struct BoundModel {
  std::vector<typename Graph<T>::NodeId> nodes;

  typename Graph<T>::NodeId operator[](int param_index) const {
    return nodes[static_cast<size_t>(param_index)];
  }
};

template <class T>
BoundModel<T> bind(Graph<T>& g, const Model<T>& m) {
  BoundModel<T> b;
  b.nodes.reserve(m.params.count());
  for (int i = 0; i < m.params.count(); ++i) b.nodes.push_back(g.leaf(m.params[i]));
  return b;
}

}  // namespace mmfuse

#endif  // MMFUSE_MODEL_HPP_
