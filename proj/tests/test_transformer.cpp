#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mmfuse/model.hpp"
#include "mmfuse/rng.hpp"
#include "mmfuse/transformer.hpp"

using namespace mmfuse;

namespace {

TransformerConfig tiny_tc(int max_seq = 32) {
  TransformerConfig tc;
  tc.n_layers = 2;
  tc.n_heads = 2;
  tc.d_model = 8;
  tc.d_ff = 16;
  tc.vocab_size = 11;
  tc.max_seq_len = max_seq;
  tc.dropout_rate = 0.0;
  return tc;
}

FusionConfig tiny_fc() {
  FusionConfig fc;
  fc.d_emb = 4;
  fc.max_frames = 2;
  fc.max_regions = 2;
  fc.max_turns = 2;
  fc.max_text_len = 16;
  return fc;
}

Model<float> tiny_model(uint64_t seed = 5) {
  Rng rng(seed);
  return Model<float>::init(tiny_tc(), tiny_fc(), rng);
}

}  // namespace

TEST_CASE("config validation") {
  TransformerConfig tc = tiny_tc();
  tc.d_model = 9;  // not a multiple of n_heads = 2
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = tiny_tc();
  tc.dropout_rate = 1.0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  CHECK_NOTHROW(tiny_tc().validate());
}

TEST_CASE("causal mask admissibility") {
  AttentionMask m = AttentionMask::causal(4);
  for (int i = 0; i < 4; ++i) {
    CHECK(m.at(i, i));
    for (int j = 0; j < 4; ++j) CHECK(m.at(i, j) == (j <= i));
  }
  Tensor<float> add = m.additive<float>();
  CHECK(add.at(0, 3) == -1e9f);
  CHECK(add.at(3, 0) == 0.0f);
}

TEST_CASE("single position attends only to itself: out = (x Wv) Wo exactly") {
  Model<float> m = tiny_model();
  Graph<float> g;
  BoundModel<float> b = bind(g, m);
  Rng rng(3);
  Tensor<float> x = random_normal<float>({1, m.tcfg.d_model}, 1.0, rng);
  auto xn = g.constant(x);
  auto mask = g.constant(AttentionMask::causal(1).additive<float>());
  auto out = multi_head_attention(g, xn, mask, b, m.refs.layers[0], m.tcfg);

  auto manual = g.matmul(g.matmul(g.constant(x), b[m.refs.layers[0].wv]),
                         b[m.refs.layers[0].wo]);
  CHECK(g.value(out).data == g.value(manual).data);  // bitwise
}

TEST_CASE("attention weight rows are probability distributions") {
  Model<float> m = tiny_model();
  Graph<float> g;
  BoundModel<float> b = bind(g, m);
  Rng rng(17);
  const int L = 7;
  auto x = g.constant(random_normal<float>({L, m.tcfg.d_model}, 1.0, rng));
  auto mask = g.constant(AttentionMask::causal(L).additive<float>());
  std::vector<Graph<float>::NodeId> weights;
  multi_head_attention(g, x, mask, b, m.refs.layers[0], m.tcfg, &weights);
  CHECK(weights.size() == static_cast<size_t>(m.tcfg.n_heads));
  for (auto w : weights) {
    const Tensor<float>& probs = g.value(w);
    for (int i = 0; i < L; ++i) {
      double sum = 0;
      for (int j = 0; j < L; ++j) {
        CHECK(probs.at(i, j) >= 0.0f);
        if (j > i) CHECK(probs.at(i, j) == 0.0f);  // masked, exactly zero
        sum += probs.at(i, j);
      }
      CHECK(std::abs(sum - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("zeroed output weights make the block an identity") {
  Model<float> m = tiny_model();
  for (auto& lr : m.refs.layers) {
    for (float& v : m.params[lr.wo].data) v = 0;
    for (float& v : m.params[lr.ff_w2].data) v = 0;
    for (float& v : m.params[lr.ff_b2].data) v = 0;
  }
  Graph<float> g;
  BoundModel<float> b = bind(g, m);
  Rng rng(29);
  const int L = 5;
  Tensor<float> x = random_normal<float>({L, m.tcfg.d_model}, 1.0, rng);
  auto xn = g.constant(x);
  auto mask = g.constant(AttentionMask::causal(L).additive<float>());
  auto out = transformer_block(g, xn, mask, b, m.refs.layers[0], m.tcfg,
                               false, nullptr);
  CHECK(g.value(out).data == x.data);  // residual path, bitwise

  // the whole forward collapses to the final layer norm of the input
  ForwardResult<float> fwd = transformer_forward(
      g, m, b, xn, AttentionMask::causal(L), false, nullptr);
  auto ln = g.layer_norm(g.constant(x), b[m.refs.final_ln_gain],
                         b[m.refs.final_ln_bias], 1e-5f);
  CHECK(g.value(fwd.hidden).data == g.value(ln).data);
}

TEST_CASE("block preserves shape and is deterministic with training off") {
  Model<float> m = tiny_model();
  Rng rng(31);
  const int L = 9;
  Tensor<float> x = random_normal<float>({L, m.tcfg.d_model}, 1.0, rng);
  auto run = [&]() {
    Graph<float> g;
    BoundModel<float> b = bind(g, m);
    auto mask = g.constant(AttentionMask::causal(L).additive<float>());
    auto out = transformer_block(g, g.constant(x), mask, b, m.refs.layers[0],
                                 m.tcfg, false, nullptr);
    return g.value(out);
  };
  const Tensor<float> a = run();
  CHECK(a.shape == std::vector<int>{L, m.tcfg.d_model});
  CHECK(a.data == run().data);  // bitwise
}

TEST_CASE("dropout draws only in training mode and scales by 1/(1-p)") {
  Model<float> m = tiny_model();
  Rng rng(77);
  Tensor<float> x = random_normal<float>({4, m.tcfg.d_model}, 1.0, rng);
  Graph<float> g;
  Rng d1(123);
  auto masked = dropout(g, g.constant(x), 0.5, true, &d1);
  const Tensor<float>& v = g.value(masked);
  int zeros = 0;
  for (int64_t i = 0; i < v.numel(); ++i) {
    const bool dropped = v.data[i] == 0.0f && x.data[i] != 0.0f;
    const bool scaled = std::abs(v.data[i] - 2.0f * x.data[i]) < 1e-6f;
    CHECK((dropped || scaled));
    zeros += dropped ? 1 : 0;
  }
  CHECK(zeros > 0);
  // off: the node passes through untouched
  auto off = dropout(g, g.constant(x), 0.5, false, nullptr);
  CHECK(g.value(off).data == x.data);
}

TEST_CASE("forward: logits shape and the capacity error") {
  Model<float> m = tiny_model();
  Graph<float> g;
  BoundModel<float> b = bind(g, m);
  Rng rng(41);
  const int L = 6;
  auto x = g.constant(random_normal<float>({L, m.tcfg.d_model}, 1.0, rng));
  ForwardResult<float> fwd = transformer_forward(
      g, m, b, x, AttentionMask::causal(L), false, nullptr);
  CHECK(g.value(fwd.logits).shape == std::vector<int>{L, m.tcfg.vocab_size});
  CHECK(g.value(fwd.hidden).shape == std::vector<int>{L, m.tcfg.d_model});

  Model<float> small = tiny_model();
  small.tcfg.max_seq_len = 4;
  Graph<float> g2;
  BoundModel<float> b2 = bind(g2, small);
  auto x2 =
      g2.constant(random_normal<float>({5, small.tcfg.d_model}, 1.0, rng));
  CHECK_THROWS_AS(
      transformer_forward(g2, small, b2, x2, AttentionMask::causal(5), false,
                          nullptr),
      CapacityError);
}

TEST_CASE("appending a position leaves existing logits bitwise unchanged") {
  Model<float> m = tiny_model();
  Rng rng(53);
  const int L = 6;
  Tensor<float> x = random_normal<float>({L, m.tcfg.d_model}, 1.0, rng);
  Tensor<float> extended({L + 1, m.tcfg.d_model});
  for (int64_t i = 0; i < x.numel(); ++i) extended.data[i] = x.data[i];
  for (int j = 0; j < m.tcfg.d_model; ++j) {
    extended.at(L, j) = static_cast<float>(rng.normal());
  }
  auto logits_for = [&](const Tensor<float>& emb) {
    Graph<float> g;
    BoundModel<float> b = bind(g, m);
    ForwardResult<float> fwd = transformer_forward(
        g, m, b, g.constant(emb), AttentionMask::causal(emb.shape[0]), false,
        nullptr);
    return g.value(fwd.logits);
  };
  const Tensor<float> base = logits_for(x);
  const Tensor<float> grown = logits_for(extended);
  for (int i = 0; i < L; ++i) {
    for (int v = 0; v < m.tcfg.vocab_size; ++v) {
      CHECK(base.at(i, v) == grown.at(i, v));  // bitwise
    }
  }
}

TEST_CASE("perturbing position j leaves logits at i < j bitwise unchanged") {
  Model<float> m = tiny_model();
  Rng rng(67);
  const int L = 8;
  Tensor<float> x = random_normal<float>({L, m.tcfg.d_model}, 1.0, rng);
  auto logits_for = [&](const Tensor<float>& emb) {
    Graph<float> g;
    BoundModel<float> b = bind(g, m);
    ForwardResult<float> fwd = transformer_forward(
        g, m, b, g.constant(emb), AttentionMask::causal(L), false, nullptr);
    return g.value(fwd.logits);
  };
  const Tensor<float> base = logits_for(x);
  for (int j = 1; j < L; j += 3) {
    Tensor<float> perturbed = x;
    for (int c = 0; c < m.tcfg.d_model; ++c) {
      perturbed.at(j, c) += static_cast<float>(rng.normal());
    }
    const Tensor<float> out = logits_for(perturbed);
    for (int i = 0; i < j; ++i) {
      for (int v = 0; v < m.tcfg.vocab_size; ++v) {
        CHECK(base.at(i, v) == out.at(i, v));  // bitwise
      }
    }
  }
}

TEST_CASE("parameter count formula matches the allocated elements") {
  // Model::init self-checks the formula; exercise a couple of geometries.
  for (uint64_t seed : {1ull, 2ull}) {
    Rng rng(seed);
    TransformerConfig tc = tiny_tc();
    FusionConfig fc = tiny_fc();
    tc.n_layers = seed == 1 ? 1 : 3;
    fc.d_mvm = seed == 1 ? 0 : 12;
    Model<float> m = Model<float>::init(tc, fc, rng);
    CHECK(m.params.total_elements() ==
          Model<float>::expected_param_count(tc, fc));
  }
}
