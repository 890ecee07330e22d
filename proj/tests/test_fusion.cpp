#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mmfuse/fusion.hpp"
#include "mmfuse/model.hpp"
#include "mmfuse/rng.hpp"
#include "mmfuse/vocab.hpp"

using namespace mmfuse;

namespace {

Model<float> make_model(uint64_t seed = 9) {
  TransformerConfig tc;
  tc.n_layers = 1;
  tc.n_heads = 2;
  tc.d_model = 8;
  tc.d_ff = 16;
  tc.vocab_size = 12;
  tc.max_seq_len = 40;
  tc.dropout_rate = 0.0;
  FusionConfig fc;
  fc.d_emb = 4;
  fc.max_frames = 3;
  fc.max_regions = 3;
  fc.max_turns = 3;
  fc.max_text_len = 24;
  Rng rng(seed);
  return Model<float>::init(tc, fc, rng);
}

// caption 4 tokens, history 5 tokens over two turns, target 3 (incl [EOS])
DialogueInstance spec_instance() {
  DialogueInstance inst;
  inst.id = "t0";
  inst.caption = {5, 6, 7, 8};
  inst.turns.emplace_back(std::vector<int>{9, 10}, std::vector<int>{11, 5});
  inst.turns.emplace_back(std::vector<int>{6}, std::vector<int>{});
  inst.target = {7, 8, kEosId};
  return inst;
}

VideoFeatures<float> make_video(int f, int p, int d, uint64_t seed = 2) {
  Rng rng(seed);
  return VideoFeatures<float>(random_normal<float>({f, p, d}, 1.0, rng));
}

}  // namespace

TEST_CASE("project_video: ordering, relu, identity") {
  Model<float> m = make_model();
  // frame-major, region-minor ordering
  Tensor<float> grid({2, 3, 4});
  for (int f = 0; f < 2; ++f)
    for (int p = 0; p < 3; ++p)
      for (int e = 0; e < 4; ++e)
        grid.data[static_cast<size_t>((f * 3 + p) * 4 + e)] =
            static_cast<float>(10 * f + p);
  VideoFeatures<float> video{grid};
  {
    Graph<float> g;
    BoundModel<float> b = bind(g, m);
    auto spatial = project_video(g, m, b, video);
    CHECK(g.value(spatial).shape == std::vector<int>{6, 8});
  }

  // identity projection with nonnegative input passes through
  Model<float> ident = make_model();
  ident.tcfg.d_model = 4;  // only the projection matters in this check
  // rebuild a model whose d_model == d_emb so W_V can be the identity
  TransformerConfig tc;
  tc.n_layers = 1;
  tc.n_heads = 2;
  tc.d_model = 4;
  tc.d_ff = 8;
  tc.vocab_size = 12;
  tc.max_seq_len = 40;
  FusionConfig fc;
  fc.d_emb = 4;
  fc.max_frames = 3;
  fc.max_regions = 3;
  fc.max_turns = 3;
  fc.max_text_len = 24;
  Rng rng(4);
  Model<float> sq = Model<float>::init(tc, fc, rng);
  Tensor<float>& wv = sq.params[sq.refs.video_proj];
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) wv.at(i, j) = i == j ? 1.0f : 0.0f;
  Tensor<float> nonneg({2, 3, 4});
  for (int64_t i = 0; i < nonneg.numel(); ++i)
    nonneg.data[i] = static_cast<float>(i % 7);
  Graph<float> g2;
  BoundModel<float> b2 = bind(g2, sq);
  auto spatial = project_video(g2, sq, b2, VideoFeatures<float>{nonneg});
  CHECK(g2.value(spatial).data == nonneg.data);

  // all-negative pre-activations give zeros
  Tensor<float> neg = nonneg;
  for (auto& v : neg.data) v = -1.0f - v;
  auto zeroed = project_video(g2, sq, b2, VideoFeatures<float>{neg});
  for (float v : g2.value(zeroed).data) CHECK(v == 0.0f);

  // width mismatch
  Graph<float> g3;
  BoundModel<float> b3 = bind(g3, m);
  CHECK_THROWS_AS(project_video(g3, m, b3, make_video(2, 3, 5)),
                  DimensionError);
}

TEST_CASE("encode_video equals the explicit four-term sum, bitwise") {
  Model<float> m = make_model();
  VideoFeatures<float> video = make_video(2, 3, 4);
  Graph<float> g;
  BoundModel<float> b = bind(g, m);
  auto spatial = project_video(g, m, b, video);
  const Tensor<float> sp = g.value(spatial);
  auto encoded = g.value(encode_video(g, m, b, spatial, 2, 3));

  const Tensor<float>& mod = m.params[m.refs.modality];
  const Tensor<float>& temp = m.params[m.refs.video_temporal];
  const Tensor<float>& pos = m.params[m.refs.video_position];
  const int vis = static_cast<int>(Modality::Vis);
  for (int r = 0; r < 6; ++r) {
    for (int j = 0; j < 8; ++j) {
      const float expect =
          ((sp.at(r, j) + mod.at(vis, j)) + temp.at(r / 3, j)) +
          pos.at(r % 3, j);
      CHECK(encoded.at(r, j) == expect);  // bitwise
    }
  }

  // zeroed tables: output equals the spatial input
  Model<float> z = make_model();
  for (int ref : {z.refs.modality, z.refs.video_temporal,
                  z.refs.video_position}) {
    for (float& v : z.params[ref].data) v = 0;
  }
  Graph<float> g2;
  BoundModel<float> b2 = bind(g2, z);
  auto spatial2 = project_video(g2, z, b2, video);
  auto enc2 = encode_video(g2, z, b2, spatial2, 2, 3);
  CHECK(g2.value(enc2).data == g2.value(spatial2).data);

  // identical spatial features in two frames differ exactly by the
  // temporal embedding difference
  Tensor<float> rep({2, 3, 4});
  Rng rng(8);
  for (int p = 0; p < 3; ++p)
    for (int e = 0; e < 4; ++e) {
      const float v = static_cast<float>(rng.normal());
      rep.data[static_cast<size_t>((0 * 3 + p) * 4 + e)] = v;
      rep.data[static_cast<size_t>((1 * 3 + p) * 4 + e)] = v;
    }
  Graph<float> g3;
  BoundModel<float> b3 = bind(g3, m);
  auto enc3 = g3.value(
      encode_video(g3, m, b3, project_video(g3, m, b3, VideoFeatures<float>{rep}),
                   2, 3));
  for (int p = 0; p < 3; ++p) {
    for (int j = 0; j < 8; ++j) {
      const float diff = enc3.at(3 + p, j) - enc3.at(p, j);
      const float expect = temp.at(1, j) - temp.at(0, j);
      CHECK(diff == doctest::Approx(expect).epsilon(1e-5));
    }
  }
}

TEST_CASE("encode_text: modalities, turns, positions, zeroed tables") {
  Model<float> m = make_model();
  DialogueInstance inst = spec_instance();
  TextLayout lay = layout_text(inst);
  CHECK(lay.ids.size() == 12);  // 4 caption + 5 history + 3 target
  CHECK(lay.resp_offset == 9);
  // caption positions carry cap, the target response carries sys
  for (int i = 0; i < 4; ++i) CHECK(lay.modality[i] == Modality::Cap);
  CHECK(lay.modality[4] == Modality::Usr);
  CHECK(lay.modality[6] == Modality::Sys);
  for (size_t i = 9; i < 12; ++i) {
    CHECK(lay.modality[i] == Modality::Sys);
    CHECK(lay.turn[i] == 2);  // current turn
  }
  for (int i = 0; i < 4; ++i) CHECK(lay.turn[i] == 0);  // caption turn id

  // zeroed non-token tables: output equals the token embeddings
  Model<float> z = make_model();
  for (int ref : {z.refs.modality, z.refs.text_turn, z.refs.text_position}) {
    for (float& v : z.params[ref].data) v = 0;
  }
  Graph<float> g;
  BoundModel<float> b = bind(g, z);
  auto [node, lay2] = encode_text(g, z, b, inst);
  auto tokens = g.gather_rows(b[z.refs.token_embedding], lay2.ids);
  CHECK(g.value(node).data == g.value(tokens).data);
}

TEST_CASE("build_fused: the length identity and label alignment") {
  Model<float> m = make_model();
  DialogueInstance inst = spec_instance();
  VideoFeatures<float> video = make_video(2, 3, 4);
  Graph<float> g;
  BoundModel<float> b = bind(g, m);
  FusedBatch<float> fused = build_fused(g, m, b, inst, video);

  // L = 1 + F·P + L_C + L_H + L_Y = 1 + 6 + 4 + 5 + 3 = 19
  CHECK(fused.length == 19);
  CHECK(g.value(fused.embeddings).shape == std::vector<int>{19, 8});
  CHECK(fused.mask.len == 19);

  // one generation label per target token, nothing in the video region
  int labels = 0;
  for (int i = 0; i < fused.length; ++i) {
    if (fused.gen_labels[static_cast<size_t>(i)] != kIgnoreLabel) ++labels;
  }
  CHECK(labels == 3);
  for (int i = 1; i <= fused.video_len; ++i) {
    CHECK(fused.gen_labels[static_cast<size_t>(i)] == kIgnoreLabel);
  }
  // decoding the labels in order reproduces Y exactly
  std::vector<int> decoded;
  for (int i = 0; i < fused.length; ++i) {
    if (fused.gen_labels[static_cast<size_t>(i)] != kIgnoreLabel) {
      decoded.push_back(fused.gen_labels[static_cast<size_t>(i)]);
    }
  }
  CHECK(decoded == inst.target);

  // metadata totality: every position has one modality; video positions are
  // exactly 1..F·P
  CHECK(fused.meta.size() == 19);
  CHECK(fused.meta.modality[0] == Modality::Cls);
  for (int i = 1; i <= 6; ++i) CHECK(fused.meta.modality[i] == Modality::Vis);
  for (size_t i = 7; i < 19; ++i) {
    CHECK(fused.meta.modality[i] != Modality::Vis);
    CHECK(fused.meta.modality[i] != Modality::Cls);
  }

  // empty target is rejected
  DialogueInstance bad = inst;
  bad.target.clear();
  CHECK_THROWS_AS(build_fused(g, m, b, bad, video), ContractError);

  // capacity error
  Model<float> small = make_model();
  small.tcfg.max_seq_len = 10;
  Graph<float> g2;
  BoundModel<float> b2 = bind(g2, small);
  CHECK_THROWS_AS(build_fused(g2, small, b2, inst, video), CapacityError);
}

TEST_CASE("masking: text positions get [MASK] embeddings, video rows swap in "
          "the mask token and record targets") {
  Model<float> m = make_model();
  DialogueInstance inst = spec_instance();
  VideoFeatures<float> video = make_video(2, 3, 4);
  MaskingSpec spec;
  spec.text_positions = {1, 6};
  spec.video_positions = {2, 5};

  Graph<float> g;
  BoundModel<float> b = bind(g, m);
  FusedBatch<float> fused = build_fused(g, m, b, inst, video, &spec);
  const Tensor<float> emb = g.value(fused.embeddings);

  // masked text position: embedding row equals [MASK] + modality + turn + pos
  TextLayout lay = layout_text(inst);
  const Tensor<float>& tok = m.params[m.refs.token_embedding];
  const Tensor<float>& mod = m.params[m.refs.modality];
  const Tensor<float>& turn = m.params[m.refs.text_turn];
  const Tensor<float>& pos = m.params[m.refs.text_position];
  for (int p : spec.text_positions) {
    const int row = fused.text_start + p;
    for (int j = 0; j < 8; ++j) {
      const float expect =
          ((tok.at(kMaskId, j) +
            mod.at(static_cast<int>(lay.modality[static_cast<size_t>(p)]), j)) +
           turn.at(lay.turn[static_cast<size_t>(p)], j)) +
          pos.at(p, j);
      CHECK(emb.at(row, j) == doctest::Approx(expect).epsilon(1e-6));
    }
    // MLM label holds the original token at the masked position
    CHECK(fused.mlm_labels[static_cast<size_t>(row)] ==
          lay.ids[static_cast<size_t>(p)]);
  }

  // masked video position: spatial term replaced by the [MASK] embedding
  const Tensor<float>& temp = m.params[m.refs.video_temporal];
  const Tensor<float>& vpos = m.params[m.refs.video_position];
  for (int p : spec.video_positions) {
    const int row = 1 + p;
    for (int j = 0; j < 8; ++j) {
      const float expect =
          ((tok.at(kMaskId, j) + mod.at(static_cast<int>(Modality::Vis), j)) +
           temp.at(p / 3, j)) +
          vpos.at(p % 3, j);
      CHECK(emb.at(row, j) == doctest::Approx(expect).epsilon(1e-6));
    }
  }
  CHECK(fused.mvm_targets.size() == 2);
  CHECK(fused.mvm_targets[0].first == 1 + 2);
  CHECK(fused.mvm_targets[1].first == 1 + 5);
  // targets hold relu(video row · W_V)
  const Tensor<float>& wv = m.params[m.refs.video_proj];
  for (const auto& [fused_pos, vec] : fused.mvm_targets) {
    const int p = fused_pos - 1;
    for (int j = 0; j < 8; ++j) {
      float acc = 0;
      for (int e = 0; e < 4; ++e) acc += video.row(p / 3, p % 3)[e] * wv.at(e, j);
      CHECK(vec[static_cast<size_t>(j)] ==
            doctest::Approx(std::max(acc, 0.0f)).epsilon(1e-5));
    }
  }
}

TEST_CASE("pooling: means, shapes, idempotence") {
  // constant grid stays constant under both poolings
  VideoFeatures<float> constant{Tensor<float>::full({2, 2, 3}, 4.25f)};
  for (float v : pool_spatial(constant).grid.data) CHECK(v == 4.25f);
  for (float v : pool_temporal(constant).grid.data) CHECK(v == 4.25f);

  // per-frame rows [1, 3] average to 2
  Tensor<float> g({2, 2, 1});
  g.data = {1, 3, 1, 3};
  VideoFeatures<float> v{g};
  VideoFeatures<float> sp = pool_spatial(v);
  CHECK(sp.grid.shape == std::vector<int>{2, 1, 1});
  CHECK(sp.grid.data[0] == doctest::Approx(2.0f));
  CHECK(sp.grid.data[1] == doctest::Approx(2.0f));

  // frames [0] and [4] average to [2]
  Tensor<float> h({2, 1, 1});
  h.data = {0, 4};
  VideoFeatures<float> w{h};
  VideoFeatures<float> tp = pool_temporal(w);
  CHECK(tp.grid.shape == std::vector<int>{1, 1, 1});
  CHECK(tp.grid.data[0] == doctest::Approx(2.0f));

  // idempotence (bitwise: the second pooling is a mean over one element)
  VideoFeatures<float> r = make_video(3, 2, 4, 77);
  CHECK(pool_spatial(pool_spatial(r)).grid.data == pool_spatial(r).grid.data);
  CHECK(pool_temporal(pool_temporal(r)).grid.data ==
        pool_temporal(r).grid.data);

  // ablation routing
  CHECK(apply_ablation(r, AblationMode::SpatialOnly).frames() == 1);
  CHECK(apply_ablation(r, AblationMode::TemporalOnly).regions() == 1);
  CHECK(apply_ablation(r, AblationMode::Full).grid.data == r.grid.data);
}

TEST_CASE("length identity over random geometries") {
  Rng rng(1234);
  for (int trial = 0; trial < 50; ++trial) {
    TransformerConfig tc;
    tc.n_layers = 1;
    tc.n_heads = 1;
    tc.d_model = 8;
    tc.d_ff = 8;
    tc.vocab_size = 12;
    tc.max_seq_len = 256;
    FusionConfig fc;
    fc.d_emb = 3;
    fc.max_frames = 4;
    fc.max_regions = 4;
    fc.max_turns = 4;
    fc.max_text_len = 64;
    Rng mrng(trial);
    Model<float> m = Model<float>::init(tc, fc, mrng);

    const int F = 1 + static_cast<int>(rng.below(4));
    const int P = 1 + static_cast<int>(rng.below(4));
    const int lc = 1 + static_cast<int>(rng.below(5));
    const int ly = 1 + static_cast<int>(rng.below(4));
    const int n_turns = 1 + static_cast<int>(rng.below(3));
    DialogueInstance inst;
    inst.id = "r";
    for (int i = 0; i < lc; ++i) inst.caption.push_back(5);
    int lh = 0;
    for (int t = 0; t < n_turns; ++t) {
      const int qu = 1 + static_cast<int>(rng.below(3));
      const int an = t + 1 < n_turns ? 1 + static_cast<int>(rng.below(2)) : 0;
      std::vector<int> q(qu, 6), a(an, 7);
      lh += qu + an;
      inst.turns.emplace_back(q, a);
    }
    for (int i = 0; i + 1 < ly; ++i) inst.target.push_back(8);
    inst.target.push_back(kEosId);

    Graph<float> g;
    BoundModel<float> b = bind(g, m);
    VideoFeatures<float> video = make_video(F, P, 3, 1000 + trial);
    FusedBatch<float> fused = build_fused(g, m, b, inst, video);
    CHECK(fused.length == 1 + F * P + lc + lh + ly);
  }
}
