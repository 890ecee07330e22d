#ifndef MMFUSE_FUSION_HPP_
#define MMFUSE_FUSION_HPP_

#include <string>
#include <utility>
#include <vector>

#include "mmfuse/error.hpp"
#include "mmfuse/graph.hpp"
#include "mmfuse/model.hpp"
#include "mmfuse/transformer.hpp"
#include "mmfuse/vocab.hpp"

namespace mmfuse {

// Pretrained-style video feature grid: F frames × P regions × d_emb.
template <class T>
struct VideoFeatures {
  Tensor<T> grid;

  VideoFeatures() : grid({1, 1, 1}) {}
  explicit VideoFeatures(Tensor<T> g) : grid(std::move(g)) {
    if (grid.rank() != 3) {
      throw DimensionError("video grid must be F×P×d_emb, got " +
                           Tensor<T>::shape_str(grid.shape));
    }
  }

  int frames() const { return grid.shape[0]; }
  int regions() const { return grid.shape[1]; }
  int feat_dim() const { return grid.shape[2]; }

  const T* row(int f, int p) const {
    return grid.data.data() +
           (static_cast<size_t>(f) * regions() + p) * feat_dim();
  }
  T* row(int f, int p) {
    return grid.data.data() +
           (static_cast<size_t>(f) * regions() + p) * feat_dim();
  }
};

// Average over the region axis; keeps the frame structure (the
// temporal-only ablation input).
template <class T>
VideoFeatures<T> pool_spatial(const VideoFeatures<T>& v) {
  const int f = v.frames(), p = v.regions(), d = v.feat_dim();
  Tensor<T> out({f, 1, d});
  for (int i = 0; i < f; ++i) {
    T* dst = out.data.data() + static_cast<size_t>(i) * d;
    for (int r = 0; r < p; ++r) {
      const T* src = v.row(i, r);
      for (int j = 0; j < d; ++j) dst[j] += src[j];
    }
    for (int j = 0; j < d; ++j) dst[j] /= T(p);
  }
  return VideoFeatures<T>(std::move(out));
}

// Average over the frame axis; keeps the region structure (the
// spatial-only ablation input).
template <class T>
VideoFeatures<T> pool_temporal(const VideoFeatures<T>& v) {
  const int f = v.frames(), p = v.regions(), d = v.feat_dim();
  Tensor<T> out({1, p, d});
  for (int i = 0; i < f; ++i) {
    for (int r = 0; r < p; ++r) {
      const T* src = v.row(i, r);
      T* dst = out.data.data() + static_cast<size_t>(r) * d;
      for (int j = 0; j < d; ++j) dst[j] += src[j];
    }
  }
  for (int64_t j = 0; j < out.numel(); ++j) out.data[j] /= T(f);
  return VideoFeatures<T>(std::move(out));
}

enum class AblationMode { Full, SpatialOnly, TemporalOnly };

template <class T>
VideoFeatures<T> apply_ablation(const VideoFeatures<T>& v, AblationMode mode) {
  switch (mode) {
    case AblationMode::SpatialOnly:
      return pool_temporal(v);
    case AblationMode::TemporalOnly:
      return pool_spatial(v);
    case AblationMode::Full:
    default:
      return v;
  }
}

// One dialogue: caption, (user, system) turn pairs with the current-turn
// user utterance last (its system half empty), the target response, and the
// reference set used by evaluation.
struct DialogueInstance {
  std::string id;
  std::vector<int> caption;
  std::vector<std::pair<std::vector<int>, std::vector<int>>> turns;
  std::vector<int> target;  // ends with [EOS]
  std::vector<std::vector<int>> references;

  int current_turn() const { return static_cast<int>(turns.size()); }

  int text_len() const {
    size_t n = caption.size() + target.size();
    for (const auto& t : turns) n += t.first.size() + t.second.size();
    return static_cast<int>(n);
  }
};

struct SegmentMetadata {
  std::vector<Modality> modality;
  std::vector<int> turn_or_frame;  // frame index for vis, turn id for text
  std::vector<int> position;       // region index for vis, running text index

  size_t size() const { return modality.size(); }
};

inline constexpr int kIgnoreLabel = -1;

// Everything the objectives need for one instance: the embedded sequence
// node, mask, metadata, and the supervision targets.
template <class T>
struct FusedBatch {
  typename Graph<T>::NodeId embeddings = -1;  // L×d
  int length = 0;
  AttentionMask mask;
  SegmentMetadata meta;
  std::vector<int> gen_labels;  // next-token response targets, kIgnoreLabel elsewhere
  std::vector<int> mlm_labels;  // original ids at masked text positions
  std::vector<std::pair<int, std::vector<T>>> mvm_targets;  // fused pos, spatial row
  T mvt_label = T(1);
  int video_len = 0;    // F·P
  int text_start = 0;   // 1 + F·P
  int resp_start = 0;   // fused index of the first response-input token
};

// Masked positions to apply while embedding; produced from a MaskingPlan.
struct MaskingSpec {
  std::vector<int> text_positions;   // indices into the flat text-token array
  std::vector<int> video_positions;  // indices into 0..F·P-1
};

namespace detail {

// relu(row · W_V) for one region, computed outside any graph. Used for the
// stop-gradient MVM regression targets.
template <class T>
std::vector<T> project_row(const T* src, const Tensor<T>& wv) {
  const int de = wv.shape[0], d = wv.shape[1];
  std::vector<T> out(static_cast<size_t>(d), T(0));
  for (int e = 0; e < de; ++e) {
    const T s = src[e];
    const T* w = wv.data.data() + static_cast<size_t>(e) * d;
    for (int j = 0; j < d; ++j) out[static_cast<size_t>(j)] += s * w[j];
  }
  for (auto& x : out) x = x > T(0) ? x : T(0);
  return out;
}

}  // namespace detail

// Spatial projection: reshape the grid row-major (frame-major, region-minor)
// to (F·P)×d_emb and apply relu(Z·W_V).
template <class T>
typename Graph<T>::NodeId project_video(Graph<T>& g, const Model<T>& m,
                                        const BoundModel<T>& b,
                                        const VideoFeatures<T>& video) {
  if (video.feat_dim() != m.fcfg.d_emb) {
    throw DimensionError("video feature width " +
                         std::to_string(video.feat_dim()) +
                         " does not match configured d_emb " +
                         std::to_string(m.fcfg.d_emb));
  }
  Tensor<T> flat({video.frames() * video.regions(), video.feat_dim()});
  flat.data = video.grid.data;
  const auto z = g.constant(std::move(flat));
  return g.relu(g.matmul(z, b[m.refs.video_proj]));
}

// Adds the modality / temporal / position encoding layers to the projected
// spatial features by element-wise summation, left to right.
template <class T>
typename Graph<T>::NodeId encode_video(Graph<T>& g, const Model<T>& m,
                                       const BoundModel<T>& b,
                                       typename Graph<T>::NodeId spatial,
                                       int frames, int regions) {
  const int n = frames * regions;
  if (g.value(spatial).shape[0] != n) {
    throw DimensionError("spatial rows " +
                         std::to_string(g.value(spatial).shape[0]) +
                         " do not match F·P = " + std::to_string(n));
  }
  if (frames > m.fcfg.max_frames) {
    throw CapacityError("frame count " + std::to_string(frames) +
                        " exceeds temporal table size " +
                        std::to_string(m.fcfg.max_frames));
  }
  if (regions > m.fcfg.max_regions) {
    throw CapacityError("region count " + std::to_string(regions) +
                        " exceeds position table size " +
                        std::to_string(m.fcfg.max_regions));
  }
  std::vector<int> mod_ids(static_cast<size_t>(n),
                           static_cast<int>(Modality::Vis));
  std::vector<int> frame_ids(static_cast<size_t>(n));
  std::vector<int> region_ids(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    frame_ids[static_cast<size_t>(i)] = i / regions;
    region_ids[static_cast<size_t>(i)] = i % regions;
  }
  auto z = g.add(spatial, g.gather_rows(b[m.refs.modality], mod_ids));
  z = g.add(z, g.gather_rows(b[m.refs.video_temporal], frame_ids));
  z = g.add(z, g.gather_rows(b[m.refs.video_position], region_ids));
  return z;
}

struct TextLayout {
  std::vector<int> ids;        // flat text token ids, response included
  std::vector<Modality> modality;
  std::vector<int> turn;
  int resp_offset = 0;         // index of the first response token
};

inline TextLayout layout_text(const DialogueInstance& inst) {
  if (inst.turns.empty()) {
    throw ContractError("dialogue instance needs at least one turn");
  }
  TextLayout out;
  auto push = [&out](const std::vector<int>& ids, Modality mod, int turn) {
    for (int id : ids) {
      out.ids.push_back(id);
      out.modality.push_back(mod);
      out.turn.push_back(turn);
    }
  };
  push(inst.caption, Modality::Cap, 0);
  for (size_t k = 0; k < inst.turns.size(); ++k) {
    push(inst.turns[k].first, Modality::Usr, static_cast<int>(k) + 1);
    push(inst.turns[k].second, Modality::Sys, static_cast<int>(k) + 1);
  }
  out.resp_offset = static_cast<int>(out.ids.size());
  push(inst.target, Modality::Sys, inst.current_turn());
  return out;
}

// Token + modality + turn + position encoding sum for the text segment.
// Masked positions contribute the [MASK] embedding instead of their token.
template <class T>
std::pair<typename Graph<T>::NodeId, TextLayout> encode_text(
    Graph<T>& g, const Model<T>& m, const BoundModel<T>& b,
    const DialogueInstance& inst,
    const std::vector<int>& masked_text_positions = {}) {
  TextLayout lay = layout_text(inst);
  const int lt = static_cast<int>(lay.ids.size());
  if (lt > m.fcfg.max_text_len) {
    throw CapacityError("text length " + std::to_string(lt) +
                        " exceeds max_text_len " +
                        std::to_string(m.fcfg.max_text_len));
  }
  if (inst.current_turn() > m.fcfg.max_turns) {
    throw CapacityError("turn count " + std::to_string(inst.current_turn()) +
                        " exceeds max_turns " +
                        std::to_string(m.fcfg.max_turns));
  }
  std::vector<int> input_ids = lay.ids;
  for (int p : masked_text_positions) {
    if (p < 0 || p >= lt) {
      throw ContractError("masked text position " + std::to_string(p) +
                          " outside text of length " + std::to_string(lt));
    }
    input_ids[static_cast<size_t>(p)] = kMaskId;
  }
  std::vector<int> mod_ids(lay.modality.size());
  for (size_t i = 0; i < lay.modality.size(); ++i)
    mod_ids[i] = static_cast<int>(lay.modality[i]);
  std::vector<int> pos_ids(static_cast<size_t>(lt));
  for (int i = 0; i < lt; ++i) pos_ids[static_cast<size_t>(i)] = i;

  auto z = g.add(g.gather_rows(b[m.refs.token_embedding], input_ids),
                 g.gather_rows(b[m.refs.modality], mod_ids));
  z = g.add(z, g.gather_rows(b[m.refs.text_turn], lay.turn));
  z = g.add(z, g.gather_rows(b[m.refs.text_position], pos_ids));
  return {z, std::move(lay)};
}

// Assembles [CLS] ⊕ Z_V ⊕ Z_T with the causal mask and metadata. The target
// segment may be empty here; decoding appends partial responses through this
// same path.
template <class T>
FusedBatch<T> fuse_sequence(Graph<T>& g, const Model<T>& m,
                            const BoundModel<T>& b,
                            const DialogueInstance& inst,
                            const VideoFeatures<T>& video,
                            const MaskingSpec* masking = nullptr,
                            T mvt_label = T(1),
                            const Model<T>* stop_grad_source = nullptr) {
  using NodeId = typename Graph<T>::NodeId;
  const int fp = video.frames() * video.regions();

  // Video side. MVM targets snapshot the projected spatial rows before the
  // [MASK] embedding replaces them; the snapshot is a constant, so the
  // regression target stays out of the gradient path. A gradient checker can
  // pin the snapshot to an unperturbed parameter set via stop_grad_source.
  NodeId spatial = project_video(g, m, b, video);
  FusedBatch<T> out;
  std::vector<char> vid_masked(static_cast<size_t>(fp), 0);
  if (masking != nullptr && !masking->video_positions.empty()) {
    const Model<T>& src = stop_grad_source != nullptr ? *stop_grad_source : m;
    const Tensor<T>& wv = src.params[src.refs.video_proj];
    for (int p : masking->video_positions) {
      if (p < 0 || p >= fp) {
        throw ContractError("masked video position " + std::to_string(p) +
                            " outside grid of " + std::to_string(fp) +
                            " regions");
      }
      vid_masked[static_cast<size_t>(p)] = 1;
      out.mvm_targets.emplace_back(
          1 + p, detail::project_row(
                     video.row(p / video.regions(), p % video.regions()), wv));
    }
    // masked_spatial = spatial ⊙ keep + indicator · mask_row
    Tensor<T> keep({fp, m.tcfg.d_model});
    Tensor<T> indicator({fp, 1});
    for (int i = 0; i < fp; ++i) {
      const T k = vid_masked[static_cast<size_t>(i)] ? T(0) : T(1);
      indicator.at(i, 0) = T(1) - k;
      for (int j = 0; j < m.tcfg.d_model; ++j) keep.at(i, j) = k;
    }
    const NodeId mask_row =
        g.gather_rows(b[m.refs.token_embedding], std::vector<int>{kMaskId});
    spatial = g.add(g.mul(spatial, g.constant(std::move(keep))),
                    g.matmul(g.constant(std::move(indicator)), mask_row));
  }
  const NodeId video_seg =
      encode_video(g, m, b, spatial, video.frames(), video.regions());

  // Text side.
  std::vector<int> text_masked;
  if (masking != nullptr) text_masked = masking->text_positions;
  auto [text_seg, lay] = encode_text(g, m, b, inst, text_masked);
  const int lt = static_cast<int>(lay.ids.size());

  // [CLS] = token embedding + modality embedding.
  const NodeId cls =
      g.add(g.gather_rows(b[m.refs.token_embedding], std::vector<int>{kClsId}),
            g.gather_rows(b[m.refs.modality],
                          std::vector<int>{static_cast<int>(Modality::Cls)}));

  const int total = 1 + fp + lt;
  if (total > m.tcfg.max_seq_len) {
    throw CapacityError("fused length " + std::to_string(total) +
                        " exceeds max_seq_len " +
                        std::to_string(m.tcfg.max_seq_len));
  }
  out.embeddings = g.concat_rows({cls, video_seg, text_seg});
  out.length = total;
  out.mask = AttentionMask::causal(total);
  out.video_len = fp;
  out.text_start = 1 + fp;
  out.resp_start = out.text_start + lay.resp_offset;
  out.mvt_label = mvt_label;

  // Metadata over the fused sequence.
  out.meta.modality.reserve(static_cast<size_t>(total));
  out.meta.turn_or_frame.reserve(static_cast<size_t>(total));
  out.meta.position.reserve(static_cast<size_t>(total));
  out.meta.modality.push_back(Modality::Cls);
  out.meta.turn_or_frame.push_back(0);
  out.meta.position.push_back(0);
  for (int i = 0; i < fp; ++i) {
    out.meta.modality.push_back(Modality::Vis);
    out.meta.turn_or_frame.push_back(i / video.regions());
    out.meta.position.push_back(i % video.regions());
  }
  for (int i = 0; i < lt; ++i) {
    out.meta.modality.push_back(lay.modality[static_cast<size_t>(i)]);
    out.meta.turn_or_frame.push_back(lay.turn[static_cast<size_t>(i)]);
    out.meta.position.push_back(i);
  }

  out.gen_labels.assign(static_cast<size_t>(total), kIgnoreLabel);
  out.mlm_labels.assign(static_cast<size_t>(total), kIgnoreLabel);
  for (int p : text_masked) {
    out.mlm_labels[static_cast<size_t>(out.text_start + p)] =
        lay.ids[static_cast<size_t>(p)];
  }
  return out;
}

// Training view: fuse_sequence plus teacher-forced generation labels. The
// position holding y_{k-1} (or the last pre-response position for k = 0) is
// labeled y_k; the position holding the final [EOS] predicts nothing.
template <class T>
FusedBatch<T> build_fused(Graph<T>& g, const Model<T>& m,
                          const BoundModel<T>& b,
                          const DialogueInstance& inst,
                          const VideoFeatures<T>& video,
                          const MaskingSpec* masking = nullptr,
                          T mvt_label = T(1),
                          const Model<T>* stop_grad_source = nullptr) {
  if (inst.target.empty()) {
    throw ContractError("dialogue instance has an empty target response");
  }
  FusedBatch<T> out = fuse_sequence(g, m, b, inst, video, masking, mvt_label,
                                    stop_grad_source);
  const int ly = static_cast<int>(inst.target.size());
  out.gen_labels[static_cast<size_t>(out.resp_start - 1)] = inst.target[0];
  for (int k = 1; k < ly; ++k) {
    out.gen_labels[static_cast<size_t>(out.resp_start + k - 1)] =
        inst.target[static_cast<size_t>(k)];
  }
  return out;
}

}  // namespace mmfuse

#endif  // MMFUSE_FUSION_HPP_
