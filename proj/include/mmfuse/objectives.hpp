#ifndef MMFUSE_OBJECTIVES_HPP_
#define MMFUSE_OBJECTIVES_HPP_

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mmfuse/adam.hpp"
#include "mmfuse/error.hpp"
#include "mmfuse/fusion.hpp"
#include "mmfuse/graph.hpp"
#include "mmfuse/model.hpp"
#include "mmfuse/rng.hpp"
#include "mmfuse/transformer.hpp"

namespace mmfuse {

// Which text/video positions get the [MASK] treatment for one instance,
// plus the token ids being reconstructed.
struct MaskingPlan {
  std::vector<int> token_mask_positions;   // flat text-array indices
  std::vector<int> region_mask_positions;  // 0..F·P-1
  std::vector<int> original_tokens;        // aligned with token positions
};

struct MaskGeometry {
  std::vector<int> eligible_text;  // caption + history indices; response excluded
  std::vector<int> text_ids;       // full text array (for saving originals)
  int video_positions = 0;
  bool mask_text = true;
  bool mask_video = true;
};

// Independent Bernoulli(rate) per eligible position; if an active side comes
// up empty, one eligible position is forced uniformly at random.
inline MaskingPlan sample_masks(const MaskGeometry& geom, double rate,
                                Rng& rng) {
  if (!(rate > 0.0 && rate < 1.0)) {
    throw ContractError("mask rate must lie in (0, 1)");
  }
  MaskingPlan plan;
  if (geom.mask_text && !geom.eligible_text.empty()) {
    for (int p : geom.eligible_text) {
      if (rng.bernoulli(rate)) plan.token_mask_positions.push_back(p);
    }
    if (plan.token_mask_positions.empty()) {
      plan.token_mask_positions.push_back(
          geom.eligible_text[rng.below(
              static_cast<uint32_t>(geom.eligible_text.size()))]);
    }
    for (int p : plan.token_mask_positions) {
      plan.original_tokens.push_back(geom.text_ids[static_cast<size_t>(p)]);
    }
  }
  if (geom.mask_video && geom.video_positions > 0) {
    for (int p = 0; p < geom.video_positions; ++p) {
      if (rng.bernoulli(rate)) plan.region_mask_positions.push_back(p);
    }
    if (plan.region_mask_positions.empty()) {
      plan.region_mask_positions.push_back(
          static_cast<int>(rng.below(
              static_cast<uint32_t>(geom.video_positions))));
    }
  }
  return plan;
}

// One instance as the trainer sees it: possibly pointing at another
// instance's video or dialogue after pair corruption.
template <class T>
struct TrainItem {
  const DialogueInstance* dialogue = nullptr;
  const VideoFeatures<T>* video = nullptr;
  bool corrupted = false;
};

// Video-text matching corruption: ~rate of the instances get a video or a
// dialogue (coin flip) from a different instance and an mvt label of 0.
// Returns the number corrupted; a singleton batch disables corruption.
template <class T>
int corrupt_pair(std::vector<TrainItem<T>>& items, double rate, Rng& rng) {
  if (items.size() < 2 || rate <= 0.0) return 0;
  const auto n = static_cast<uint32_t>(items.size());
  std::vector<TrainItem<T>> originals = items;
  int corrupted = 0;
  for (uint32_t i = 0; i < n; ++i) {
    if (!rng.bernoulli(rate)) continue;
    uint32_t partner = rng.below(n - 1);
    if (partner >= i) ++partner;
    const bool swap_video = rng.bernoulli(0.5);
    if (swap_video) {
      items[i].video = originals[partner].video;
    } else {
      items[i].dialogue = originals[partner].dialogue;
    }
    items[i].corrupted = true;
    ++corrupted;
  }
  return corrupted;
}

struct ObjectiveToggles {
  bool gen = true, mlm = true, mvm = true, mvt = true;
  bool any() const { return gen || mlm || mvm || mvt; }
};

struct ObjectiveWeights {
  double gen = 1.5, mlm = 1.0, mvm = 1.0, mvt = 1.0;
};

struct LossBundle {
  double gen = 0, mlm = 0, mvm = 0, mvt = 0;
  bool gen_active = false, mlm_active = false, mvm_active = false,
       mvt_active = false;
  ObjectiveWeights weights;
  double combined = 0;

  // The weighted-sum identity, recomputable by tests and assertions.
  double recombine() const {
    double c = 0;
    if (gen_active) c += weights.gen * gen;
    if (mlm_active) c += weights.mlm * mlm;
    if (mvm_active) c += weights.mvm * mvm;
    if (mvt_active) c += weights.mvt * mvt;
    return c;
  }

  bool finite() const {
    return std::isfinite(gen) && std::isfinite(mlm) && std::isfinite(mvm) &&
           std::isfinite(mvt) && std::isfinite(combined);
  }
};

// ---- per-instance losses ----

template <class T>
typename Graph<T>::NodeId generation_loss(Graph<T>& g,
                                          typename Graph<T>::NodeId logits,
                                          const FusedBatch<T>& batch) {
  return g.cross_entropy(logits, batch.gen_labels, kIgnoreLabel);
}

template <class T>
typename Graph<T>::NodeId mlm_loss(Graph<T>& g,
                                   typename Graph<T>::NodeId logits,
                                   const FusedBatch<T>& batch) {
  return g.cross_entropy(logits, batch.mlm_labels, kIgnoreLabel);
}

// L1 regression of the projected hidden states at masked video positions
// against a fixed projection of the original spatial features. The target
// branch is evaluated outside the graph, so no gradient reaches it.
template <class T>
typename Graph<T>::NodeId mvm_loss(Graph<T>& g, const Model<T>& m,
                                   const BoundModel<T>& b,
                                   typename Graph<T>::NodeId hidden,
                                   const FusedBatch<T>& batch,
                                   const Model<T>* stop_grad_source = nullptr) {
  if (batch.mvm_targets.empty()) {
    throw ContractError("mvm_loss: no masked video positions");
  }
  const int r = static_cast<int>(batch.mvm_targets.size());
  const int dm = m.d_mvm();
  std::vector<int> positions;
  positions.reserve(batch.mvm_targets.size());
  const Model<T>& src = stop_grad_source != nullptr ? *stop_grad_source : m;
  const Tensor<T>& tproj = src.params[src.refs.mvm_target_proj];
  Tensor<T> target({r, dm});
  for (int i = 0; i < r; ++i) {
    positions.push_back(batch.mvm_targets[static_cast<size_t>(i)].first);
    const auto& spatial = batch.mvm_targets[static_cast<size_t>(i)].second;
    for (size_t e = 0; e < spatial.size(); ++e) {
      const T s = spatial[e];
      const T* w = tproj.data.data() + e * static_cast<size_t>(dm);
      for (int j = 0; j < dm; ++j) target.at(i, j) += s * w[j];
    }
  }
  const auto pred =
      g.matmul(g.gather_rows(hidden, positions), b[m.refs.mvm_out_proj]);
  return g.l1_loss(pred, g.constant(std::move(target)));
}

template <class T>
typename Graph<T>::NodeId mvt_loss(Graph<T>& g, const Model<T>& m,
                                   const BoundModel<T>& b,
                                   typename Graph<T>::NodeId hidden,
                                   T label) {
  if (!(label == T(0) || label == T(1))) {
    throw ContractError("mvt label must be 0 or 1");
  }
  const auto cls = g.gather_rows(hidden, std::vector<int>{0});
  const auto z = g.add_bias(g.matmul(cls, b[m.refs.mvt_w]), b[m.refs.mvt_b]);
  return g.bce_with_logits(z, label);
}

// Warmup then inverse-square-root decay, peaking exactly at `peak` when
// step == warmup_steps.
inline double lr_schedule(int64_t step, double peak, int64_t warmup_steps) {
  if (warmup_steps < 1) throw ConfigError("warmup_steps must be >= 1");
  if (step < 1) throw ContractError("lr_schedule: step must be >= 1");
  const double warm = static_cast<double>(step) / warmup_steps;
  const double decay = std::sqrt(static_cast<double>(warmup_steps) /
                                 static_cast<double>(step));
  return peak * (warm < decay ? warm : decay);
}

struct TrainOptions {
  ObjectiveToggles toggles;
  ObjectiveWeights weights;
  double mask_rate = 0.15;
  double corrupt_rate = 0.15;
  double lr_peak = 5e-5;
  int64_t warmup_steps = 500;
  double grad_clip = 1.0;  // global L2 cap; 0 disables
  bool training_mode = true;
};

template <class T>
struct BatchLosses {
  LossBundle bundle;
  typename Graph<T>::NodeId combined = -1;
  typename Graph<T>::NodeId gen = -1, mlm = -1, mvm = -1, mvt = -1;
};

namespace detail {

template <class T>
typename Graph<T>::NodeId mean_of(Graph<T>& g,
                                  const std::vector<typename Graph<T>::NodeId>&
                                      parts) {
  auto acc = parts[0];
  for (size_t i = 1; i < parts.size(); ++i) acc = g.add(acc, parts[i]);
  return g.scale(acc, static_cast<T>(1.0 / static_cast<double>(parts.size())));
}

}  // namespace detail

// Builds masking plans, applies pair corruption, runs one forward per
// instance and assembles the weighted multi-task loss on the graph.
// Corrupted instances contribute only the matching loss; their generation /
// reconstruction targets no longer describe their inputs.
template <class T>
BatchLosses<T> build_batch_losses(Graph<T>& g, const Model<T>& m,
                                  const BoundModel<T>& b,
                                  std::vector<TrainItem<T>> batch,
                                  const TrainOptions& opts, Rng& rng,
                                  const Model<T>* stop_grad_source = nullptr) {
  using NodeId = typename Graph<T>::NodeId;
  if (batch.empty()) throw ContractError("train batch must be nonempty");
  if (!opts.toggles.any()) {
    throw ContractError("no training objective is active");
  }
  if (opts.toggles.mvt && opts.corrupt_rate > 0.0) {
    corrupt_pair(batch, opts.corrupt_rate, rng);
  }

  std::vector<NodeId> gen_parts, mlm_parts, mvm_parts, mvt_parts;
  for (auto& item : batch) {
    Rng inst_rng = rng.split();
    MaskingSpec spec;
    if (!item.corrupted && (opts.toggles.mlm || opts.toggles.mvm)) {
      TextLayout lay = layout_text(*item.dialogue);
      MaskGeometry geom;
      geom.text_ids = lay.ids;
      geom.mask_text = opts.toggles.mlm;
      geom.mask_video = opts.toggles.mvm;
      for (int p = 0; p < lay.resp_offset; ++p) geom.eligible_text.push_back(p);
      geom.video_positions = item.video->frames() * item.video->regions();
      MaskingPlan plan = sample_masks(geom, opts.mask_rate, inst_rng);
      spec.text_positions = plan.token_mask_positions;
      spec.video_positions = plan.region_mask_positions;
    }
    FusedBatch<T> fused =
        build_fused(g, m, b, *item.dialogue, *item.video, &spec,
                    item.corrupted ? T(0) : T(1), stop_grad_source);
    ForwardResult<T> fwd =
        transformer_forward(g, m, b, fused.embeddings, fused.mask,
                            opts.training_mode, &inst_rng);
    if (!item.corrupted) {
      if (opts.toggles.gen) {
        gen_parts.push_back(generation_loss(g, fwd.logits, fused));
      }
      if (opts.toggles.mlm && !spec.text_positions.empty()) {
        mlm_parts.push_back(mlm_loss(g, fwd.logits, fused));
      }
      if (opts.toggles.mvm && !fused.mvm_targets.empty()) {
        mvm_parts.push_back(
            mvm_loss(g, m, b, fwd.hidden, fused, stop_grad_source));
      }
    }
    if (opts.toggles.mvt) {
      mvt_parts.push_back(mvt_loss(g, m, b, fwd.hidden, fused.mvt_label));
    }
  }

  BatchLosses<T> out;
  out.bundle.weights = opts.weights;
  NodeId combined = -1;
  auto fold = [&](const std::vector<NodeId>& parts, double weight,
                  NodeId& slot, double& value, bool& active) {
    if (parts.empty()) return;
    slot = detail::mean_of(g, parts);
    value = static_cast<double>(g.value(slot).item());
    active = true;
    const NodeId weighted = g.scale(slot, static_cast<T>(weight));
    combined = combined < 0 ? weighted : g.add(combined, weighted);
  };
  fold(gen_parts, opts.weights.gen, out.gen, out.bundle.gen,
       out.bundle.gen_active);
  fold(mlm_parts, opts.weights.mlm, out.mlm, out.bundle.mlm,
       out.bundle.mlm_active);
  fold(mvm_parts, opts.weights.mvm, out.mvm, out.bundle.mvm,
       out.bundle.mvm_active);
  fold(mvt_parts, opts.weights.mvt, out.mvt, out.bundle.mvt,
       out.bundle.mvt_active);
  if (combined < 0) {
    throw ContractError("no objective produced a loss for this batch");
  }
  out.combined = combined;
  out.bundle.combined = static_cast<double>(g.value(combined).item());
  return out;
}

// One optimizer step: forward, backward, clip, Adam at the scheduled rate.
// Deterministic given the rng state and batch order.
template <class T>
LossBundle train_step(const std::vector<TrainItem<T>>& batch, Model<T>& m,
                      AdamState<T>& opt_state, const TrainOptions& opts,
                      int64_t step_index, Rng& rng) {
  Graph<T> g;
  BoundModel<T> b = bind(g, m);
  BatchLosses<T> losses = build_batch_losses(g, m, b, batch, opts, rng);
  if (!losses.bundle.finite()) {
    std::ostringstream os;
    os << "non-finite loss at step " << step_index << ": gen="
       << losses.bundle.gen << " mlm=" << losses.bundle.mlm
       << " mvm=" << losses.bundle.mvm << " mvt=" << losses.bundle.mvt;
    throw NumericError(os.str());
  }
  g.backward(losses.combined);
  std::vector<Tensor<T>> grads;
  grads.reserve(m.params.count());
  for (int i = 0; i < m.params.count(); ++i) grads.push_back(g.grad(b[i]));
  if (opts.grad_clip > 0.0) clip_global_norm(grads, opts.grad_clip);
  const double lr = lr_schedule(step_index, opts.lr_peak, opts.warmup_steps);
  adam_step(m.params, grads, opt_state, lr);
  return losses.bundle;
}

// Loss measurement without parameter updates (validation).
template <class T>
LossBundle evaluate_loss(const std::vector<TrainItem<T>>& batch,
                         const Model<T>& m, const TrainOptions& opts,
                         Rng& rng) {
  Graph<T> g;
  BoundModel<T> b = bind(g, m);
  TrainOptions eval_opts = opts;
  eval_opts.training_mode = false;
  return build_batch_losses(g, m, b, batch, eval_opts, rng).bundle;
}

}  // namespace mmfuse

#endif  // MMFUSE_OBJECTIVES_HPP_
