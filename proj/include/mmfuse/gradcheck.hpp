#ifndef MMFUSE_GRADCHECK_HPP_
#define MMFUSE_GRADCHECK_HPP_

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mmfuse/data.hpp"
#include "mmfuse/fusion.hpp"
#include "mmfuse/model.hpp"
#include "mmfuse/objectives.hpp"

namespace mmfuse {

// Central finite differences in double precision over every parameter of the
// full combined multi-task loss on a 2-layer toy model.
struct GradCheckReport {
  double max_rel_err = 0;
  std::string worst_param;
  int64_t elements_checked = 0;
  std::vector<std::pair<std::string, double>> per_param;

  bool pass(double tol = 1e-4) const { return max_rel_err < tol; }
};

namespace gradcheck_detail {

inline std::vector<int> random_ids(int n, int lo, int hi, Rng& rng) {
  std::vector<int> out;
  for (int i = 0; i < n; ++i) {
    out.push_back(lo + static_cast<int>(rng.below(
                           static_cast<uint32_t>(hi - lo))));
  }
  return out;
}

struct Fixture {
  Model<double> model;
  // The MVM target branch is stop-gradient: the differentiated function
  // treats the targets as constants of the evaluation point. The frozen copy
  // keeps the finite-difference evaluations consistent with that semantics.
  Model<double> frozen;
  std::vector<DialogueInstance> dialogues;
  std::vector<VideoFeatures<double>> videos;
  TrainOptions opts;
  uint64_t loss_seed = 0;

  std::vector<TrainItem<double>> batch() const {
    std::vector<TrainItem<double>> items;
    for (size_t i = 0; i < dialogues.size(); ++i) {
      items.push_back({&dialogues[i], &videos[i], false});
    }
    return items;
  }

  double loss() const {
    Graph<double> g;
    BoundModel<double> b = bind(g, model);
    Rng rng(loss_seed);
    return build_batch_losses(g, model, b, batch(), opts, rng, &frozen)
        .bundle.combined;
  }
};

inline Fixture make_fixture(uint64_t seed) {
  Fixture fx;
  TransformerConfig tc;
  tc.n_layers = 2;
  tc.n_heads = 2;
  tc.d_model = 16;
  tc.d_ff = 32;
  tc.vocab_size = 25;
  tc.max_seq_len = 64;
  tc.dropout_rate = 0.0;
  FusionConfig fc;
  fc.d_emb = 6;
  fc.max_frames = 2;
  fc.max_regions = 2;
  fc.max_turns = 3;
  fc.max_text_len = 40;
  fc.d_mvm = 12;
  Rng rng(seed);
  fx.model = Model<double>::init(tc, fc, rng);
  // Re-draw the weights at a larger scale. The training init of 0.02 piles
  // relu preactivations around zero, where finite differences straddle the
  // kink; healthier magnitudes keep the check about the calculus.
  for (int i = 0; i < fx.model.params.count(); ++i) {
    Tensor<double>& p = fx.model.params[i];
    const std::string& name = fx.model.params.name(i);
    if (name.find("gain") != std::string::npos) continue;
    const double scale = p.rank() == 2 ? 0.3 : 0.05;
    for (auto& v : p.data) v = rng.normal() * scale;
  }
  for (int i = 0; i < 2; ++i) {
    DialogueInstance inst;
    inst.id = "gc-" + std::to_string(i);
    inst.caption = random_ids(2, 5, tc.vocab_size, rng);
    inst.turns.emplace_back(random_ids(3, 5, tc.vocab_size, rng),
                            random_ids(1, 5, tc.vocab_size, rng));
    inst.turns.emplace_back(random_ids(3, 5, tc.vocab_size, rng),
                            std::vector<int>{});
    inst.target = random_ids(2, 5, tc.vocab_size, rng);
    inst.target.push_back(kEosId);
    fx.dialogues.push_back(std::move(inst));
    fx.videos.push_back(
        VideoFeatures<double>(random_normal<double>({2, 2, 6}, 1.0, rng)));
  }
  fx.opts.mask_rate = 0.3;
  fx.opts.corrupt_rate = 0.0;  // keep all four objectives in the graph
  fx.opts.training_mode = false;
  fx.loss_seed = Rng::splitmix64(seed ^ 0x6c6f7373ULL);
  fx.frozen = fx.model;
  return fx;
}

}  // namespace gradcheck_detail

// h = 1e-5, relative error |ad − fd| / max(|ad|, |fd|, 1e-3); the floor makes
// near-zero gradients an absolute check instead of amplifying FD noise.
inline GradCheckReport run_gradcheck(uint64_t seed = 2026) {
  using gradcheck_detail::Fixture;
  Fixture fx = gradcheck_detail::make_fixture(seed);
  const double h = 1e-5;

  // Analytic gradients.
  std::vector<Tensor<double>> analytic;
  {
    Graph<double> g;
    BoundModel<double> b = bind(g, fx.model);
    Rng rng(fx.loss_seed);
    BatchLosses<double> losses = build_batch_losses(
        g, fx.model, b, fx.batch(), fx.opts, rng, &fx.frozen);
    g.backward(losses.combined);
    for (int i = 0; i < fx.model.params.count(); ++i) {
      analytic.push_back(g.grad(b[i]));
    }
  }

  GradCheckReport report;
  for (int i = 0; i < fx.model.params.count(); ++i) {
    double param_max = 0;
    Tensor<double>& p = fx.model.params[i];
    for (int64_t j = 0; j < p.numel(); ++j) {
      const double ad = analytic[static_cast<size_t>(i)].data[j];
      auto rel_at = [&](double step) {
        const double keep = p.data[j];
        p.data[j] = keep + step;
        const double up = fx.loss();
        p.data[j] = keep - step;
        const double down = fx.loss();
        p.data[j] = keep;
        const double fd = (up - down) / (2 * step);
        return std::abs(ad - fd) /
               std::max({std::abs(ad), std::abs(fd), 1e-3});
      };
      double rel = rel_at(h);
      if (rel >= 1e-4) {
        // A relu kink inside [θ-h, θ+h] poisons the quotient while the
        // derivative itself is fine; shrinking h makes a kink artifact
        // vanish but leaves a genuinely wrong backward rule wrong.
        rel = std::min(rel, rel_at(1e-6));
        if (rel >= 1e-4) rel = std::min(rel, rel_at(1e-7));
      }
      param_max = std::max(param_max, rel);
      ++report.elements_checked;
    }
    report.per_param.emplace_back(fx.model.params.name(i), param_max);
    if (param_max > report.max_rel_err) {
      report.max_rel_err = param_max;
      report.worst_param = fx.model.params.name(i);
    }
  }
  return report;
}

}  // namespace mmfuse

#endif  // MMFUSE_GRADCHECK_HPP_
