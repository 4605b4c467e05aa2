#pragma once

// Sentence-level language models. SSR-AR regresses the next sentence vector
// through a causal stack; SSR-NonAR fills zeroed slots through a
// bidirectional stack. The output head g' is a plain linear map d -> d;
// there is no softmax anywhere on the output path.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ssr/adam.hpp"
#include "ssr/checkpoint.hpp"
#include "ssr/encoder.hpp"
#include "ssr/transformer.hpp"

namespace ssr {

template <class S>
inline constexpr S kCosineEps = static_cast<S>(1e-6);

enum class SSRMode { kAR, kNonAR };
enum class SSRLoss { kCosine, kContrastive };

struct SSRConfig {
  TransformerConfig tf;  // tf.d_model equals the encoder dimension d
  SSRMode mode = SSRMode::kAR;
  int max_sentences = 32;   // extent of the sentence positional table
  double mask_rate = 0.15;  // NonAR slot-masking rate
  int n_negatives = 8;      // contrastive negatives per supervised position

  void validate() const {
    tf.validate();
    if (max_sentences < 2)
      throw ContractError("SSRConfig: max_sentences must be >= 2");
    if (!(mask_rate > 0.0 && mask_rate < 1.0))
      throw ContractError("SSRConfig: mask_rate must lie in (0, 1)");
    if (n_negatives < 1)
      throw ContractError("SSRConfig: n_negatives must be >= 1");
  }
};

struct MaskPlan {
  int m = 0;                // paragraph length the plan was drawn for
  std::vector<int> masked;  // sorted, distinct, all < m
};

// max(1, round(rate * m)) distinct indices, uniform without replacement.
inline MaskPlan make_mask_plan(int m, double mask_rate, Rng& rng) {
  if (m < 1) throw ContractError("make_mask_plan: m must be >= 1");
  if (!(mask_rate > 0.0 && mask_rate < 1.0))
    throw ContractError("make_mask_plan: mask_rate must lie in (0, 1)");
  const std::size_t count = std::max<std::size_t>(
      1, static_cast<std::size_t>(
             std::lround(mask_rate * static_cast<double>(m))));
  MaskPlan plan;
  plan.m = m;
  for (std::size_t i :
       rng.sample_distinct(static_cast<std::size_t>(m), count))
    plan.masked.push_back(static_cast<int>(i));
  std::sort(plan.masked.begin(), plan.masked.end());
  return plan;
}

template <class S>
struct SSRModel {
  SSRConfig cfg;
  Var<S> pos;  // P^s: max_sentences x d, learnable
  std::vector<BlockWeights<S>> blocks;
  LmHead<S> head;  // g': d -> d linear, no activation

  static SSRModel make(const SSRConfig& cfg, Rng& rng,
                       double init_std = kInitStd) {
    cfg.validate();
    SSRModel m;
    m.cfg = cfg;
    m.pos = make_param<S>(
        randn<S>(cfg.max_sentences, cfg.tf.d_model, rng, init_std));
    m.blocks = make_blocks<S>(cfg.tf, rng, init_std);
    m.head = LmHead<S>::make(cfg.tf.d_model, cfg.tf, rng, init_std);
    return m;
  }

  ParamSet<S> params() const {
    ParamSet<S> ps;
    ps.emplace_back("ssr.pos", pos);
    append_block_params(ps, blocks, "ssr.stack");
    head.append_params(ps, "ssr.head");
    return ps;
  }

  template <class T>
  SSRModel<T> cast() const {
    SSRModel<T> o;
    o.cfg = cfg;
    o.pos = cast_leaf<T>(pos);
    o.blocks = cast_blocks<T>(blocks);
    o.head = head.template cast<T>();
    return o;
  }
};

// H^0 = Z + P^s rows; there is no word-embedding lookup at sentence level.
template <class S>
Var<S> ssr_inputs(Tape<S>& t, const Var<S>& Z, const Var<S>& pos_table) {
  if (Z->rows() > pos_table->rows())
    throw RangeError("ssr_inputs: paragraph of " + std::to_string(Z->rows()) +
                     " sentences exceeds max_sentences " +
                     std::to_string(pos_table->rows()));
  return add(t, Z, slice_rows(t, pos_table, 0, Z->rows()));
}

// Tape-level forward: AR runs causal on Z as-is (plan must be null); NonAR
// zeroes the planned slots first and runs bidirectional.
template <class S>
Var<S> ssr_forward(Tape<S>& t, const SSRModel<S>& m, const Var<S>& Z,
                   const MaskPlan* plan, Rng& rng, bool training) {
  Var<S> zin = Z;
  AttentionMask mask = AttentionMask::causal();
  if (m.cfg.mode == SSRMode::kNonAR) {
    if (plan == nullptr)
      throw ContractError("ssr_forward: NonAR mode requires a mask plan");
    if (plan->m != static_cast<int>(Z->rows()))
      throw ContractError("ssr_forward: mask plan drawn for m=" +
                          std::to_string(plan->m) + " but Z has " +
                          std::to_string(Z->rows()) + " rows");
    zin = zero_rows(t, Z, plan->masked);
    mask = AttentionMask::bidirectional();
  } else if (plan != nullptr) {
    throw ContractError("ssr_forward: AR mode takes no mask plan");
  }
  auto h0 = ssr_inputs(t, zin, m.pos);
  auto states = stack_forward(t, h0, m.blocks, m.cfg.tf.n_heads,
                              m.cfg.tf.dropout, mask, rng, training);
  return token_logits(t, states.back(), m.head);  // g' is the same linear form
}

// Inference: one predicted vector per position.
template <class S>
Mat<S> predict_vectors(const SSRModel<S>& m, const Mat<S>& Z,
                       const MaskPlan* plan = nullptr) {
  Tape<S> t;
  Rng unused(0);
  return ssr_forward(t, m, make_const<S>(Z), plan, unused, false)->value;
}

// AR: the prediction at the final context position is the next idea.
template <class S>
Mat<S> predict_next_vector(const SSRModel<S>& m, const Mat<S>& Z_context) {
  if (m.cfg.mode != SSRMode::kAR)
    throw ContractError("predict_next_vector: model is not in AR mode");
  const Eigen::Index c = Z_context.rows();
  if (c == 0)
    throw DegenerateInputError("predict_next_vector: empty context");
  if (c > m.cfg.max_sentences - 1)
    throw RangeError("predict_next_vector: context of " + std::to_string(c) +
                     " sentences exceeds max_sentences-1 = " +
                     std::to_string(m.cfg.max_sentences - 1));
  return predict_vectors(m, Z_context).row(c - 1);
}

// NonAR: zeroes slot i itself, so the result cannot depend on Z.row(i).
template <class S>
Mat<S> predict_masked_vector(const SSRModel<S>& m, const Mat<S>& Z, int i) {
  if (m.cfg.mode != SSRMode::kNonAR)
    throw ContractError("predict_masked_vector: model is not in NonAR mode");
  if (i < 0 || i >= static_cast<int>(Z.rows()))
    throw RangeError("predict_masked_vector: index " + std::to_string(i) +
                     " outside paragraph of " + std::to_string(Z.rows()) +
                     " sentences");
  MaskPlan plan{static_cast<int>(Z.rows()), {i}};
  return predict_vectors(m, Z, &plan).row(i);
}

// ---------------------------------------------------------------------------
// AR teacher targets: position t is supervised toward Z[t+1]; the final
// position has no target. The target matrix keeps m rows so it stays aligned
// with the prediction matrix; its last row (outside the loss) repeats Z[m-1].

template <class S>
struct ArTargets {
  Mat<S> inputs;               // = Z, m x d
  Mat<S> targets;              // m x d, row t = Z[t+1] for t < m-1
  std::vector<int> positions;  // 0..m-2
};

template <class S>
ArTargets<S> ssr_ar_targets(const Mat<S>& Z) {
  const Eigen::Index m = Z.rows();
  if (m < 2)
    throw DegenerateInputError(
        "ssr_ar_targets: need at least 2 sentences, got " + std::to_string(m));
  ArTargets<S> out;
  out.inputs = Z;
  out.targets.resize(m, Z.cols());
  out.targets.topRows(m - 1) = Z.bottomRows(m - 1);
  out.targets.row(m - 1) = Z.row(m - 1);
  for (Eigen::Index t = 0; t + 1 < m; ++t)
    out.positions.push_back(static_cast<int>(t));
  return out;
}

// ---------------------------------------------------------------------------
// Losses (Eq. 8 and Eq. 9 shapes)

// (1/|P|) sum over positions of (1 - cos(zhat_t, ztgt_t)); range [0, 2].
template <class S>
Var<S> ssr_cosine_loss(Tape<S>& t, const Var<S>& zhat, const Var<S>& ztgt,
                       const std::vector<int>& positions) {
  detail::check_same_shape("ssr_cosine_loss", zhat, ztgt);
  if (positions.empty())
    throw DegenerateInputError("ssr_cosine_loss: no supervised positions");
  auto a = gather_rows(t, zhat, positions);
  auto b = gather_rows(t, ztgt, positions);
  auto cos = cosine_rows(t, a, b, kCosineEps<S>);
  return affine(t, mean_all(t, cos), S(-1), S(1));
}

// (1/|P|) sum over positions of (2 - cos(zhat_t, ztgt_t)
//                                  + (1/n) sum_i cos(zhat_t, neg_i));
// negatives[k] holds the n x d negative matrix for positions[k]; range [0, 4].
template <class S>
Var<S> ssr_contrastive_loss(Tape<S>& t, const Var<S>& zhat, const Var<S>& ztgt,
                            const std::vector<Mat<S>>& negatives,
                            const std::vector<int>& positions) {
  detail::check_same_shape("ssr_contrastive_loss", zhat, ztgt);
  if (positions.empty())
    throw DegenerateInputError("ssr_contrastive_loss: no supervised positions");
  if (negatives.size() != positions.size())
    throw ContractError("ssr_contrastive_loss: " +
                        std::to_string(negatives.size()) +
                        " negative sets for " + std::to_string(positions.size()) +
                        " positions");
  const Eigen::Index n = negatives.front().rows();
  if (n < 1)
    throw ContractError("ssr_contrastive_loss: empty negative set");
  Var<S> total;
  for (std::size_t k = 0; k < positions.size(); ++k) {
    if (negatives[k].rows() != n || negatives[k].cols() != zhat->cols())
      throw ContractError(
          "ssr_contrastive_loss: negative set " + std::to_string(k) +
          " is " + shape_str(negatives[k].rows(), negatives[k].cols()) +
          ", expected " + shape_str(n, zhat->cols()));
    auto u = row(t, zhat, positions[k]);
    auto v = row(t, ztgt, positions[k]);
    auto pos_term = affine(t, cosine_sim(t, u, v, kCosineEps<S>), S(-1), S(2));
    auto neg_term =
        mean_all(t, cosine_one_to_rows(t, u, negatives[k], kCosineEps<S>));
    auto term = add(t, pos_term, neg_term);
    total = k == 0 ? term : add(t, total, term);
  }
  return affine(t, total, S(1) / static_cast<S>(positions.size()), S(0));
}

// ---------------------------------------------------------------------------
// Negative sampling and training (production scalar)

struct NegativeSet {
  MatF vectors;                                  // n x d
  std::vector<std::uint32_t> source_paragraphs;  // per row, never the anchor
};

NegativeSet sample_negatives(const VectorCache& cache, std::uint32_t anchor_pid,
                             int n, Rng& rng);

// Contiguous per-paragraph runs of cache rows.
struct CacheParagraph {
  std::uint32_t pid = 0;
  Eigen::Index first_row = 0;
  int m = 0;
};
std::vector<CacheParagraph> cache_paragraphs(const VectorCache& cache);

struct SSRTrainResult {
  SSRModel<float> model;
  std::vector<double> epoch_mean_loss;  // one entry per epoch started
};

// One step = one Adam update on one paragraph; an epoch is a shuffled pass
// over the usable paragraphs (AR needs m >= 2). Negatives are redrawn fresh
// at every step.
SSRTrainResult train_ssr(const VectorCache& cache, const SSRConfig& cfg,
                         SSRLoss loss, int steps, std::uint64_t seed,
                         const AdamConfig& adam = {});

SSRModel<float> load_ssr(const std::string& path, const SSRConfig& cfg);

}  // namespace ssr
