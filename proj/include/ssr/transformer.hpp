#pragma once

// Post-norm transformer stack: H' = LN(FFN(C) + C), C = LN(ATT(H) + H),
// multi-head scaled dot-product attention with learned absolute positions.
// Masked attention logits are assigned the mask floor (see ops.hpp), so a
// causal stack is bitwise independent of future positions.

#include "ssr/ops.hpp"

namespace ssr {

// Shared LN epsilon for the stacks (ops-level layer_norm still accepts any
// eps >= 0 for callers that need the textbook framing).
template <class S>
inline constexpr S kLnEps = static_cast<S>(1e-5);

// Gaussian init scale for weights and embeddings.
inline constexpr double kInitStd = 0.02;

struct TransformerConfig {
  int d_model = 64;
  int n_heads = 4;
  int n_blocks = 2;
  int d_ff = 256;
  int max_positions = 256;
  double dropout = 0.1;

  void validate() const {
    if (d_model < 1 || n_heads < 1 || n_blocks < 1 || d_ff < 1 ||
        max_positions < 1)
      throw ContractError("TransformerConfig: all extents must be >= 1");
    if (d_model % n_heads != 0)
      throw ContractError("TransformerConfig: d_model " +
                          std::to_string(d_model) +
                          " is not divisible by n_heads " +
                          std::to_string(n_heads));
    if (!(dropout >= 0.0 && dropout < 1.0))
      throw ContractError("TransformerConfig: dropout must lie in [0, 1)");
  }
};

class AttentionMask {
 public:
  using KeepMat =
      Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic,
                    Eigen::RowMajor>;

  static AttentionMask causal() { return AttentionMask(Kind::kCausal); }
  static AttentionMask bidirectional() {
    return AttentionMask(Kind::kBidirectional);
  }
  static AttentionMask explicit_keep(KeepMat keep) {
    AttentionMask m(Kind::kExplicit);
    m.keep_ = std::move(keep);
    return m;
  }

  // Fully open masks let attention skip the fill op entirely.
  bool unmasked() const { return kind_ == Kind::kBidirectional; }

  KeepMat keep(Eigen::Index T) const {
    switch (kind_) {
      case Kind::kBidirectional:
        return KeepMat::Ones(T, T);
      case Kind::kCausal: {
        KeepMat m = KeepMat::Zero(T, T);
        for (Eigen::Index r = 0; r < T; ++r)
          for (Eigen::Index c = 0; c <= r; ++c) m(r, c) = 1;
        return m;
      }
      case Kind::kExplicit:
        if (keep_.rows() != T || keep_.cols() != T)
          throw DimensionError("AttentionMask: explicit mask is " +
                               shape_str(keep_.rows(), keep_.cols()) +
                               ", sequence needs " + shape_str(T, T));
        return keep_;
    }
    throw ContractError("AttentionMask: unreachable kind");
  }

 private:
  enum class Kind { kCausal, kBidirectional, kExplicit };
  explicit AttentionMask(Kind k) : kind_(k) {}
  Kind kind_;
  KeepMat keep_;
};

// Named, ordered parameter list. The order is the checkpoint order and the
// optimizer-state order; every model registers its tensors exactly once.
template <class S>
using ParamSet = std::vector<std::pair<std::string, Var<S>>>;

template <class S>
std::vector<Var<S>> param_values(const ParamSet<S>& ps) {
  std::vector<Var<S>> out;
  out.reserve(ps.size());
  for (const auto& [name, v] : ps) out.push_back(v);
  return out;
}

template <class S>
std::size_t param_count(const ParamSet<S>& ps) {
  std::size_t n = 0;
  for (const auto& [name, v] : ps) n += static_cast<std::size_t>(v->value.size());
  return n;
}

// Widening/narrowing copy of a leaf (used to hand float weights to the
// float64 finite-difference oracle bit-for-bit).
template <class T, class S>
Var<T> cast_leaf(const Var<S>& v) {
  return make_leaf<T>(v->value.template cast<T>(), v->requires_grad, v->rank);
}

// ---------------------------------------------------------------------------
// Weight containers

template <class S>
struct BlockWeights {
  Var<S> wq, bq, wk, bk, wv, bv, wo, bo;  // attention projections
  Var<S> w1, b1, w2, b2;                  // position-wise FFN
  Var<S> ln1_g, ln1_b, ln2_g, ln2_b;      // post-norm layer norms

  // Draw order is fixed: wq, wk, wv, wo, w1, w2 (biases and norms are
  // deterministic constants), so a (config, seed) pair pins every byte.
  static BlockWeights make(const TransformerConfig& cfg, Rng& rng,
                           double init_std = kInitStd) {
    BlockWeights w;
    const int d = cfg.d_model, f = cfg.d_ff;
    w.wq = make_param<S>(randn<S>(d, d, rng, init_std));
    w.wk = make_param<S>(randn<S>(d, d, rng, init_std));
    w.wv = make_param<S>(randn<S>(d, d, rng, init_std));
    w.wo = make_param<S>(randn<S>(d, d, rng, init_std));
    w.w1 = make_param<S>(randn<S>(d, f, rng, init_std));
    w.w2 = make_param<S>(randn<S>(f, d, rng, init_std));
    w.bq = make_param<S>(Mat<S>::Zero(1, d), 1);
    w.bk = make_param<S>(Mat<S>::Zero(1, d), 1);
    w.bv = make_param<S>(Mat<S>::Zero(1, d), 1);
    w.bo = make_param<S>(Mat<S>::Zero(1, d), 1);
    w.b1 = make_param<S>(Mat<S>::Zero(1, f), 1);
    w.b2 = make_param<S>(Mat<S>::Zero(1, d), 1);
    w.ln1_g = make_param<S>(Mat<S>::Ones(1, d), 1);
    w.ln1_b = make_param<S>(Mat<S>::Zero(1, d), 1);
    w.ln2_g = make_param<S>(Mat<S>::Ones(1, d), 1);
    w.ln2_b = make_param<S>(Mat<S>::Zero(1, d), 1);
    return w;
  }

  void append_params(ParamSet<S>& ps, const std::string& prefix) const {
    ps.emplace_back(prefix + ".attn.wq", wq);
    ps.emplace_back(prefix + ".attn.bq", bq);
    ps.emplace_back(prefix + ".attn.wk", wk);
    ps.emplace_back(prefix + ".attn.bk", bk);
    ps.emplace_back(prefix + ".attn.wv", wv);
    ps.emplace_back(prefix + ".attn.bv", bv);
    ps.emplace_back(prefix + ".attn.wo", wo);
    ps.emplace_back(prefix + ".attn.bo", bo);
    ps.emplace_back(prefix + ".ffn.w1", w1);
    ps.emplace_back(prefix + ".ffn.b1", b1);
    ps.emplace_back(prefix + ".ffn.w2", w2);
    ps.emplace_back(prefix + ".ffn.b2", b2);
    ps.emplace_back(prefix + ".ln1.g", ln1_g);
    ps.emplace_back(prefix + ".ln1.b", ln1_b);
    ps.emplace_back(prefix + ".ln2.g", ln2_g);
    ps.emplace_back(prefix + ".ln2.b", ln2_b);
  }

  template <class T>
  BlockWeights<T> cast() const {
    BlockWeights<T> o;
    o.wq = cast_leaf<T>(wq), o.bq = cast_leaf<T>(bq);
    o.wk = cast_leaf<T>(wk), o.bk = cast_leaf<T>(bk);
    o.wv = cast_leaf<T>(wv), o.bv = cast_leaf<T>(bv);
    o.wo = cast_leaf<T>(wo), o.bo = cast_leaf<T>(bo);
    o.w1 = cast_leaf<T>(w1), o.b1 = cast_leaf<T>(b1);
    o.w2 = cast_leaf<T>(w2), o.b2 = cast_leaf<T>(b2);
    o.ln1_g = cast_leaf<T>(ln1_g), o.ln1_b = cast_leaf<T>(ln1_b);
    o.ln2_g = cast_leaf<T>(ln2_g), o.ln2_b = cast_leaf<T>(ln2_b);
    return o;
  }
};

// Untied word/position tables (the output head below owns its own weights).
template <class S>
struct TokenEmbeddings {
  Var<S> word;  // V x d
  Var<S> pos;   // max_positions x d

  static TokenEmbeddings make(int vocab_size, const TransformerConfig& cfg,
                              Rng& rng, double init_std = kInitStd) {
    if (vocab_size < 1)
      throw ContractError("TokenEmbeddings: vocab_size must be >= 1");
    TokenEmbeddings e;
    e.word = make_param<S>(randn<S>(vocab_size, cfg.d_model, rng, init_std));
    e.pos =
        make_param<S>(randn<S>(cfg.max_positions, cfg.d_model, rng, init_std));
    return e;
  }

  void append_params(ParamSet<S>& ps, const std::string& prefix) const {
    ps.emplace_back(prefix + ".word", word);
    ps.emplace_back(prefix + ".pos", pos);
  }

  template <class T>
  TokenEmbeddings<T> cast() const {
    TokenEmbeddings<T> o;
    o.word = cast_leaf<T>(word);
    o.pos = cast_leaf<T>(pos);
    return o;
  }
};

template <class S>
struct LmHead {
  Var<S> w;  // d x V
  Var<S> b;  // 1 x V

  static LmHead make(int vocab_size, const TransformerConfig& cfg, Rng& rng,
                     double init_std = kInitStd) {
    LmHead h;
    h.w = make_param<S>(randn<S>(cfg.d_model, vocab_size, rng, init_std));
    h.b = make_param<S>(Mat<S>::Zero(1, vocab_size), 1);
    return h;
  }

  void append_params(ParamSet<S>& ps, const std::string& prefix) const {
    ps.emplace_back(prefix + ".w", w);
    ps.emplace_back(prefix + ".b", b);
  }

  template <class T>
  LmHead<T> cast() const {
    LmHead<T> o;
    o.w = cast_leaf<T>(w);
    o.b = cast_leaf<T>(b);
    return o;
  }
};

template <class S>
std::vector<BlockWeights<S>> make_blocks(const TransformerConfig& cfg,
                                         Rng& rng,
                                         double init_std = kInitStd) {
  std::vector<BlockWeights<S>> blocks;
  blocks.reserve(static_cast<std::size_t>(cfg.n_blocks));
  for (int i = 0; i < cfg.n_blocks; ++i)
    blocks.push_back(BlockWeights<S>::make(cfg, rng, init_std));
  return blocks;
}

template <class S>
void append_block_params(ParamSet<S>& ps,
                         const std::vector<BlockWeights<S>>& blocks,
                         const std::string& prefix) {
  for (std::size_t i = 0; i < blocks.size(); ++i)
    blocks[i].append_params(ps, prefix + ".block" + std::to_string(i));
}

template <class T, class S>
std::vector<BlockWeights<T>> cast_blocks(
    const std::vector<BlockWeights<S>>& blocks) {
  std::vector<BlockWeights<T>> out;
  out.reserve(blocks.size());
  for (const auto& b : blocks) out.push_back(b.template cast<T>());
  return out;
}

// ---------------------------------------------------------------------------
// Forward pieces

// Token ids -> word embedding rows plus the leading positional rows.
template <class S>
Var<S> embed_tokens(Tape<S>& t, const TokenEmbeddings<S>& emb,
                    const std::vector<int>& ids) {
  const Eigen::Index T = static_cast<Eigen::Index>(ids.size());
  if (T > emb.pos->rows())
    throw RangeError("embed_tokens: sequence of " + std::to_string(T) +
                     " exceeds max_positions " +
                     std::to_string(emb.pos->rows()));
  auto e = embedding_rows(t, emb.word, ids);
  auto p = slice_rows(t, emb.pos, 0, T);
  return add(t, e, p);
}

template <class S>
Var<S> self_attention(Tape<S>& t, const Var<S>& H, const BlockWeights<S>& w,
                      int n_heads, const AttentionMask& mask) {
  const Eigen::Index d = H->cols();
  if (n_heads < 1 || d % n_heads != 0)
    throw ContractError("self_attention: d_model " + std::to_string(d) +
                        " is not divisible by n_heads " +
                        std::to_string(n_heads));
  const Eigen::Index dk = d / n_heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dk));
  auto Q = add_row_broadcast(t, matmul(t, H, w.wq), w.bq);
  auto K = add_row_broadcast(t, matmul(t, H, w.wk), w.bk);
  auto V = add_row_broadcast(t, matmul(t, H, w.wv), w.bv);
  AttentionMask::KeepMat keep;
  if (!mask.unmasked()) keep = mask.keep(H->rows());
  std::vector<Var<S>> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    auto Qh = slice_cols(t, Q, h * dk, dk);
    auto Kh = slice_cols(t, K, h * dk, dk);
    auto Vh = slice_cols(t, V, h * dk, dk);
    auto logits = affine(t, matmul_nt(t, Qh, Kh), scale, S(0));
    if (!mask.unmasked()) logits = mask_fill(t, logits, keep);
    auto A = softmax(t, logits, 1);
    heads.push_back(matmul(t, A, Vh));
  }
  auto O = n_heads == 1 ? heads[0] : concat_cols(t, heads);
  return add_row_broadcast(t, matmul(t, O, w.wo), w.bo);
}

// One post-norm block. Dropout sits on each sublayer output, before the
// residual add; pass training=false for inference.
template <class S>
Var<S> transformer_block(Tape<S>& t, const Var<S>& H, const BlockWeights<S>& w,
                         int n_heads, double dropout_p,
                         const AttentionMask& mask, Rng& rng, bool training) {
  auto att = self_attention(t, H, w, n_heads, mask);
  att = dropout(t, att, dropout_p, rng, training);
  auto C = layer_norm(t, add(t, att, H), w.ln1_g, w.ln1_b, kLnEps<S>);
  auto ff1 = gelu(t, add_row_broadcast(t, matmul(t, C, w.w1), w.b1));
  auto ff = add_row_broadcast(t, matmul(t, ff1, w.w2), w.b2);
  ff = dropout(t, ff, dropout_p, rng, training);
  return layer_norm(t, add(t, ff, C), w.ln2_g, w.ln2_b, kLnEps<S>);
}

// Runs N blocks and returns every intermediate state: index 0 is the input,
// index i the output of block i-1. An empty block list is the identity.
template <class S>
std::vector<Var<S>> stack_forward(Tape<S>& t, const Var<S>& H0,
                                  const std::vector<BlockWeights<S>>& blocks,
                                  int n_heads, double dropout_p,
                                  const AttentionMask& mask, Rng& rng,
                                  bool training) {
  std::vector<Var<S>> states;
  states.reserve(blocks.size() + 1);
  states.push_back(H0);
  for (const auto& b : blocks)
    states.push_back(transformer_block(t, states.back(), b, n_heads, dropout_p,
                                       mask, rng, training));
  return states;
}

template <class S>
Var<S> token_logits(Tape<S>& t, const Var<S>& H, const LmHead<S>& head) {
  return add_row_broadcast(t, matmul(t, H, head.w), head.b);
}

// ---------------------------------------------------------------------------
// Sampling helpers (inference only, no tape involved)

// Keeps the k largest logits (ties at the cutoff broken toward the lowest
// id), renormalizes over the kept set, zeroes the rest.
template <class S>
Eigen::Matrix<S, 1, Eigen::Dynamic> top_k_filter(
    const Eigen::Matrix<S, 1, Eigen::Dynamic>& logits, int k) {
  const Eigen::Index V = logits.cols();
  if (V == 0) throw DegenerateInputError("top_k_filter: empty logits");
  if (k < 1) throw ContractError("top_k_filter: k must be >= 1");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(V));
  for (Eigen::Index i = 0; i < V; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (logits(0, a) != logits(0, b)) return logits(0, a) > logits(0, b);
    return a < b;
  });
  const Eigen::Index kept = std::min<Eigen::Index>(k, V);
  // Softmax over the kept set only; excluded ids get exact zero.
  S mx = logits(0, order[0]);
  Eigen::Matrix<S, 1, Eigen::Dynamic> out =
      Eigen::Matrix<S, 1, Eigen::Dynamic>::Zero(V);
  S sum = S(0);
  for (Eigen::Index i = 0; i < kept; ++i) {
    const Eigen::Index id = order[static_cast<std::size_t>(i)];
    const S e = std::exp(logits(0, id) - mx);
    out(0, id) = e;
    sum += e;
  }
  out /= sum;
  return out;
}

// Inverse-CDF draw over an explicit distribution; ids are scanned in
// ascending order, so the draw is deterministic given the RNG state.
template <class S>
int sample_from_distribution(const Eigen::Matrix<S, 1, Eigen::Dynamic>& dist,
                             Rng& rng) {
  if (dist.cols() == 0)
    throw DegenerateInputError("sample_from_distribution: empty distribution");
  const double u = rng.real01();
  double cum = 0.0;
  int last_live = -1;
  for (Eigen::Index i = 0; i < dist.cols(); ++i) {
    const double p = static_cast<double>(dist(0, i));
    if (p > 0.0) last_live = static_cast<int>(i);
    cum += p;
    if (u < cum) return static_cast<int>(i);
  }
  if (last_live < 0)
    throw DegenerateInputError("sample_from_distribution: all-zero mass");
  return last_live;  // float round-off left cum slightly under 1
}

// One top-k draw with hard-banned ids (structural tokens a generator must
// never emit); bans are applied as mask-floor logits before the filter.
template <class S>
int sample_next_token(Eigen::Matrix<S, 1, Eigen::Dynamic> logits, int k,
                      Rng& rng, const std::vector<int>& banned) {
  for (int id : banned) {
    if (id < 0 || id >= static_cast<int>(logits.cols()))
      throw RangeError("sample_next_token: banned id " + std::to_string(id) +
                       " outside vocabulary of " +
                       std::to_string(logits.cols()));
    logits(0, id) = kMaskFloor<S>;
  }
  return sample_from_distribution(top_k_filter(logits, k), rng);
}

}  // namespace ssr
