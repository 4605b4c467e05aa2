#pragma once

// Surface realization. A predicted sentence vector becomes text either by
// cosine matching against a candidate table or through a causal token
// decoder whose prompt starts with the projected vector: vanilla prompts
// are [proj(z), <eos>], mixed prompts splice the previous sentences' tokens
// between the two. Sampling is top-k with <pad> and <blank> hard-banned.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "ssr/adam.hpp"
#include "ssr/checkpoint.hpp"
#include "ssr/corpus.hpp"
#include "ssr/encoder.hpp"
#include "ssr/ssr_model.hpp"
#include "ssr/transformer.hpp"

namespace ssr {

inline const std::vector<int> kBannedSampleIds{Tokenizer::pad_id,
                                               Tokenizer::blank_id};

struct GenerationParams {
  int k = 20;               // top-k width
  int max_len = 32;         // emission cap per sentence
  std::uint64_t seed = 0;   // per-item stream: callers derive base_seed + index
  double temperature = 1.0; // fixed by contract
  int context_budget = 64;  // mixed-prompt token budget (vector + ctx + <eos>)

  void validate() const {
    if (k < 1) throw ContractError("GenerationParams: k must be >= 1");
    if (max_len < 1)
      throw ContractError("GenerationParams: max_len must be >= 1");
    if (temperature != 1.0)
      throw ContractError("GenerationParams: temperature is fixed at 1");
    if (context_budget < 2)
      throw ContractError("GenerationParams: context_budget must be >= 2");
  }
};

// ---------------------------------------------------------------------------
// Matching realization

struct MatchResult {
  std::vector<int> ranking;    // candidate indices, best first
  std::vector<double> scores;  // cosine per ranking entry
};

// Descending cosine; exact ties keep the lower candidate index first.
MatchResult match_candidates(const MatF& zhat, const MatF& candidates);

// ---------------------------------------------------------------------------
// Decoder model

enum class DecoderVariant { kVanilla, kMixed };

template <class S>
struct DecoderModel {
  TransformerConfig cfg;
  int d_sentence = 0;  // width of incoming sentence vectors
  TokenEmbeddings<S> emb;
  std::vector<BlockWeights<S>> blocks;
  LmHead<S> head;
  Var<S> wz;  // d_sentence x d_model projection of the sentence vector
  Var<S> bz;  // 1 x d_model, zero-initialized

  static DecoderModel make(int vocab_size, int d_sentence,
                           const TransformerConfig& cfg, Rng& rng,
                           double init_std = kInitStd) {
    cfg.validate();
    if (d_sentence < 1)
      throw ContractError("DecoderModel: d_sentence must be >= 1");
    DecoderModel m;
    m.cfg = cfg;
    m.d_sentence = d_sentence;
    m.emb = TokenEmbeddings<S>::make(vocab_size, cfg, rng, init_std);
    m.blocks = make_blocks<S>(cfg, rng, init_std);
    m.head = LmHead<S>::make(vocab_size, cfg, rng, init_std);
    m.wz = make_param<S>(randn<S>(d_sentence, cfg.d_model, rng, init_std));
    m.bz = make_param<S>(Mat<S>::Zero(1, cfg.d_model), 1);
    return m;
  }

  ParamSet<S> params() const {
    ParamSet<S> ps;
    emb.append_params(ps, "dec.emb");
    append_block_params(ps, blocks, "dec.stack");
    head.append_params(ps, "dec.head");
    ps.emplace_back("dec.proj.w", wz);
    ps.emplace_back("dec.proj.b", bz);
    return ps;
  }

  template <class T>
  DecoderModel<T> cast() const {
    DecoderModel<T> o;
    o.cfg = cfg;
    o.d_sentence = d_sentence;
    o.emb = emb.template cast<T>();
    o.blocks = cast_blocks<T>(blocks);
    o.head = head.template cast<T>();
    o.wz = cast_leaf<T>(wz);
    o.bz = cast_leaf<T>(bz);
    return o;
  }
};

// ---------------------------------------------------------------------------
// Prompts. Rows live in embedding space; positional rows are added by the
// forward pass, so prompts and training inputs see identical geometry.

// Context is cut to the LAST budget-2 tokens: the vector row and the <eos>
// separator always fit.
inline std::vector<int> truncate_context(const std::vector<int>& prev,
                                         int budget) {
  if (budget < 2)
    throw ContractError("truncate_context: budget must be >= 2");
  const std::size_t keep =
      std::min(prev.size(), static_cast<std::size_t>(budget - 2));
  return std::vector<int>(prev.end() - static_cast<std::ptrdiff_t>(keep),
                          prev.end());
}

template <class S>
Mat<S> build_mixed_prompt(const DecoderModel<S>& m, const Mat<S>& zhat,
                          const std::vector<int>& prev_tokens, int budget) {
  if (zhat.rows() != 1 || zhat.cols() != m.d_sentence)
    throw DimensionError("build_mixed_prompt: vector is " +
                         shape_str(zhat.rows(), zhat.cols()) + ", expected " +
                         shape_str(1, m.d_sentence));
  const std::vector<int> ctx = truncate_context(prev_tokens, budget);
  const Eigen::Index V = m.emb.word->value.rows();
  Mat<S> prompt(1 + static_cast<Eigen::Index>(ctx.size()) + 1, m.cfg.d_model);
  prompt.row(0) = zhat * m.wz->value + m.bz->value;
  for (std::size_t i = 0; i < ctx.size(); ++i) {
    if (ctx[i] < 0 || ctx[i] >= static_cast<int>(V))
      throw RangeError("build_mixed_prompt: token id " +
                       std::to_string(ctx[i]) + " outside vocabulary of " +
                       std::to_string(V));
    prompt.row(1 + static_cast<Eigen::Index>(i)) =
        m.emb.word->value.row(ctx[i]);
  }
  prompt.row(prompt.rows() - 1) = m.emb.word->value.row(Tokenizer::eos_id);
  return prompt;
}

template <class S>
Mat<S> build_vanilla_prompt(const DecoderModel<S>& m, const Mat<S>& zhat) {
  return build_mixed_prompt(m, zhat, {}, 2);
}

// ---------------------------------------------------------------------------
// Training-sequence bookkeeping. Full input rows are
//   [proj(z)] ++ emb(context) ++ emb(<eos>) ++ emb(target[0..L-2])
// and row i is supervised toward targets[i]; prompt rows carry mask 0.

struct TrainingTriple {
  MatF z;                    // 1 x d_sentence ground-truth target vector
  std::vector<int> context;  // concatenated tokens of preceding sentences
  std::vector<int> target;   // target sentence tokens, ends with <eos>
};

struct DecoderBatch {
  std::vector<int> context;       // post-variant, post-budget
  std::vector<int> input_tokens;  // context ++ <eos> ++ target[0..L-2]
  std::vector<int> targets;       // per input row, including the z row
  std::vector<std::uint8_t> loss_mask;  // 1 exactly on target predictions
  int prompt_rows = 0;                  // 1 + |context| + 1
};

DecoderBatch build_decoder_batch(const TrainingTriple& triple,
                                 DecoderVariant variant, int context_budget);

// One triple per non-first sentence: ground-truth vector from the cache,
// plain concatenation of the preceding sentences' tokens, target + <eos>.
std::vector<TrainingTriple> make_training_triples(
    const std::vector<Paragraph>& corpus, const VectorCache& cache);

// ---------------------------------------------------------------------------
// Graph builders

// Logits over [proj(z)] ++ token rows under the causal mask.
template <class S>
Var<S> decoder_logits(Tape<S>& t, const DecoderModel<S>& m, const Var<S>& z,
                      const std::vector<int>& tokens, Rng& rng,
                      bool training) {
  if (z->rows() != 1 || z->cols() != m.d_sentence)
    throw DimensionError("decoder_logits: vector is " +
                         shape_str(z->rows(), z->cols()) + ", expected " +
                         shape_str(1, m.d_sentence));
  const Eigen::Index R = 1 + static_cast<Eigen::Index>(tokens.size());
  if (R > m.cfg.max_positions)
    throw RangeError("decoder_logits: sequence of " + std::to_string(R) +
                     " rows exceeds max_positions " +
                     std::to_string(m.cfg.max_positions));
  auto zrow = add_row_broadcast(t, matmul(t, z, m.wz), m.bz);
  Var<S> h0 = zrow;
  if (!tokens.empty())
    h0 = concat_rows(t, {zrow, embedding_rows(t, m.emb.word, tokens)});
  h0 = add(t, h0, slice_rows(t, m.emb.pos, 0, R));
  auto states = stack_forward(t, h0, m.blocks, m.cfg.n_heads, m.cfg.dropout,
                              AttentionMask::causal(), rng, training);
  return token_logits(t, states.back(), m.head);
}

// Masked NLL over one prepared batch.
template <class S>
Var<S> decoder_step_loss(Tape<S>& t, const DecoderModel<S>& m,
                         const DecoderBatch& batch, const Var<S>& z, Rng& rng,
                         bool training) {
  auto logits = decoder_logits(t, m, z, batch.input_tokens, rng, training);
  return nll_loss(t, log_softmax(t, logits, 1), batch.targets,
                  batch.loss_mask);
}

// ---------------------------------------------------------------------------
// Generation

// Samples until <eos>, max_len, or the positional budget runs out; the
// returned ids exclude the prompt and the terminal <eos>.
template <class S>
std::vector<int> decode_sentence(const DecoderModel<S>& m, const Mat<S>& prompt,
                                 const GenerationParams& params) {
  params.validate();
  if (prompt.rows() == 0)
    throw DegenerateInputError("decode_sentence: empty prompt");
  if (prompt.cols() != m.cfg.d_model)
    throw DimensionError("decode_sentence: prompt width " +
                         std::to_string(prompt.cols()) + " != d_model " +
                         std::to_string(m.cfg.d_model));
  if (prompt.rows() > m.cfg.max_positions)
    throw RangeError("decode_sentence: prompt of " +
                     std::to_string(prompt.rows()) +
                     " rows exceeds max_positions " +
                     std::to_string(m.cfg.max_positions));
  Rng rng(params.seed);
  Mat<S> rows = prompt;
  std::vector<int> out;
  while (static_cast<int>(out.size()) < params.max_len &&
         rows.rows() <= m.cfg.max_positions) {
    Tape<S> t;
    auto h0 = add(t, make_const(rows),
                  slice_rows(t, m.emb.pos, 0, rows.rows()));
    auto states = stack_forward(t, h0, m.blocks, m.cfg.n_heads, m.cfg.dropout,
                                AttentionMask::causal(), rng, false);
    const Mat<S> logits = token_logits(t, states.back(), m.head)->value;
    Eigen::Matrix<S, 1, Eigen::Dynamic> last = logits.row(logits.rows() - 1);
    const int id = sample_next_token(last, params.k, rng, kBannedSampleIds);
    if (id == Tokenizer::eos_id) break;
    out.push_back(id);
    rows.conservativeResize(rows.rows() + 1, Eigen::NoChange);
    rows.row(rows.rows() - 1) = m.emb.word->value.row(id);
  }
  return out;
}

template <class S>
std::vector<int> realize(const DecoderModel<S>& m, const Mat<S>& zhat,
                         const std::vector<int>& prev_tokens,
                         const GenerationParams& params,
                         DecoderVariant variant) {
  params.validate();
  const Mat<S> prompt =
      variant == DecoderVariant::kVanilla
          ? build_vanilla_prompt(m, zhat)
          : build_mixed_prompt(m, zhat, prev_tokens, params.context_budget);
  return decode_sentence(m, prompt, params);
}

// ---------------------------------------------------------------------------
// Training (production scalar)

struct DecoderTrainResult {
  DecoderModel<float> model;
  std::vector<double> epoch_mean_loss;
};

DecoderTrainResult train_decoder(DecoderModel<float> model,
                                 const std::vector<TrainingTriple>& triples,
                                 DecoderVariant variant, int steps,
                                 std::uint64_t seed, int context_budget = 64,
                                 const AdamConfig& adam = {});

DecoderModel<float> load_decoder(const std::string& path, int vocab_size,
                                 int d_sentence, const TransformerConfig& cfg);

}  // namespace ssr
