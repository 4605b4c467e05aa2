#pragma once

// Frozen sentence encoder. A small masked LM is trained on the task corpus
// and then frozen; a sentence's vector is the mean of the hidden rows after
// block N-1 (the second-to-last layer) over its token positions.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "ssr/adam.hpp"
#include "ssr/checkpoint.hpp"
#include "ssr/corpus.hpp"
#include "ssr/transformer.hpp"

namespace ssr {

template <class S>
struct EncoderModel {
  TransformerConfig cfg;
  TokenEmbeddings<S> emb;
  std::vector<BlockWeights<S>> blocks;
  LmHead<S> head;  // MLM head, d -> V
  bool frozen = false;

  static EncoderModel make(int vocab_size, const TransformerConfig& cfg, Rng& rng,
                           double init_std = kInitStd) {
    cfg.validate();
    if (cfg.n_blocks < 2)
      throw ContractError(
          "EncoderModel: n_blocks must be >= 2 so a second-to-last layer "
          "exists");
    EncoderModel m;
    m.cfg = cfg;
    m.emb = TokenEmbeddings<S>::make(vocab_size, cfg, rng, init_std);
    m.blocks = make_blocks<S>(cfg, rng, init_std);
    m.head = LmHead<S>::make(vocab_size, cfg, rng, init_std);
    return m;
  }

  ParamSet<S> params() const {
    ParamSet<S> ps;
    emb.append_params(ps, "enc.emb");
    append_block_params(ps, blocks, "enc.stack");
    head.append_params(ps, "enc.head");
    return ps;
  }

  template <class T>
  EncoderModel<T> cast() const {
    EncoderModel<T> o;
    o.cfg = cfg;
    o.emb = emb.template cast<T>();
    o.blocks = cast_blocks<T>(blocks);
    o.head = head.template cast<T>();
    o.frozen = frozen;
    return o;
  }
};

// MLM forward: the word rows of `masked` positions are zeroed (there is no
// <mask> token; masking-by-zeroing mirrors the sentence-level scheme), while
// their positional rows stay so the model knows where a prediction is owed.
template <class S>
Var<S> mlm_logits(Tape<S>& t, const EncoderModel<S>& m, const std::vector<int>& ids,
                  const std::vector<int>& masked, Rng& rng, bool training) {
  const Eigen::Index T = static_cast<Eigen::Index>(ids.size());
  if (T > m.emb.pos->rows())
    throw RangeError("mlm_logits: sequence of " + std::to_string(T) +
                     " exceeds max_positions " + std::to_string(m.emb.pos->rows()));
  auto w = embedding_rows(t, m.emb.word, ids);
  if (!masked.empty()) w = zero_rows(t, w, masked);
  auto h0 = add(t, w, slice_rows(t, m.emb.pos, 0, T));
  auto states =
      stack_forward(t, h0, m.blocks, m.cfg.n_heads, m.cfg.dropout,
                    AttentionMask::bidirectional(), rng, training);
  return token_logits(t, states.back(), m.head);
}

// Mean-pooled states after block N-1, i.e. the input to the final block.
template <class S>
Mat<S> encode_sentence(const EncoderModel<S>& m, const std::vector<int>& tokens) {
  if (!m.frozen)
    throw ContractError("encode_sentence: encoder must be frozen first");
  if (tokens.empty())
    throw DegenerateInputError("encode_sentence: empty sentence");
  std::vector<int> ids = tokens;
  if (static_cast<Eigen::Index>(ids.size()) > m.emb.pos->rows()) {
    std::cerr << "warning: sentence of " << ids.size()
              << " tokens truncated to max_positions " << m.emb.pos->rows()
              << "\n";
    ids.resize(static_cast<std::size_t>(m.emb.pos->rows()));
  }
  Tape<S> t;
  Rng unused(0);  // eval mode never draws
  const std::vector<BlockWeights<S>> tapped(m.blocks.begin(), m.blocks.end() - 1);
  auto h0 = embed_tokens(t, m.emb, ids);
  auto states = stack_forward(t, h0, tapped, m.cfg.n_heads, 0.0,
                              AttentionMask::bidirectional(), unused, false);
  return mean_rows(t, states.back())->value;
}

// ---------------------------------------------------------------------------
// Vector cache: one float32 row per sentence, iteration order = corpus order.

struct VectorCache {
  int dim = 0;
  std::vector<std::uint32_t> paragraph_ids;     // per row
  std::vector<std::uint32_t> sentence_indices;  // per row
  MatF vectors;                                 // count x dim

  Eigen::Index count() const { return vectors.rows(); }
};

// Fans out over paragraphs when n_threads > 1; rows land at precomputed
// offsets, so the cache bytes are independent of the thread count.
VectorCache encode_corpus(const EncoderModel<float>& model,
                          const std::vector<Paragraph>& corpus, int n_threads = 1);

void save_cache(const VectorCache& cache, const std::string& path);
VectorCache load_cache(const std::string& path);

// ---------------------------------------------------------------------------
// MLM training (production scalar). One step = one Adam update on one
// sentence; an epoch is a full shuffled pass over the corpus sentences.

struct EncoderTrainResult {
  EncoderModel<float> model;
  std::vector<double> epoch_mean_loss;  // one entry per epoch started
};

EncoderTrainResult train_encoder_mlm(const std::vector<Paragraph>& corpus,
                                     int vocab_size, const TransformerConfig& cfg,
                                     double mlm_mask_rate, int steps,
                                     std::uint64_t seed,
                                     const AdamConfig& adam = {});

// Rebuilds the architecture and fills it from a checkpoint; returns a frozen
// encoder ready for encode_sentence.
EncoderModel<float> load_encoder(const std::string& path, int vocab_size,
                                 const TransformerConfig& cfg);

}  // namespace ssr
