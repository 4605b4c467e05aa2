#pragma once

// Token-level comparison systems: a causal LM over paragraphs flattened
// with <eos> sentence separators, perplexity-based ending selection, and an
// infilling variant trained on move-blank-to-end rearrangements. No
// sentence-vector path anywhere — conditioning is tokens only.

#include <cstdint>
#include <string>
#include <vector>

#include "ssr/adam.hpp"
#include "ssr/checkpoint.hpp"
#include "ssr/corpus.hpp"
#include "ssr/decoder.hpp"
#include "ssr/transformer.hpp"

namespace ssr {

template <class S>
struct TokenLm {
  TransformerConfig cfg;
  TokenEmbeddings<S> emb;
  std::vector<BlockWeights<S>> blocks;
  LmHead<S> head;

  static TokenLm make(int vocab_size, const TransformerConfig& cfg, Rng& rng,
                      double init_std = kInitStd) {
    cfg.validate();
    TokenLm m;
    m.cfg = cfg;
    m.emb = TokenEmbeddings<S>::make(vocab_size, cfg, rng, init_std);
    m.blocks = make_blocks<S>(cfg, rng, init_std);
    m.head = LmHead<S>::make(vocab_size, cfg, rng, init_std);
    return m;
  }

  ParamSet<S> params() const {
    ParamSet<S> ps;
    emb.append_params(ps, "lm.emb");
    append_block_params(ps, blocks, "lm.stack");
    head.append_params(ps, "lm.head");
    return ps;
  }

  template <class T>
  TokenLm<T> cast() const {
    TokenLm<T> o;
    o.cfg = cfg;
    o.emb = emb.template cast<T>();
    o.blocks = cast_blocks<T>(blocks);
    o.head = head.template cast<T>();
    return o;
  }
};

// s1 ++ <eos> ++ s2 ++ <eos> ++ ... ++ <eos>
std::vector<int> flatten_paragraph(const Paragraph& para);

// One stream per sentence slot: before ++ after ++ <blank> ++ target ++ <eos>,
// where before/after are the flattened surrounding sentences.
std::vector<std::vector<int>> make_infill_streams(
    const std::vector<Paragraph>& corpus);

template <class S>
Var<S> causal_lm_logits(Tape<S>& t, const TokenLm<S>& m,
                        const std::vector<int>& ids, Rng& rng, bool training) {
  auto h0 = embed_tokens(t, m.emb, ids);
  auto states = stack_forward(t, h0, m.blocks, m.cfg.n_heads, m.cfg.dropout,
                              AttentionMask::causal(), rng, training);
  return token_logits(t, states.back(), m.head);
}

struct TokenLmTrainResult {
  TokenLm<float> model;
  std::vector<double> epoch_mean_loss;
};

// Causal NLL over every next-token position of one stream per step.
TokenLmTrainResult train_token_lm(const std::vector<Paragraph>& corpus,
                                  int vocab_size, const TransformerConfig& cfg,
                                  int steps, std::uint64_t seed,
                                  const AdamConfig& adam = {});

// Same loop over the rearranged infill streams.
TokenLmTrainResult train_infill_lm(const std::vector<Paragraph>& corpus,
                                   int vocab_size, const TransformerConfig& cfg,
                                   int steps, std::uint64_t seed,
                                   const AdamConfig& adam = {});

// Top-k continuation of a token context until <eos>, max_len, or the
// positional budget; emitted ids exclude the context and the terminal <eos>.
template <class S>
std::vector<int> continue_tokens(const TokenLm<S>& m, std::vector<int> ids,
                                 const GenerationParams& params) {
  params.validate();
  if (ids.empty())
    throw DegenerateInputError("continue_tokens: empty context");
  if (static_cast<Eigen::Index>(ids.size()) > m.cfg.max_positions)
    throw RangeError("continue_tokens: context of " +
                     std::to_string(ids.size()) +
                     " tokens exceeds max_positions " +
                     std::to_string(m.cfg.max_positions));
  Rng rng(params.seed);
  std::vector<int> out;
  while (static_cast<int>(out.size()) < params.max_len &&
         static_cast<Eigen::Index>(ids.size()) <= m.cfg.max_positions) {
    Tape<S> t;
    const Mat<S> logits = causal_lm_logits(t, m, ids, rng, false)->value;
    Eigen::Matrix<S, 1, Eigen::Dynamic> last = logits.row(logits.rows() - 1);
    const int id = sample_next_token(last, params.k, rng, kBannedSampleIds);
    if (id == Tokenizer::eos_id) break;
    out.push_back(id);
    ids.push_back(id);
  }
  return out;
}

template <class S>
std::vector<int> generate_next_sentence(const TokenLm<S>& m,
                                        const std::vector<int>& context,
                                        const GenerationParams& params) {
  if (context.empty() || context.back() != Tokenizer::eos_id)
    throw ContractError(
        "generate_next_sentence: context must end with <eos>");
  return continue_tokens(m, context, params);
}

// before ++ after ++ <blank> prompts the model for the blank's content.
template <class S>
std::vector<int> infill_baseline(const TokenLm<S>& m,
                                 const std::vector<int>& before,
                                 const std::vector<int>& after,
                                 const GenerationParams& params) {
  std::vector<int> ids = before;
  ids.insert(ids.end(), after.begin(), after.end());
  ids.push_back(Tokenizer::blank_id);
  return continue_tokens(m, ids, params);
}

struct SelectionResult {
  int chosen = 0;               // lowest perplexity; ties -> lowest index
  std::vector<double> scores;   // exp(mean NLL) per candidate, input order
};

SelectionResult perplexity_select(const TokenLm<float>& m,
                                  const std::vector<int>& context,
                                  const std::vector<std::vector<int>>& candidates);

TokenLm<float> load_token_lm(const std::string& path, int vocab_size,
                             const TransformerConfig& cfg);

}  // namespace ssr
