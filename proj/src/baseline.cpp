#include "ssr/baseline.hpp"

#include <cmath>
#include <numeric>
#include <utility>

namespace ssr {

std::vector<int> flatten_paragraph(const Paragraph& para) {
  std::vector<int> out;
  for (const std::vector<int>& s : para.sentences) {
    out.insert(out.end(), s.begin(), s.end());
    out.push_back(Tokenizer::eos_id);
  }
  return out;
}

std::vector<std::vector<int>> make_infill_streams(
    const std::vector<Paragraph>& corpus) {
  std::vector<std::vector<int>> streams;
  for (const Paragraph& para : corpus) {
    for (std::size_t i = 0; i < para.sentences.size(); ++i) {
      std::vector<int> s;
      for (std::size_t j = 0; j < para.sentences.size(); ++j) {
        if (j == i) continue;
        s.insert(s.end(), para.sentences[j].begin(), para.sentences[j].end());
        s.push_back(Tokenizer::eos_id);
      }
      s.push_back(Tokenizer::blank_id);
      s.insert(s.end(), para.sentences[i].begin(), para.sentences[i].end());
      s.push_back(Tokenizer::eos_id);
      streams.push_back(std::move(s));
    }
  }
  return streams;
}

namespace {

// One Adam update per stream; every next-token position is supervised.
TokenLmTrainResult train_streams(const std::vector<std::vector<int>>& streams,
                                 int vocab_size, const TransformerConfig& cfg,
                                 int steps, std::uint64_t seed,
                                 const AdamConfig& adam, const char* who) {
  if (vocab_size < Tokenizer::n_specials)
    throw CorpusError(std::string(who) + ": vocabulary of " +
                      std::to_string(vocab_size) +
                      " is smaller than the special-token set");
  if (steps < 0)
    throw ContractError(std::string(who) + ": negative step count");
  if (streams.empty())
    throw DegenerateInputError(std::string(who) + ": empty corpus");
  for (const auto& s : streams)
    if (static_cast<Eigen::Index>(s.size()) > cfg.max_positions + 1)
      throw RangeError(std::string(who) + ": stream of " +
                       std::to_string(s.size()) +
                       " tokens exceeds max_positions " +
                       std::to_string(cfg.max_positions));

  Rng rng(seed);
  TokenLmTrainResult result{TokenLm<float>::make(vocab_size, cfg, rng), {}};

  if (steps > 0) {
    ParamSet<float> ps = result.model.params();
    std::vector<Var<float>> values = param_values(ps);
    AdamState<float> opt(values, adam);

    const int epoch_len = static_cast<int>(streams.size());
    std::vector<int> order(streams.size());
    std::iota(order.begin(), order.end(), 0);
    double epoch_sum = 0.0;
    int epoch_steps = 0;
    for (int step = 0; step < steps; ++step) {
      const int in_epoch = step % epoch_len;
      if (in_epoch == 0) rng.shuffle(order);
      const std::vector<int>& stream =
          streams[static_cast<std::size_t>(order[static_cast<std::size_t>(in_epoch)])];
      const std::vector<int> inputs(stream.begin(), stream.end() - 1);
      const std::vector<int> targets(stream.begin() + 1, stream.end());
      const std::vector<std::uint8_t> mask(targets.size(), 1);

      Tape<float> t;
      auto logits = causal_lm_logits(t, result.model, inputs, rng, true);
      auto loss = nll_loss(t, log_softmax(t, logits, 1), targets, mask);
      t.backward(loss);
      adam_step(values, opt);
      zero_grads(values);

      epoch_sum += static_cast<double>(loss->value(0, 0));
      ++epoch_steps;
      if (in_epoch == epoch_len - 1 || step == steps - 1) {
        result.epoch_mean_loss.push_back(epoch_sum / epoch_steps);
        epoch_sum = 0.0;
        epoch_steps = 0;
      }
    }
  }
  return result;
}

}  // namespace

TokenLmTrainResult train_token_lm(const std::vector<Paragraph>& corpus,
                                  int vocab_size, const TransformerConfig& cfg,
                                  int steps, std::uint64_t seed,
                                  const AdamConfig& adam) {
  std::vector<std::vector<int>> streams;
  streams.reserve(corpus.size());
  for (const Paragraph& p : corpus) streams.push_back(flatten_paragraph(p));
  return train_streams(streams, vocab_size, cfg, steps, seed, adam,
                       "train_token_lm");
}

TokenLmTrainResult train_infill_lm(const std::vector<Paragraph>& corpus,
                                   int vocab_size, const TransformerConfig& cfg,
                                   int steps, std::uint64_t seed,
                                   const AdamConfig& adam) {
  return train_streams(make_infill_streams(corpus), vocab_size, cfg, steps,
                       seed, adam, "train_infill_lm");
}

SelectionResult perplexity_select(
    const TokenLm<float>& m, const std::vector<int>& context,
    const std::vector<std::vector<int>>& candidates) {
  if (context.empty())
    throw ContractError("perplexity_select: empty context");
  if (candidates.size() < 2)
    throw ContractError("perplexity_select: need at least 2 candidates, got " +
                        std::to_string(candidates.size()));

  SelectionResult r;
  Rng unused(0);
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const std::vector<int>& cand = candidates[c];
    if (cand.empty())
      throw DegenerateInputError("perplexity_select: candidate " +
                                 std::to_string(c) + " is empty");
    std::vector<int> seq = context;
    seq.insert(seq.end(), cand.begin(), cand.end());
    const std::vector<int> inputs(seq.begin(), seq.end() - 1);
    const std::vector<int> targets(seq.begin() + 1, seq.end());
    // only the candidate's tokens count toward the mean NLL
    std::vector<std::uint8_t> mask(targets.size(), 0);
    for (std::size_t i = context.size() - 1; i < targets.size(); ++i)
      mask[i] = 1;

    Tape<float> t;
    auto logits = causal_lm_logits(t, m, inputs, unused, false);
    auto loss = nll_loss(t, log_softmax(t, logits, 1), targets, mask);
    r.scores.push_back(
        std::exp(static_cast<double>(loss->value(0, 0))));
  }
  r.chosen = 0;
  for (std::size_t c = 1; c < r.scores.size(); ++c)
    if (r.scores[c] < r.scores[static_cast<std::size_t>(r.chosen)])
      r.chosen = static_cast<int>(c);
  return r;
}

TokenLm<float> load_token_lm(const std::string& path, int vocab_size,
                             const TransformerConfig& cfg) {
  Rng rng(0);
  TokenLm<float> model = TokenLm<float>::make(vocab_size, cfg, rng);
  ParamSet<float> ps = model.params();
  load_checkpoint(path, ps);
  return model;
}

}  // namespace ssr
