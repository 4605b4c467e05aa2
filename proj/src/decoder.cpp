#include "ssr/decoder.hpp"

#include <numeric>
#include <utility>

namespace ssr {

MatchResult match_candidates(const MatF& zhat, const MatF& candidates) {
  if (zhat.rows() != 1)
    throw DimensionError("match_candidates: query is " +
                         shape_str(zhat.rows(), zhat.cols()) +
                         ", expected a single row");
  if (candidates.rows() == 0)
    throw DegenerateInputError("match_candidates: no candidates");
  if (candidates.cols() != zhat.cols())
    throw DimensionError("match_candidates: candidates are " +
                         std::to_string(candidates.cols()) +
                         " wide, query is " + std::to_string(zhat.cols()));

  const double eps = static_cast<double>(kCosineEps<float>);
  const Eigen::VectorXd q = zhat.row(0).cast<double>();
  const double qn = std::max(q.norm(), eps);
  std::vector<double> score(static_cast<std::size_t>(candidates.rows()));
  for (Eigen::Index i = 0; i < candidates.rows(); ++i) {
    const Eigen::VectorXd c = candidates.row(i).cast<double>();
    score[static_cast<std::size_t>(i)] =
        q.dot(c) / (qn * std::max(c.norm(), eps));
  }

  MatchResult r;
  r.ranking.resize(score.size());
  std::iota(r.ranking.begin(), r.ranking.end(), 0);
  std::sort(r.ranking.begin(), r.ranking.end(), [&](int a, int b) {
    const double sa = score[static_cast<std::size_t>(a)];
    const double sb = score[static_cast<std::size_t>(b)];
    if (sa != sb) return sa > sb;
    return a < b;  // declared tie-break: lowest index first
  });
  for (int idx : r.ranking)
    r.scores.push_back(score[static_cast<std::size_t>(idx)]);
  return r;
}

DecoderBatch build_decoder_batch(const TrainingTriple& triple,
                                 DecoderVariant variant, int context_budget) {
  if (triple.target.empty() || triple.target.back() != Tokenizer::eos_id)
    throw ContractError("build_decoder_batch: target must end with <eos>");
  DecoderBatch b;
  if (variant == DecoderVariant::kMixed)
    b.context = truncate_context(triple.context, context_budget);
  b.input_tokens = b.context;
  b.input_tokens.push_back(Tokenizer::eos_id);
  b.input_tokens.insert(b.input_tokens.end(), triple.target.begin(),
                        triple.target.end() - 1);
  // row i predicts the next sequence element; only target tokens count
  b.targets = b.input_tokens;
  b.targets.push_back(triple.target.back());
  b.prompt_rows = static_cast<int>(b.context.size()) + 2;
  b.loss_mask.assign(b.targets.size(), 0);
  for (std::size_t i = static_cast<std::size_t>(b.prompt_rows) - 1;
       i < b.loss_mask.size(); ++i)
    b.loss_mask[i] = 1;
  return b;
}

std::vector<TrainingTriple> make_training_triples(
    const std::vector<Paragraph>& corpus, const VectorCache& cache) {
  const std::vector<CacheParagraph> runs = cache_paragraphs(cache);
  if (runs.size() != corpus.size())
    throw CorpusError("make_training_triples: cache holds " +
                      std::to_string(runs.size()) + " paragraphs, corpus " +
                      std::to_string(corpus.size()));
  std::vector<TrainingTriple> triples;
  for (std::size_t p = 0; p < corpus.size(); ++p) {
    const Paragraph& para = corpus[p];
    const CacheParagraph& run = runs[p];
    if (para.id < 0 || run.pid != static_cast<std::uint32_t>(para.id) ||
        run.m != static_cast<int>(para.sentences.size()))
      throw CorpusError("make_training_triples: cache run " +
                        std::to_string(run.pid) + " (" +
                        std::to_string(run.m) +
                        " sentences) does not match paragraph " +
                        std::to_string(para.id) + " (" +
                        std::to_string(para.sentences.size()) + " sentences)");
    std::vector<int> context;
    for (std::size_t s = 0; s < para.sentences.size(); ++s) {
      if (s > 0) {
        TrainingTriple tr;
        tr.z = cache.vectors.row(run.first_row + static_cast<Eigen::Index>(s));
        tr.context = context;
        tr.target = para.sentences[s];
        tr.target.push_back(Tokenizer::eos_id);
        triples.push_back(std::move(tr));
      }
      context.insert(context.end(), para.sentences[s].begin(),
                     para.sentences[s].end());
    }
  }
  return triples;
}

DecoderTrainResult train_decoder(DecoderModel<float> model,
                                 const std::vector<TrainingTriple>& triples,
                                 DecoderVariant variant, int steps,
                                 std::uint64_t seed, int context_budget,
                                 const AdamConfig& adam) {
  if (triples.empty())
    throw DegenerateInputError("train_decoder: no training triples");
  if (steps < 0) throw ContractError("train_decoder: negative step count");

  // Prepare and validate every sequence up front so a bad triple fails fast.
  std::vector<DecoderBatch> batches;
  batches.reserve(triples.size());
  for (const TrainingTriple& tr : triples) {
    if (tr.z.rows() != 1 || tr.z.cols() != model.d_sentence)
      throw DimensionError("train_decoder: triple vector is " +
                           shape_str(tr.z.rows(), tr.z.cols()) +
                           ", expected " + shape_str(1, model.d_sentence));
    DecoderBatch b = build_decoder_batch(tr, variant, context_budget);
    const int rows = 1 + static_cast<int>(b.input_tokens.size());
    if (rows > model.cfg.max_positions)
      throw RangeError("train_decoder: sequence of " + std::to_string(rows) +
                       " rows exceeds max_positions " +
                       std::to_string(model.cfg.max_positions));
    batches.push_back(std::move(b));
  }

  DecoderTrainResult result{std::move(model), {}};
  if (steps > 0) {
    ParamSet<float> ps = result.model.params();
    std::vector<Var<float>> values = param_values(ps);
    AdamState<float> opt(values, adam);

    Rng rng(seed);
    const int epoch_len = static_cast<int>(batches.size());
    std::vector<int> order(batches.size());
    std::iota(order.begin(), order.end(), 0);
    double epoch_sum = 0.0;
    int epoch_steps = 0;
    for (int step = 0; step < steps; ++step) {
      const int in_epoch = step % epoch_len;
      if (in_epoch == 0) rng.shuffle(order);
      const std::size_t pick =
          static_cast<std::size_t>(order[static_cast<std::size_t>(in_epoch)]);
      const DecoderBatch& batch = batches[pick];

      Tape<float> t;
      auto z = make_const(MatF(triples[pick].z));
      auto loss = decoder_step_loss(t, result.model, batch, z, rng, true);
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

DecoderModel<float> load_decoder(const std::string& path, int vocab_size,
                                 int d_sentence, const TransformerConfig& cfg) {
  Rng rng(0);
  DecoderModel<float> model =
      DecoderModel<float>::make(vocab_size, d_sentence, cfg, rng);
  ParamSet<float> ps = model.params();
  load_checkpoint(path, ps);
  return model;
}

}  // namespace ssr
