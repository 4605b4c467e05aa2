#include "ssr/ssr_model.hpp"

#include <algorithm>
#include <utility>

namespace ssr {

std::vector<CacheParagraph> cache_paragraphs(const VectorCache& cache) {
  std::vector<CacheParagraph> out;
  std::vector<std::uint32_t> seen;
  const Eigen::Index n = cache.count();
  for (Eigen::Index r = 0; r < n; ++r) {
    const std::uint32_t pid = cache.paragraph_ids[static_cast<std::size_t>(r)];
    if (out.empty() || out.back().pid != pid) {
      if (std::find(seen.begin(), seen.end(), pid) != seen.end())
        throw CorpusError("cache_paragraphs: paragraph " + std::to_string(pid) +
                          " appears in non-contiguous runs");
      seen.push_back(pid);
      out.push_back({pid, r, 0});
    }
    const std::uint32_t sidx =
        cache.sentence_indices[static_cast<std::size_t>(r)];
    if (sidx != static_cast<std::uint32_t>(out.back().m))
      throw CorpusError("cache_paragraphs: paragraph " + std::to_string(pid) +
                        " has sentence index " + std::to_string(sidx) +
                        " where " + std::to_string(out.back().m) +
                        " was expected");
    ++out.back().m;
  }
  return out;
}

NegativeSet sample_negatives(const VectorCache& cache, std::uint32_t anchor_pid,
                             int n, Rng& rng) {
  if (n < 1) throw ContractError("sample_negatives: n must be >= 1");
  std::vector<Eigen::Index> candidates;
  for (Eigen::Index r = 0; r < cache.count(); ++r)
    if (cache.paragraph_ids[static_cast<std::size_t>(r)] != anchor_pid)
      candidates.push_back(r);
  if (candidates.size() < static_cast<std::size_t>(n))
    throw CorpusError("sample_negatives: need " + std::to_string(n) +
                      " rows outside paragraph " + std::to_string(anchor_pid) +
                      ", cache has " + std::to_string(candidates.size()));
  NegativeSet ns;
  ns.vectors.resize(n, cache.dim);
  for (std::size_t k :
       rng.sample_distinct(candidates.size(), static_cast<std::size_t>(n))) {
    const Eigen::Index r = candidates[k];
    ns.vectors.row(static_cast<Eigen::Index>(ns.source_paragraphs.size())) =
        cache.vectors.row(r);
    ns.source_paragraphs.push_back(
        cache.paragraph_ids[static_cast<std::size_t>(r)]);
  }
  return ns;
}

namespace {

// Negative matrices for the supervised positions, drawn in ascending
// position order so a fixed seed yields a fixed draw sequence.
std::vector<MatF> draw_negative_sets(const VectorCache& cache,
                                     std::uint32_t anchor_pid, int n,
                                     std::size_t n_positions, Rng& rng) {
  std::vector<MatF> sets;
  sets.reserve(n_positions);
  for (std::size_t k = 0; k < n_positions; ++k)
    sets.push_back(sample_negatives(cache, anchor_pid, n, rng).vectors);
  return sets;
}

}  // namespace

SSRTrainResult train_ssr(const VectorCache& cache, const SSRConfig& cfg,
                         SSRLoss loss_kind, int steps, std::uint64_t seed,
                         const AdamConfig& adam) {
  cfg.validate();
  if (steps < 0) throw ContractError("train_ssr: negative step count");
  if (cache.dim != cfg.tf.d_model)
    throw ConfigError("train_ssr: cache dimension " +
                      std::to_string(cache.dim) + " does not match d_model " +
                      std::to_string(cfg.tf.d_model));

  Rng rng(seed);
  SSRTrainResult result{SSRModel<float>::make(cfg, rng), {}};
  SSRModel<float>& model = result.model;

  if (steps > 0) {
    const int min_len = cfg.mode == SSRMode::kAR ? 2 : 1;
    std::vector<CacheParagraph> usable;
    for (const CacheParagraph& pg : cache_paragraphs(cache)) {
      if (pg.m < min_len) continue;
      if (pg.m > cfg.max_sentences)
        throw RangeError("train_ssr: paragraph " + std::to_string(pg.pid) +
                         " has " + std::to_string(pg.m) +
                         " sentences, exceeds max_sentences " +
                         std::to_string(cfg.max_sentences));
      usable.push_back(pg);
    }
    if (usable.empty())
      throw CorpusError("train_ssr: no paragraphs with at least " +
                        std::to_string(min_len) + " sentences");

    ParamSet<float> ps = model.params();
    std::vector<Var<float>> values = param_values(ps);
    AdamState<float> opt(values, adam);

    const int epoch_len = static_cast<int>(usable.size());
    std::vector<CacheParagraph> order = usable;
    double epoch_sum = 0.0;
    int epoch_steps = 0;
    for (int step = 0; step < steps; ++step) {
      const int in_epoch = step % epoch_len;
      if (in_epoch == 0) rng.shuffle(order);
      const CacheParagraph& pg = order[static_cast<std::size_t>(in_epoch)];
      const MatF Z = cache.vectors.middleRows(pg.first_row, pg.m);

      Tape<float> t;
      Var<float> pred, ztgt;
      std::vector<int> positions;
      if (cfg.mode == SSRMode::kAR) {
        ArTargets<float> tg = ssr_ar_targets(Z);
        pred = ssr_forward(t, model, make_const(tg.inputs), nullptr, rng, true);
        ztgt = make_const(std::move(tg.targets));
        positions = std::move(tg.positions);
      } else {
        const MaskPlan plan = make_mask_plan(pg.m, cfg.mask_rate, rng);
        pred = ssr_forward(t, model, make_const(Z), &plan, rng, true);
        ztgt = make_const(Z);
        positions = plan.masked;
      }
      Var<float> loss;
      if (loss_kind == SSRLoss::kCosine) {
        loss = ssr_cosine_loss(t, pred, ztgt, positions);
      } else {
        const std::vector<MatF> negs = draw_negative_sets(
            cache, pg.pid, cfg.n_negatives, positions.size(), rng);
        loss = ssr_contrastive_loss(t, pred, ztgt, negs, positions);
      }
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

SSRModel<float> load_ssr(const std::string& path, const SSRConfig& cfg) {
  Rng rng(0);
  SSRModel<float> model = SSRModel<float>::make(cfg, rng);
  ParamSet<float> ps = model.params();
  load_checkpoint(path, ps);
  return model;
}

}  // namespace ssr
