#include "ssr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <array>
#include <cstdio>
#include <map>
#include <set>

namespace ssr {

namespace {

using Ngram = std::vector<int>;

std::map<Ngram, int> ngram_counts(const std::vector<int>& tokens, int n) {
  std::map<Ngram, int> counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size();
       ++i)
    ++counts[Ngram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                   tokens.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  return counts;
}

}  // namespace

double bleu_n(const std::vector<int>& candidate,
              const std::vector<int>& reference, int n) {
  if (n < 1 || n > 4)
    throw ContractError("bleu_n: order " + std::to_string(n) +
                        " outside 1..4");
  if (candidate.empty()) return 0.0;

  double log_sum = 0.0;
  int orders = 0;
  for (int i = 1; i <= n; ++i) {
    const auto total =
        static_cast<long>(candidate.size()) - static_cast<long>(i) + 1;
    if (total <= 0) continue;  // candidate too short to form i-grams
    const auto cand = ngram_counts(candidate, i);
    const auto ref = ngram_counts(reference, i);
    long clipped = 0;
    for (const auto& [gram, count] : cand) {
      const auto it = ref.find(gram);
      if (it != ref.end()) clipped += std::min(count, it->second);
    }
    if (clipped == 0) return 0.0;  // no smoothing
    log_sum += std::log(static_cast<double>(clipped) /
                        static_cast<double>(total));
    ++orders;
  }
  const double precision = std::exp(log_sum / orders);
  const double bp = std::min(
      1.0, std::exp(1.0 - static_cast<double>(reference.size()) /
                              static_cast<double>(candidate.size())));
  return bp * precision;
}

double distinct_n(const std::vector<std::vector<int>>& candidates, int n) {
  if (n < 1) throw ContractError("distinct_n: order must be >= 1");
  std::set<Ngram> unique;
  long total = 0;
  for (const auto& cand : candidates) {
    for (std::size_t i = 0;
         i + static_cast<std::size_t>(n) <= cand.size(); ++i) {
      unique.insert(Ngram(cand.begin() + static_cast<std::ptrdiff_t>(i),
                          cand.begin() + static_cast<std::ptrdiff_t>(i) + n));
      ++total;
    }
  }
  if (total == 0)
    throw DegenerateInputError("distinct_n: no n-grams in any candidate");
  return static_cast<double>(unique.size()) / static_cast<double>(total);
}

double selection_accuracy(const std::vector<int>& predicted,
                          const std::vector<int>& correct) {
  if (predicted.size() != correct.size())
    throw ContractError("selection_accuracy: " +
                        std::to_string(predicted.size()) +
                        " predictions vs " + std::to_string(correct.size()) +
                        " answers");
  if (predicted.empty())
    throw DegenerateInputError("selection_accuracy: no items");
  long hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    if (predicted[i] == correct[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

void MetricReport::validate() const {
  if (n_items < 1) throw ContractError("MetricReport: no items");
  for (const auto& [name, value] : values)
    if (!std::isfinite(value) || value < 0.0 || value > 1.0)
      throw ContractError("MetricReport: " + name + " = " +
                          std::to_string(value) + " outside [0,1]");
}

namespace {

const char* method_name(ClozeMethod method) {
  switch (method) {
    case ClozeMethod::kSsrArMatch: return "ssr_ar_match";
    case ClozeMethod::kSsrNonArMatch: return "ssr_nonar_match";
    case ClozeMethod::kPplBaseline: return "ppl_baseline";
  }
  throw ContractError("run_cloze_eval: unknown method");
}

void check_item(const ClozeItem& item) {
  if (item.correct < 0 || item.correct > 1)
    throw ContractError("run_cloze_eval: correct index " +
                        std::to_string(item.correct) + " not in {0,1}");
  if (item.context.empty())
    throw DegenerateInputError("run_cloze_eval: empty context");
}

MatF encode_rows(const EncoderModel<float>& enc,
                 const std::vector<std::vector<int>>& sentences,
                 Eigen::Index extra_rows = 0) {
  MatF out(static_cast<Eigen::Index>(sentences.size()) + extra_rows,
           enc.cfg.d_model);
  out.setZero();
  for (std::size_t i = 0; i < sentences.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = encode_sentence(enc, sentences[i]);
  return out;
}

MatF encode_pair(const EncoderModel<float>& enc,
                 const std::array<std::vector<int>, 2>& candidates) {
  MatF out(2, enc.cfg.d_model);
  out.row(0) = encode_sentence(enc, candidates[0]);
  out.row(1) = encode_sentence(enc, candidates[1]);
  return out;
}

}  // namespace

MetricReport run_cloze_eval(ClozeMethod method, const ClozeModels& models,
                            const std::vector<ClozeItem>& items) {
  if (items.empty())
    throw DegenerateInputError("run_cloze_eval: no items");

  std::vector<int> predicted;
  std::vector<int> correct;
  predicted.reserve(items.size());
  correct.reserve(items.size());

  for (const auto& item : items) {
    check_item(item);
    int choice = 0;
    switch (method) {
      case ClozeMethod::kSsrArMatch: {
        if (!models.encoder || !models.ssr)
          throw ContractError("run_cloze_eval: ssr_ar_match needs an encoder "
                              "and an SSR model");
        const MatF z_ctx = encode_rows(*models.encoder, item.context);
        const MatF zhat = predict_next_vector(*models.ssr, z_ctx);
        choice = match_candidates(zhat, encode_pair(*models.encoder,
                                                    item.candidates))
                     .ranking.front();
        break;
      }
      case ClozeMethod::kSsrNonArMatch: {
        if (!models.encoder || !models.ssr)
          throw ContractError("run_cloze_eval: ssr_nonar_match needs an "
                              "encoder and an SSR model");
        if (item.context.size() != 4)
          throw ContractError(
              "run_cloze_eval: ssr_nonar_match masks story slot 5, so the "
              "context must hold exactly 4 sentences, got " +
              std::to_string(item.context.size()));
        // the fifth row is the masked slot; the plan zeroes its content
        const MatF z = encode_rows(*models.encoder, item.context, 1);
        const MatF zhat = predict_masked_vector(*models.ssr, z, 4);
        choice = match_candidates(zhat, encode_pair(*models.encoder,
                                                    item.candidates))
                     .ranking.front();
        break;
      }
      case ClozeMethod::kPplBaseline: {
        if (!models.lm)
          throw ContractError("run_cloze_eval: ppl_baseline needs a token LM");
        std::vector<int> ctx;
        for (const auto& sent : item.context) {
          ctx.insert(ctx.end(), sent.begin(), sent.end());
          ctx.push_back(Tokenizer::eos_id);
        }
        std::vector<std::vector<int>> cands(item.candidates.begin(),
                                            item.candidates.end());
        for (auto& cand : cands) cand.push_back(Tokenizer::eos_id);
        choice = perplexity_select(*models.lm, ctx, cands).chosen;
        break;
      }
    }
    predicted.push_back(choice);
    correct.push_back(item.correct);
  }

  MetricReport report;
  report.values["accuracy"] = selection_accuracy(predicted, correct);
  report.n_items = static_cast<int>(items.size());
  report.method = method_name(method);
  report.validate();
  return report;
}

std::vector<DriftRow> topic_drift_sweep(
    const std::vector<DriftGenerator>& generators,
    const std::vector<std::vector<std::vector<int>>>& contexts,
    const std::vector<int>& k_values,
    const std::vector<std::vector<int>>& references, std::uint64_t seed) {
  if (contexts.size() != references.size())
    throw ContractError("topic_drift_sweep: " +
                        std::to_string(contexts.size()) + " contexts vs " +
                        std::to_string(references.size()) + " references");
  if (generators.empty() || k_values.empty() || contexts.empty())
    throw DegenerateInputError(
        "topic_drift_sweep: generators, k values and contexts must all be "
        "nonempty");

  std::vector<DriftRow> rows;
  rows.reserve(generators.size() * k_values.size());
  for (const auto& gen : generators) {
    for (int k : k_values) {
      std::vector<std::vector<int>> outputs;
      outputs.reserve(contexts.size());
      double bleu1_sum = 0.0;
      double bleu2_sum = 0.0;
      for (std::size_t i = 0; i < contexts.size(); ++i) {
        outputs.push_back(
            gen.generate(contexts[i], k, seed + static_cast<std::uint64_t>(i)));
        bleu1_sum += bleu_n(outputs.back(), references[i], 1);
        bleu2_sum += bleu_n(outputs.back(), references[i], 2);
      }
      DriftRow row;
      row.generator = gen.name;
      row.k = k;
      row.bleu1 = bleu1_sum / static_cast<double>(contexts.size());
      row.bleu2 = bleu2_sum / static_cast<double>(contexts.size());
      row.distinct1 = distinct_n(outputs, 1);
      row.distinct2 = distinct_n(outputs, 2);
      rows.push_back(row);
    }
  }
  return rows;
}

std::string drift_csv(const std::vector<DriftRow>& rows) {
  std::string out = "generator,k,bleu1,bleu2,distinct1,distinct2\n";
  char buf[128];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof(buf), ",%d,%.6f,%.6f,%.6f,%.6f\n", row.k,
                  row.bleu1, row.bleu2, row.distinct1, row.distinct2);
    out += row.generator;
    out += buf;
  }
  return out;
}

DriftGenerator make_baseline_generator(const TokenLm<float>& lm, int max_len) {
  DriftGenerator gen;
  gen.name = "baseline";
  gen.generate = [&lm, max_len](const std::vector<std::vector<int>>& context,
                                int k, std::uint64_t seed) {
    std::vector<int> ctx;
    for (const auto& sent : context) {
      ctx.insert(ctx.end(), sent.begin(), sent.end());
      ctx.push_back(Tokenizer::eos_id);
    }
    GenerationParams params;
    params.k = k;
    params.max_len = max_len;
    params.seed = seed;
    return generate_next_sentence(lm, ctx, params);
  };
  return gen;
}

DriftGenerator make_ssr_mixed_generator(const EncoderModel<float>& encoder,
                                        const SSRModel<float>& ssr,
                                        const DecoderModel<float>& decoder,
                                        int max_len, int context_budget) {
  DriftGenerator gen;
  gen.name = "ssr-mixed";
  gen.generate = [&encoder, &ssr, &decoder, max_len, context_budget](
                     const std::vector<std::vector<int>>& context, int k,
                     std::uint64_t seed) {
    MatF z_ctx(static_cast<Eigen::Index>(context.size()), encoder.cfg.d_model);
    std::vector<int> prev;
    for (std::size_t i = 0; i < context.size(); ++i) {
      z_ctx.row(static_cast<Eigen::Index>(i)) =
          encode_sentence(encoder, context[i]);
      prev.insert(prev.end(), context[i].begin(), context[i].end());
    }
    const MatF zhat = predict_next_vector(ssr, z_ctx);
    GenerationParams params;
    params.k = k;
    params.max_len = max_len;
    params.seed = seed;
    params.context_budget = context_budget;
    return realize(decoder, zhat, prev, params, DecoderVariant::kMixed);
  };
  return gen;
}

}  // namespace ssr
