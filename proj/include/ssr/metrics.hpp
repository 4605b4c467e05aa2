#pragma once
// Automatic evaluation: BLEU-n, Distinct-n, cloze selection accuracy, and the
// topic-drift sweep over top-k values. Metric kernels are pure; the sweep is
// a paired design — every (generator, k) cell sees the same contexts and the
// same per-item seeds, so differences are attributable to the cell alone.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ssr/baseline.hpp"
#include "ssr/corpus.hpp"
#include "ssr/decoder.hpp"
#include "ssr/encoder.hpp"
#include "ssr/ssr_model.hpp"

namespace ssr {

// ---------------------------------------------------------------------------
// Metric kernels

// Geometric mean of clipped modified i-gram precisions for i = 1..n, times
// the brevity penalty min(1, e^{1-|ref|/|cand|}). No smoothing: any order the
// candidate can form that scores zero zeroes the whole product; orders longer
// than the candidate are vacuous and skipped, so bleu_n(x, x, n) == 1 for
// every nonempty x. Empty candidate scores 0.
double bleu_n(const std::vector<int>& candidate,
              const std::vector<int>& reference, int n);

// Unique n-grams pooled across ALL candidates over the pooled total count.
double distinct_n(const std::vector<std::vector<int>>& candidates, int n);

// Fraction of positions where the prediction equals the answer.
double selection_accuracy(const std::vector<int>& predicted,
                          const std::vector<int>& correct);

// ---------------------------------------------------------------------------
// Reports

// All reported values are ratios in [0,1]; the echo fields say what produced
// them.
struct MetricReport {
  std::map<std::string, double> values;
  int n_items = 0;
  std::string method;
  std::string model_id;
  int k = 0;
  std::uint64_t seed = 0;

  void validate() const;  // finite and in [0,1], n_items >= 1
};

// ---------------------------------------------------------------------------
// Cloze evaluation: pick the true ending from two candidate sentences.

enum class ClozeMethod { kSsrArMatch, kSsrNonArMatch, kPplBaseline };

struct ClozeModels {
  const EncoderModel<float>* encoder = nullptr;  // SSR methods
  const SSRModel<float>* ssr = nullptr;          // AR or NonAR per method
  const TokenLm<float>* lm = nullptr;            // perplexity baseline
};

// SSR routes: encode context (+candidates), predict the target vector (AR:
// next; NonAR: masked story slot 5 — the fifth row — so the context must hold
// exactly 4 sentences), choose by cosine matching. The baseline routes to
// perplexity_select over <eos>-terminated streams.
MetricReport run_cloze_eval(ClozeMethod method, const ClozeModels& models,
                            const std::vector<ClozeItem>& items);

// ---------------------------------------------------------------------------
// Topic-drift sweep

// A generator maps (context sentences, k, seed) to one generated ending.
struct DriftGenerator {
  std::string name;
  std::function<std::vector<int>(const std::vector<std::vector<int>>&, int,
                                 std::uint64_t)>
      generate;
};

struct DriftRow {
  std::string generator;
  int k = 0;
  double bleu1 = 0.0;
  double bleu2 = 0.0;
  double distinct1 = 0.0;
  double distinct2 = 0.0;
};

// One ending per context per (generator, k) cell; per-item seed is
// seed + item index, identical across cells. Rows are generator-major in
// input order.
std::vector<DriftRow> topic_drift_sweep(
    const std::vector<DriftGenerator>& generators,
    const std::vector<std::vector<std::vector<int>>>& contexts,
    const std::vector<int>& k_values,
    const std::vector<std::vector<int>>& references, std::uint64_t seed);

// "generator,k,bleu1,bleu2,distinct1,distinct2" + one 6-decimal row per cell.
std::string drift_csv(const std::vector<DriftRow>& rows);

// Canonical sweep generators. The baseline continues the flattened context;
// the SSR route predicts the next sentence vector and realizes it with the
// mixed decoder over the plain-concatenated context tokens.
DriftGenerator make_baseline_generator(const TokenLm<float>& lm, int max_len);
DriftGenerator make_ssr_mixed_generator(const EncoderModel<float>& encoder,
                                        const SSRModel<float>& ssr,
                                        const DecoderModel<float>& decoder,
                                        int max_len, int context_budget);

}  // namespace ssr
