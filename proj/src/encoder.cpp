#include "ssr/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>
#include <utility>

namespace ssr {

namespace {

constexpr char kCacheMagic[] = "SSRVEC01";
constexpr std::size_t kCacheMagicLen = 8;

std::vector<std::pair<int, int>> sentence_index(const std::vector<Paragraph>& corpus) {
  std::vector<std::pair<int, int>> out;
  for (std::size_t p = 0; p < corpus.size(); ++p)
    for (std::size_t s = 0; s < corpus[p].sentences.size(); ++s)
      out.emplace_back(static_cast<int>(p), static_cast<int>(s));
  return out;
}

}  // namespace

VectorCache encode_corpus(const EncoderModel<float>& model,
                          const std::vector<Paragraph>& corpus, int n_threads) {
  if (!model.frozen)
    throw ContractError("encode_corpus: encoder must be frozen first");
  if (n_threads < 1)
    throw ContractError("encode_corpus: n_threads must be >= 1");

  VectorCache cache;
  cache.dim = model.cfg.d_model;

  std::size_t total = 0;
  std::vector<std::size_t> offsets(corpus.size());  // first row of paragraph p
  for (std::size_t p = 0; p < corpus.size(); ++p) {
    if (corpus[p].id < 0)
      throw ContractError("encode_corpus: negative paragraph id " +
                          std::to_string(corpus[p].id));
    offsets[p] = total;
    total += corpus[p].sentences.size();
  }

  cache.vectors.resize(static_cast<Eigen::Index>(total), cache.dim);
  cache.paragraph_ids.resize(total);
  cache.sentence_indices.resize(total);

  const auto encode_range = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t p = begin; p < corpus.size(); p += stride) {
      std::size_t row = offsets[p];
      for (std::size_t s = 0; s < corpus[p].sentences.size(); ++s, ++row) {
        cache.vectors.row(static_cast<Eigen::Index>(row)) =
            encode_sentence(model, corpus[p].sentences[s]);
        cache.paragraph_ids[row] = static_cast<std::uint32_t>(corpus[p].id);
        cache.sentence_indices[row] = static_cast<std::uint32_t>(s);
      }
    }
  };

  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(n_threads), std::max<std::size_t>(corpus.size(), 1));
  if (workers <= 1) {
    encode_range(0, 1);
    return cache;
  }

  std::vector<std::thread> pool;
  std::exception_ptr first_error;
  std::mutex error_mu;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      try {
        encode_range(w, workers);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (std::thread& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
  return cache;
}

void save_cache(const VectorCache& cache, const std::string& path) {
  if (cache.dim < 1)
    throw ContractError("save_cache: cache dimension must be >= 1");
  const std::size_t n = static_cast<std::size_t>(cache.count());
  if (cache.paragraph_ids.size() != n || cache.sentence_indices.size() != n)
    throw ContractError("save_cache: row index tables are misaligned");

  std::string out;
  out.append(kCacheMagic, kCacheMagicLen);
  detail::put_u32(out, static_cast<std::uint32_t>(cache.dim));
  detail::put_u32(out, static_cast<std::uint32_t>(n));
  for (std::size_t r = 0; r < n; ++r) {
    detail::put_u32(out, cache.paragraph_ids[r]);
    detail::put_u32(out, cache.sentence_indices[r]);
    for (int c = 0; c < cache.dim; ++c)
      detail::put_f32(out, cache.vectors(static_cast<Eigen::Index>(r), c));
  }
  detail::write_file_bytes(path, out);
}

VectorCache load_cache(const std::string& path) {
  detail::ByteReader in(detail::read_file_bytes(path, "vector cache"), path);
  in.expect_magic(kCacheMagic, kCacheMagicLen);
  const std::uint32_t dim = in.u32("dimension");
  if (dim == 0) in.fail("cache dimension is 0");
  const std::uint32_t count = in.u32("row count");

  VectorCache cache;
  cache.dim = static_cast<int>(dim);
  cache.vectors.resize(static_cast<Eigen::Index>(count), cache.dim);
  cache.paragraph_ids.resize(count);
  cache.sentence_indices.resize(count);
  for (std::uint32_t r = 0; r < count; ++r) {
    cache.paragraph_ids[r] = in.u32("paragraph id");
    cache.sentence_indices[r] = in.u32("sentence index");
    for (int c = 0; c < cache.dim; ++c)
      cache.vectors(static_cast<Eigen::Index>(r), c) = in.f32("vector row");
  }
  if (!in.exhausted()) in.fail("trailing bytes after cache rows");
  return cache;
}

EncoderTrainResult train_encoder_mlm(const std::vector<Paragraph>& corpus,
                                     int vocab_size, const TransformerConfig& cfg,
                                     double mlm_mask_rate, int steps,
                                     std::uint64_t seed, const AdamConfig& adam) {
  if (vocab_size < Tokenizer::n_specials)
    throw CorpusError("train_encoder_mlm: vocabulary of " +
                      std::to_string(vocab_size) +
                      " is smaller than the special-token set");
  if (!(mlm_mask_rate > 0.0 && mlm_mask_rate < 1.0))
    throw ContractError("train_encoder_mlm: mlm_mask_rate must lie in (0, 1)");
  if (steps < 0) throw ContractError("train_encoder_mlm: negative step count");

  Rng rng(seed);
  EncoderTrainResult result{EncoderModel<float>::make(vocab_size, cfg, rng), {}};
  EncoderModel<float>& model = result.model;

  if (steps > 0) {
    std::vector<std::pair<int, int>> sentences = sentence_index(corpus);
    if (sentences.empty())
      throw CorpusError("train_encoder_mlm: corpus has no sentences");

    ParamSet<float> ps = model.params();
    std::vector<Var<float>> values = param_values(ps);
    AdamState<float> opt(values, adam);

    const int epoch_len = static_cast<int>(sentences.size());
    std::vector<std::pair<int, int>> order = sentences;
    double epoch_sum = 0.0;
    int epoch_steps = 0;
    for (int step = 0; step < steps; ++step) {
      const int in_epoch = step % epoch_len;
      if (in_epoch == 0) rng.shuffle(order);
      const auto [p, s] = order[static_cast<std::size_t>(in_epoch)];
      const std::vector<int>& ids =
          corpus[static_cast<std::size_t>(p)].sentences[static_cast<std::size_t>(s)];

      const std::size_t T = ids.size();
      const std::size_t n_mask = std::max<std::size_t>(
          1, static_cast<std::size_t>(
                 std::lround(mlm_mask_rate * static_cast<double>(T))));
      std::vector<int> masked;
      for (std::size_t i : rng.sample_distinct(T, std::min(n_mask, T)))
        masked.push_back(static_cast<int>(i));
      std::sort(masked.begin(), masked.end());
      std::vector<std::uint8_t> loss_mask(T, 0);
      for (int i : masked) loss_mask[static_cast<std::size_t>(i)] = 1;

      Tape<float> t;
      auto logits = mlm_logits(t, model, ids, masked, rng, true);
      auto loss = nll_loss(t, log_softmax(t, logits, 1), ids, loss_mask);
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

  model.frozen = true;
  return result;
}

EncoderModel<float> load_encoder(const std::string& path, int vocab_size,
                                 const TransformerConfig& cfg) {
  Rng rng(0);
  EncoderModel<float> model = EncoderModel<float>::make(vocab_size, cfg, rng);
  ParamSet<float> ps = model.params();
  load_checkpoint(path, ps);
  model.frozen = true;
  return model;
}

}  // namespace ssr
