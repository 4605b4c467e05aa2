// Pipeline front door. Each subcommand is a pure function of (config, input
// files, seed): it refuses to overwrite existing outputs without --force,
// echoes the fully resolved configuration into the run directory before any
// work starts, and re-runs reproduce identical output bytes.
//
// Exit codes: 0 success, 2 config error, 3 missing upstream artifact,
// 4 malformed argument, 1 any other failure.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ssr/baseline.hpp"
#include "ssr/checkpoint.hpp"
#include "ssr/common.hpp"
#include "ssr/corpus.hpp"
#include "ssr/decoder.hpp"
#include "ssr/encoder.hpp"
#include "ssr/metrics.hpp"
#include "ssr/run_config.hpp"
#include "ssr/ssr_model.hpp"

namespace fs = std::filesystem;
using namespace ssr;

namespace {

// SSR_THREADS caps internal fan-out; unset or empty means single-threaded.
int threads_from_env() {
  const char* s = std::getenv("SSR_THREADS");
  if (s == nullptr || *s == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(s, &end, 10);
  if (end == s || *end != '\0' || n < 1)
    throw ConfigError("SSR_THREADS must be a positive integer, got '" +
                      std::string(s) + "'");
  return static_cast<int>(n);
}

struct RunPaths {
  fs::path root;
  fs::path config() const { return root / "config.txt"; }
  fs::path corpus() const { return root / "corpus.txt"; }
  fs::path meta() const { return root / "meta.csv"; }
  fs::path vocab() const { return root / "vocab.txt"; }
  fs::path split(const std::string& name) const {
    return root / (name + ".txt");
  }
  fs::path splits_manifest() const { return root / "splits.csv"; }
  fs::path encoder() const { return root / "encoder.ckpt"; }
  fs::path encoder_loss() const { return root / "encoder_loss.csv"; }
  fs::path cache() const { return root / "vectors.cache"; }
  fs::path ssr_ckpt() const { return root / "ssr.ckpt"; }
  fs::path ssr_loss() const { return root / "ssr_loss.csv"; }
  fs::path decoder(const std::string& variant) const {
    return root / ("decoder_" + variant + ".ckpt");
  }
  fs::path decoder_loss(const std::string& variant) const {
    return root / ("decoder_" + variant + "_loss.csv");
  }
  fs::path baseline() const { return root / "baseline.ckpt"; }
  fs::path baseline_loss() const { return root / "baseline_loss.csv"; }
  fs::path generation(const std::string& mode, int k, std::uint64_t seed) const {
    return root / ("gen-" + mode + "-k" + std::to_string(k) + "-seed" +
                   std::to_string(seed) + ".txt");
  }
  fs::path echo(const std::string& stem) const {
    return root / (stem + ".config.txt");
  }
};

struct StageArgs {
  std::string run;
  std::string config;              // empty -> <run>/config.txt
  std::vector<std::string> sets;   // KEY=VALUE overrides, applied in order
  bool force = false;
};

// Optional numeric flag: applied over the config only when given.
template <class T>
struct Override {
  T value{};
  CLI::Option* opt = nullptr;
  bool set() const { return opt != nullptr && opt->count() > 0; }
};

void add_stage_options(CLI::App* cmd, StageArgs& a) {
  cmd->add_option("--run", a.run, "run directory")->required();
  cmd->add_option("--config", a.config,
                  "config file (default <run>/config.txt)");
  cmd->add_option("--set", a.sets, "config override KEY=VALUE (repeatable)");
  cmd->add_flag("--force", a.force, "overwrite existing outputs");
}

void apply_sets(RunConfig& cfg, const std::vector<std::string>& sets) {
  for (const std::string& kv : sets) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw ArgumentError("--set expects KEY=VALUE, got '" + kv + "'");
    apply_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
}

RunConfig resolve_config(const StageArgs& a) {
  const fs::path path =
      a.config.empty() ? RunPaths{a.run}.config() : fs::path(a.config);
  if (!fs::exists(path))
    throw ConfigError("config file not found: " + path.string());
  RunConfig cfg = load_run_config(path.string());
  apply_sets(cfg, a.sets);
  return cfg;
}

void guard_outputs(const std::vector<fs::path>& outputs, bool force) {
  if (force) return;
  for (const fs::path& p : outputs)
    if (fs::exists(p))
      throw ConfigError("output " + p.string() +
                        " already exists; pass --force to overwrite");
}

void echo_config(const RunConfig& cfg, const RunPaths& rp,
                 const std::string& stem) {
  write_text_file(rp.echo(stem).string(), serialize_run_config(cfg));
}

fs::path require_artifact(const fs::path& p, const std::string& producer) {
  if (!fs::exists(p))
    throw MissingArtifactError("missing artifact " + p.string() + "; run `" +
                               producer + "` first");
  return p;
}

std::string csv_number(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", x);
  return buf;
}

void write_loss_csv(const fs::path& path, const std::vector<double>& losses) {
  std::string out = "epoch,mean_loss\n";
  for (std::size_t e = 0; e < losses.size(); ++e)
    out += std::to_string(e) + "," + csv_number(losses[e]) + "\n";
  write_text_file(path.string(), out);
}

Tokenizer load_tokenizer(const RunPaths& rp) {
  return load_vocab(require_artifact(rp.vocab(), "ssr synth").string());
}

std::vector<Paragraph> load_split(const RunPaths& rp, const Tokenizer& tok,
                                  const std::string& name) {
  return load_corpus(require_artifact(rp.split(name), "ssr synth").string(),
                     tok);
}

// A test context is every sentence of the paragraph except the last; the
// held-out last sentence is the generation / evaluation reference.
std::vector<std::vector<std::vector<int>>> test_contexts(
    const std::vector<Paragraph>& test) {
  std::vector<std::vector<std::vector<int>>> out;
  out.reserve(test.size());
  for (const Paragraph& p : test) {
    if (p.sentences.size() < 2)
      throw CorpusError("test paragraph " + std::to_string(p.id) +
                        " needs at least 2 sentences to form a context");
    out.emplace_back(p.sentences.begin(), p.sentences.end() - 1);
  }
  return out;
}

std::vector<std::vector<int>> test_references(
    const std::vector<Paragraph>& test) {
  std::vector<std::vector<int>> out;
  out.reserve(test.size());
  for (const Paragraph& p : test) {
    if (p.sentences.empty())
      throw CorpusError("test paragraph " + std::to_string(p.id) +
                        " is empty");
    out.push_back(p.sentences.back());
  }
  return out;
}

MatF encode_context(const EncoderModel<float>& enc,
                    const std::vector<std::vector<int>>& sentences) {
  MatF z;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const MatF row = encode_sentence(enc, sentences[i]);
    if (i == 0) z = MatF::Zero(sentences.size(), row.cols());
    z.row(static_cast<Eigen::Index>(i)) = row;
  }
  return z;
}

// Routes on the configured sentence-LM mode: AR regresses the next row,
// NonAR fills an appended zeroed slot.
MatF predict_vector(const RunConfig& cfg, const SSRModel<float>& m,
                    const MatF& z_context) {
  if (cfg.ssr_mode == "ar") return predict_next_vector(m, z_context);
  MatF z = MatF::Zero(z_context.rows() + 1, z_context.cols());
  z.topRows(z_context.rows()) = z_context;
  return predict_masked_vector(m, z, static_cast<int>(z_context.rows()));
}

std::vector<int> flatten_with_eos(
    const std::vector<std::vector<int>>& sentences) {
  std::vector<int> flat;
  for (const std::vector<int>& s : sentences) {
    flat.insert(flat.end(), s.begin(), s.end());
    flat.push_back(Tokenizer::eos_id);
  }
  return flat;
}

std::vector<int> flatten_plain(const std::vector<std::vector<int>>& sentences) {
  std::vector<int> flat;
  for (const std::vector<int>& s : sentences)
    flat.insert(flat.end(), s.begin(), s.end());
  return flat;
}

// ---------------------------------------------------------------------------
// Commands

void run_synth(const std::string& out, const std::string& spec,
               const std::vector<std::string>& sets,
               const Override<std::uint64_t>& seed, bool force) {
  RunConfig cfg;
  if (!spec.empty()) {
    if (!fs::exists(spec))
      throw ConfigError("spec file not found: " + spec);
    cfg = load_run_config(spec);
  }
  apply_sets(cfg, sets);
  if (seed.set()) cfg.corpus_seed = seed.value;
  cfg.validate();

  const RunPaths rp{out};
  if (fs::exists(rp.root) && !force)
    throw ConfigError("run directory " + rp.root.string() +
                      " already exists; pass --force to overwrite");
  fs::create_directories(rp.root);
  write_text_file(rp.config().string(), serialize_run_config(cfg));

  SyntheticSpec sp = default_synthetic_spec();
  sp.n_clusters = cfg.corpus_clusters;
  sp.story_count = cfg.corpus_stories;
  sp.seed = cfg.corpus_seed;
  const SyntheticCorpus sc = generate_synthetic_corpus(sp);
  write_text_file(rp.corpus().string(), sc.text);
  save_story_meta(sc.meta, rp.meta().string());

  const Tokenizer tok = build_vocab(sc.text, cfg.vocab_min_count);
  save_vocab(tok, rp.vocab().string());

  const std::vector<Paragraph> stories =
      parse_corpus(sc.text, tok, rp.corpus().string());
  const SplitIndices si = split_dataset(
      static_cast<int>(stories.size()), cfg.split_fractions, cfg.split_seed);

  std::string manifest = "split,story_id\n";
  const std::pair<const char*, const std::vector<int>*> parts[] = {
      {"train", &si.train}, {"val", &si.val}, {"test", &si.test}};
  for (const auto& [name, idx] : parts) {
    std::string text;
    for (int i : *idx) {
      const Paragraph& p = stories.at(static_cast<std::size_t>(i));
      for (std::size_t s = 0; s < p.raw.size(); ++s) {
        if (s > 0) text += '\t';
        text += p.raw[s];
      }
      text += '\n';
      manifest += std::string(name) + "," + std::to_string(p.id) + "\n";
    }
    write_text_file(rp.split(name).string(), text);
  }
  write_text_file(rp.splits_manifest().string(), manifest);

  std::printf("wrote %zu stories (%zu train / %zu val / %zu test) to %s\n",
              stories.size(), si.train.size(), si.val.size(), si.test.size(),
              rp.root.string().c_str());
}

void run_train_encoder(const StageArgs& a, const Override<int>& steps,
                       const Override<std::uint64_t>& seed) {
  RunConfig cfg = resolve_config(a);
  if (steps.set()) cfg.encoder_steps = steps.value;
  if (seed.set()) cfg.encoder_seed = seed.value;
  cfg.validate();

  const RunPaths rp{a.run};
  guard_outputs({rp.encoder(), rp.encoder_loss()}, a.force);
  const Tokenizer tok = load_tokenizer(rp);
  const std::vector<Paragraph> train = load_split(rp, tok, "train");
  echo_config(cfg, rp, "train-encoder");

  const EncoderTrainResult res = train_encoder_mlm(
      train, tok.vocab_size(), cfg.transformer(), cfg.encoder_mask_rate,
      cfg.encoder_steps, cfg.encoder_seed, cfg.adam());
  save_checkpoint(rp.encoder().string(), res.model.params());
  write_loss_csv(rp.encoder_loss(), res.epoch_mean_loss);
  std::printf("trained encoder for %d steps (%zu epochs), last mean loss %.6f\n",
              cfg.encoder_steps, res.epoch_mean_loss.size(),
              res.epoch_mean_loss.back());
}

void run_encode_corpus(const StageArgs& a) {
  RunConfig cfg = resolve_config(a);
  cfg.validate();

  const RunPaths rp{a.run};
  guard_outputs({rp.cache()}, a.force);
  const Tokenizer tok = load_tokenizer(rp);
  const std::vector<Paragraph> train = load_split(rp, tok, "train");
  const EncoderModel<float> enc =
      load_encoder(require_artifact(rp.encoder(), "ssr train-encoder").string(),
                   tok.vocab_size(), cfg.transformer());
  echo_config(cfg, rp, "encode-corpus");

  const VectorCache cache = encode_corpus(enc, train, threads_from_env());
  save_cache(cache, rp.cache().string());
  std::printf("encoded %lld sentence vectors (dim %d)\n",
              static_cast<long long>(cache.count()), cache.dim);
}

void run_train_ssr(const StageArgs& a, const Override<int>& steps,
                   const Override<std::uint64_t>& seed,
                   const std::string& mode, const std::string& loss) {
  RunConfig cfg = resolve_config(a);
  if (steps.set()) cfg.ssr_steps = steps.value;
  if (seed.set()) cfg.ssr_seed = seed.value;
  if (!mode.empty()) cfg.ssr_mode = mode;
  if (!loss.empty()) cfg.ssr_loss = loss;
  cfg.validate();

  const RunPaths rp{a.run};
  guard_outputs({rp.ssr_ckpt(), rp.ssr_loss()}, a.force);
  const VectorCache cache =
      load_cache(require_artifact(rp.cache(), "ssr encode-corpus").string());
  if (cache.dim != cfg.d_model)
    throw ConfigError("vector cache dim " + std::to_string(cache.dim) +
                      " does not match model.d_model " +
                      std::to_string(cfg.d_model));
  echo_config(cfg, rp, "train-ssr");

  const SSRLoss loss_kind =
      cfg.ssr_loss == "cosine" ? SSRLoss::kCosine : SSRLoss::kContrastive;
  const SSRTrainResult res = train_ssr(cache, cfg.ssr_config(), loss_kind,
                                       cfg.ssr_steps, cfg.ssr_seed, cfg.adam());
  save_checkpoint(rp.ssr_ckpt().string(), res.model.params());
  write_loss_csv(rp.ssr_loss(), res.epoch_mean_loss);
  std::printf("trained ssr-%s (%s) for %d steps (%zu epochs), last mean loss %.6f\n",
              cfg.ssr_mode.c_str(), cfg.ssr_loss.c_str(), cfg.ssr_steps,
              res.epoch_mean_loss.size(), res.epoch_mean_loss.back());
}

void run_train_decoder(const StageArgs& a, const Override<int>& steps,
                       const Override<std::uint64_t>& seed,
                       const std::string& variant) {
  RunConfig cfg = resolve_config(a);
  if (steps.set()) cfg.decoder_steps = steps.value;
  if (seed.set()) cfg.decoder_seed = seed.value;
  if (!variant.empty()) cfg.decoder_variant = variant;
  cfg.validate();

  const RunPaths rp{a.run};
  guard_outputs({rp.decoder(cfg.decoder_variant),
                 rp.decoder_loss(cfg.decoder_variant)},
                a.force);
  const Tokenizer tok = load_tokenizer(rp);
  const std::vector<Paragraph> train = load_split(rp, tok, "train");
  const VectorCache cache =
      load_cache(require_artifact(rp.cache(), "ssr encode-corpus").string());
  echo_config(cfg, rp, "train-decoder-" + cfg.decoder_variant);

  const std::vector<TrainingTriple> triples =
      make_training_triples(train, cache);
  Rng init_rng(cfg.decoder_seed);
  DecoderModel<float> model = DecoderModel<float>::make(
      tok.vocab_size(), cache.dim, cfg.transformer(), init_rng);
  const DecoderVariant kind = cfg.decoder_variant == "vanilla"
                                  ? DecoderVariant::kVanilla
                                  : DecoderVariant::kMixed;
  const DecoderTrainResult res =
      train_decoder(std::move(model), triples, kind, cfg.decoder_steps,
                    cfg.decoder_seed, cfg.decoder_budget, cfg.adam());
  save_checkpoint(rp.decoder(cfg.decoder_variant).string(),
                  res.model.params());
  write_loss_csv(rp.decoder_loss(cfg.decoder_variant), res.epoch_mean_loss);
  std::printf("trained %s decoder for %d steps (%zu epochs), last mean loss %.6f\n",
              cfg.decoder_variant.c_str(), cfg.decoder_steps,
              res.epoch_mean_loss.size(), res.epoch_mean_loss.back());
}

void run_train_baseline(const StageArgs& a, const Override<int>& steps,
                        const Override<std::uint64_t>& seed) {
  RunConfig cfg = resolve_config(a);
  if (steps.set()) cfg.baseline_steps = steps.value;
  if (seed.set()) cfg.baseline_seed = seed.value;
  cfg.validate();

  const RunPaths rp{a.run};
  guard_outputs({rp.baseline(), rp.baseline_loss()}, a.force);
  const Tokenizer tok = load_tokenizer(rp);
  const std::vector<Paragraph> train = load_split(rp, tok, "train");
  echo_config(cfg, rp, "train-baseline");

  const TokenLmTrainResult res =
      train_token_lm(train, tok.vocab_size(), cfg.transformer(),
                     cfg.baseline_steps, cfg.baseline_seed, cfg.adam());
  save_checkpoint(rp.baseline().string(), res.model.params());
  write_loss_csv(rp.baseline_loss(), res.epoch_mean_loss);
  std::printf("trained token-lm baseline for %d steps (%zu epochs), last mean loss %.6f\n",
              cfg.baseline_steps, res.epoch_mean_loss.size(),
              res.epoch_mean_loss.back());
}

void run_generate(const StageArgs& a, const std::string& mode,
                  const Override<int>& k, const Override<int>& max_len,
                  const Override<std::uint64_t>& seed) {
  RunConfig cfg = resolve_config(a);
  if (k.set()) cfg.gen_k = k.value;
  if (max_len.set()) cfg.gen_max_len = max_len.value;
  if (seed.set()) cfg.gen_seed = seed.value;
  cfg.validate();

  const RunPaths rp{a.run};
  const fs::path out = rp.generation(mode, cfg.gen_k, cfg.gen_seed);
  guard_outputs({out}, a.force);
  const Tokenizer tok = load_tokenizer(rp);
  const std::vector<Paragraph> test = load_split(rp, tok, "test");
  const std::vector<std::vector<std::vector<int>>> contexts =
      test_contexts(test);

  GenerationParams params;
  params.k = cfg.gen_k;
  params.max_len = cfg.gen_max_len;
  params.context_budget = cfg.decoder_budget;

  std::string text;
  if (mode == "baseline") {
    const TokenLm<float> lm = load_token_lm(
        require_artifact(rp.baseline(), "ssr train-baseline").string(),
        tok.vocab_size(), cfg.transformer());
    echo_config(cfg, rp, out.stem().string());
    for (std::size_t i = 0; i < contexts.size(); ++i) {
      params.seed = cfg.gen_seed + i;
      const std::vector<int> ids =
          generate_next_sentence(lm, flatten_with_eos(contexts[i]), params);
      text += tok.detokenize(ids);
      text += '\n';
    }
  } else {
    const std::string variant_name =
        mode == "ssr-vanilla" ? "vanilla" : "mixed";
    const EncoderModel<float> enc = load_encoder(
        require_artifact(rp.encoder(), "ssr train-encoder").string(),
        tok.vocab_size(), cfg.transformer());
    const SSRModel<float> sm =
        load_ssr(require_artifact(rp.ssr_ckpt(), "ssr train-ssr").string(),
                 cfg.ssr_config());
    const DecoderModel<float> dec = load_decoder(
        require_artifact(rp.decoder(variant_name),
                         "ssr train-decoder --variant " + variant_name)
            .string(),
        tok.vocab_size(), cfg.d_model, cfg.transformer());
    echo_config(cfg, rp, out.stem().string());
    const DecoderVariant kind = mode == "ssr-vanilla" ? DecoderVariant::kVanilla
                                                      : DecoderVariant::kMixed;
    for (std::size_t i = 0; i < contexts.size(); ++i) {
      const MatF zhat = predict_vector(cfg, sm, encode_context(enc, contexts[i]));
      const std::vector<int> prev = kind == DecoderVariant::kMixed
                                        ? flatten_plain(contexts[i])
                                        : std::vector<int>{};
      params.seed = cfg.gen_seed + i;
      const std::vector<int> ids = realize(dec, zhat, prev, params, kind);
      text += tok.detokenize(ids);
      text += '\n';
    }
  }
  write_text_file(out.string(), text);
  std::printf("wrote %zu endings to %s\n", contexts.size(),
              out.string().c_str());
}

// Test-split cloze items, aligned with the split manifest so metadata rows
// match story rows positionally.
std::vector<ClozeItem> cloze_items_for_run(const RunPaths& rp,
                                           const Tokenizer& tok,
                                           std::uint64_t seed) {
  const std::vector<Paragraph> test = load_split(rp, tok, "test");
  const std::vector<StoryMeta> all_meta =
      load_story_meta(require_artifact(rp.meta(), "ssr synth").string());

  const std::string manifest =
      read_text_file(require_artifact(rp.splits_manifest(), "ssr synth").string());
  std::vector<StoryMeta> test_meta;
  std::size_t start = manifest.find('\n');  // skip the header line
  if (start == std::string::npos)
    throw FormatError(rp.splits_manifest().string() + ": missing header");
  ++start;
  while (start < manifest.size()) {
    std::size_t nl = manifest.find('\n', start);
    if (nl == std::string::npos) nl = manifest.size();
    const std::string line = manifest.substr(start, nl - start);
    start = nl + 1;
    if (line.empty()) continue;
    const std::size_t comma = line.find(',');
    if (comma == std::string::npos)
      throw FormatError(rp.splits_manifest().string() +
                        ": expected split,story_id, got '" + line + "'");
    if (line.substr(0, comma) != "test") continue;
    const int sid = std::stoi(line.substr(comma + 1));
    const auto it =
        std::find_if(all_meta.begin(), all_meta.end(),
                     [&](const StoryMeta& m) { return m.story_id == sid; });
    if (it == all_meta.end())
      throw FormatError("story " + std::to_string(sid) +
                        " from the split manifest is missing from " +
                        rp.meta().string());
    test_meta.push_back(*it);
  }
  if (test_meta.size() != test.size())
    throw CorpusError("split manifest lists " +
                      std::to_string(test_meta.size()) +
                      " test stories but test.txt has " +
                      std::to_string(test.size()));

  Rng rng(seed);
  return make_cloze_items(test, test_meta, rng);
}

void run_select_ending(const StageArgs& a, const std::string& method,
                       const Override<std::uint64_t>& seed) {
  RunConfig cfg = resolve_config(a);
  if (seed.set()) cfg.eval_seed = seed.value;
  cfg.validate();

  const RunPaths rp{a.run};
  const fs::path out =
      rp.root / ("select-" + method + "-seed" +
                 std::to_string(cfg.eval_seed) + ".csv");
  guard_outputs({out}, a.force);
  const Tokenizer tok = load_tokenizer(rp);

  ClozeMethod kind;
  ClozeModels models;
  EncoderModel<float> enc;
  SSRModel<float> sm;
  TokenLm<float> lm;
  if (method == "ppl") {
    kind = ClozeMethod::kPplBaseline;
    lm = load_token_lm(
        require_artifact(rp.baseline(), "ssr train-baseline").string(),
        tok.vocab_size(), cfg.transformer());
    models.lm = &lm;
  } else {
    kind = method == "ssr-ar" ? ClozeMethod::kSsrArMatch
                              : ClozeMethod::kSsrNonArMatch;
    // The method picks the inference route; the checkpoint must have been
    // trained in the matching mode (the config echo records which).
    cfg.ssr_mode = method == "ssr-ar" ? "ar" : "nonar";
    enc = load_encoder(
        require_artifact(rp.encoder(), "ssr train-encoder").string(),
        tok.vocab_size(), cfg.transformer());
    sm = load_ssr(require_artifact(rp.ssr_ckpt(), "ssr train-ssr").string(),
                  cfg.ssr_config());
    models.encoder = &enc;
    models.ssr = &sm;
  }
  echo_config(cfg, rp, out.stem().string());

  const std::vector<ClozeItem> items =
      cloze_items_for_run(rp, tok, cfg.eval_seed);
  const MetricReport report = run_cloze_eval(kind, models, items);
  const double acc = report.values.at("accuracy");
  write_text_file(out.string(), "method,n_items,accuracy\n" + report.method +
                                    "," + std::to_string(report.n_items) +
                                    "," + csv_number(acc) + "\n");
  std::printf("%s accuracy %.6f over %d items\n", report.method.c_str(), acc,
              report.n_items);
}

void run_evaluate(const StageArgs& a, const std::string& mode,
                  const Override<int>& k, const Override<std::uint64_t>& seed) {
  RunConfig cfg = resolve_config(a);
  if (k.set()) cfg.gen_k = k.value;
  if (seed.set()) cfg.gen_seed = seed.value;
  cfg.validate();

  const RunPaths rp{a.run};
  const fs::path out =
      rp.root / ("eval-" + mode + "-k" + std::to_string(cfg.gen_k) + "-seed" +
                 std::to_string(cfg.gen_seed) + ".csv");
  guard_outputs({out}, a.force);
  const Tokenizer tok = load_tokenizer(rp);
  const std::vector<Paragraph> test = load_split(rp, tok, "test");
  const fs::path gen_path = require_artifact(
      rp.generation(mode, cfg.gen_k, cfg.gen_seed), "ssr generate");
  echo_config(cfg, rp, out.stem().string());

  std::vector<std::vector<int>> candidates;
  const std::string gen_text = read_text_file(gen_path.string());
  std::size_t start = 0;
  while (start < gen_text.size()) {
    std::size_t nl = gen_text.find('\n', start);
    if (nl == std::string::npos) nl = gen_text.size();
    candidates.push_back(tok.tokenize(gen_text.substr(start, nl - start)));
    start = nl + 1;
  }
  const std::vector<std::vector<int>> references = test_references(test);
  if (candidates.size() != references.size())
    throw CorpusError(gen_path.string() + " has " +
                      std::to_string(candidates.size()) +
                      " endings but the test split has " +
                      std::to_string(references.size()));

  std::string csv = "metric,value\n";
  for (int n = 1; n <= 4; ++n) {
    double mean = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i)
      mean += bleu_n(candidates[i], references[i], n);
    mean /= static_cast<double>(candidates.size());
    std::printf("B-%d %.6f\n", n, mean);
    csv += "B-" + std::to_string(n) + "," + csv_number(mean) + "\n";
  }
  for (int n = 1; n <= 4; ++n) {
    const double d = distinct_n(candidates, n);
    std::printf("D-%d %.6f\n", n, d);
    csv += "D-" + std::to_string(n) + "," + csv_number(d) + "\n";
  }
  write_text_file(out.string(), csv);
}

void run_sweep_k(const StageArgs& a, const std::string& grid,
                 const Override<std::uint64_t>& seed) {
  RunConfig cfg = resolve_config(a);
  if (!grid.empty()) cfg.sweep_grid = grid;
  if (seed.set()) cfg.eval_seed = seed.value;
  const std::vector<int> ks = parse_k_grid(cfg.sweep_grid);
  cfg.validate();
  if (cfg.ssr_mode != "ar")
    throw ConfigError("sweep-k drives the next-sentence route; set ssr.mode=ar");

  const RunPaths rp{a.run};
  const fs::path out =
      rp.root / ("sweep-seed" + std::to_string(cfg.eval_seed) + ".csv");
  guard_outputs({out}, a.force);
  const Tokenizer tok = load_tokenizer(rp);
  const std::vector<Paragraph> test = load_split(rp, tok, "test");
  const EncoderModel<float> enc = load_encoder(
      require_artifact(rp.encoder(), "ssr train-encoder").string(),
      tok.vocab_size(), cfg.transformer());
  const SSRModel<float> sm =
      load_ssr(require_artifact(rp.ssr_ckpt(), "ssr train-ssr").string(),
               cfg.ssr_config());
  const DecoderModel<float> dec = load_decoder(
      require_artifact(rp.decoder("mixed"), "ssr train-decoder --variant mixed")
          .string(),
      tok.vocab_size(), cfg.d_model, cfg.transformer());
  const TokenLm<float> lm = load_token_lm(
      require_artifact(rp.baseline(), "ssr train-baseline").string(),
      tok.vocab_size(), cfg.transformer());
  echo_config(cfg, rp, out.stem().string());

  const std::vector<DriftGenerator> generators = {
      make_ssr_mixed_generator(enc, sm, dec, cfg.gen_max_len,
                               cfg.decoder_budget),
      make_baseline_generator(lm, cfg.gen_max_len)};
  const std::vector<DriftRow> rows =
      topic_drift_sweep(generators, test_contexts(test), ks,
                        test_references(test), cfg.eval_seed);
  const std::string csv = drift_csv(rows);
  write_text_file(out.string(), csv);
  std::fputs(csv.c_str(), stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sentence semantic regression pipeline"};
  app.require_subcommand(1);

  // synth
  std::string sy_out, sy_spec;
  std::vector<std::string> sy_sets;
  bool sy_force = false;
  Override<std::uint64_t> sy_seed;
  auto* synth = app.add_subcommand(
      "synth", "generate a synthetic story corpus, vocab, and splits");
  synth->add_option("--out", sy_out, "run directory to create")->required();
  synth->add_option("--spec", sy_spec, "config file (defaults are built in)");
  sy_seed.opt = synth->add_option("--seed", sy_seed.value, "corpus seed");
  synth->add_option("--set", sy_sets, "config override KEY=VALUE (repeatable)");
  synth->add_flag("--force", sy_force, "overwrite an existing run directory");
  synth->callback(
      [&] { run_synth(sy_out, sy_spec, sy_sets, sy_seed, sy_force); });

  // train-encoder
  StageArgs enc_args;
  Override<int> enc_steps;
  Override<std::uint64_t> enc_seed;
  auto* tenc =
      app.add_subcommand("train-encoder", "train the frozen-MLM sentence encoder");
  add_stage_options(tenc, enc_args);
  enc_steps.opt = tenc->add_option("--steps", enc_steps.value, "Adam updates");
  enc_seed.opt = tenc->add_option("--seed", enc_seed.value, "training seed");
  tenc->callback([&] { run_train_encoder(enc_args, enc_steps, enc_seed); });

  // encode-corpus
  StageArgs cache_args;
  auto* ecorp = app.add_subcommand(
      "encode-corpus", "precompute sentence vectors for the train split");
  add_stage_options(ecorp, cache_args);
  ecorp->callback([&] { run_encode_corpus(cache_args); });

  // train-ssr
  StageArgs ssr_args;
  Override<int> ssr_steps;
  Override<std::uint64_t> ssr_seed;
  std::string ssr_mode, ssr_loss;
  auto* tssr =
      app.add_subcommand("train-ssr", "train the sentence-level language model");
  add_stage_options(tssr, ssr_args);
  ssr_steps.opt = tssr->add_option("--steps", ssr_steps.value, "Adam updates");
  ssr_seed.opt = tssr->add_option("--seed", ssr_seed.value, "training seed");
  tssr->add_option("--mode", ssr_mode, "ar | nonar")
      ->check(CLI::IsMember({"ar", "nonar"}));
  tssr->add_option("--loss", ssr_loss, "cosine | contrastive")
      ->check(CLI::IsMember({"cosine", "contrastive"}));
  tssr->callback(
      [&] { run_train_ssr(ssr_args, ssr_steps, ssr_seed, ssr_mode, ssr_loss); });

  // train-decoder
  StageArgs dec_args;
  Override<int> dec_steps;
  Override<std::uint64_t> dec_seed;
  std::string dec_variant;
  auto* tdec = app.add_subcommand("train-decoder",
                                  "train a surface realization decoder");
  add_stage_options(tdec, dec_args);
  dec_steps.opt = tdec->add_option("--steps", dec_steps.value, "Adam updates");
  dec_seed.opt = tdec->add_option("--seed", dec_seed.value, "training seed");
  tdec->add_option("--variant", dec_variant, "vanilla | mixed")
      ->check(CLI::IsMember({"vanilla", "mixed"}));
  tdec->callback(
      [&] { run_train_decoder(dec_args, dec_steps, dec_seed, dec_variant); });

  // train-baseline
  StageArgs base_args;
  Override<int> base_steps;
  Override<std::uint64_t> base_seed;
  auto* tbase = app.add_subcommand("train-baseline",
                                   "train the token-level LM baseline");
  add_stage_options(tbase, base_args);
  base_steps.opt = tbase->add_option("--steps", base_steps.value, "Adam updates");
  base_seed.opt = tbase->add_option("--seed", base_seed.value, "training seed");
  tbase->callback([&] { run_train_baseline(base_args, base_steps, base_seed); });

  // generate
  StageArgs gen_args;
  std::string gen_mode;
  Override<int> gen_k, gen_max_len;
  Override<std::uint64_t> gen_seed;
  auto* gen = app.add_subcommand("generate",
                                 "write one ending per test context");
  add_stage_options(gen, gen_args);
  gen->add_option("--mode", gen_mode, "ssr-vanilla | ssr-mixed | baseline")
      ->required()
      ->check(CLI::IsMember({"ssr-vanilla", "ssr-mixed", "baseline"}));
  gen_k.opt = gen->add_option("--k", gen_k.value, "top-k width");
  gen_max_len.opt =
      gen->add_option("--max-len", gen_max_len.value, "emission cap");
  gen_seed.opt = gen->add_option("--seed", gen_seed.value, "sampling seed");
  gen->callback(
      [&] { run_generate(gen_args, gen_mode, gen_k, gen_max_len, gen_seed); });

  // select-ending
  StageArgs sel_args;
  std::string sel_method;
  Override<std::uint64_t> sel_seed;
  auto* sel = app.add_subcommand("select-ending",
                                 "two-candidate cloze selection on the test split");
  add_stage_options(sel, sel_args);
  sel->add_option("--method", sel_method, "ssr-ar | ssr-nonar | ppl")
      ->required()
      ->check(CLI::IsMember({"ssr-ar", "ssr-nonar", "ppl"}));
  sel_seed.opt = sel->add_option("--seed", sel_seed.value, "item seed");
  sel->callback([&] { run_select_ending(sel_args, sel_method, sel_seed); });

  // evaluate
  StageArgs ev_args;
  std::string ev_mode;
  Override<int> ev_k;
  Override<std::uint64_t> ev_seed;
  auto* ev = app.add_subcommand(
      "evaluate", "BLEU and distinct-n for a generation file");
  add_stage_options(ev, ev_args);
  ev->add_option("--mode", ev_mode, "generation mode to evaluate")
      ->required()
      ->check(CLI::IsMember({"ssr-vanilla", "ssr-mixed", "baseline"}));
  ev_k.opt = ev->add_option("--k", ev_k.value, "top-k of the generation file");
  ev_seed.opt = ev->add_option("--seed", ev_seed.value,
                               "seed of the generation file");
  ev->callback([&] { run_evaluate(ev_args, ev_mode, ev_k, ev_seed); });

  // sweep-k
  StageArgs sw_args;
  std::string sw_grid;
  Override<std::uint64_t> sw_seed;
  auto* sw = app.add_subcommand(
      "sweep-k", "paired BLEU/distinct drift sweep over top-k values");
  add_stage_options(sw, sw_args);
  sw->add_option("--grid", sw_grid, "comma-separated k values");
  sw_seed.opt = sw->add_option("--seed", sw_seed.value, "sweep seed");
  sw->callback([&] { run_sweep_k(sw_args, sw_grid, sw_seed); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 4;
  } catch (const MissingArtifactError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const ArgumentError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const ContractError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
