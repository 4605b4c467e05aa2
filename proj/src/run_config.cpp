#include "ssr/run_config.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "ssr/common.hpp"
#include "ssr/corpus.hpp"

namespace ssr {
namespace {

// Whole-string numeric parses; anything trailing is a config error.
long long to_int(const std::string& key, const std::string& value) {
  long long out = 0;
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end)
    throw ConfigError("config key " + key + ": '" + value +
                      "' is not an integer");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end)
    throw ConfigError("config key " + key + ": '" + value +
                      "' is not an unsigned integer");
  return out;
}

double to_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end)
    throw ConfigError("config key " + key + ": '" + value +
                      "' is not a number");
  return out;
}

// Shortest decimal that round-trips, so echoed configs reparse exactly.
std::string fmt(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  if (ec != std::errc()) throw NumericError("to_chars failed on a double");
  return std::string(buf, ptr);
}

void apply_preset(RunConfig& cfg, const std::string& name) {
  if (name == "desk") return;  // the built-in defaults are the desk preset
  if (name == "paper") {
    cfg.d_model = 768;
    cfg.n_heads = 12;
    cfg.n_blocks = 12;
    cfg.d_ff = 3072;
    cfg.adam_lr = 5e-5;
    return;
  }
  throw ConfigError("config key preset: unknown preset '" + name + "'");
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

TransformerConfig RunConfig::transformer() const {
  TransformerConfig tf;
  tf.d_model = d_model;
  tf.n_heads = n_heads;
  tf.n_blocks = n_blocks;
  tf.d_ff = d_ff;
  tf.max_positions = max_positions;
  tf.dropout = dropout;
  return tf;
}

SSRConfig RunConfig::ssr_config() const {
  SSRConfig cfg;
  cfg.tf = transformer();
  cfg.mode = ssr_mode == "ar" ? SSRMode::kAR : SSRMode::kNonAR;
  cfg.max_sentences = ssr_max_sentences;
  cfg.mask_rate = ssr_mask_rate;
  cfg.n_negatives = ssr_negatives;
  return cfg;
}

AdamConfig RunConfig::adam() const {
  AdamConfig a;
  a.lr = adam_lr;
  a.beta1 = adam_beta1;
  a.beta2 = adam_beta2;
  a.eps = adam_eps;
  return a;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError(what); };
  if (preset != "desk" && preset != "paper")
    fail("preset must be desk or paper");
  if (corpus_stories < 1) fail("corpus.stories must be >= 1");
  if (corpus_clusters < 1 || corpus_clusters > 4)
    fail("corpus.clusters must lie in 1..4");
  if (vocab_min_count < 1) fail("vocab.min_count must be >= 1");
  double split_sum = 0.0;
  for (double f : split_fractions) {
    if (!(f > 0.0 && f < 1.0)) fail("split fractions must lie in (0, 1)");
    split_sum += f;
  }
  if (std::abs(split_sum - 1.0) > 1e-9) fail("split fractions must sum to 1");
  transformer().validate();  // throws ContractError on bad geometry
  if (encoder_steps < 1) fail("encoder.steps must be >= 1");
  if (!(encoder_mask_rate > 0.0 && encoder_mask_rate < 1.0))
    fail("encoder.mask_rate must lie in (0, 1)");
  if (ssr_mode != "ar" && ssr_mode != "nonar")
    fail("ssr.mode must be ar or nonar");
  if (ssr_loss != "cosine" && ssr_loss != "contrastive")
    fail("ssr.loss must be cosine or contrastive");
  if (ssr_steps < 1) fail("ssr.steps must be >= 1");
  if (ssr_max_sentences < 2) fail("ssr.max_sentences must be >= 2");
  if (!(ssr_mask_rate > 0.0 && ssr_mask_rate < 1.0))
    fail("ssr.mask_rate must lie in (0, 1)");
  if (ssr_negatives < 1) fail("ssr.negatives must be >= 1");
  if (decoder_variant != "vanilla" && decoder_variant != "mixed")
    fail("decoder.variant must be vanilla or mixed");
  if (decoder_steps < 1) fail("decoder.steps must be >= 1");
  if (decoder_budget < 2) fail("decoder.budget must be >= 2");
  if (baseline_steps < 1) fail("baseline.steps must be >= 1");
  if (!(adam_lr > 0.0)) fail("adam.lr must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0))
    fail("adam.beta1 must lie in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    fail("adam.beta2 must lie in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam.eps must be positive");
  if (gen_k < 1) fail("generate.k must be >= 1");
  if (gen_max_len < 1) fail("generate.max_len must be >= 1");
  try {
    parse_k_grid(sweep_grid);
  } catch (const ArgumentError& e) {
    fail(std::string("sweep.grid: ") + e.what());
  }
}

void apply_config_key(RunConfig& cfg, const std::string& key,
                      const std::string& value) {
  auto as_int = [&] { return static_cast<int>(to_int(key, value)); };
  auto as_u64 = [&] { return to_u64(key, value); };
  auto as_double = [&] { return to_double(key, value); };
  if (key == "preset") {
    cfg.preset = value;
    apply_preset(cfg, value);
  } else if (key == "corpus.stories") {
    cfg.corpus_stories = as_int();
  } else if (key == "corpus.clusters") {
    cfg.corpus_clusters = as_int();
  } else if (key == "corpus.seed") {
    cfg.corpus_seed = as_u64();
  } else if (key == "vocab.min_count") {
    cfg.vocab_min_count = as_int();
  } else if (key == "split.train") {
    cfg.split_fractions[0] = as_double();
  } else if (key == "split.val") {
    cfg.split_fractions[1] = as_double();
  } else if (key == "split.test") {
    cfg.split_fractions[2] = as_double();
  } else if (key == "split.seed") {
    cfg.split_seed = as_u64();
  } else if (key == "model.d_model") {
    cfg.d_model = as_int();
  } else if (key == "model.n_heads") {
    cfg.n_heads = as_int();
  } else if (key == "model.n_blocks") {
    cfg.n_blocks = as_int();
  } else if (key == "model.d_ff") {
    cfg.d_ff = as_int();
  } else if (key == "model.max_positions") {
    cfg.max_positions = as_int();
  } else if (key == "model.dropout") {
    cfg.dropout = as_double();
  } else if (key == "encoder.steps") {
    cfg.encoder_steps = as_int();
  } else if (key == "encoder.mask_rate") {
    cfg.encoder_mask_rate = as_double();
  } else if (key == "encoder.seed") {
    cfg.encoder_seed = as_u64();
  } else if (key == "ssr.mode") {
    cfg.ssr_mode = value;
  } else if (key == "ssr.loss") {
    cfg.ssr_loss = value;
  } else if (key == "ssr.steps") {
    cfg.ssr_steps = as_int();
  } else if (key == "ssr.seed") {
    cfg.ssr_seed = as_u64();
  } else if (key == "ssr.max_sentences") {
    cfg.ssr_max_sentences = as_int();
  } else if (key == "ssr.mask_rate") {
    cfg.ssr_mask_rate = as_double();
  } else if (key == "ssr.negatives") {
    cfg.ssr_negatives = as_int();
  } else if (key == "decoder.variant") {
    cfg.decoder_variant = value;
  } else if (key == "decoder.steps") {
    cfg.decoder_steps = as_int();
  } else if (key == "decoder.seed") {
    cfg.decoder_seed = as_u64();
  } else if (key == "decoder.budget") {
    cfg.decoder_budget = as_int();
  } else if (key == "baseline.steps") {
    cfg.baseline_steps = as_int();
  } else if (key == "baseline.seed") {
    cfg.baseline_seed = as_u64();
  } else if (key == "adam.lr") {
    cfg.adam_lr = as_double();
  } else if (key == "adam.beta1") {
    cfg.adam_beta1 = as_double();
  } else if (key == "adam.beta2") {
    cfg.adam_beta2 = as_double();
  } else if (key == "adam.eps") {
    cfg.adam_eps = as_double();
  } else if (key == "generate.k") {
    cfg.gen_k = as_int();
  } else if (key == "generate.max_len") {
    cfg.gen_max_len = as_int();
  } else if (key == "generate.seed") {
    cfg.gen_seed = as_u64();
  } else if (key == "eval.seed") {
    cfg.eval_seed = as_u64();
  } else if (key == "sweep.grid") {
    cfg.sweep_grid = value;
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

RunConfig parse_run_config(const std::string& text,
                           const std::string& origin) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string body = trim(line);
    if (body.empty() || body[0] == '#') continue;
    const std::size_t eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(line_no) +
                        ": expected key=value, got '" + body + "'");
    pairs.emplace_back(trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
  }
  RunConfig cfg;
  // The preset rewrites defaults, so it is applied before every other key
  // regardless of where it appears in the file.
  for (const auto& [key, value] : pairs)
    if (key == "preset") apply_config_key(cfg, key, value);
  for (const auto& [key, value] : pairs)
    if (key != "preset") apply_config_key(cfg, key, value);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(read_text_file(path), path);
}

std::string serialize_run_config(const RunConfig& cfg) {
  std::string out;
  auto put = [&](const std::string& key, const std::string& value) {
    out += key;
    out += '=';
    out += value;
    out += '\n';
  };
  put("preset", cfg.preset);
  put("corpus.stories", std::to_string(cfg.corpus_stories));
  put("corpus.clusters", std::to_string(cfg.corpus_clusters));
  put("corpus.seed", std::to_string(cfg.corpus_seed));
  put("vocab.min_count", std::to_string(cfg.vocab_min_count));
  put("split.train", fmt(cfg.split_fractions[0]));
  put("split.val", fmt(cfg.split_fractions[1]));
  put("split.test", fmt(cfg.split_fractions[2]));
  put("split.seed", std::to_string(cfg.split_seed));
  put("model.d_model", std::to_string(cfg.d_model));
  put("model.n_heads", std::to_string(cfg.n_heads));
  put("model.n_blocks", std::to_string(cfg.n_blocks));
  put("model.d_ff", std::to_string(cfg.d_ff));
  put("model.max_positions", std::to_string(cfg.max_positions));
  put("model.dropout", fmt(cfg.dropout));
  put("encoder.steps", std::to_string(cfg.encoder_steps));
  put("encoder.mask_rate", fmt(cfg.encoder_mask_rate));
  put("encoder.seed", std::to_string(cfg.encoder_seed));
  put("ssr.mode", cfg.ssr_mode);
  put("ssr.loss", cfg.ssr_loss);
  put("ssr.steps", std::to_string(cfg.ssr_steps));
  put("ssr.seed", std::to_string(cfg.ssr_seed));
  put("ssr.max_sentences", std::to_string(cfg.ssr_max_sentences));
  put("ssr.mask_rate", fmt(cfg.ssr_mask_rate));
  put("ssr.negatives", std::to_string(cfg.ssr_negatives));
  put("decoder.variant", cfg.decoder_variant);
  put("decoder.steps", std::to_string(cfg.decoder_steps));
  put("decoder.seed", std::to_string(cfg.decoder_seed));
  put("decoder.budget", std::to_string(cfg.decoder_budget));
  put("baseline.steps", std::to_string(cfg.baseline_steps));
  put("baseline.seed", std::to_string(cfg.baseline_seed));
  put("adam.lr", fmt(cfg.adam_lr));
  put("adam.beta1", fmt(cfg.adam_beta1));
  put("adam.beta2", fmt(cfg.adam_beta2));
  put("adam.eps", fmt(cfg.adam_eps));
  put("generate.k", std::to_string(cfg.gen_k));
  put("generate.max_len", std::to_string(cfg.gen_max_len));
  put("generate.seed", std::to_string(cfg.gen_seed));
  put("eval.seed", std::to_string(cfg.eval_seed));
  put("sweep.grid", cfg.sweep_grid);
  return out;
}

std::vector<int> parse_k_grid(const std::string& grid) {
  std::vector<int> ks;
  std::size_t start = 0;
  while (start <= grid.size()) {
    std::size_t comma = grid.find(',', start);
    if (comma == std::string::npos) comma = grid.size();
    const std::string tok = trim(grid.substr(start, comma - start));
    int k = 0;
    const char* end = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(tok.data(), end, k);
    if (tok.empty() || ec != std::errc() || ptr != end || k < 1)
      throw ArgumentError("malformed k grid '" + grid +
                          "': expected comma-separated positive integers");
    ks.push_back(k);
    start = comma + 1;
  }
  return ks;
}

}  // namespace ssr
