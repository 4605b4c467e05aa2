#pragma once
// Resolved run configuration. Source format is key=value lines ('#' comments
// and blank lines skipped); every key has a built-in default, unknown keys
// are rejected. A `preset` key (desk | paper) is applied before all other
// keys regardless of its position, so explicit keys always win over it.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ssr/adam.hpp"
#include "ssr/ssr_model.hpp"
#include "ssr/transformer.hpp"

namespace ssr {

struct RunConfig {
  std::string preset = "desk";

  // corpus synthesis and splitting
  int corpus_stories = 64;
  int corpus_clusters = 4;
  std::uint64_t corpus_seed = 0;
  int vocab_min_count = 1;
  std::array<double, 3> split_fractions{0.8, 0.1, 0.1};
  std::uint64_t split_seed = 0;

  // shared transformer geometry
  int d_model = 64;
  int n_heads = 4;
  int n_blocks = 2;
  int d_ff = 256;
  int max_positions = 256;
  double dropout = 0.1;

  // stage training
  int encoder_steps = 2000;
  double encoder_mask_rate = 0.15;
  std::uint64_t encoder_seed = 1;
  std::string ssr_mode = "ar";          // ar | nonar
  std::string ssr_loss = "contrastive"; // cosine | contrastive
  int ssr_steps = 2000;
  std::uint64_t ssr_seed = 2;
  int ssr_max_sentences = 32;
  double ssr_mask_rate = 0.15;
  int ssr_negatives = 8;
  std::string decoder_variant = "mixed";  // vanilla | mixed
  int decoder_steps = 2000;
  std::uint64_t decoder_seed = 3;
  int decoder_budget = 64;
  int baseline_steps = 2000;
  std::uint64_t baseline_seed = 4;

  // optimizer
  double adam_lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  // generation and evaluation
  int gen_k = 20;
  int gen_max_len = 32;
  std::uint64_t gen_seed = 0;
  std::uint64_t eval_seed = 0;
  std::string sweep_grid = "1,5,10,20,50";

  TransformerConfig transformer() const;
  SSRConfig ssr_config() const;
  AdamConfig adam() const;
  void validate() const;  // ranges and enum strings, throws ConfigError
};

// Sets one dotted key ("model.d_model=32"); unknown key or a value that does
// not parse as the key's type throws ConfigError.
void apply_config_key(RunConfig& cfg, const std::string& key,
                      const std::string& value);

// `origin` labels error messages. The result is validated.
RunConfig parse_run_config(const std::string& text, const std::string& origin);
RunConfig load_run_config(const std::string& path);

// Full echo, one key per line in a fixed order; doubles are shortest
// round-trip so a reparse reproduces the exact configuration.
std::string serialize_run_config(const RunConfig& cfg);

// "1,5,10,20,50" -> {1,5,10,20,50}; anything else throws ArgumentError.
std::vector<int> parse_k_grid(const std::string& grid);

}  // namespace ssr
