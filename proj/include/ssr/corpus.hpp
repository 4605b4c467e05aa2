#pragma once

// Corpus handling: word-level tokenizer, tab-separated paragraph files,
// synthetic five-sentence story generator, dataset splits, cloze items.

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "ssr/common.hpp"

namespace ssr {

// ---------------------------------------------------------------------------
// Tokenizer: specials occupy ids 0..3, corpus words follow in
// descending-frequency order (ties alphabetical).

struct Tokenizer {
  static constexpr int eos_id = 0;
  static constexpr int pad_id = 1;
  static constexpr int unk_id = 2;
  static constexpr int blank_id = 3;
  static constexpr int n_specials = 4;

  std::unordered_map<std::string, int> word_to_id;
  std::vector<std::string> id_to_word;  // dense table; ids 0..3 are the specials
  int min_count = 1;

  int vocab_size() const { return static_cast<int>(id_to_word.size()); }
  // Whitespace-split; words not in the table map to <unk>.
  std::vector<int> tokenize(const std::string& sentence) const;
  // Single-space join; an out-of-range id is a range error.
  std::string detokenize(const std::vector<int>& ids) const;
};

Tokenizer build_vocab(const std::string& raw_corpus, int min_count);
void save_vocab(const Tokenizer& tok, const std::string& path);
Tokenizer load_vocab(const std::string& path);

// ---------------------------------------------------------------------------
// Corpus files: UTF-8, LF line endings, one paragraph per line, sentences
// separated by single tabs.

struct Paragraph {
  int id = 0;
  std::vector<std::vector<int>> sentences;  // token ids, each nonempty
  std::vector<std::string> raw;             // source sentence strings
};

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// `origin` labels error messages (a file path, or "<memory>" for tests).
std::vector<Paragraph> parse_corpus(const std::string& text, const Tokenizer& tok,
                                    const std::string& origin = "<memory>");
std::vector<Paragraph> load_corpus(const std::string& path, const Tokenizer& tok);

// ---------------------------------------------------------------------------
// Synthetic stories: five-sentence templates instantiated with a protagonist
// entity and one topic cluster's vocabulary. Fifth sentences are globally
// distinct so retrieval over ending vectors has a unique answer.

struct StoryTemplate {
  // Patterns over slots {E} {P} {O} {O2} {MV} {A} {FV} {FA}; the protagonist
  // slot {E} must appear in lines[0] and lines[4].
  std::array<std::string, 5> lines;
};

struct SyntheticSpec {
  int n_clusters = 4;  // topic banks used, 1..4
  std::vector<std::string> entities;
  std::vector<StoryTemplate> templates;
  int story_count = 64;
  std::uint64_t seed = 0;
};

// 4 clusters, 16 entities, 3 templates, 64 stories, seed 0.
SyntheticSpec default_synthetic_spec();

struct StoryMeta {
  int story_id = 0;
  int cluster_id = 0;
  std::string entity;
};

struct SyntheticCorpus {
  std::string text;             // one story per line, sentences tab-separated
  std::vector<StoryMeta> meta;  // aligned with lines
};

SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec);

// Sidecar format: one line per story, "story_id,cluster_id,entity".
void save_story_meta(const std::vector<StoryMeta>& meta, const std::string& path);
std::vector<StoryMeta> load_story_meta(const std::string& path);

// ---------------------------------------------------------------------------
// Splits and cloze items.

struct SplitIndices {
  std::vector<int> train, val, test;
};

// Deterministic shuffle of 0..n-1, then cuts at cumulative-rounded boundaries.
SplitIndices split_dataset(int n_paragraphs, const std::array<double, 3>& fractions,
                           std::uint64_t seed);
SplitIndices split_dataset(const std::vector<Paragraph>& corpus,
                           const std::array<double, 3>& fractions, std::uint64_t seed);

template <class T>
std::vector<T> gather(const std::vector<T>& xs, const std::vector<int>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(xs.at(static_cast<std::size_t>(i)));
  return out;
}

struct ClozeItem {
  int story_id = 0;
  std::vector<std::vector<int>> context;       // sentences 1..4 of the story
  std::array<std::vector<int>, 2> candidates;  // true ending + cross-cluster distractor
  int correct = 0;                             // index of the true ending
};

// One item per story; the distractor is the fifth sentence of a story from a
// different cluster; candidate order is randomized per item.
std::vector<ClozeItem> make_cloze_items(const std::vector<Paragraph>& stories,
                                        const std::vector<StoryMeta>& meta, Rng& rng);

}  // namespace ssr
