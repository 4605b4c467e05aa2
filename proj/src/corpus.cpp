#include "ssr/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace ssr {

namespace {

const char* const kSpecials[Tokenizer::n_specials] = {"<eos>", "<pad>", "<unk>",
                                                      "<blank>"};

bool is_special_word(const std::string& w) {
  for (const char* s : kSpecials)
    if (w == s) return true;
  return false;
}

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

// Lines of `text`, excluding the segment after a trailing LF. '\r' anywhere
// violates the LF-only contract.
std::vector<std::string> split_lines(const std::string& text,
                                     const std::string& origin) {
  std::vector<std::string> lines;
  std::string cur;
  int line_no = 1;
  for (char c : text) {
    if (c == '\r')
      throw CorpusError(origin + " line " + std::to_string(line_no) +
                        ": carriage return (file must use LF line endings)");
    if (c == '\n') {
      lines.push_back(cur);
      cur.clear();
      ++line_no;
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) lines.push_back(cur);
  return lines;
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

void replace_all(std::string& s, const std::string& from, const std::string& to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

int parse_int_field(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception&) {
    throw CorpusError(where + ": expected an integer, got \"" + s + "\"");
  }
  if (used != s.size())
    throw CorpusError(where + ": expected an integer, got \"" + s + "\"");
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tokenizer

std::vector<int> Tokenizer::tokenize(const std::string& sentence) const {
  std::vector<int> ids;
  for (const std::string& w : split_words(sentence)) {
    auto it = word_to_id.find(w);
    ids.push_back(it == word_to_id.end() ? unk_id : it->second);
  }
  return ids;
}

std::string Tokenizer::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab_size())
      throw RangeError("detokenize: id " + std::to_string(ids[i]) +
                       " outside vocabulary of size " +
                       std::to_string(vocab_size()));
    if (i > 0) out.push_back(' ');
    out += id_to_word[static_cast<std::size_t>(ids[i])];
  }
  return out;
}

Tokenizer build_vocab(const std::string& raw_corpus, int min_count) {
  if (min_count < 1) throw ContractError("build_vocab: min_count must be >= 1");

  // std::map keeps words sorted, which settles frequency ties alphabetically.
  std::map<std::string, long> freq;
  for (const std::string& w : split_words(raw_corpus))
    if (!is_special_word(w)) ++freq[w];

  std::vector<std::pair<std::string, long>> entries(freq.begin(), freq.end());
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  Tokenizer tok;
  tok.min_count = min_count;
  for (const char* s : kSpecials) {
    tok.word_to_id.emplace(s, tok.vocab_size());
    tok.id_to_word.emplace_back(s);
  }
  for (const auto& [word, count] : entries) {
    if (count < min_count) continue;
    tok.word_to_id.emplace(word, tok.vocab_size());
    tok.id_to_word.push_back(word);
  }
  return tok;
}

void save_vocab(const Tokenizer& tok, const std::string& path) {
  std::string out = "min_count " + std::to_string(tok.min_count) + "\n";
  for (int id = Tokenizer::n_specials; id < tok.vocab_size(); ++id)
    out += tok.id_to_word[static_cast<std::size_t>(id)] + "\n";
  write_text_file(path, out);
}

Tokenizer load_vocab(const std::string& path) {
  const std::vector<std::string> lines =
      split_lines(read_text_file(path), path);
  if (lines.empty())
    throw FormatError(path + ": empty vocabulary file");
  const std::vector<std::string> header = split_words(lines[0]);
  if (header.size() != 2 || header[0] != "min_count")
    throw FormatError(path + " line 1: expected \"min_count <n>\"");
  const int min_count = parse_int_field(header[1], path + " line 1");
  if (min_count < 1)
    throw FormatError(path + " line 1: min_count must be >= 1");

  Tokenizer tok;
  tok.min_count = min_count;
  for (const char* s : kSpecials) {
    tok.word_to_id.emplace(s, tok.vocab_size());
    tok.id_to_word.emplace_back(s);
  }
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string& word = lines[i];
    const std::string where = path + " line " + std::to_string(i + 1);
    if (word.empty() || split_words(word).size() != 1)
      throw FormatError(where + ": expected a single word");
    if (is_special_word(word))
      throw FormatError(where + ": special token \"" + word +
                        "\" may not appear in the word list");
    if (!tok.word_to_id.emplace(word, tok.vocab_size()).second)
      throw FormatError(where + ": duplicate word \"" + word + "\"");
    tok.id_to_word.push_back(word);
  }
  return tok;
}

// ---------------------------------------------------------------------------
// Corpus files

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("missing file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error("write failed: " + path);
}

std::vector<Paragraph> parse_corpus(const std::string& text, const Tokenizer& tok,
                                    const std::string& origin) {
  const std::vector<std::string> lines = split_lines(text, origin);
  if (lines.empty()) throw CorpusError(origin + ": empty corpus file");

  std::vector<Paragraph> out;
  out.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string where = origin + " line " + std::to_string(i + 1);
    Paragraph p;
    p.id = static_cast<int>(i);
    for (const std::string& field : split_on(lines[i], '\t')) {
      std::vector<int> ids = tok.tokenize(field);
      if (ids.empty()) throw CorpusError(where + ": empty sentence field");
      p.sentences.push_back(std::move(ids));
      p.raw.push_back(field);
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Paragraph> load_corpus(const std::string& path, const Tokenizer& tok) {
  return parse_corpus(read_text_file(path), tok, path);
}

// ---------------------------------------------------------------------------
// Synthetic stories

namespace {

struct Topic {
  std::vector<std::string> places, objects, middle_verbs, final_verbs, adjs,
      final_adjs;
};

// Four topic banks with disjoint content vocabularies; function words are
// shared on purpose so clusters differ only where it matters.
const std::vector<Topic>& topic_bank() {
  static const std::vector<Topic> bank = {
      // cooking
      {{"kitchen", "bakery", "market", "pantry", "cafe", "diner"},
       {"stew", "bread", "pie", "soup", "cake", "salad", "sauce", "roast", "tart"},
       {"chopped", "stirred", "tasted"},
       {"served", "baked", "plated", "garnished"},
       {"spicy", "savory", "fresh"},
       {"delicious", "golden", "hearty"}},
      // sailing
      {{"harbor", "dock", "bay", "lighthouse", "marina", "cove"},
       {"sail", "anchor", "rudder", "compass", "mast", "rope", "hull", "chart",
        "buoy"},
       {"rigged", "hoisted", "steered"},
       {"moored", "docked", "secured", "lowered"},
       {"salty", "windy", "calm"},
       {"sturdy", "weathered", "gleaming"}},
      // gardening
      {{"garden", "greenhouse", "orchard", "meadow", "nursery", "yard"},
       {"rose", "fern", "tulip", "cactus", "vine", "shrub", "daisy", "herb",
        "sprout"},
       {"planted", "watered", "pruned"},
       {"harvested", "repotted", "trimmed", "mulched"},
       {"leafy", "fragrant", "hardy"},
       {"blooming", "vibrant", "lush"}},
      // music
      {{"studio", "hall", "theater", "stage", "club", "conservatory"},
       {"violin", "drum", "flute", "guitar", "piano", "cello", "trumpet", "harp",
        "banjo"},
       {"tuned", "practiced", "rehearsed"},
       {"performed", "recorded", "mastered", "conducted"},
       {"gentle", "lively", "soft"},
       {"brilliant", "flawless", "stirring"}},
  };
  return bank;
}

void validate_spec(const SyntheticSpec& spec) {
  const int bank_size = static_cast<int>(topic_bank().size());
  if (spec.story_count < 1)
    throw ConfigError("synthetic spec: story_count must be positive");
  if (spec.n_clusters < 1 || spec.n_clusters > bank_size)
    throw ConfigError("synthetic spec: n_clusters must be in 1.." +
                      std::to_string(bank_size));
  if (spec.entities.empty())
    throw ConfigError("synthetic spec: entity pool is empty");
  for (const std::string& e : spec.entities)
    if (split_words(e).size() != 1)
      throw ConfigError("synthetic spec: entity \"" + e +
                        "\" is not a single word");
  if (spec.templates.empty())
    throw ConfigError("synthetic spec: template set is empty");
  for (const StoryTemplate& t : spec.templates) {
    if (t.lines[0].find("{E}") == std::string::npos ||
        t.lines[4].find("{E}") == std::string::npos)
      throw ConfigError(
          "synthetic spec: every template must mention {E} in sentences 1 and 5");
  }
}

}  // namespace

SyntheticSpec default_synthetic_spec() {
  SyntheticSpec spec;
  spec.entities = {"alice", "ben",  "clara", "dev",  "emma", "felix",
                   "grace", "hana", "ivan",  "jun",  "kira", "liam",
                   "mira",  "noah", "owen",  "priya"};
  spec.templates = {
      StoryTemplate{{"{E} walked to the {P}",
                     "the {A} {O} sat near the {O2}",
                     "{E} {MV} the {O} with care",
                     "the {P} stayed quiet for hours",
                     "{E} finally {FV} the {FA} {O}"}},
      StoryTemplate{{"{E} visited the {P} at dawn",
                     "a {A} {O} rested beside the {O2}",
                     "{E} carefully {MV} the {O}",
                     "everyone at the {P} watched closely",
                     "{E} proudly {FV} the {FA} {O}"}},
      StoryTemplate{{"{E} arrived at the {P} early",
                     "the {O} looked {A} beside the {O2}",
                     "{E} slowly {MV} the {O}",
                     "the whole {P} seemed busy",
                     "{E} happily {FV} the {FA} {O}"}},
  };
  return spec;
}

SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec) {
  validate_spec(spec);
  Rng rng(spec.seed);
  const std::vector<Topic>& bank = topic_bank();
  // A story is retried with fresh draws until its fifth sentence is new; the
  // cap bounds the corpus size against the template/pool combinatorics.
  constexpr int kMaxRetries = 1000;

  SyntheticCorpus out;
  std::set<std::string> seen_endings;
  for (int story = 0; story < spec.story_count; ++story) {
    std::array<std::string, 5> lines;
    StoryMeta meta;
    int attempt = 0;
    for (;; ++attempt) {
      if (attempt >= kMaxRetries)
        throw CorpusError(
            "generate_synthetic_corpus: could not draw a distinct fifth "
            "sentence for story " +
            std::to_string(story) + "; pools support too few endings");
      // Draw order is fixed; it is part of the determinism contract.
      const std::string& entity = spec.entities[rng.index(spec.entities.size())];
      const std::size_t cluster = rng.index(static_cast<std::size_t>(spec.n_clusters));
      const StoryTemplate& tpl = spec.templates[rng.index(spec.templates.size())];
      const Topic& topic = bank[cluster];
      const std::string& place = topic.places[rng.index(topic.places.size())];
      const std::size_t n_obj = topic.objects.size();
      const std::size_t obj = rng.index(n_obj);
      const std::size_t obj2 =
          n_obj < 2 ? obj : (obj + 1 + rng.index(n_obj - 1)) % n_obj;
      const std::string& mv = topic.middle_verbs[rng.index(topic.middle_verbs.size())];
      const std::string& adj = topic.adjs[rng.index(topic.adjs.size())];
      const std::string& fv = topic.final_verbs[rng.index(topic.final_verbs.size())];
      const std::string& fadj = topic.final_adjs[rng.index(topic.final_adjs.size())];

      for (int i = 0; i < 5; ++i) {
        std::string line = tpl.lines[static_cast<std::size_t>(i)];
        replace_all(line, "{E}", entity);
        replace_all(line, "{P}", place);
        replace_all(line, "{O2}", topic.objects[obj2]);
        replace_all(line, "{O}", topic.objects[obj]);
        replace_all(line, "{MV}", mv);
        replace_all(line, "{A}", adj);
        replace_all(line, "{FV}", fv);
        replace_all(line, "{FA}", fadj);
        if (line.find('{') != std::string::npos)
          throw ConfigError("synthetic spec: unresolved slot in template line \"" +
                            tpl.lines[static_cast<std::size_t>(i)] + "\"");
        lines[static_cast<std::size_t>(i)] = std::move(line);
      }
      if (seen_endings.insert(lines[4]).second) {
        meta = {story, static_cast<int>(cluster), entity};
        break;
      }
    }
    for (int i = 0; i < 5; ++i) {
      out.text += lines[static_cast<std::size_t>(i)];
      out.text.push_back(i == 4 ? '\n' : '\t');
    }
    out.meta.push_back(std::move(meta));
  }
  return out;
}

void save_story_meta(const std::vector<StoryMeta>& meta, const std::string& path) {
  std::string out;
  for (const StoryMeta& m : meta)
    out += std::to_string(m.story_id) + "," + std::to_string(m.cluster_id) + "," +
           m.entity + "\n";
  write_text_file(path, out);
}

std::vector<StoryMeta> load_story_meta(const std::string& path) {
  const std::vector<std::string> lines =
      split_lines(read_text_file(path), path);
  std::vector<StoryMeta> out;
  out.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string where = path + " line " + std::to_string(i + 1);
    const std::vector<std::string> fields = split_on(lines[i], ',');
    if (fields.size() != 3)
      throw CorpusError(where + ": expected \"story_id,cluster_id,entity\"");
    StoryMeta m;
    m.story_id = parse_int_field(fields[0], where);
    m.cluster_id = parse_int_field(fields[1], where);
    m.entity = fields[2];
    if (m.entity.empty()) throw CorpusError(where + ": empty entity field");
    out.push_back(std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits and cloze items

SplitIndices split_dataset(int n_paragraphs, const std::array<double, 3>& fractions,
                           std::uint64_t seed) {
  if (n_paragraphs < 0)
    throw ContractError("split_dataset: negative paragraph count");
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw ConfigError("split_dataset: fractions must be positive");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ConfigError("split_dataset: fractions must sum to 1");

  std::vector<int> perm(static_cast<std::size_t>(n_paragraphs));
  for (int i = 0; i < n_paragraphs; ++i) perm[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(perm);

  // Cumulative rounding keeps the three parts exhaustive and disjoint.
  const auto cut = [&](double cum) {
    auto c = std::llround(cum * n_paragraphs);
    return static_cast<std::size_t>(std::clamp<long long>(c, 0, n_paragraphs));
  };
  const std::size_t c1 = cut(fractions[0]);
  const std::size_t c2 = std::max(c1, cut(fractions[0] + fractions[1]));

  SplitIndices split;
  split.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(c1));
  split.val.assign(perm.begin() + static_cast<std::ptrdiff_t>(c1),
                   perm.begin() + static_cast<std::ptrdiff_t>(c2));
  split.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(c2), perm.end());
  return split;
}

SplitIndices split_dataset(const std::vector<Paragraph>& corpus,
                           const std::array<double, 3>& fractions,
                           std::uint64_t seed) {
  return split_dataset(static_cast<int>(corpus.size()), fractions, seed);
}

std::vector<ClozeItem> make_cloze_items(const std::vector<Paragraph>& stories,
                                        const std::vector<StoryMeta>& meta,
                                        Rng& rng) {
  if (stories.size() != meta.size())
    throw ContractError("make_cloze_items: stories and metadata are misaligned (" +
                        std::to_string(stories.size()) + " vs " +
                        std::to_string(meta.size()) + ")");
  for (std::size_t i = 0; i < stories.size(); ++i)
    if (stories[i].sentences.size() != 5)
      throw CorpusError("make_cloze_items: story " + std::to_string(i) +
                        " has " + std::to_string(stories[i].sentences.size()) +
                        " sentences, expected exactly 5");

  std::set<int> clusters;
  for (const StoryMeta& m : meta) clusters.insert(m.cluster_id);
  if (clusters.size() < 2)
    throw CorpusError("make_cloze_items: need at least 2 topic clusters, found " +
                      std::to_string(clusters.size()));

  // others[c] = story indices outside cluster c, ascending.
  std::map<int, std::vector<std::size_t>> others;
  for (int c : clusters) {
    auto& v = others[c];
    for (std::size_t j = 0; j < meta.size(); ++j)
      if (meta[j].cluster_id != c) v.push_back(j);
  }

  std::vector<ClozeItem> items;
  items.reserve(stories.size());
  for (std::size_t i = 0; i < stories.size(); ++i) {
    const std::vector<std::size_t>& pool = others[meta[i].cluster_id];
    // Per-item draw order: distractor story first, then candidate position.
    const std::size_t j = pool[rng.index(pool.size())];
    ClozeItem item;
    item.story_id = meta[i].story_id;
    item.context.assign(stories[i].sentences.begin(),
                        stories[i].sentences.begin() + 4);
    item.correct = static_cast<int>(rng.index(2));
    item.candidates[static_cast<std::size_t>(item.correct)] =
        stories[i].sentences[4];
    item.candidates[static_cast<std::size_t>(1 - item.correct)] =
        stories[j].sentences[4];
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace ssr
