#include "adams/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <unordered_map>

#include <json.hpp>

#include "adams/errors.hpp"

namespace adams::corpus {
namespace {

bool printable_ascii(std::string_view s) {
  for (unsigned char c : s)
    if (c < 0x20 || c > 0x7e) return false;
  return true;
}

// Returns true if the cleaned line should be kept as an entry.
bool clean_line(std::string& line, LoadStats& stats) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.empty()) {
    ++stats.dropped_empty;
    return false;
  }
  if (!printable_ascii(line)) {
    ++stats.dropped_non_ascii;
    return false;
  }
  if (line.size() > rules::kMaxWordLen) {
    ++stats.dropped_overlong;
    return false;
  }
  return true;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

}  // namespace

Dictionary dictionary_from_lines(const std::vector<std::string>& lines,
                                 std::string source_name, LoadStats* stats) {
  LoadStats local;
  Dictionary dict;
  dict.source_name = std::move(source_name);
  StringSet seen;
  for (std::string line : lines) {
    if (!clean_line(line, local)) continue;
    if (!seen.insert(line).second) {
      ++local.dropped_duplicate;
      continue;
    }
    dict.words.push_back(std::move(line));
  }
  if (stats) *stats = local;
  if (dict.words.empty()) throw EmptyCorpus("dictionary '" + dict.source_name + "' has no usable entries");
  return dict;
}

AttackedSet targets_from_lines(const std::vector<std::string>& lines, LoadStats* stats) {
  LoadStats local;
  AttackedSet set;
  for (std::string line : lines) {
    if (!clean_line(line, local)) continue;
    if (!set.passwords.insert(std::move(line)).second) ++local.dropped_duplicate;
  }
  set.original_size = set.passwords.size();
  if (stats) *stats = local;
  if (set.passwords.empty()) throw EmptyCorpus("target set has no usable entries");
  return set;
}

Dictionary load_dictionary(const std::string& path, LoadStats* stats) {
  return dictionary_from_lines(read_lines(path), path, stats);
}

AttackedSet load_targets(const std::string& path, LoadStats* stats) {
  return targets_from_lines(read_lines(path), stats);
}

Dictionary sort_by_frequency(const std::vector<std::string>& entries) {
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& e : entries) ++counts[e];
  std::vector<std::pair<std::string_view, std::size_t>> order;
  order.reserve(counts.size());
  for (const auto& [word, n] : counts) order.emplace_back(word, n);
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Dictionary dict;
  dict.source_name = "<frequency-sorted>";
  dict.words.reserve(order.size());
  for (const auto& [word, n] : order) dict.words.emplace_back(word);
  if (dict.words.empty()) throw EmptyCorpus("frequency sort received no entries");
  return dict;
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

namespace {

// Minimal deterministic RNG helpers. std::uniform_int_distribution is
// implementation-defined, so bounded draws are done by hand to keep generated
// corpora byte-stable across toolchains.
struct Rng {
  std::mt19937_64 gen;
  explicit Rng(std::uint64_t seed) : gen(seed) {}
  std::uint64_t raw() { return gen(); }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(raw() % n); }
  double unit() { return static_cast<double>(raw() >> 11) * 0x1.0p-53; }
  int in_range(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(below(static_cast<std::size_t>(hi - lo + 1)));
  }
  std::size_t weighted(const std::vector<double>& w) {
    double u = unit(), acc = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      acc += w[i];
      if (u < acc) return i;
    }
    return w.size() - 1;
  }
};

constexpr std::string_view kConsonants = "bcdfghjklmnprstvwz";
constexpr std::string_view kVowels = "aeiou";

std::string gen_name(Rng& rng) {
  int syllables = rng.in_range(3, 4);
  std::string w;
  for (int i = 0; i < syllables; ++i) {
    w += kConsonants[rng.below(kConsonants.size())];
    w += kVowels[rng.below(kVowels.size())];
  }
  if (rng.unit() < 0.5) w += kConsonants[rng.below(kConsonants.size())];
  return w;
}

std::string gen_short(Rng& rng) {
  int len = rng.in_range(3, 4);
  std::string w;
  for (int i = 0; i < len; ++i) w += static_cast<char>('a' + rng.below(26));
  return w;
}

std::string gen_digits(Rng& rng) {
  int len = rng.in_range(4, 8);
  std::string w;
  for (int i = 0; i < len; ++i) w += static_cast<char>('0' + rng.below(10));
  return w;
}

std::string gen_mixed(Rng& rng) {
  std::string w;
  for (int i = 0; i < 2; ++i) {
    w += kConsonants[rng.below(kConsonants.size())];
    w += kVowels[rng.below(kVowels.size())];
  }
  int digits = rng.in_range(2, 3);
  for (int i = 0; i < digits; ++i) w += static_cast<char>('0' + rng.below(10));
  return w;
}

std::string gen_word(Rng& rng, int tmpl) {
  switch (tmpl) {
    case 0: return gen_name(rng);
    case 1: return gen_short(rng);
    case 2: return gen_digits(rng);
    default: return gen_mixed(rng);
  }
}

std::vector<PlantedFamily> planted_families() {
  return {
      {"suffix_digits", 0, {"$1", "$7", "$1 $2 $3", "$6 $9"}},
      {"rewrite", 1, {"d", "f", "r", "z2"}},
      {"rotate_trim", 2, {"{", "}", "]", "["}},
      {"leet_case", 3, {"sa@", "so0", "c", "u"}},
  };
}

std::vector<std::string> noise_rules() {
  return {"^!", "si1", "se3", "'4", "C", "T2"};
}

void validate(const SynthSpec& spec) {
  if (spec.n_words == 0) throw InvalidSpec("n_words must be positive");
  if (spec.n_targets == 0) throw InvalidSpec("n_targets must be positive");
  if (spec.template_weights.size() != kNumTemplates)
    throw InvalidSpec("expected " + std::to_string(kNumTemplates) + " template weights");
  double sum = 0;
  for (double w : spec.template_weights) {
    if (w < 0) throw InvalidSpec("template weights must be non-negative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw InvalidSpec("template weights must sum to 1");
  if (spec.home_family_prob < 0 || spec.home_family_prob > 1)
    throw InvalidSpec("home_family_prob must be in [0,1]");
  if (spec.chain_prob < 0 || spec.chain_prob >= 1)
    throw InvalidSpec("chain_prob must be in [0,1)");
  if (spec.max_chain_depth < 1) throw InvalidSpec("max_chain_depth must be >= 1");
}

}  // namespace

SynthResult synthesize_corpus(const SynthSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);

  SynthResult out;
  auto& manifest = out.manifest;
  manifest.seed = spec.seed;
  manifest.n_words = spec.n_words;
  manifest.n_targets = spec.n_targets;
  manifest.template_weights = spec.template_weights;
  manifest.home_family_prob = spec.home_family_prob;
  manifest.chain_prob = spec.chain_prob;
  manifest.template_names = {"name", "short", "digits", "mixed"};
  manifest.families = planted_families();
  manifest.noise_rules = noise_rules();
  for (const auto& fam : manifest.families)
    for (const auto& r : fam.rules) manifest.ruleset_lines.push_back(r);
  for (const auto& r : manifest.noise_rules) manifest.ruleset_lines.push_back(r);

  // Pre-parse family rules once.
  std::vector<std::vector<rules::Rule>> fam_rules(manifest.families.size());
  for (std::size_t f = 0; f < manifest.families.size(); ++f)
    for (const auto& text : manifest.families[f].rules)
      fam_rules[f].push_back(std::get<rules::Rule>(rules::parse_rule(text)));

  // Base words.
  out.dictionary.source_name = "<synthetic>";
  StringSet word_seen;
  while (out.dictionary.words.size() < spec.n_words) {
    int tmpl = static_cast<int>(rng.weighted(spec.template_weights));
    std::string w = gen_word(rng, tmpl);
    if (!word_seen.insert(w).second) continue;
    out.dictionary.words.push_back(std::move(w));
    manifest.word_templates.push_back(tmpl);
  }

  // Targets.
  manifest.depth1_counts.assign(kNumTemplates,
                                std::vector<std::size_t>(manifest.families.size(), 0));
  manifest.chain_counts_by_depth.assign(static_cast<std::size_t>(spec.max_chain_depth) + 1, 0);

  struct TargetInfo {
    std::string text;
    std::size_t family;
    int depth;
  };
  std::vector<TargetInfo> placed;
  std::vector<std::size_t> chainable;  // indices into placed with depth < max
  placed.reserve(spec.n_targets);

  std::size_t attempts = 0;
  const std::size_t max_attempts = 200 * spec.n_targets + 1000;
  while (placed.size() < spec.n_targets) {
    if (++attempts > max_attempts)
      throw InvalidSpec("target synthesis stalled; spec is too constrained");

    bool chain = !chainable.empty() && rng.unit() < spec.chain_prob;
    std::string parent;
    std::size_t family;
    int tmpl = -1, depth = 1;
    if (chain) {
      const auto& p = placed[chainable[rng.below(chainable.size())]];
      parent = p.text;
      family = p.family;
      depth = p.depth + 1;
    } else {
      std::size_t wi = rng.below(out.dictionary.words.size());
      parent = out.dictionary.words[wi];
      tmpl = manifest.word_templates[wi];
      std::size_t home = 0;
      for (std::size_t f = 0; f < manifest.families.size(); ++f)
        if (manifest.families[f].home_template == tmpl) home = f;
      if (rng.unit() < spec.home_family_prob) {
        family = home;
      } else {
        family = rng.below(manifest.families.size() - 1);
        if (family >= home) ++family;
      }
    }

    const auto& rule = fam_rules[family][rng.below(fam_rules[family].size())];
    auto g = rules::apply(rule, parent);
    if (!g || *g == parent) continue;
    if (!out.targets.passwords.insert(*g).second) continue;

    if (depth == 1)
      ++manifest.depth1_counts[static_cast<std::size_t>(tmpl)][family];
    else
      ++manifest.chain_counts_by_depth[static_cast<std::size_t>(depth)];
    placed.push_back({*g, family, depth});
    if (depth < spec.max_chain_depth) chainable.push_back(placed.size() - 1);
  }
  out.targets.original_size = out.targets.passwords.size();
  return out;
}

std::string SynthManifest::to_json() const {
  nlohmann::json fams = nlohmann::json::array();
  for (const auto& f : families)
    fams.push_back({{"name", f.name},
                    {"home_template", f.home_template},
                    {"rules", f.rules}});
  nlohmann::json j{
      {"seed", seed},
      {"n_words", n_words},
      {"n_targets", n_targets},
      {"template_weights", template_weights},
      {"home_family_prob", home_family_prob},
      {"chain_prob", chain_prob},
      {"template_names", template_names},
      {"families", fams},
      {"noise_rules", noise_rules},
      {"ruleset_lines", ruleset_lines},
      {"word_templates", word_templates},
      {"depth1_counts", depth1_counts},
      {"chain_counts_by_depth", chain_counts_by_depth},
  };
  return j.dump(2) + "\n";
}

}  // namespace adams::corpus
