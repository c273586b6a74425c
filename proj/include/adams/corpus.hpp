#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "adams/rule_lang.hpp"

namespace adams::corpus {

struct StringHash {
  using is_transparent = void;
  std::size_t operator()(std::string_view s) const {
    return std::hash<std::string_view>{}(s);
  }
};

using StringSet = std::unordered_set<std::string, StringHash, std::equal_to<>>;

/// Ordered, deduplicated wordlist. Entries are printable ASCII, lengths
/// 1..=32; file order is preserved (first occurrence wins).
struct Dictionary {
  std::vector<std::string> words;
  std::string source_name;

  std::size_t size() const { return words.size(); }
};

/// The attacked set of passwords. Membership is exact string equality;
/// original_size is fixed at load time and used for hit fractions.
struct AttackedSet {
  StringSet passwords;
  std::size_t original_size = 0;
};

struct LoadStats {
  std::size_t dropped_non_ascii = 0;
  std::size_t dropped_overlong = 0;
  std::size_t dropped_duplicate = 0;
  std::size_t dropped_empty = 0;
  std::size_t total_dropped() const {
    return dropped_non_ascii + dropped_overlong + dropped_duplicate + dropped_empty;
  }
};

Dictionary dictionary_from_lines(const std::vector<std::string>& lines,
                                 std::string source_name, LoadStats* stats = nullptr);
AttackedSet targets_from_lines(const std::vector<std::string>& lines,
                               LoadStats* stats = nullptr);

/// Newline-separated file loaders. Non-ASCII and overlong lines are dropped
/// with counters; an empty result raises EmptyCorpus.
Dictionary load_dictionary(const std::string& path, LoadStats* stats = nullptr);
AttackedSet load_targets(const std::string& path, LoadStats* stats = nullptr);

/// Unique entries ordered by descending occurrence count, ties broken
/// lexicographically ascending.
Dictionary sort_by_frequency(const std::vector<std::string>& entries);

// ---------------------------------------------------------------------------
// Synthetic corpus
//
// Base words are drawn from four templates (syllabic names, short random
// strings, digit strings, letter+digit mixes). Targets are manglings of base
// words where each template strongly prefers one mangling family, so the
// word/rule conditional structure is present and learnable. A fraction of
// targets are chained: manglings of earlier targets, reachable only by
// recycling hits.
// ---------------------------------------------------------------------------

inline constexpr int kNumTemplates = 4;

struct SynthSpec {
  std::uint64_t seed = 1;
  std::size_t n_words = 1000;
  std::size_t n_targets = 4000;
  // Per-template probabilities, must sum to 1 within 1e-9.
  std::vector<double> template_weights = {0.35, 0.2, 0.2, 0.25};
  double home_family_prob = 0.95;
  double chain_prob = 0.3;
  int max_chain_depth = 3;
};

struct PlantedFamily {
  std::string name;
  int home_template = 0;
  std::vector<std::string> rules;
};

struct SynthManifest {
  std::uint64_t seed = 0;
  std::size_t n_words = 0;
  std::size_t n_targets = 0;
  std::vector<double> template_weights;
  double home_family_prob = 0;
  double chain_prob = 0;
  std::vector<std::string> template_names;
  std::vector<PlantedFamily> families;
  std::vector<std::string> noise_rules;
  // All planted rules in attack order: family rules first, then noise.
  std::vector<std::string> ruleset_lines;
  std::vector<int> word_templates;  // template index per dictionary word
  // depth-1 target counts, indexed [template][family]
  std::vector<std::vector<std::size_t>> depth1_counts;
  std::vector<std::size_t> chain_counts_by_depth;  // index = depth, >= 2

  std::string to_json() const;
};

struct SynthResult {
  Dictionary dictionary;
  AttackedSet targets;
  SynthManifest manifest;
};

/// Deterministic under spec.seed: two calls with equal specs produce
/// byte-identical dictionaries, target sets, and manifests.
SynthResult synthesize_corpus(const SynthSpec& spec);

}  // namespace adams::corpus
