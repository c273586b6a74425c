#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "adams/corpus.hpp"
#include "adams/rule_lang.hpp"

namespace adams::labels {

/// Multi-label training grid: labels[i*n_rules + j] is 1 iff rule j turns
/// word i into a member of the attacked set (rejections and conditional
/// identities count as 0).
struct TrainingSet {
  std::vector<std::string> words;
  std::size_t n_rules = 0;
  std::vector<std::uint8_t> labels;  // row-major, words.size() x n_rules
  std::uint64_t ruleset_fingerprint = 0;

  std::size_t rows() const { return words.size(); }
  std::uint8_t at(std::size_t word, std::size_t rule) const {
    return labels[word * n_rules + rule];
  }
  std::size_t positives() const;
  double p_bar() const;
};

/// Simulates the attack of R over W against X_A and records hits. X_A is not
/// consumed: every (word, rule) pair is tested against the full set.
TrainingSet generate_labels(const corpus::Dictionary& words, const rules::RuleSet& ruleset,
                            const corpus::AttackedSet& targets);

/// Seeded row shuffle, then the first floor(val_fraction * rows) rows become
/// the validation set. Throws TooSmall if either side would be empty.
std::pair<TrainingSet, TrainingSet> split(const TrainingSet& ts, double val_fraction,
                                          std::uint64_t seed);

/// Binary round-trip (packed bit rows). p_bar is recomputed on load.
void save_training_set(const TrainingSet& ts, const std::string& path);
TrainingSet load_training_set(const std::string& path);

/// Sparse "word_index,rule_index" CSV of the set bits, for inspection.
void export_sparse_csv(const TrainingSet& ts, const std::string& path);

}  // namespace adams::labels
