#include "adams/labels.hpp"

#include <fstream>
#include <random>

#include "adams/binio.hpp"
#include "adams/errors.hpp"

namespace adams::labels {

std::size_t TrainingSet::positives() const {
  std::size_t n = 0;
  for (std::uint8_t b : labels) n += b;
  return n;
}

double TrainingSet::p_bar() const {
  if (labels.empty()) return 0.0;
  return static_cast<double>(positives()) / static_cast<double>(labels.size());
}

TrainingSet generate_labels(const corpus::Dictionary& words, const rules::RuleSet& ruleset,
                            const corpus::AttackedSet& targets) {
  if (ruleset.rules.empty()) throw EmptyRuleSet("cannot label against an empty rule set");
  if (words.words.empty()) throw EmptyCorpus("cannot label an empty dictionary");
  if (targets.passwords.empty()) throw EmptyCorpus("cannot label against an empty target set");
  for (const auto& r : ruleset.rules)
    if (r.is_identity())
      throw InvalidConfig("rule set still contains the passthrough rule; parse with drop_identity");

  TrainingSet ts;
  ts.words = words.words;
  ts.n_rules = ruleset.rules.size();
  ts.ruleset_fingerprint = ruleset.fingerprint();
  ts.labels.assign(ts.words.size() * ts.n_rules, 0);

  std::string guess;
  for (std::size_t i = 0; i < ts.words.size(); ++i) {
    const std::string& w = ts.words[i];
    std::uint8_t* row = ts.labels.data() + i * ts.n_rules;
    for (std::size_t j = 0; j < ts.n_rules; ++j) {
      if (!rules::apply_into(ruleset.rules[j], w, guess)) continue;
      if (guess == w) continue;  // conditional identity: the rule did nothing here
      if (targets.passwords.contains(std::string_view(guess))) row[j] = 1;
    }
  }
  return ts;
}

std::pair<TrainingSet, TrainingSet> split(const TrainingSet& ts, double val_fraction,
                                          std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw InvalidConfig("val_fraction must be strictly between 0 and 1");
  const std::size_t n = ts.rows();
  const auto val_n = static_cast<std::size_t>(val_fraction * static_cast<double>(n));
  if (val_n == 0 || val_n >= n)
    throw TooSmall("training set with " + std::to_string(n) +
                   " rows cannot be split at fraction " + std::to_string(val_fraction));

  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 gen(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    std::size_t j = gen() % (i + 1);
    std::swap(idx[i], idx[j]);
  }

  auto take = [&](std::size_t lo, std::size_t hi) {
    TrainingSet part;
    part.n_rules = ts.n_rules;
    part.ruleset_fingerprint = ts.ruleset_fingerprint;
    part.words.reserve(hi - lo);
    part.labels.reserve((hi - lo) * ts.n_rules);
    for (std::size_t k = lo; k < hi; ++k) {
      part.words.push_back(ts.words[idx[k]]);
      const std::uint8_t* row = ts.labels.data() + idx[k] * ts.n_rules;
      part.labels.insert(part.labels.end(), row, row + ts.n_rules);
    }
    return part;
  };
  return {take(val_n, n), take(0, val_n)};
}

namespace {
constexpr char kMagic[4] = {'A', 'D', 'M', 'T'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_training_set(const TrainingSet& ts, const std::string& path) {
  binio::Writer w(path);
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u64(ts.rows());
  w.u64(ts.n_rules);
  w.u64(ts.ruleset_fingerprint);
  for (const auto& word : ts.words) w.str8(word);
  const std::size_t row_bytes = (ts.n_rules + 7) / 8;
  std::vector<std::uint8_t> packed(row_bytes);
  for (std::size_t i = 0; i < ts.rows(); ++i) {
    std::fill(packed.begin(), packed.end(), 0);
    for (std::size_t j = 0; j < ts.n_rules; ++j)
      if (ts.at(i, j)) packed[j / 8] |= static_cast<std::uint8_t>(1u << (j % 8));
    w.bytes(packed.data(), packed.size());
  }
  w.close();
}

TrainingSet load_training_set(const std::string& path) {
  binio::Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw CorruptFile("'" + path + "' is not a training-set file");
  if (std::uint32_t v = r.u32(); v != kVersion)
    throw VersionMismatch("training-set file version " + std::to_string(v) +
                          ", expected " + std::to_string(kVersion));
  TrainingSet ts;
  const std::uint64_t n_words = r.u64();
  ts.n_rules = r.u64();
  ts.ruleset_fingerprint = r.u64();
  ts.words.reserve(n_words);
  for (std::uint64_t i = 0; i < n_words; ++i) ts.words.push_back(r.str8());
  const std::size_t row_bytes = (ts.n_rules + 7) / 8;
  ts.labels.assign(n_words * ts.n_rules, 0);
  std::vector<std::uint8_t> packed(row_bytes);
  for (std::uint64_t i = 0; i < n_words; ++i) {
    r.bytes(packed.data(), packed.size());
    for (std::size_t j = 0; j < ts.n_rules; ++j)
      ts.labels[i * ts.n_rules + j] = (packed[j / 8] >> (j % 8)) & 1u;
  }
  if (!r.at_end()) throw CorruptFile("'" + path + "' has trailing bytes");
  return ts;
}

void export_sparse_csv(const TrainingSet& ts, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "word_index,rule_index\n";
  for (std::size_t i = 0; i < ts.rows(); ++i)
    for (std::size_t j = 0; j < ts.n_rules; ++j)
      if (ts.at(i, j)) out << i << ',' << j << '\n';
  if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace adams::labels
