#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adams/corpus.hpp"
#include "adams/engine.hpp"

namespace adams::eval {

struct CurvePoint {
  std::uint64_t guesses = 0;
  std::uint64_t hits = 0;
  double fraction = 0;
};

struct GuessCurve {
  std::vector<CurvePoint> points;  // strictly increasing guess numbers
};

GuessCurve build_curve(const engine::AttackReport& report);

/// Fraction of the attacked set matched within the first `guess_budget`
/// emitted guesses (step interpolation on the recorded curve).
double beta_success_rate(const engine::AttackReport& report, std::uint64_t guess_budget);

/// Micro ROC-AUC with midrank tie handling. Throws DegenerateLabels unless
/// both classes are present.
double auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels);

struct RuleHistogram {
  std::vector<std::uint64_t> counts;
  std::vector<double> normalized;
  std::string normalization;  // "fraction-of-total" or "per-word"
};

/// Per-rule hit mass; normalized entries sum to 1 when any hit exists.
RuleHistogram rule_hit_histogram(const engine::AttackReport& report);
/// Per-rule selection frequency: selections / words processed.
RuleHistogram rule_selection_frequency(const engine::AttackReport& report);

/// Aligned hit-fraction table over a shared log-spaced guess grid
/// (10 points per decade, covering [1, max guesses]). Step interpolation.
std::string compare_runs(const std::vector<engine::AttackReport>& runs,
                         const std::vector<std::string>& names);

struct BenchEntry {
  engine::Mode mode = engine::Mode::Standard;
  std::uint64_t guesses = 0;
  double seconds = 0;
  double guesses_per_second = 0;
};

struct BenchResult {
  std::vector<BenchEntry> entries;
  double adaptive_over_standard = 0;  // 0 when either mode was not requested

  const BenchEntry* find(engine::Mode m) const;
};

/// Times each requested mode for ~`seconds` of attack work (membership
/// checking included). Throws CorpusTooSmall if the corpus is exhausted
/// before half the requested duration.
BenchResult bench(const corpus::Dictionary& dict, const rules::RuleSet& rs,
                  const corpus::AttackedSet& targets, const std::vector<engine::Mode>& modes,
                  double seconds, const model::ModelConfig* mcfg,
                  const model::Weights* weights);

}  // namespace adams::eval
