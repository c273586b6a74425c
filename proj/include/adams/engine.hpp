#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "adams/corpus.hpp"
#include "adams/model.hpp"
#include "adams/rule_lang.hpp"

namespace adams::engine {

enum class Mode { Standard, Adaptive, DynamicDict, DynamicBudget, Adams };

const char* mode_name(Mode m);
std::optional<Mode> mode_from_name(std::string_view name);

struct AttackConfig {
  Mode mode = Mode::Standard;
  double beta = 1.0;            // initial budget, (0,1]
  double delta_scale = 1.0;     // hit increment numerator (delta = scale/guesses)
  double clamp_min = 0.05;      // per-rule budget bounds
  double clamp_max = 0.99;
  std::size_t batch_size = 4096;
  std::uint64_t max_guesses = 0;  // 0 = uncapped
  double time_budget_s = 0;       // 0 = uncapped; used by the benchmark
  bool remove_on_hit = true;
  bool record_guesses = false;  // capture the emitted stream (tests)
  std::uint64_t seed = 1;       // echoed into reports; attacks are deterministic

  bool uses_model() const {
    return mode == Mode::Adaptive || mode == Mode::DynamicBudget || mode == Mode::Adams;
  }
  bool uses_budgets() const { return mode == Mode::DynamicBudget || mode == Mode::Adams; }
  bool recycles_hits() const { return mode == Mode::DynamicDict || mode == Mode::Adams; }
  void validate() const;  // throws InvalidConfig
};

/// Per-rule budgets B_r. The attack-wide mass sum(B) is pinned to |R|·beta:
/// every update is followed by clamping and rescaling so the invariant
/// |sum(B) - |R|·beta| <= 1e-6·|R| holds (see normalize).
struct BudgetVector {
  std::vector<double> values;
  double beta = 1.0;

  static BudgetVector uniform(std::size_t n_rules, double beta);
  double target_mass() const { return beta * static_cast<double>(values.size()); }
  double mass() const;
  double mass_error() const { return std::abs(mass() - target_mass()); }
  double tolerance() const { return 1e-6 * static_cast<double>(values.size()); }

  /// Clamp every entry to [lo, hi], then rescale toward the target mass and
  /// re-clamp, repeating while clamping keeps pulling the sum off target
  /// (the first pass is the whole story unless entries pin at the bounds).
  void normalize(double lo, double hi);
};

/// One hit. Parent is either a dictionary word (parent_node < 0) or an
/// earlier node in the forest (recycled hit).
struct HitNode {
  std::string password;
  std::int64_t parent_node = -1;
  std::string parent_word;  // set when parent_node < 0
  std::uint32_t rule_index = 0;
  std::uint64_t guess_index = 0;  // 1-based emitted-guess counter at the hit
};

struct HitsForest {
  std::vector<HitNode> nodes;
};

struct ForestEdge {
  std::string child;
  std::string parent;
  std::string rule;
  std::uint64_t guess_index = 0;
  bool parent_is_root = false;
};

struct AttackReport {
  Mode mode = Mode::Standard;
  AttackConfig config;
  std::uint64_t total_guesses = 0;
  std::uint64_t total_hits = 0;
  std::uint64_t words_processed = 0;
  std::size_t dict_words = 0;
  std::size_t targets_original = 0;
  std::size_t n_rules = 0;
  // (guess_number, cumulative hits) recorded at each hit, plus a final point.
  std::vector<std::pair<std::uint64_t, std::uint64_t>> curve;
  std::vector<std::uint64_t> rule_hits;
  std::vector<std::uint64_t> rule_selections;
  HitsForest forest;
  std::vector<double> final_budgets;  // budget modes only
  double max_mass_error = 0;          // worst post-normalization deviation seen
  bool clamp_ok = true;               // budgets stayed inside bounds
  double elapsed_s = 0;
  std::vector<std::string> guess_stream;  // only when config.record_guesses

  double hit_fraction() const {
    return targets_original ? static_cast<double>(total_hits) / static_cast<double>(targets_original)
                            : 0.0;
  }
};

/// Rules whose score strictly exceeds (1 - budget), in rule-set order.
std::vector<std::uint32_t> select_compatible_rules(const std::vector<double>& scores,
                                                   double beta);
std::vector<std::uint32_t> select_compatible_rules(const std::vector<double>& scores,
                                                   const BudgetVector& budgets);

/// Single-hit budget update: B_r += delta_scale/max(1, guesses_so_far), then
/// normalize. The engine applies the batched equivalent once per word batch.
BudgetVector update_budgets(const BudgetVector& b, std::size_t hit_rule,
                            std::uint64_t guesses_so_far, const AttackConfig& config);

AttackReport run_standard(const corpus::Dictionary& dict, const rules::RuleSet& rs,
                          const corpus::AttackedSet& targets, const AttackConfig& config);
AttackReport run_adaptive(const corpus::Dictionary& dict, const rules::RuleSet& rs,
                          const corpus::AttackedSet& targets, const model::ModelConfig& mcfg,
                          const model::Weights& weights, const AttackConfig& config);
AttackReport run_dynamic_dict(const corpus::Dictionary& dict, const rules::RuleSet& rs,
                              const corpus::AttackedSet& targets, const AttackConfig& config);
AttackReport run_dynamic_budget(const corpus::Dictionary& dict, const rules::RuleSet& rs,
                                const corpus::AttackedSet& targets,
                                const model::ModelConfig& mcfg, const model::Weights& weights,
                                const AttackConfig& config);
AttackReport run_adams(const corpus::Dictionary& dict, const rules::RuleSet& rs,
                       const corpus::AttackedSet& targets, const model::ModelConfig& mcfg,
                       const model::Weights& weights, const AttackConfig& config);

/// Mode dispatch; model may be null for modes that do not use it.
AttackReport run_attack(const corpus::Dictionary& dict, const rules::RuleSet& rs,
                        const corpus::AttackedSet& targets, const model::ModelConfig* mcfg,
                        const model::Weights* weights, const AttackConfig& config);

/// Flattened (child, parent, rule, guess) rows; roots are dictionary words.
std::vector<ForestEdge> extract_forest(const AttackReport& report, const rules::RuleSet& rs);

/// Writes report.json, curve.csv, rules.csv and forest.csv into `dir`.
void save_report(const AttackReport& report, const rules::RuleSet& rs, const std::string& dir);

/// Reads back what compare/eval need: totals, curve, config echo.
AttackReport load_report(const std::string& dir);

}  // namespace adams::engine
