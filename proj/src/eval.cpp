#include "adams/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "adams/errors.hpp"
#include "adams/textio.hpp"

namespace adams::eval {

GuessCurve build_curve(const engine::AttackReport& report) {
  GuessCurve c;
  const double denom =
      report.targets_original ? static_cast<double>(report.targets_original) : 1.0;
  c.points.reserve(report.curve.size());
  for (const auto& [g, h] : report.curve)
    c.points.push_back({g, h, static_cast<double>(h) / denom});
  return c;
}

double beta_success_rate(const engine::AttackReport& report, std::uint64_t guess_budget) {
  std::uint64_t best_hits = 0;
  for (const auto& [g, h] : report.curve) {
    if (g > guess_budget) break;
    best_hits = h;
  }
  const double denom =
      report.targets_original ? static_cast<double>(report.targets_original) : 1.0;
  return static_cast<double>(best_hits) / denom;
}

double auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
  if (scores.size() != labels.size())
    throw LengthMismatch("scores and labels differ in length");
  std::size_t n_pos = 0;
  for (std::uint8_t y : labels) n_pos += y;
  const std::size_t n = scores.size();
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw DegenerateLabels("AUC needs both classes present");

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Midrank ties: equal scores share the average of their rank range.
  double pos_rank_sum = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t t = i; t <= j; ++t)
      if (labels[idx[t]]) pos_rank_sum += midrank;
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

RuleHistogram rule_hit_histogram(const engine::AttackReport& report) {
  RuleHistogram h;
  h.counts = report.rule_hits;
  h.normalization = "fraction-of-total";
  std::uint64_t total = 0;
  for (auto c : h.counts) total += c;
  h.normalized.assign(h.counts.size(), 0.0);
  if (total)
    for (std::size_t r = 0; r < h.counts.size(); ++r)
      h.normalized[r] = static_cast<double>(h.counts[r]) / static_cast<double>(total);
  return h;
}

RuleHistogram rule_selection_frequency(const engine::AttackReport& report) {
  RuleHistogram h;
  h.counts = report.rule_selections;
  h.normalization = "per-word";
  h.normalized.assign(h.counts.size(), 0.0);
  if (report.words_processed)
    for (std::size_t r = 0; r < h.counts.size(); ++r)
      h.normalized[r] =
          static_cast<double>(h.counts[r]) / static_cast<double>(report.words_processed);
  return h;
}

std::string compare_runs(const std::vector<engine::AttackReport>& runs,
                         const std::vector<std::string>& names) {
  if (runs.size() < 2) throw InvalidConfig("compare needs at least two runs");
  if (names.size() != runs.size())
    throw LengthMismatch("one name per run is required");

  std::uint64_t gmax = 1;
  for (const auto& r : runs) gmax = std::max(gmax, r.total_guesses);

  // Log-spaced grid, 10 points per decade, always covering 1 and gmax.
  std::vector<std::uint64_t> grid;
  for (int i = 0;; ++i) {
    const auto g = static_cast<std::uint64_t>(
        std::llround(std::pow(10.0, static_cast<double>(i) / 10.0)));
    if (g >= gmax) break;
    if (grid.empty() || g > grid.back()) grid.push_back(g);
  }
  grid.push_back(gmax);

  std::string out = "guesses";
  for (const auto& name : names) out += ',' + name;
  out += '\n';
  for (std::uint64_t g : grid) {
    out += std::to_string(g);
    for (const auto& r : runs) out += ',' + textio::g9(beta_success_rate(r, g));
    out += '\n';
  }
  return out;
}

const BenchEntry* BenchResult::find(engine::Mode m) const {
  for (const auto& e : entries)
    if (e.mode == m) return &e;
  return nullptr;
}

BenchResult bench(const corpus::Dictionary& dict, const rules::RuleSet& rs,
                  const corpus::AttackedSet& targets, const std::vector<engine::Mode>& modes,
                  double seconds, const model::ModelConfig* mcfg,
                  const model::Weights* weights) {
  if (modes.empty()) throw InvalidConfig("bench needs at least one mode");
  if (!(seconds > 0)) throw InvalidConfig("bench duration must be positive");

  BenchResult result;
  for (engine::Mode m : modes) {
    engine::AttackConfig cfg;
    cfg.mode = m;
    cfg.beta = cfg.uses_budgets() ? 0.9 : 1.0;
    cfg.time_budget_s = seconds;
    engine::AttackReport rep = engine::run_attack(dict, rs, targets, mcfg, weights, cfg);
    if (rep.elapsed_s < seconds * 0.5)
      throw CorpusTooSmall("corpus exhausted after " + textio::g9(rep.elapsed_s) +
                           " s; benchmark asked for " + textio::g9(seconds) + " s of " +
                           engine::mode_name(m));
    BenchEntry e;
    e.mode = m;
    e.guesses = rep.total_guesses;
    e.seconds = rep.elapsed_s;
    e.guesses_per_second =
        rep.elapsed_s > 0 ? static_cast<double>(rep.total_guesses) / rep.elapsed_s : 0.0;
    result.entries.push_back(e);
  }
  const BenchEntry* std_e = result.find(engine::Mode::Standard);
  const BenchEntry* ada_e = result.find(engine::Mode::Adaptive);
  if (std_e && ada_e && std_e->guesses_per_second > 0)
    result.adaptive_over_standard = ada_e->guesses_per_second / std_e->guesses_per_second;
  return result;
}

}  // namespace adams::eval
