#include "adams/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "adams/errors.hpp"
#include "adams/textio.hpp"

namespace adams::engine {

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::Standard: return "standard";
    case Mode::Adaptive: return "adaptive";
    case Mode::DynamicDict: return "dynamic-dict";
    case Mode::DynamicBudget: return "dynamic-budget";
    case Mode::Adams: return "adams";
  }
  return "?";
}

std::optional<Mode> mode_from_name(std::string_view name) {
  for (Mode m : {Mode::Standard, Mode::Adaptive, Mode::DynamicDict, Mode::DynamicBudget,
                 Mode::Adams})
    if (name == mode_name(m)) return m;
  return std::nullopt;
}

void AttackConfig::validate() const {
  if (!(beta > 0.0 && beta <= 1.0)) throw InvalidConfig("beta must be in (0,1]");
  if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
  if (time_budget_s < 0) throw InvalidConfig("time budget cannot be negative");
  if (uses_budgets()) {
    if (!(clamp_min > 0.0 && clamp_min < clamp_max && clamp_max < 1.0))
      throw InvalidConfig("budget clamp must satisfy 0 < min < max < 1");
    if (beta < clamp_min || beta > clamp_max)
      throw InvalidConfig("initial beta must lie inside the budget clamp bounds");
    if (delta_scale < 0) throw InvalidConfig("delta_scale cannot be negative");
  }
  if (recycles_hits() && !remove_on_hit)
    throw InvalidConfig("hit-recycling modes require remove_on_hit (each hit enqueued once)");
}

BudgetVector BudgetVector::uniform(std::size_t n_rules, double beta) {
  BudgetVector b;
  b.beta = beta;
  b.values.assign(n_rules, beta);
  return b;
}

double BudgetVector::mass() const {
  double s = 0;
  for (double v : values) s += v;
  return s;
}

void BudgetVector::normalize(double lo, double hi) {
  auto clamp_all = [&] {
    for (double& v : values) v = std::clamp(v, lo, hi);
  };
  clamp_all();
  const double target = target_mass();
  for (int iter = 0; iter < 100; ++iter) {
    const double s = mass();
    if (std::abs(s - target) <= tolerance()) break;
    const double scale = target / s;
    for (double& v : values) v = std::clamp(v * scale, lo, hi);
  }
}

std::vector<std::uint32_t> select_compatible_rules(const std::vector<double>& scores,
                                                   double beta) {
  std::vector<std::uint32_t> out;
  const double threshold = 1.0 - beta;
  for (std::size_t r = 0; r < scores.size(); ++r)
    if (scores[r] > threshold) out.push_back(static_cast<std::uint32_t>(r));
  return out;
}

std::vector<std::uint32_t> select_compatible_rules(const std::vector<double>& scores,
                                                   const BudgetVector& budgets) {
  if (scores.size() != budgets.values.size())
    throw LengthMismatch("score row length " + std::to_string(scores.size()) +
                         " differs from budget count " +
                         std::to_string(budgets.values.size()));
  std::vector<std::uint32_t> out;
  for (std::size_t r = 0; r < scores.size(); ++r)
    if (scores[r] > 1.0 - budgets.values[r]) out.push_back(static_cast<std::uint32_t>(r));
  return out;
}

BudgetVector update_budgets(const BudgetVector& b, std::size_t hit_rule,
                            std::uint64_t guesses_so_far, const AttackConfig& config) {
  BudgetVector out = b;
  const double delta =
      config.delta_scale / static_cast<double>(std::max<std::uint64_t>(1, guesses_so_far));
  out.values.at(hit_rule) += delta;
  out.normalize(config.clamp_min, config.clamp_max);
  return out;
}

namespace {

struct QItem {
  std::string word;
  std::int64_t origin_node = -1;  // index into forest nodes; -1 = dictionary root
};

AttackReport run_engine(const corpus::Dictionary& dict, const rules::RuleSet& rs,
                        const corpus::AttackedSet& targets, const model::ModelConfig* mcfg,
                        const model::Weights* weights, const AttackConfig& config) {
  config.validate();
  if (rs.rules.empty()) throw EmptyRuleSet("attack needs a non-empty rule set");
  if (dict.words.empty()) throw EmptyCorpus("attack needs a non-empty dictionary");
  if (config.uses_model()) {
    if (!mcfg || !weights) throw InvalidConfig("this attack mode needs trained weights");
    if (static_cast<std::size_t>(mcfg->n_rules) != rs.rules.size())
      throw ShapeMismatch("model output width differs from the rule-set size");
    model::verify_fingerprint(*weights, rs);
  }

  const std::size_t n_rules = rs.rules.size();
  AttackReport rep;
  rep.mode = config.mode;
  rep.config = config;
  rep.dict_words = dict.words.size();
  rep.targets_original = targets.original_size;
  rep.n_rules = n_rules;
  rep.rule_hits.assign(n_rules, 0);
  rep.rule_selections.assign(n_rules, 0);

  corpus::StringSet pending = targets.passwords;  // mutated when remove_on_hit
  corpus::StringSet seen;
  std::deque<QItem> queue;
  for (const auto& w : dict.words) queue.push_back({w, -1});
  if (config.recycles_hits())
    for (const auto& w : dict.words) seen.insert(w);

  BudgetVector budgets = BudgetVector::uniform(n_rules, config.beta);
  std::vector<std::pair<std::uint32_t, std::uint64_t>> batch_events;
  std::vector<QItem> batch, recycled;
  std::vector<std::uint32_t> selected;
  std::string guess;

  std::uint64_t guesses = 0, hits = 0;
  bool stop = false;
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  while (!queue.empty() && !stop) {
    batch.clear();
    batch_events.clear();
    recycled.clear();
    const std::size_t take = std::min<std::size_t>(config.batch_size, queue.size());
    for (std::size_t i = 0; i < take; ++i) {
      batch.push_back(std::move(queue.front()));
      queue.pop_front();
    }

    model::CompatMatrix scores;
    if (config.uses_model()) {
      std::vector<std::string> words;
      words.reserve(batch.size());
      for (const auto& item : batch) words.push_back(item.word);
      scores = model::infer_batch(*mcfg, *weights, words);
    }

    for (std::size_t wi = 0; wi < batch.size() && !stop; ++wi) {
      const QItem& item = batch[wi];
      selected.clear();
      if (config.uses_model()) {
        const double* row = scores.scores.data() + wi * n_rules;
        if (config.uses_budgets()) {
          for (std::size_t r = 0; r < n_rules; ++r)
            if (row[r] > 1.0 - budgets.values[r])
              selected.push_back(static_cast<std::uint32_t>(r));
        } else {
          const double threshold = 1.0 - config.beta;
          for (std::size_t r = 0; r < n_rules; ++r)
            if (row[r] > threshold) selected.push_back(static_cast<std::uint32_t>(r));
        }
      } else {
        for (std::size_t r = 0; r < n_rules; ++r)
          selected.push_back(static_cast<std::uint32_t>(r));
      }

      ++rep.words_processed;
      for (std::uint32_t r : selected) ++rep.rule_selections[r];

      for (std::uint32_t r : selected) {
        if (!rules::apply_into(rs.rules[r], item.word, guess)) continue;
        ++guesses;
        if (config.record_guesses) rep.guess_stream.push_back(guess);

        auto it = pending.find(std::string_view(guess));
        if (it != pending.end()) {
          ++hits;
          ++rep.rule_hits[r];
          rep.curve.emplace_back(guesses, hits);
          rep.forest.nodes.push_back({guess, item.origin_node,
                                      item.origin_node < 0 ? item.word : std::string(), r,
                                      guesses});
          if (config.remove_on_hit) pending.erase(it);
          if (config.uses_budgets()) batch_events.emplace_back(r, guesses);
          if (config.recycles_hits() && seen.insert(guess).second)
            recycled.push_back(
                {guess, static_cast<std::int64_t>(rep.forest.nodes.size()) - 1});
        }

        if (config.max_guesses && guesses >= config.max_guesses) {
          stop = true;
          break;
        }
        if (config.time_budget_s > 0 && (guesses & 1023) == 0 &&
            elapsed() >= config.time_budget_s) {
          stop = true;
          break;
        }
      }
    }

    if (config.uses_budgets() && !batch_events.empty()) {
      for (const auto& [r, g] : batch_events)
        budgets.values[r] +=
            config.delta_scale / static_cast<double>(std::max<std::uint64_t>(1, g));
      budgets.normalize(config.clamp_min, config.clamp_max);
      rep.max_mass_error = std::max(rep.max_mass_error, budgets.mass_error());
      for (double v : budgets.values)
        if (v < config.clamp_min - 1e-12 || v > config.clamp_max + 1e-12)
          rep.clamp_ok = false;
    }
    for (auto rit = recycled.rbegin(); rit != recycled.rend(); ++rit)
      queue.push_front(std::move(*rit));
  }

  rep.total_guesses = guesses;
  rep.total_hits = hits;
  if (rep.curve.empty() || rep.curve.back().first != guesses)
    rep.curve.emplace_back(guesses, hits);
  if (config.uses_budgets()) rep.final_budgets = budgets.values;
  rep.elapsed_s = elapsed();
  return rep;
}

AttackReport run_mode(Mode mode, const corpus::Dictionary& d, const rules::RuleSet& r,
                      const corpus::AttackedSet& x, const model::ModelConfig* mc,
                      const model::Weights* w, AttackConfig config) {
  config.mode = mode;
  return run_engine(d, r, x, mc, w, config);
}

}  // namespace

AttackReport run_standard(const corpus::Dictionary& d, const rules::RuleSet& r,
                          const corpus::AttackedSet& x, const AttackConfig& c) {
  return run_mode(Mode::Standard, d, r, x, nullptr, nullptr, c);
}

AttackReport run_adaptive(const corpus::Dictionary& d, const rules::RuleSet& r,
                          const corpus::AttackedSet& x, const model::ModelConfig& mc,
                          const model::Weights& w, const AttackConfig& c) {
  return run_mode(Mode::Adaptive, d, r, x, &mc, &w, c);
}

AttackReport run_dynamic_dict(const corpus::Dictionary& d, const rules::RuleSet& r,
                              const corpus::AttackedSet& x, const AttackConfig& c) {
  return run_mode(Mode::DynamicDict, d, r, x, nullptr, nullptr, c);
}

AttackReport run_dynamic_budget(const corpus::Dictionary& d, const rules::RuleSet& r,
                                const corpus::AttackedSet& x, const model::ModelConfig& mc,
                                const model::Weights& w, const AttackConfig& c) {
  return run_mode(Mode::DynamicBudget, d, r, x, &mc, &w, c);
}

AttackReport run_adams(const corpus::Dictionary& d, const rules::RuleSet& r,
                       const corpus::AttackedSet& x, const model::ModelConfig& mc,
                       const model::Weights& w, const AttackConfig& c) {
  return run_mode(Mode::Adams, d, r, x, &mc, &w, c);
}

AttackReport run_attack(const corpus::Dictionary& d, const rules::RuleSet& r,
                        const corpus::AttackedSet& x, const model::ModelConfig* mc,
                        const model::Weights* w, const AttackConfig& c) {
  return run_engine(d, r, x, mc, w, c);
}

std::vector<ForestEdge> extract_forest(const AttackReport& report, const rules::RuleSet& rs) {
  std::vector<ForestEdge> edges;
  edges.reserve(report.forest.nodes.size());
  for (const auto& node : report.forest.nodes) {
    ForestEdge e;
    e.child = node.password;
    e.parent_is_root = node.parent_node < 0;
    e.parent = e.parent_is_root ? node.parent_word
                                : report.forest.nodes[static_cast<std::size_t>(node.parent_node)]
                                      .password;
    e.rule = rs.rules.at(node.rule_index).canonical();
    e.guess_index = node.guess_index;
    edges.push_back(std::move(e));
  }
  return edges;
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

nlohmann::json config_json(const AttackConfig& c) {
  return {{"mode", mode_name(c.mode)},
          {"beta", c.beta},
          {"delta_scale", c.delta_scale},
          {"clamp_min", c.clamp_min},
          {"clamp_max", c.clamp_max},
          {"batch_size", c.batch_size},
          {"max_guesses", c.max_guesses},
          {"time_budget_s", c.time_budget_s},
          {"remove_on_hit", c.remove_on_hit},
          {"seed", c.seed}};
}

void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << body;
  if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace

void save_report(const AttackReport& rep, const rules::RuleSet& rs, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::string base = dir + "/";

  nlohmann::json j{{"mode", mode_name(rep.mode)},
                   {"config", config_json(rep.config)},
                   {"total_guesses", rep.total_guesses},
                   {"total_hits", rep.total_hits},
                   {"hit_fraction", rep.hit_fraction()},
                   {"words_processed", rep.words_processed},
                   {"dict_words", rep.dict_words},
                   {"targets_original", rep.targets_original},
                   {"n_rules", rep.n_rules}};
  if (!rep.final_budgets.empty()) {
    j["budgets"] = {{"final", rep.final_budgets},
                    {"max_mass_error", rep.max_mass_error},
                    {"clamp_ok", rep.clamp_ok}};
  }
  write_file(base + "report.json", j.dump(2) + "\n");

  std::string curve = "guess_number,hits,fraction\n";
  const double denom = rep.targets_original ? static_cast<double>(rep.targets_original) : 1.0;
  for (const auto& [g, h] : rep.curve)
    curve += std::to_string(g) + ',' + std::to_string(h) + ',' +
             textio::g9(static_cast<double>(h) / denom) + '\n';
  write_file(base + "curve.csv", curve);

  std::string rstats = "rule_text,selections,hits\n";
  for (std::size_t r = 0; r < rep.n_rules; ++r)
    rstats += csv_field(rs.rules[r].canonical()) + ',' + std::to_string(rep.rule_selections[r]) +
              ',' + std::to_string(rep.rule_hits[r]) + '\n';
  write_file(base + "rules.csv", rstats);

  std::string forest = "child,parent,rule,guess_index\n";
  for (const auto& e : extract_forest(rep, rs))
    forest += csv_field(e.child) + ',' + csv_field(e.parent) + ',' + csv_field(e.rule) + ',' +
              std::to_string(e.guess_index) + '\n';
  write_file(base + "forest.csv", forest);
}

AttackReport load_report(const std::string& dir) {
  const std::string jpath = dir + "/report.json";
  std::ifstream in(jpath, std::ios::binary);
  if (!in) throw IoError("cannot open '" + jpath + "' for reading");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFile("'" + jpath + "': " + e.what());
  }
  AttackReport rep;
  try {
    auto mode = mode_from_name(j.at("mode").get<std::string>());
    if (!mode) throw CorruptFile("'" + jpath + "' has an unknown mode");
    rep.mode = *mode;
    rep.config.mode = *mode;
    const auto& c = j.at("config");
    rep.config.beta = c.at("beta").get<double>();
    rep.config.delta_scale = c.at("delta_scale").get<double>();
    rep.config.clamp_min = c.at("clamp_min").get<double>();
    rep.config.clamp_max = c.at("clamp_max").get<double>();
    rep.config.batch_size = c.at("batch_size").get<std::size_t>();
    rep.config.max_guesses = c.at("max_guesses").get<std::uint64_t>();
    rep.config.remove_on_hit = c.at("remove_on_hit").get<bool>();
    rep.config.seed = c.at("seed").get<std::uint64_t>();
    rep.total_guesses = j.at("total_guesses").get<std::uint64_t>();
    rep.total_hits = j.at("total_hits").get<std::uint64_t>();
    rep.words_processed = j.at("words_processed").get<std::uint64_t>();
    rep.dict_words = j.at("dict_words").get<std::size_t>();
    rep.targets_original = j.at("targets_original").get<std::size_t>();
    rep.n_rules = j.at("n_rules").get<std::size_t>();
    if (j.contains("budgets")) {
      rep.final_budgets = j["budgets"].at("final").get<std::vector<double>>();
      rep.max_mass_error = j["budgets"].at("max_mass_error").get<double>();
      rep.clamp_ok = j["budgets"].at("clamp_ok").get<bool>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFile("'" + jpath + "' is missing fields: " + e.what());
  }

  const std::string cpath = dir + "/curve.csv";
  std::ifstream cin_(cpath, std::ios::binary);
  if (!cin_) throw IoError("cannot open '" + cpath + "' for reading");
  std::string line;
  std::getline(cin_, line);  // header
  while (std::getline(cin_, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw CorruptFile("'" + cpath + "' has a malformed row");
    rep.curve.emplace_back(std::stoull(line.substr(0, c1)),
                           std::stoull(line.substr(c1 + 1, c2 - c1 - 1)));
  }
  return rep;
}

}  // namespace adams::engine
