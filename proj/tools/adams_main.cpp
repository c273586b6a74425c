#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <tuple>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "adams/corpus.hpp"
#include "adams/engine.hpp"
#include "adams/errors.hpp"
#include "adams/eval.hpp"
#include "adams/labels.hpp"
#include "adams/manifest.hpp"
#include "adams/model.hpp"
#include "adams/rule_lang.hpp"
#include "adams/textio.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw adams::IoError("cannot open '" + path + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw adams::IoError("cannot open '" + path + "' for writing");
  out << body;
  if (!out) throw adams::IoError("failed writing '" + path + "'");
}

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  json j;
  try {
    j = json::parse(slurp(path));
  } catch (const json::exception& e) {
    throw adams::InvalidConfig("config file '" + path + "': " + e.what());
  }
  if (!j.is_object()) throw adams::InvalidConfig("config file must hold a JSON object");
  return j;
}

// JSON config supplies defaults; explicit flags win.
struct Overlay {
  CLI::App* sub;
  json j;
  template <class T>
  void operator()(const std::string& flag, T& var) const {
    const std::string key = flag.substr(2);
    if (j.contains(key) && sub->count(flag) == 0) {
      try {
        var = j.at(key).get<T>();
      } catch (const json::exception& e) {
        throw adams::InvalidConfig("config key '" + key + "': " + e.what());
      }
    }
  }
};

adams::rules::RuleSet load_rules(const std::string& path) {
  auto parsed = adams::rules::parse_ruleset(slurp(path), /*drop_identity=*/true, path);
  for (const auto& skip : parsed.skipped)
    std::cerr << "warning: " << path << ':' << skip.line_number << ": skipped '" << skip.text
              << "': " << skip.error.message() << '\n';
  if (parsed.set.rules.empty())
    throw adams::EmptyRuleSet("'" + path + "' contains no usable rules");
  return std::move(parsed.set);
}

adams::manifest::RunManifest start_manifest(const std::string& subcommand,
                                            std::uint64_t seed, json config) {
  adams::manifest::RunManifest m;
  m.subcommand = subcommand;
  m.seed = seed;
  m.resolved_config = std::move(config);
  m.started_at = adams::manifest::now_utc_iso8601();
  return m;
}

void add_synth(CLI::App& app) {
  struct SynthOpts {
    std::uint64_t seed = 1;
    std::size_t words = 1000, targets = 4000;
    double home_prob = 0.95, chain_prob = 0.3;
    std::vector<double> weights;
    std::string out, config;
  };
  auto o = std::make_shared<SynthOpts>();
  auto* sub = app.add_subcommand("synth", "Generate a seeded synthetic corpus");
  sub->add_option("--seed", o->seed, "RNG seed");
  sub->add_option("--words", o->words, "base dictionary size");
  sub->add_option("--targets", o->targets, "attacked-set size");
  sub->add_option("--home-prob", o->home_prob, "probability a target uses its template's home family");
  sub->add_option("--chain-prob", o->chain_prob, "probability a target mangles an earlier target");
  sub->add_option("--template-weights", o->weights, "four template probabilities")
      ->delimiter(',');
  sub->add_option("--out", o->out, "output directory")->required();
  sub->add_option("--config", o->config, "JSON config file (flags win)");
  sub->callback([o, sub] {
    Overlay ov{sub, load_config_file(o->config)};
    ov("--seed", o->seed);
    ov("--words", o->words);
    ov("--targets", o->targets);
    ov("--home-prob", o->home_prob);
    ov("--chain-prob", o->chain_prob);
    ov("--template-weights", o->weights);

    adams::corpus::SynthSpec spec;
    spec.seed = o->seed;
    spec.n_words = o->words;
    spec.n_targets = o->targets;
    spec.home_family_prob = o->home_prob;
    spec.chain_prob = o->chain_prob;
    if (!o->weights.empty()) spec.template_weights = o->weights;

    auto man = start_manifest("synth", spec.seed,
                              json{{"seed", spec.seed},
                                   {"words", spec.n_words},
                                   {"targets", spec.n_targets},
                                   {"home_prob", spec.home_family_prob},
                                   {"chain_prob", spec.chain_prob},
                                   {"template_weights", spec.template_weights},
                                   {"out", o->out}});
    const auto t0 = std::chrono::steady_clock::now();
    auto res = adams::corpus::synthesize_corpus(spec);

    fs::create_directories(o->out);
    std::string dict_body;
    for (const auto& w : res.dictionary.words) dict_body += w + '\n';
    spit(o->out + "/dictionary.txt", dict_body);

    std::vector<std::string> sorted_targets(res.targets.passwords.begin(),
                                            res.targets.passwords.end());
    std::sort(sorted_targets.begin(), sorted_targets.end());
    std::string target_body;
    for (const auto& t : sorted_targets) target_body += t + '\n';
    spit(o->out + "/targets.txt", target_body);

    std::string rules_body;
    for (const auto& r : res.manifest.ruleset_lines) rules_body += r + '\n';
    spit(o->out + "/rules.txt", rules_body);

    spit(o->out + "/manifest.json", res.manifest.to_json());
    man.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    man.write(o->out + "/run_manifest.json");

    std::cout << "synth: " << res.dictionary.size() << " words, "
              << res.targets.original_size << " targets, "
              << res.manifest.ruleset_lines.size() << " planted rules -> " << o->out << '\n';
  });
}

void add_label(CLI::App& app) {
  struct LabelOpts {
    std::string dict, rules, targets, out, csv, config;
  };
  auto o = std::make_shared<LabelOpts>();
  auto* sub = app.add_subcommand("label", "Label a dictionary by simulated attack");
  sub->add_option("--dict", o->dict, "dictionary file")->required();
  sub->add_option("--rules", o->rules, "rule file")->required();
  sub->add_option("--targets", o->targets, "attacked-set file")->required();
  sub->add_option("--out", o->out, "training-set output file")->required();
  sub->add_option("--csv", o->csv, "also export sparse (word,rule) CSV here");
  sub->add_option("--config", o->config, "JSON config file (flags win)");
  sub->callback([o, sub] {
    Overlay ov{sub, load_config_file(o->config)};
    ov("--csv", o->csv);

    auto man = start_manifest("label", 0,
                              json{{"dict", o->dict},
                                   {"rules", o->rules},
                                   {"targets", o->targets},
                                   {"out", o->out}});
    man.add_input(o->dict);
    man.add_input(o->rules);
    man.add_input(o->targets);
    const auto t0 = std::chrono::steady_clock::now();

    auto dict = adams::corpus::load_dictionary(o->dict);
    auto rs = load_rules(o->rules);
    auto targets = adams::corpus::load_targets(o->targets);
    auto ts = adams::labels::generate_labels(dict, rs, targets);
    adams::labels::save_training_set(ts, o->out);
    if (!o->csv.empty()) adams::labels::export_sparse_csv(ts, o->csv);

    man.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    man.write(o->out + ".run_manifest.json");
    std::cout << "label: " << ts.rows() << " words x " << ts.n_rules << " rules, "
              << ts.positives() << " positives, p_bar " << adams::textio::g9(ts.p_bar())
              << " -> " << o->out << '\n';
  });
}

void add_train(CLI::App& app) {
  struct TrainOpts {
    std::string train_set, out, log, config;
    int depth = 3, filters = 64, kernel = 5, bneck = 2, embed = 128;
    double lr = 1e-3, gamma = 2.0, alpha = -1.0, val_fraction = 0.1;
    std::size_t batch = 512;
    int epochs = 30, patience = 3;
    std::uint64_t seed = 1;
  };
  auto o = std::make_shared<TrainOpts>();
  auto* sub = app.add_subcommand("train", "Train the word/rule compatibility model");
  sub->add_option("--train-set", o->train_set, "training-set file from `label`")->required();
  sub->add_option("--out", o->out, "weight output file")->required();
  sub->add_option("--log", o->log, "JSON-lines training log (default <out>.log.jsonl)");
  sub->add_option("--depth", o->depth, "residual blocks");
  sub->add_option("--filters", o->filters, "convolution channels");
  sub->add_option("--kernel", o->kernel, "convolution kernel (odd)");
  sub->add_option("--bneck", o->bneck, "bottleneck divisor");
  sub->add_option("--embed-dim", o->embed, "character embedding width");
  sub->add_option("--lr", o->lr, "Adam learning rate");
  sub->add_option("--gamma", o->gamma, "focal focusing exponent");
  sub->add_option("--alpha", o->alpha, "negative-class weight (default: derived from p_bar)");
  sub->add_option("--val-fraction", o->val_fraction, "validation split fraction");
  sub->add_option("--batch", o->batch, "mini-batch size");
  sub->add_option("--epochs", o->epochs, "epoch cap");
  sub->add_option("--patience", o->patience, "non-improving epochs before stop");
  sub->add_option("--seed", o->seed, "init/shuffle/split seed");
  sub->add_option("--config", o->config, "JSON config file (flags win)");
  sub->callback([o, sub] {
    Overlay ov{sub, load_config_file(o->config)};
    ov("--depth", o->depth);
    ov("--filters", o->filters);
    ov("--kernel", o->kernel);
    ov("--bneck", o->bneck);
    ov("--embed-dim", o->embed);
    ov("--lr", o->lr);
    ov("--gamma", o->gamma);
    ov("--alpha", o->alpha);
    ov("--val-fraction", o->val_fraction);
    ov("--batch", o->batch);
    ov("--epochs", o->epochs);
    ov("--patience", o->patience);
    ov("--seed", o->seed);

    auto man = start_manifest("train", o->seed,
                              json{{"train_set", o->train_set},
                                   {"depth", o->depth},
                                   {"filters", o->filters},
                                   {"kernel", o->kernel},
                                   {"bneck", o->bneck},
                                   {"embed_dim", o->embed},
                                   {"lr", o->lr},
                                   {"gamma", o->gamma},
                                   {"alpha", o->alpha},
                                   {"val_fraction", o->val_fraction},
                                   {"batch", o->batch},
                                   {"epochs", o->epochs},
                                   {"patience", o->patience},
                                   {"seed", o->seed},
                                   {"out", o->out}});
    man.add_input(o->train_set);
    const auto t0 = std::chrono::steady_clock::now();

    auto ts = adams::labels::load_training_set(o->train_set);
    adams::model::ModelConfig mcfg;
    mcfg.depth = o->depth;
    mcfg.filters = o->filters;
    mcfg.kernel = o->kernel;
    mcfg.bottleneck = o->bneck;
    mcfg.embed_dim = o->embed;
    mcfg.n_rules = static_cast<int>(ts.n_rules);

    auto [train_split, val_split] = adams::labels::split(ts, o->val_fraction, o->seed);
    adams::model::TrainConfig tc;
    tc.lr = o->lr;
    tc.gamma = o->gamma;
    tc.alpha = o->alpha;
    tc.batch_size = o->batch;
    tc.max_epochs = o->epochs;
    tc.patience = o->patience;
    tc.seed = o->seed;

    auto res = adams::model::train(mcfg, train_split, val_split, tc);
    res.weights.ruleset_fingerprint = ts.ruleset_fingerprint;
    adams::model::save_weights(mcfg, res.weights, o->out);
    const std::string log_path = o->log.empty() ? o->out + ".log.jsonl" : o->log;
    adams::model::write_train_log(res.log, log_path);

    man.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    man.write(o->out + ".run_manifest.json");
    std::cout << "train: best val AUC " << adams::textio::g9(res.best_auc) << " at epoch "
              << res.best_epoch << " (alpha " << adams::textio::g9(res.alpha_used) << ", "
              << res.log.size() << " epochs run) -> " << o->out << '\n';
  });
}

void add_attack(CLI::App& app) {
  struct AttackOpts {
    std::string dict, rules, targets, model, mode = "standard", out, config;
    double beta = 1.0, delta_scale = 1.0, clamp_min = 0.05, clamp_max = 0.99;
    std::size_t batch = 4096;
    std::uint64_t max_guesses = 0, seed = 1;
    bool keep_targets_on_hit = false;
  };
  auto o = std::make_shared<AttackOpts>();
  auto* sub = app.add_subcommand("attack", "Run a guessing attack");
  sub->add_option("--dict", o->dict, "dictionary file")->required();
  sub->add_option("--rules", o->rules, "rule file")->required();
  sub->add_option("--targets", o->targets, "attacked-set file")->required();
  sub->add_option("--mode", o->mode, "standard|adaptive|dynamic-dict|dynamic-budget|adams");
  sub->add_option("--model", o->model, "weight file (model-guided modes)");
  sub->add_option("--beta", o->beta, "attack budget in (0,1]");
  sub->add_option("--delta-scale", o->delta_scale, "budget increment numerator");
  sub->add_option("--clamp-min", o->clamp_min, "per-rule budget lower bound");
  sub->add_option("--clamp-max", o->clamp_max, "per-rule budget upper bound");
  sub->add_option("--batch", o->batch, "words per inference batch");
  sub->add_option("--max-guesses", o->max_guesses, "guess cap (0 = none)");
  sub->add_flag("--keep-targets-on-hit", o->keep_targets_on_hit,
                "count repeated hits instead of removing matched targets");
  sub->add_option("--seed", o->seed, "echoed into the report");
  sub->add_option("--out", o->out, "report output directory")->required();
  sub->add_option("--config", o->config, "JSON config file (flags win)");
  sub->callback([o, sub] {
    Overlay ov{sub, load_config_file(o->config)};
    ov("--mode", o->mode);
    ov("--model", o->model);
    ov("--beta", o->beta);
    ov("--delta-scale", o->delta_scale);
    ov("--clamp-min", o->clamp_min);
    ov("--clamp-max", o->clamp_max);
    ov("--batch", o->batch);
    ov("--max-guesses", o->max_guesses);
    ov("--seed", o->seed);

    auto mode = adams::engine::mode_from_name(o->mode);
    if (!mode) throw CLI::ValidationError("--mode", "unknown mode '" + o->mode + "'");
    adams::engine::AttackConfig cfg;
    cfg.mode = *mode;
    cfg.beta = o->beta;
    cfg.delta_scale = o->delta_scale;
    cfg.clamp_min = o->clamp_min;
    cfg.clamp_max = o->clamp_max;
    cfg.batch_size = o->batch;
    cfg.max_guesses = o->max_guesses;
    cfg.remove_on_hit = !o->keep_targets_on_hit;
    cfg.seed = o->seed;
    if (cfg.uses_model() && o->model.empty())
      throw CLI::RequiredError("--model (required by mode " + o->mode + ")");

    auto man = start_manifest("attack", o->seed,
                              json{{"dict", o->dict},
                                   {"rules", o->rules},
                                   {"targets", o->targets},
                                   {"model", o->model},
                                   {"mode", o->mode},
                                   {"beta", o->beta},
                                   {"delta_scale", o->delta_scale},
                                   {"clamp_min", o->clamp_min},
                                   {"clamp_max", o->clamp_max},
                                   {"batch", o->batch},
                                   {"max_guesses", o->max_guesses},
                                   {"remove_on_hit", cfg.remove_on_hit},
                                   {"seed", o->seed},
                                   {"out", o->out}});
    man.add_input(o->dict);
    man.add_input(o->rules);
    man.add_input(o->targets);
    if (!o->model.empty()) man.add_input(o->model);
    const auto t0 = std::chrono::steady_clock::now();

    auto dict = adams::corpus::load_dictionary(o->dict);
    auto rs = load_rules(o->rules);
    auto targets = adams::corpus::load_targets(o->targets);

    adams::model::ModelConfig mcfg;
    adams::model::Weights weights;
    const bool with_model = !o->model.empty();
    if (with_model) std::tie(mcfg, weights) = adams::model::load_weights(o->model);

    auto rep = adams::engine::run_attack(dict, rs, targets, with_model ? &mcfg : nullptr,
                                         with_model ? &weights : nullptr, cfg);
    adams::engine::save_report(rep, rs, o->out);
    man.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    man.write(o->out + "/run_manifest.json");

    std::cout << "attack(" << o->mode << "): " << rep.total_guesses << " guesses, "
              << rep.total_hits << " hits (" << adams::textio::g9(rep.hit_fraction())
              << " of targets) -> " << o->out << '\n';
  });
}

void add_eval(CLI::App& app) {
  struct EvalOpts {
    std::vector<std::string> reports;
    std::uint64_t beta_g = 0;
    std::string compare_out;
  };
  auto o = std::make_shared<EvalOpts>();
  auto* sub = app.add_subcommand("eval", "Success rates and run comparison");
  sub->add_option("reports", o->reports, "report directories")->required();
  auto* bg = sub->add_option("--beta-g", o->beta_g, "guess budget for the success rate");
  sub->add_option("--compare-out", o->compare_out,
                  "write an aligned hit-fraction CSV over a log guess grid");
  sub->callback([o, sub, bg] {
    std::vector<adams::engine::AttackReport> reps;
    for (const auto& dir : o->reports) reps.push_back(adams::engine::load_report(dir));

    for (std::size_t i = 0; i < reps.size(); ++i) {
      const auto& r = reps[i];
      std::cout << o->reports[i] << ": mode " << adams::engine::mode_name(r.mode) << ", "
                << r.total_guesses << " guesses, " << r.total_hits << " hits, fraction "
                << adams::textio::g9(r.hit_fraction()) << '\n';
      if (bg->count())
        std::cout << "  success rate at " << o->beta_g << " guesses: "
                  << adams::textio::g9(adams::eval::beta_success_rate(r, o->beta_g)) << '\n';
    }
    if (!o->compare_out.empty()) {
      if (reps.size() < 2)
        throw CLI::ValidationError("--compare-out", "needs at least two reports");
      spit(o->compare_out, adams::eval::compare_runs(reps, o->reports));
      std::cout << "compare -> " << o->compare_out << '\n';
    }
  });
}

void add_bench(CLI::App& app) {
  struct BenchOpts {
    std::string dict, rules, targets, model, out;
    std::vector<std::string> modes{"standard", "adaptive"};
    double seconds = 10;
  };
  auto o = std::make_shared<BenchOpts>();
  auto* sub = app.add_subcommand("bench", "Guesses-per-second throughput benchmark");
  sub->add_option("--dict", o->dict, "dictionary file")->required();
  sub->add_option("--rules", o->rules, "rule file")->required();
  sub->add_option("--targets", o->targets, "attacked-set file")->required();
  sub->add_option("--model", o->model, "weight file (needed for model-guided modes)");
  sub->add_option("--modes", o->modes, "modes to time")->delimiter(',');
  sub->add_option("--seconds", o->seconds, "duration per mode");
  sub->add_option("--out", o->out, "also write the table as JSON");
  sub->callback([o] {
    std::vector<adams::engine::Mode> modes;
    for (const auto& name : o->modes) {
      auto m = adams::engine::mode_from_name(name);
      if (!m) throw CLI::ValidationError("--modes", "unknown mode '" + name + "'");
      modes.push_back(*m);
    }
    auto dict = adams::corpus::load_dictionary(o->dict);
    auto rs = load_rules(o->rules);
    auto targets = adams::corpus::load_targets(o->targets);
    adams::model::ModelConfig mcfg;
    adams::model::Weights weights;
    const bool with_model = !o->model.empty();
    if (with_model) std::tie(mcfg, weights) = adams::model::load_weights(o->model);

    auto res = adams::eval::bench(dict, rs, targets, modes, o->seconds,
                                  with_model ? &mcfg : nullptr,
                                  with_model ? &weights : nullptr);
    json jout = json::array();
    for (const auto& e : res.entries) {
      std::cout << adams::engine::mode_name(e.mode) << ": " << e.guesses << " guesses in "
                << adams::textio::g9(e.seconds) << " s = "
                << adams::textio::g9(e.guesses_per_second) << " g/s\n";
      jout.push_back({{"mode", adams::engine::mode_name(e.mode)},
                      {"guesses", e.guesses},
                      {"seconds", e.seconds},
                      {"guesses_per_second", e.guesses_per_second}});
    }
    if (res.adaptive_over_standard > 0)
      std::cout << "adaptive/standard throughput ratio: "
                << adams::textio::g9(res.adaptive_over_standard) << '\n';
    if (!o->out.empty())
      spit(o->out, json{{"entries", jout}, {"adaptive_over_standard", res.adaptive_over_standard}}
                       .dump(2) +
                       "\n");
  });
}

void add_export_embeddings(CLI::App& app) {
  struct ExportOpts {
    std::string model, dict, out;
  };
  auto o = std::make_shared<ExportOpts>();
  auto* sub = app.add_subcommand("export-embeddings",
                                 "Dump per-word feature vectors (pre-dense layer) as CSV");
  sub->add_option("--model", o->model, "weight file")->required();
  sub->add_option("--dict", o->dict, "dictionary file")->required();
  sub->add_option("--out", o->out, "CSV output file")->required();
  sub->callback([o] {
    auto man = start_manifest("export-embeddings", 0,
                              json{{"model", o->model}, {"dict", o->dict}, {"out", o->out}});
    man.add_input(o->model);
    man.add_input(o->dict);
    const auto t0 = std::chrono::steady_clock::now();
    auto [mcfg, weights] = adams::model::load_weights(o->model);
    auto dict = adams::corpus::load_dictionary(o->dict);
    adams::model::export_embeddings(mcfg, weights, dict.words, o->out);
    man.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    man.write(o->out + ".run_manifest.json");
    std::cout << "export-embeddings: " << dict.size() << " rows -> " << o->out << '\n';
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AdaMs: adaptive, dynamic mangling-rule attacks and the tooling around them"};
  app.require_subcommand(1);
  add_synth(app);
  add_label(app);
  add_train(app);
  add_attack(app);
  add_eval(app);
  add_bench(app);
  add_export_embeddings(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const adams::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
