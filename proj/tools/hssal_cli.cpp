// Command-line front end: synthetic data generation, one-shot selection,
// the full multi-round loop, and checkpoint evaluation.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "hssal/baselines.hpp"
#include "hssal/error.hpp"
#include "hssal/harness.hpp"

namespace {

using namespace hssal;
using nlohmann::json;

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kParse = 3,
  kContract = 4,
  kSchedule = 5,
  kNumeric = 6,
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(ParseError::Kind::kIo, "cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void dump(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError(ParseError::Kind::kIo, "cannot write '" + path.string() + "'");
  out << text;
}

template <typename T>
std::vector<T> read_column(const std::string& path) {
  std::istringstream in(slurp(path));
  std::vector<T> out;
  std::string tok;
  while (in >> tok) {
    std::istringstream conv(tok);
    T v{};
    if (!(conv >> v) || !conv.eof()) throw ParseError(ParseError::Kind::kInvalidValue, path + ": bad entry '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

harness::ExperimentConfig load_config(const std::string& path) {
  return path.empty() ? harness::ExperimentConfig{} : harness::config_from_json(slurp(path));
}

void apply_ssl_variant(harness::ExperimentConfig& config, const std::string& variant) {
  if (variant.empty()) return;
  if (variant == "none" || variant == "supervised") {
    config.training = harness::TrainingMode::kSupervised;
  } else {
    config.training = harness::TrainingMode::kSsl;
    config.ssl.variant = ssl::mask_variant_from_string(variant);
  }
}

struct GenArgs {
  std::string out;
  harness::SyntheticSpec spec;
};

int cmd_gen(const GenArgs& a) {
  harness::save_features(a.out, harness::gen_synthetic(a.spec));
  std::cout << json{{"path", a.out}, {"n", a.spec.classes * a.spec.per_class}, {"dim", a.spec.dim},
                    {"classes", a.spec.classes}}
                   .dump()
            << "\n";
  return kOk;
}

struct SelectArgs {
  std::string features, uncertainty, checkpoint, labeled, config, strategy, out_dir = ".";
  std::size_t budget = 0;
  std::optional<std::uint64_t> seed;
  bool no_timings = false;
};

int cmd_select(const SelectArgs& a) {
  const harness::Dataset data = harness::load_features(a.features);
  const std::size_t n = data.features.rows();
  harness::ExperimentConfig config = load_config(a.config);
  baselines::QueryStrategy strategy = config.strategy;
  if (!a.strategy.empty()) strategy.kind = baselines::strategy_from_string(a.strategy);
  if (a.seed) {
    strategy.seed = *a.seed;
    strategy.hal.seed = *a.seed;
  }

  std::vector<Index> labeled;
  if (!a.labeled.empty()) labeled = read_column<Index>(a.labeled);
  const PoolState pool = PoolState::from_labeled(labeled, n);

  hal::QuerySet q;
  if (!a.uncertainty.empty()) {
    HSSAL_REQUIRE(strategy.kind == baselines::StrategyKind::kHal, "--uncertainty is only meaningful for the hal strategy");
    const auto u = read_column<double>(a.uncertainty);
    if (u.size() != n) {
      throw ParseError(ParseError::Kind::kInvalidValue, "uncertainty file has " + std::to_string(u.size()) +
                                                            " entries, expected " + std::to_string(n));
    }
    q = hal::hal_query(data.features, u, pool, a.budget, strategy.hal);
  } else if (!a.checkpoint.empty()) {
    const model::Checkpoint ck = model::load_checkpoint(a.checkpoint);
    HSSAL_REQUIRE(ck.params.shape().dim == data.features.dim(), "checkpoint input dimension does not match features");
    q = baselines::run_query(strategy, ck.ema.shadow, data.features, pool, a.budget);
  } else {
    HSSAL_REQUIRE(strategy.kind == baselines::StrategyKind::kRandom || strategy.kind == baselines::StrategyKind::kCoreset,
                  "strategy '" + baselines::to_string(strategy.kind) + "' needs --checkpoint or --uncertainty");
    q = strategy.kind == baselines::StrategyKind::kRandom ? baselines::random_query(pool, a.budget, strategy.seed)
                                                           : baselines::coreset_query(data.features, pool, a.budget);
  }

  std::filesystem::create_directories(a.out_dir);
  std::ostringstream idx;
  for (Index i : q.indices) idx << i << "\n";
  dump(std::filesystem::path(a.out_dir) / "queried.txt", idx.str());

  json prov;
  prov["strategy"] = baselines::to_string(strategy.kind);
  prov["budget"] = a.budget;
  prov["n"] = n;
  prov["n_labeled"] = labeled.size();
  prov["seed"] = strategy.seed;
  prov["seconds"] = a.no_timings ? 0.0 : q.seconds;
  prov["batches"] = json::array();
  for (const auto& b : q.per_batch) {
    prov["batches"].push_back({{"size", b.size},
                               {"budget", b.budget},
                               {"clusters", b.clusters},
                               {"fallback_picks", b.fallback_picks},
                               {"cluster_seconds", a.no_timings ? 0.0 : b.cluster_seconds},
                               {"select_seconds", a.no_timings ? 0.0 : b.select_seconds}});
  }
  dump(std::filesystem::path(a.out_dir) / "provenance.json", prov.dump(2) + "\n");
  return kOk;
}

struct LoopArgs {
  std::string config, features, strategy, ssl_variant, out_dir = ".";
  std::optional<std::uint64_t> seed;
  bool no_timings = false;
};

int cmd_loop(const LoopArgs& a) {
  harness::ExperimentConfig config = load_config(a.config);
  if (!a.features.empty()) config.feature_path = a.features;
  if (!a.strategy.empty()) config.strategy.kind = baselines::strategy_from_string(a.strategy);
  apply_ssl_variant(config, a.ssl_variant);
  if (a.seed) config.trial_seeds = {*a.seed};

  const harness::ExperimentResult r = harness::run_experiment(config);
  harness::emit_report(r, a.out_dir, {.include_timings = !a.no_timings});
  if (r.final_model) {
    model::save_checkpoint((std::filesystem::path(a.out_dir) / "final.ckpt").string(), r.final_model->params,
                           r.final_model->ema);
  }
  const auto mean = harness::mean_oa_per_round(r);
  std::cout << json{{"mean_oa_per_round", mean}, {"out_dir", a.out_dir}}.dump() << "\n";
  return kOk;
}

struct EvalArgs {
  std::string features, checkpoint, indices;
  bool raw = false;
};

int cmd_eval(const EvalArgs& a) {
  const harness::Dataset data = harness::load_features(a.features);
  const model::Checkpoint ck = model::load_checkpoint(a.checkpoint);
  HSSAL_REQUIRE(ck.params.shape().dim == data.features.dim(), "checkpoint input dimension does not match features");
  HSSAL_REQUIRE(ck.params.shape().classes == data.labels.num_classes(), "checkpoint class count does not match features");
  const auto& params = a.raw ? ck.params : ck.ema.shadow;

  MetricsRecord m;
  std::size_t n_eval = data.features.rows();
  if (a.indices.empty()) {
    m = harness::evaluate(params, data.features, data.labels);
  } else {
    const auto idx = read_column<Index>(a.indices);
    for (Index i : idx) HSSAL_REQUIRE(i < data.features.rows(), "evaluation index out of range");
    m = harness::evaluate(params, FeatureMatrix(data.features.gather(idx)), data.labels.gather(idx));
    n_eval = idx.size();
  }
  std::cout << json{{"oa", m.oa}, {"aa", m.aa}, {"per_class_acc", m.per_class_acc}, {"n", n_eval}}.dump() << "\n";
  return kOk;
}

int report(const char* category, const std::exception& e, int code) {
  std::cerr << "hssal: " << category << " error: " << e.what() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical semi-supervised active learning over frozen feature embeddings"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-synthetic", "Write a Gaussian-mixture feature file");
  g->add_option("--out", gen.out, "Output feature file")->required();
  g->add_option("--classes", gen.spec.classes, "Number of classes")->capture_default_str();
  g->add_option("--dim", gen.spec.dim, "Feature dimension")->capture_default_str();
  g->add_option("--per-class", gen.spec.per_class, "Samples per class")->capture_default_str();
  g->add_option("--mean-scale", gen.spec.mean_scale, "Spread of class means")->capture_default_str();
  g->add_option("--cov-scale", gen.spec.cov_scale, "Within-class spread")->capture_default_str();
  g->add_option("--noise-rate", gen.spec.noise_rate, "Label noise rate")->capture_default_str();
  g->add_option("--seed", gen.spec.seed, "Generator seed")->capture_default_str();

  SelectArgs sel;
  std::uint64_t sel_seed = 0;
  auto* s = app.add_subcommand("select", "Run one query round and write the selected indices");
  s->add_option("--features", sel.features, "Feature file")->required()->check(CLI::ExistingFile);
  auto* s_unc = s->add_option("--uncertainty", sel.uncertainty, "Per-sample uncertainty, one value per line")
                    ->check(CLI::ExistingFile);
  s->add_option("--checkpoint", sel.checkpoint, "Model checkpoint (scores computed with its EMA weights)")
      ->check(CLI::ExistingFile)
      ->excludes(s_unc);
  s->add_option("--labeled", sel.labeled, "Labeled indices, one per line")->check(CLI::ExistingFile);
  s->add_option("--budget", sel.budget, "Number of samples to select")->required();
  s->add_option("--config", sel.config, "JSON config (strategy section is used)")->check(CLI::ExistingFile);
  s->add_option("--strategy", sel.strategy, "hal|random|entropy|margin|bald|coreset|badge");
  auto* s_seed = s->add_option("--seed", sel_seed, "Selection seed");
  s->add_option("--out-dir", sel.out_dir, "Output directory")->capture_default_str();
  s->add_flag("--no-timings", sel.no_timings, "Write zero timings for byte-stable output");

  LoopArgs loop;
  std::uint64_t loop_seed = 0;
  auto* l = app.add_subcommand("run-loop", "Run the multi-round train/query loop and write reports");
  l->add_option("--config", loop.config, "JSON experiment config")->check(CLI::ExistingFile);
  l->add_option("--features", loop.features, "Feature file (overrides the config's dataset)")->check(CLI::ExistingFile);
  l->add_option("--strategy", loop.strategy, "hal|random|entropy|margin|bald|coreset|badge");
  l->add_option("--ssl-variant", loop.ssl_variant, "fixed|class_adaptive|self_adaptive|soft_gaussian|none");
  auto* l_seed = l->add_option("--seed", loop_seed, "Single trial seed (overrides the config's trial seeds)");
  l->add_option("--out-dir", loop.out_dir, "Output directory")->capture_default_str();
  l->add_flag("--no-timings", loop.no_timings, "Write zero timings for byte-stable output");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Print OA/AA of a checkpoint on a feature file");
  e->add_option("--features", ev.features, "Feature file")->required()->check(CLI::ExistingFile);
  e->add_option("--checkpoint", ev.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  e->add_option("--indices", ev.indices, "Evaluate only these rows, one index per line")->check(CLI::ExistingFile);
  e->add_flag("--raw", ev.raw, "Use the raw weights instead of the EMA weights");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? kOk : kUsage;
  }
  if (*s_seed) sel.seed = sel_seed;
  if (*l_seed) loop.seed = loop_seed;

  try {
    if (*g) return cmd_gen(gen);
    if (*s) return cmd_select(sel);
    if (*l) return cmd_loop(loop);
    if (*e) return cmd_eval(ev);
  } catch (const ParseError& err) {
    return report("parse", err, kParse);
  } catch (const ScheduleError& err) {
    return report("schedule", err, kSchedule);
  } catch (const NumericError& err) {
    return report("numeric", err, kNumeric);
  } catch (const ContractViolation& err) {
    return report("contract", err, kContract);
  } catch (const std::exception& err) {
    return report("runtime", err, kFailure);
  }
  return kUsage;
}
