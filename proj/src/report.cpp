#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "hssal/error.hpp"
#include "hssal/harness.hpp"

namespace hssal::harness {

using nlohmann::json;

namespace {

/// Shortest decimal form that round-trips.
std::string num(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

json eigen_options_json(const spectral::EigenOptions& e) {
  std::string method = e.method == spectral::EigenMethod::kDense       ? "dense"
                       : e.method == spectral::EigenMethod::kIterative ? "iterative"
                                                                       : "auto";
  return {{"method", method}, {"dense_limit", e.dense_limit}, {"tol", e.tol}, {"max_iterations", e.max_iterations}};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError(ParseError::Kind::kIo, "cannot write '" + path.string() + "'");
  out << text;
}

}  // namespace

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  if (c.feature_path) {
    j["dataset"] = {{"path", *c.feature_path}};
  } else {
    const auto& s = c.synthetic;
    j["dataset"] = {{"synthetic",
                     {{"classes", s.classes},
                      {"dim", s.dim},
                      {"per_class", s.per_class},
                      {"mean_scale", s.mean_scale},
                      {"cov_scale", s.cov_scale},
                      {"noise_rate", s.noise_rate},
                      {"seed", s.seed}}}};
  }
  j["split"] = {{"seed", c.split_seed}, {"train", c.train_fraction}, {"val", c.val_fraction}, {"test", c.test_fraction}};
  j["ratios"] = c.ratios;
  const auto& st = c.strategy;
  const std::string aggregation = st.hal.aggregation == hal::ClusterAggregation::kMean ? "mean" : "sum";
  j["strategy"] = {{"kind", baselines::to_string(st.kind)},
                   {"bald_passes", st.bald_passes},
                   {"bald_dropout", st.bald_dropout},
                   {"badge_random_first", st.badge_random_first},
                   {"uncertainty_include_bias", st.uncertainty_include_bias},
                   {"hal",
                    {{"minibatch_size", st.hal.minibatch_size},
                     {"cluster_multiplier", st.hal.cluster_multiplier},
                     {"k_neighbors", st.hal.k_neighbors},
                     {"in_cluster", hal::to_string(st.hal.in_cluster)},
                     {"aggregation", aggregation},
                     {"eigen", eigen_options_json(st.hal.eigen)}}}};
  j["training"] = c.training == TrainingMode::kSupervised ? "supervised" : "ssl";
  const auto& s = c.ssl;
  j["ssl"] = {{"tau", s.tau},
              {"lambda_st", s.lambda_st},
              {"variant", ssl::to_string(s.variant)},
              {"mask_momentum", s.mask_momentum},
              {"epochs", s.epochs},
              {"iters_per_epoch", s.iters_per_epoch},
              {"batch_size", s.batch_size},
              {"unlabeled_ratio", s.unlabeled_ratio},
              {"weak_sigma", s.weak_sigma},
              {"strong_sigma", s.strong_sigma},
              {"strong_drop", s.strong_drop},
              {"hidden", s.hidden},
              {"dropout", s.dropout},
              {"ema_alpha", s.ema_alpha},
              {"lr", s.optimizer.lr},
              {"weight_decay", s.optimizer.weight_decay}};
  j["trial_seeds"] = c.trial_seeds;
  j["warm_start"] = c.warm_start;
  return j.dump();
}

ExperimentConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(ParseError::Kind::kInvalidValue, std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  try {
    if (j.contains("dataset")) {
      const auto& d = j["dataset"];
      if (d.contains("path")) c.feature_path = d["path"].get<std::string>();
      if (d.contains("synthetic")) {
        const auto& s = d["synthetic"];
        c.synthetic.classes = s.value("classes", c.synthetic.classes);
        c.synthetic.dim = s.value("dim", c.synthetic.dim);
        c.synthetic.per_class = s.value("per_class", c.synthetic.per_class);
        c.synthetic.mean_scale = s.value("mean_scale", c.synthetic.mean_scale);
        c.synthetic.cov_scale = s.value("cov_scale", c.synthetic.cov_scale);
        c.synthetic.noise_rate = s.value("noise_rate", c.synthetic.noise_rate);
        c.synthetic.seed = s.value("seed", c.synthetic.seed);
      }
    }
    if (j.contains("split")) {
      const auto& s = j["split"];
      c.split_seed = s.value("seed", c.split_seed);
      c.train_fraction = s.value("train", c.train_fraction);
      c.val_fraction = s.value("val", c.val_fraction);
      c.test_fraction = s.value("test", c.test_fraction);
    }
    if (j.contains("ratios")) c.ratios = j["ratios"].get<std::vector<double>>();
    if (j.contains("strategy")) {
      const auto& s = j["strategy"];
      if (s.contains("kind")) c.strategy.kind = baselines::strategy_from_string(s["kind"].get<std::string>());
      c.strategy.bald_passes = s.value("bald_passes", c.strategy.bald_passes);
      c.strategy.bald_dropout = s.value("bald_dropout", c.strategy.bald_dropout);
      c.strategy.badge_random_first = s.value("badge_random_first", c.strategy.badge_random_first);
      c.strategy.uncertainty_include_bias = s.value("uncertainty_include_bias", c.strategy.uncertainty_include_bias);
      if (s.contains("hal")) {
        const auto& h = s["hal"];
        auto& hc = c.strategy.hal;
        hc.minibatch_size = h.value("minibatch_size", hc.minibatch_size);
        hc.cluster_multiplier = h.value("cluster_multiplier", hc.cluster_multiplier);
        hc.k_neighbors = h.value("k_neighbors", hc.k_neighbors);
        if (h.contains("in_cluster")) hc.in_cluster = hal::in_cluster_mode_from_string(h["in_cluster"].get<std::string>());
        if (h.contains("aggregation")) {
          const auto a = h["aggregation"].get<std::string>();
          HSSAL_REQUIRE(a == "sum" || a == "mean", "aggregation must be 'sum' or 'mean'");
          hc.aggregation = a == "mean" ? hal::ClusterAggregation::kMean : hal::ClusterAggregation::kSum;
        }
        if (h.contains("eigen")) {
          const auto& e = h["eigen"];
          const auto method = e.value("method", std::string("auto"));
          HSSAL_REQUIRE(method == "auto" || method == "dense" || method == "iterative", "unknown eigen method");
          hc.eigen.method = method == "dense"       ? spectral::EigenMethod::kDense
                            : method == "iterative" ? spectral::EigenMethod::kIterative
                                                    : spectral::EigenMethod::kAuto;
          hc.eigen.dense_limit = e.value("dense_limit", hc.eigen.dense_limit);
          hc.eigen.tol = e.value("tol", hc.eigen.tol);
          hc.eigen.max_iterations = e.value("max_iterations", hc.eigen.max_iterations);
        }
      }
    }
    if (j.contains("training")) {
      const auto t = j["training"].get<std::string>();
      HSSAL_REQUIRE(t == "ssl" || t == "supervised", "training must be 'ssl' or 'supervised'");
      c.training = t == "supervised" ? TrainingMode::kSupervised : TrainingMode::kSsl;
    }
    if (j.contains("ssl")) {
      const auto& s = j["ssl"];
      auto& sc = c.ssl;
      sc.tau = s.value("tau", sc.tau);
      sc.lambda_st = s.value("lambda_st", sc.lambda_st);
      if (s.contains("variant")) sc.variant = ssl::mask_variant_from_string(s["variant"].get<std::string>());
      sc.mask_momentum = s.value("mask_momentum", sc.mask_momentum);
      sc.epochs = s.value("epochs", sc.epochs);
      sc.iters_per_epoch = s.value("iters_per_epoch", sc.iters_per_epoch);
      sc.batch_size = s.value("batch_size", sc.batch_size);
      sc.unlabeled_ratio = s.value("unlabeled_ratio", sc.unlabeled_ratio);
      sc.weak_sigma = s.value("weak_sigma", sc.weak_sigma);
      sc.strong_sigma = s.value("strong_sigma", sc.strong_sigma);
      sc.strong_drop = s.value("strong_drop", sc.strong_drop);
      sc.hidden = s.value("hidden", sc.hidden);
      sc.dropout = s.value("dropout", sc.dropout);
      sc.ema_alpha = s.value("ema_alpha", sc.ema_alpha);
      sc.optimizer.lr = s.value("lr", sc.optimizer.lr);
      sc.optimizer.weight_decay = s.value("weight_decay", sc.optimizer.weight_decay);
    }
    if (j.contains("trial_seeds")) c.trial_seeds = j["trial_seeds"].get<std::vector<std::uint64_t>>();
    c.warm_start = j.value("warm_start", c.warm_start);
  } catch (const json::exception& e) {
    throw ParseError(ParseError::Kind::kInvalidValue, std::string("bad config field: ") + e.what());
  }
  return c;
}

std::string report_csv(const ExperimentResult& r, const ReportOptions& options) {
  std::ostringstream os;
  os << "trial_seed,round,ratio,n_labeled,n_queried,oa,aa,best_val_oa,train_s,eval_s,query_s\n";
  for (const auto& t : r.trials) {
    for (const auto& rr : t.rounds) {
      const PhaseSeconds s = options.include_timings ? rr.seconds : PhaseSeconds{};
      os << t.seed << ',' << rr.round << ',' << num(rr.ratio) << ',' << rr.n_labeled << ',' << rr.queried.size() << ','
         << num(rr.oa) << ',' << num(rr.aa) << ',' << num(rr.best_val_oa) << ',' << num(s.train) << ',' << num(s.eval)
         << ',' << num(s.query) << '\n';
    }
  }
  return os.str();
}

std::string report_json(const ExperimentResult& r, const ReportOptions& options) {
  json j;
  j["config"] = json::parse(r.config_json);
  j["config_hash"] = hex64(r.config_hash);
  j["trials"] = json::array();
  for (const auto& t : r.trials) {
    json jt;
    jt["seed"] = t.seed;
    jt["initial_labeled"] = t.initial_labeled;
    jt["rounds"] = json::array();
    for (const auto& rr : t.rounds) {
      const PhaseSeconds s = options.include_timings ? rr.seconds : PhaseSeconds{};
      jt["rounds"].push_back({{"round", rr.round},
                              {"ratio", rr.ratio},
                              {"n_labeled", rr.n_labeled},
                              {"oa", rr.oa},
                              {"aa", rr.aa},
                              {"per_class_acc", rr.per_class_acc},
                              {"queried", rr.queried},
                              {"best_val_oa", rr.best_val_oa},
                              {"seconds", {{"train", s.train}, {"eval", s.eval}, {"query", s.query}}}});
    }
    j["trials"].push_back(std::move(jt));
  }
  return j.dump(2) + "\n";
}

ExperimentResult results_from_json(const std::string& text) {
  ExperimentResult r;
  try {
    const json j = json::parse(text);
    r.config_json = j.at("config").dump();
    r.config_hash = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
    for (const auto& jt : j.at("trials")) {
      TrialResult t;
      t.seed = jt.at("seed").get<std::uint64_t>();
      t.initial_labeled = jt.at("initial_labeled").get<std::vector<Index>>();
      for (const auto& jr : jt.at("rounds")) {
        RoundResult rr;
        rr.round = jr.at("round").get<std::size_t>();
        rr.ratio = jr.at("ratio").get<double>();
        rr.n_labeled = jr.at("n_labeled").get<std::size_t>();
        rr.oa = jr.at("oa").get<double>();
        rr.aa = jr.at("aa").get<double>();
        rr.per_class_acc = jr.at("per_class_acc").get<std::vector<double>>();
        rr.queried = jr.at("queried").get<std::vector<Index>>();
        rr.best_val_oa = jr.at("best_val_oa").get<double>();
        const auto& s = jr.at("seconds");
        rr.seconds = {s.at("train").get<double>(), s.at("eval").get<double>(), s.at("query").get<double>()};
        t.rounds.push_back(std::move(rr));
      }
      r.trials.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw ParseError(ParseError::Kind::kInvalidValue, std::string("malformed results JSON: ") + e.what());
  }
  return r;
}

void emit_report(const ExperimentResult& r, const std::string& dir, const ReportOptions& options) {
  std::filesystem::create_directories(dir);
  write_text(std::filesystem::path(dir) / "results.csv", report_csv(r, options));
  write_text(std::filesystem::path(dir) / "results.json", report_json(r, options));
}

}  // namespace hssal::harness
