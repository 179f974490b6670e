/*
 * Command pipeline over an output directory.
 *
 * Every stage reads its prerequisites through the run manifest, which records
 * a content hash for each artifact and the input hashes each stage consumed.
 * A prerequisite is usable only if its file still hashes to the recorded
 * value and the stage that produced it saw the current versions of its own
 * inputs. One command runs per output directory at a time (lock file).
 */

#ifndef DARL_PIPELINE_HPP_
#define DARL_PIPELINE_HPP_

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "darl/agent.hpp"
#include "darl/augmentation.hpp"
#include "darl/backtest.hpp"
#include "darl/baselines.hpp"
#include "darl/common.hpp"
#include "darl/diffusion.hpp"
#include "darl/env.hpp"
#include "darl/market_data.hpp"

namespace darl::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Run configuration

struct DataConfig {
  std::string prices;  // resolved against the config file's directory
  Origin origin = Origin::kReal;
  IngestOptions ingest{.reject = RejectPolicy::kDrop};
};

struct SplitConfig {
  Date train_end{2023, 12, 31};
  Date test_start{2024, 1, 1};
  Date test_end{2025, 7, 31};

  void validate() const {
    if (!(train_end < test_start)) throw ConfigError("split.train_end must precede split.test_start");
    if (!(test_start <= test_end)) throw ConfigError("split.test_start must not be after split.test_end");
  }
};

struct SampleConfig {
  double intensity = 1.0;
  Eigen::Index count = 64;
};

inline std::vector<baselines::StrategyConfig> default_baselines() {
  using baselines::Variant;
  std::vector<baselines::StrategyConfig> out;
  for (auto v : {Variant::kMarkowitz, Variant::kOlmar, Variant::kHybridGa, Variant::kEqualWeight, Variant::kIndex}) {
    baselines::StrategyConfig s;
    s.variant = v;
    out.push_back(s);
  }
  return out;
}

struct RunConfig {
  DataConfig data;
  SplitConfig split;
  augmentation::DarlConfig darl;
  std::vector<baselines::StrategyConfig> baselines = default_baselines();
  SampleConfig sample;
  std::uint64_t seed = 0;
  std::string out_dir = "darl_out";
};

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config section '" + where + "' must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown config key '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

inline Date date_field(const json& j, const char* key, Date fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return Date::parse(j.at(key).get<std::string>());
  } catch (const DataError& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

inline std::string reject_name(RejectPolicy p) { return p == RejectPolicy::kDrop ? "drop" : "error"; }

inline RejectPolicy reject_from(const std::string& s) {
  if (s == "drop") return RejectPolicy::kDrop;
  if (s == "error") return RejectPolicy::kError;
  throw ConfigError("data.reject must be 'drop' or 'error', got '" + s + "'");
}

inline std::string origin_name(Origin o) { return o == Origin::kReal ? "real" : "synthetic"; }

inline Origin origin_from(const std::string& s) {
  if (s == "real") return Origin::kReal;
  if (s == "synthetic") return Origin::kSynthetic;
  throw ConfigError("origin must be 'real' or 'synthetic', got '" + s + "'");
}

}  // namespace detail

inline json to_json(const RunConfig& c) {
  json baselines = json::array();
  for (const auto& s : c.baselines) baselines.push_back(s);
  const auto& d = c.darl;
  return {{"data", {{"prices", c.data.prices},
                    {"origin", detail::origin_name(c.data.origin)},
                    {"max_missing_fraction", c.data.ingest.max_missing_fraction},
                    {"min_rows", c.data.ingest.min_rows},
                    {"reject", detail::reject_name(c.data.ingest.reject)}}},
          {"split", {{"train_end", c.split.train_end.iso()},
                     {"test_start", c.split.test_start.iso()},
                     {"test_end", c.split.test_end.iso()}}},
          {"windows", {{"length", d.window_length}, {"stride", d.window_stride}}},
          {"diffusion", {{"epochs", d.diffusion.epochs},
                         {"batch_size", d.diffusion.batch_size},
                         {"lr", d.diffusion.lr},
                         {"steps", d.diffusion.steps},
                         {"hidden", d.diffusion.hidden}}},
          {"env", {{"initial_capital", d.env.initial_capital},
                   {"cost_rate", d.env.cost_rate},
                   {"covariance_lookback", d.env.covariance_lookback},
                   {"observation_window", d.env.observation_window}}},
          {"agent", [&] {
             json a = d.ppo;
             a["total_steps"] = d.total_steps;
             a["episode_length"] = d.episode_length;
             return a;
           }()},
          {"augmentation", d.plan},
          {"baselines", baselines},
          {"sample", {{"intensity", c.sample.intensity}, {"count", c.sample.count}}},
          {"seed", c.seed},
          {"out_dir", c.out_dir}};
}

// Missing fields keep their defaults; unknown keys are rejected.
inline RunConfig config_from_json(const json& j, const fs::path& base_dir = {}) {
  using detail::check_keys;
  RunConfig c;
  try {
    check_keys(j, {"data", "split", "windows", "diffusion", "env", "agent", "augmentation", "baselines", "sample",
                   "seed", "out_dir"},
               "");
    if (j.contains("data")) {
      const auto& d = j.at("data");
      check_keys(d, {"prices", "origin", "max_missing_fraction", "min_rows", "reject"}, "data");
      if (d.contains("prices")) {
        fs::path p = d.at("prices").get<std::string>();
        if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
        c.data.prices = p.lexically_normal().string();
      }
      if (d.contains("origin")) c.data.origin = detail::origin_from(d.at("origin").get<std::string>());
      c.data.ingest.max_missing_fraction = d.value("max_missing_fraction", c.data.ingest.max_missing_fraction);
      c.data.ingest.min_rows = d.value("min_rows", c.data.ingest.min_rows);
      if (d.contains("reject")) c.data.ingest.reject = detail::reject_from(d.at("reject").get<std::string>());
    }
    if (j.contains("split")) {
      const auto& s = j.at("split");
      check_keys(s, {"train_end", "test_start", "test_end"}, "split");
      c.split.train_end = detail::date_field(s, "train_end", c.split.train_end, "split");
      c.split.test_start = detail::date_field(s, "test_start", c.split.test_start, "split");
      c.split.test_end = detail::date_field(s, "test_end", c.split.test_end, "split");
    }
    auto& d = c.darl;
    if (j.contains("windows")) {
      const auto& w = j.at("windows");
      check_keys(w, {"length", "stride"}, "windows");
      d.window_length = w.value("length", d.window_length);
      d.window_stride = w.value("stride", d.window_stride);
    }
    if (j.contains("diffusion")) {
      const auto& x = j.at("diffusion");
      check_keys(x, {"epochs", "batch_size", "lr", "steps", "hidden"}, "diffusion");
      d.diffusion.epochs = x.value("epochs", d.diffusion.epochs);
      d.diffusion.batch_size = x.value("batch_size", d.diffusion.batch_size);
      d.diffusion.lr = x.value("lr", d.diffusion.lr);
      d.diffusion.steps = x.value("steps", d.diffusion.steps);
      d.diffusion.hidden = x.value("hidden", d.diffusion.hidden);
    }
    if (j.contains("env")) {
      const auto& e = j.at("env");
      check_keys(e, {"initial_capital", "cost_rate", "covariance_lookback", "observation_window"}, "env");
      d.env.initial_capital = e.value("initial_capital", d.env.initial_capital);
      d.env.cost_rate = e.value("cost_rate", d.env.cost_rate);
      d.env.covariance_lookback = e.value("covariance_lookback", d.env.covariance_lookback);
      d.env.observation_window = e.value("observation_window", d.env.observation_window);
    }
    if (j.contains("agent")) {
      const auto& a = j.at("agent");
      check_keys(a, {"clip", "gamma", "lambda", "epochs", "minibatch", "lr", "entropy_coef", "value_coef", "horizon",
                     "target_kl", "hidden", "initial_log_std", "total_steps", "episode_length"},
                 "agent");
      d.ppo = a.get<agent::PpoConfig>();
      d.total_steps = a.value("total_steps", d.total_steps);
      d.episode_length = a.value("episode_length", d.episode_length);
    }
    if (j.contains("augmentation")) {
      const auto& p = j.at("augmentation");
      check_keys(p, {"synthetic_fraction", "intensities", "scenarios_per_intensity", "seed", "base_price_policy"},
                 "augmentation");
      d.plan = p.get<augmentation::AugmentationPlan>();
    }
    if (j.contains("baselines")) {
      const auto& b = j.at("baselines");
      if (!b.is_array()) throw ConfigError("config key 'baselines' must be a list");
      c.baselines.clear();
      for (const auto& entry : b) {
        baselines::StrategyConfig s;
        if (entry.is_string()) {
          s.variant = baselines::variant_from_string(entry.get<std::string>());
        } else {
          check_keys(entry, {"variant", "lookback", "olmar_epsilon", "olmar_window", "ga", "risk_aversion",
                             "markowitz_annualization", "seed"},
                     "baselines[]");
          s = entry.get<baselines::StrategyConfig>();
        }
        c.baselines.push_back(s);
      }
    }
    if (j.contains("sample")) {
      const auto& s = j.at("sample");
      check_keys(s, {"intensity", "count"}, "sample");
      c.sample.intensity = s.value("intensity", c.sample.intensity);
      c.sample.count = s.value("count", c.sample.count);
    }
    c.seed = j.value("seed", c.seed);
    c.out_dir = j.value("out_dir", c.out_dir);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  c.split.validate();
  c.darl.env.validate();
  c.darl.ppo.validate();
  c.darl.plan.validate();
  for (const auto& s : c.baselines) s.validate();
  if (c.darl.window_length < 2 || c.darl.window_stride < 1) throw ConfigError("windows.length must be >= 2, stride >= 1");
  if (c.darl.diffusion.epochs < 1 || c.darl.diffusion.steps < 1 || c.darl.diffusion.batch_size < 1) {
    throw ConfigError("diffusion epochs, steps and batch_size must be >= 1");
  }
  if (c.darl.total_steps < 1 || c.darl.episode_length < 1) {
    throw ConfigError("agent.total_steps and agent.episode_length must be >= 1");
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const MissingPrerequisite&) {
    throw ConfigError("cannot read config file: " + path);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j, fs::path(path).parent_path());
}

// Hash of everything that affects results (the output directory does not).
inline std::string config_hash(const RunConfig& c) {
  json j = to_json(c);
  j.erase("out_dir");
  return hash_bytes(j.dump());
}

// ---------------------------------------------------------------------------
// Output directory: lock and manifest

class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (f == nullptr) {
      throw ConfigError("output directory " + dir.string() + " is locked by another command (remove " +
                        path_.string() + " if no command is running)");
    }
    std::fclose(f);
  }
  ~DirectoryLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  fs::path path_;
};

inline constexpr const char* kManifestName = "manifest.json";

inline json load_manifest(const fs::path& out) {
  const fs::path p = out / kManifestName;
  if (!fs::exists(p)) return {{"format_version", 1}, {"artifacts", json::object()}, {"stages", json::object()}};
  try {
    return json::parse(read_file(p.string()));
  } catch (const json::exception& e) {
    throw DataError("corrupt manifest " + p.string() + ": " + e.what());
  }
}

// Command that produces artifacts under a given top-level directory.
inline std::string producer_command(const std::string& rel) {
  const auto top = rel.substr(0, rel.find('/'));
  if (top == "dataset") return "ingest";
  if (top == "diffusion") return "train-diffusion";
  if (top == "samples") return "sample";
  if (top == "agent") return rel.find("plain") != std::string::npos ? "train-agent --no-augment" : "train-agent";
  if (top == "backtest") return "backtest";
  return "report";
}

// One stage invocation: checks prerequisites, records inputs and outputs,
// then commits everything to the manifest.
class Stage {
 public:
  Stage(std::string name, const RunConfig& cfg, fs::path out)
      : name_(std::move(name)), cfg_(cfg), out_(std::move(out)), manifest_(load_manifest(out_)) {
    if (manifest_.contains("seed") && manifest_.at("seed").get<std::uint64_t>() != cfg.seed) {
      throw ConfigError("seed conflict: " + out_.string() + " was produced with seed " +
                        std::to_string(manifest_.at("seed").get<std::uint64_t>()) + " but this run uses seed " +
                        std::to_string(cfg.seed) + "; use the same seed or a fresh --out directory");
    }
  }

  const json& manifest() const { return manifest_; }
  const fs::path& out() const { return out_; }

  bool recorded(const std::string& rel) const { return manifest_.at("artifacts").contains(rel); }

  // Verifies an upstream artifact and returns its absolute path.
  fs::path require(const std::string& rel) {
    const fs::path p = out_ / rel;
    const std::string cmd = producer_command(rel);
    if (!recorded(rel) || !fs::exists(p)) {
      throw MissingPrerequisite("missing prerequisite " + p.string() + "; run `darl " + cmd + "` first");
    }
    const auto& art = manifest_.at("artifacts").at(rel);
    const std::string hash = hash_file(p.string());
    if (hash != art.at("hash").get<std::string>()) {
      throw MissingPrerequisite("stale prerequisite " + p.string() + ": contents changed since it was recorded; re-run `darl " +
                                cmd + "`");
    }
    const auto& stage = manifest_.at("stages").at(art.at("stage").get<std::string>());
    for (const auto& [input, input_hash] : stage.at("inputs").items()) {
      if (!recorded(input)) continue;
      if (manifest_.at("artifacts").at(input).at("hash") != input_hash) {
        throw MissingPrerequisite("stale prerequisite " + p.string() + ": its input " + input +
                                  " changed; re-run `darl " + cmd + "`");
      }
    }
    inputs_[rel] = hash;
    return p;
  }

  void record_external(const std::string& key, const std::string& hash) { inputs_[key] = hash; }

  void emit(const std::string& rel, const std::string& contents) {
    const fs::path p = out_ / rel;
    fs::create_directories(p.parent_path());
    write_file(p.string(), contents);
    outputs_[rel] = hash_bytes(contents);
  }

  void commit(std::uint64_t stage_seed, const json& extra = json::object()) {
    manifest_["seed"] = cfg_.seed;
    manifest_["config_hash"] = config_hash(cfg_);
    json outputs = json::array();
    for (const auto& [rel, hash] : outputs_) {
      manifest_["artifacts"][rel] = {{"hash", hash}, {"stage", name_}};
      outputs.push_back(rel);
    }
    json stage = {{"seed", stage_seed}, {"config_hash", config_hash(cfg_)}, {"inputs", inputs_}, {"outputs", outputs}};
    stage.update(extra);
    manifest_["stages"][name_] = stage;
    const fs::path tmp = out_ / "manifest.json.tmp";
    write_file(tmp.string(), manifest_.dump(2) + "\n");
    fs::rename(tmp, out_ / kManifestName);
  }

 private:
  std::string name_;
  const RunConfig& cfg_;
  fs::path out_;
  json manifest_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> outputs_;
};

// ---------------------------------------------------------------------------
// Dataset cache

struct CachedData {
  PriceTable table;  // full cleaned history
  json summary;
};

inline CachedData load_cached_data(Stage& stage) {
  const auto prices = stage.require("dataset/prices.csv");
  const auto summary_path = stage.require("dataset/summary.json");
  CachedData d;
  d.summary = json::parse(read_file(summary_path.string()));
  IngestOptions opt;
  opt.min_rows = 2;
  d.table = ingest_csv(prices.string(), opt).table;
  d.table.origin = detail::origin_from(d.summary.at("origin").get<std::string>());
  return d;
}

inline PriceTable train_slice(const PriceTable& t, const SplitConfig& s) {
  const auto end = t.lower_bound(s.train_end.plus_days(1));
  if (end < 2) throw DataError("no price rows on or before split.train_end " + s.train_end.iso());
  return t.slice(0, end);
}

inline baselines::Split test_split(const PriceTable& t, const SplitConfig& s) {
  const auto start = t.lower_bound(s.test_start);
  const auto end = t.lower_bound(s.test_end.plus_days(1)) - 1;
  if (start >= t.rows() || end <= start) {
    throw DataError("test split " + s.test_start.iso() + ".." + s.test_end.iso() + " has fewer than 2 price rows");
  }
  return {start, end};
}

// ---------------------------------------------------------------------------
// Stages

inline void cmd_ingest(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  if (cfg.data.prices.empty()) throw ConfigError("data.prices is not set in the config");
  Stage stage("ingest", cfg, out);
  const auto report = ingest_csv(cfg.data.prices, cfg.data.ingest);
  PriceTable table = report.table;
  table.origin = cfg.data.origin;
  const Date first = table.dates.front(), last = table.dates.back();
  if (cfg.split.train_end < first || last < cfg.split.test_start) {
    throw ConfigError("split boundary " + cfg.split.train_end.iso() + "/" + cfg.split.test_start.iso() +
                      " lies outside the data range " + first.iso() + ".." + last.iso());
  }
  const PriceTable train = train_slice(table, cfg.split);
  const auto windows =
      extract_windows(compute_returns(train), cfg.darl.window_length, cfg.darl.window_stride, train.tickers);
  const auto test = table.lower_bound(cfg.split.test_start);
  const json summary = {{"source", cfg.data.prices},
                        {"origin", detail::origin_name(table.origin)},
                        {"assets", table.tickers},
                        {"rejected", report.rejected},
                        {"first_date", first.iso()},
                        {"last_date", last.iso()},
                        {"rows", table.rows()},
                        {"train_rows", train.rows()},
                        {"test_rows", table.lower_bound(cfg.split.test_end.plus_days(1)) - test},
                        {"dropped_leading_rows", report.dropped_leading_rows},
                        {"filled_cells", report.filled_cells},
                        {"windows", windows.samples.size()}};
  stage.record_external("data:" + cfg.data.prices, hash_file(cfg.data.prices));
  stage.emit("dataset/prices.csv", to_csv(table));
  stage.emit("dataset/windows.json", dataset_to_json(windows).dump() + "\n");
  stage.emit("dataset/summary.json", summary.dump(2) + "\n");
  stage.commit(cfg.seed);

  std::string rejected;
  for (const auto& r : report.rejected) rejected += (rejected.empty() ? "" : ", ") + r;
  std::string assets;
  for (const auto& a : table.tickers) assets += (assets.empty() ? "" : ", ") + a;
  log << "assets (" << table.assets() << "): " << assets << "\n"
      << "dates: " << first.iso() << " .. " << last.iso() << " (" << table.rows() << " rows, " << train.rows()
      << " train)\n"
      << "rejected: " << (rejected.empty() ? "(none)" : rejected) << "\n"
      << "windows: " << windows.samples.size() << "\n";
}

inline void cmd_train_diffusion(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  Stage stage("train-diffusion", cfg, out);
  const auto data = load_cached_data(stage);
  stage.require("dataset/windows.json");
  const auto result = augmentation::train_diffusion_stage(train_slice(data.table, cfg.split), cfg.darl, cfg.seed);
  std::ostringstream loss;
  loss << "epoch,loss\n";
  const auto& losses = result.model.meta.epoch_loss;
  for (std::size_t e = 0; e < losses.size(); ++e) loss << e + 1 << ',' << format_double(losses[e]) << '\n';
  stage.emit("diffusion/ddpm.json", diffusion::to_json(result.model).dump() + "\n");
  stage.emit("diffusion/loss.csv", loss.str());
  stage.commit(result.model.meta.seed);
  log << "diffusion: " << result.dataset.samples.size() << " windows, " << losses.size() << " epochs, final loss "
      << (losses.empty() ? 0.0 : losses.back()) << "\n";
}

struct SampleArgs {
  std::optional<double> intensity;
  std::optional<Eigen::Index> count;
  std::optional<std::uint64_t> seed;
};

inline void cmd_sample(const RunConfig& cfg, const fs::path& out, const SampleArgs& args, std::ostream& log) {
  const double c = args.intensity.value_or(cfg.sample.intensity);
  const Eigen::Index count = args.count.value_or(cfg.sample.count);
  if (!(c >= 0.0 && c <= 1.0)) throw ConfigError("--intensity must lie in [0, 1]");
  if (count < 1) throw ConfigError("--count must be >= 1");
  const std::uint64_t seed = args.seed.value_or(derive_seed(cfg.seed, 61));
  Stage stage("sample", cfg, out);
  const auto model = diffusion::ddpm_from_json(json::parse(read_file(stage.require("diffusion/ddpm.json").string())));
  const auto samples = diffusion::sample(model, count, c, seed);
  stage.emit("samples/samples.csv", diffusion::samples_to_csv(samples, c));
  stage.commit(seed, {{"intensity", c}, {"count", count}});
  log << "samples: " << count << " windows at intensity " << c << " (seed " << seed << ")\n";
}

inline void cmd_train_agent(const RunConfig& cfg, const fs::path& out, bool augment, std::ostream& log) {
  Stage stage(augment ? "train-agent" : "train-agent-plain", cfg, out);
  const auto data = load_cached_data(stage);
  const auto market = make_features(train_slice(data.table, cfg.split));
  agent::TrainResult result;
  if (augment) {
    const auto model =
        diffusion::ddpm_from_json(json::parse(read_file(stage.require("diffusion/ddpm.json").string())));
    auto staged = augmentation::train_agent_stage(market, &model, cfg.darl, cfg.seed);
    result = std::move(staged.training);
    stage.emit("agent/schedule.csv", augmentation::schedule_to_csv(staged.schedule));
  } else {
    result = augmentation::train_plain_agent(market, cfg.darl, cfg.seed);
  }
  const std::string suffix = augment ? "" : "_plain";
  stage.emit("agent/agent" + suffix + ".json", agent::to_json(result.agent, cfg.darl.ppo, cfg.seed).dump() + "\n");
  stage.emit("agent/curve" + suffix + ".csv", agent::curve_to_csv(result.curve));
  stage.commit(cfg.seed);
  log << (augment ? "agent" : "agent (no augmentation)") << ": " << result.curve.size() << " updates, "
      << result.episodes_used << " episodes";
  if (!result.curve.empty()) log << ", final mean reward " << result.curve.back().mean_reward;
  log << "\n";
}

inline std::string display_name(const std::string& strategy) {
  static const std::map<std::string, std::string> names{
      {"proposed", "Proposed (DARL)"}, {"ablation", "Without Augmentation"}, {"markowitz", "Markowitz"},
      {"olmar", "OLMAR"}, {"hybrid_ga", "Hybrid-GA (reimplementation)"}, {"equal_weight", "Equal Weight"},
      {"index", "Index (equal-weight buy-and-hold)"}};
  const auto it = names.find(strategy);
  return it == names.end() ? strategy : it->second;
}

inline backtest::Role strategy_role(const std::string& strategy) {
  if (strategy == "proposed") return backtest::Role::kProposed;
  if (strategy == "ablation") return backtest::Role::kAblation;
  if (strategy == "index") return backtest::Role::kIndex;
  return backtest::Role::kBaseline;
}

inline void cmd_backtest(const RunConfig& cfg, const fs::path& out, const std::string& which, std::ostream& log) {
  Stage stage("backtest:" + which, cfg, out);
  auto data = load_cached_data(stage);
  if (data.table.origin != Origin::kReal) {
    throw LeakError("backtest refuses synthetic-origin data (" + data.summary.at("source").get<std::string>() + ")");
  }
  const auto market = make_features(data.table);
  const auto split = test_split(data.table, cfg.split);

  std::vector<std::string> names;
  if (which == "all") {
    names.push_back("proposed");
    if (stage.recorded("agent/agent_plain.json")) names.push_back("ablation");
    for (const auto& s : cfg.baselines) names.push_back(baselines::to_string(s.variant));
  } else {
    names.push_back(which);
  }

  for (const auto& name : names) {
    backtest::EquityCurve curve;
    json detail;
    if (name == "proposed" || name == "ablation") {
      const std::string rel = name == "proposed" ? "agent/agent.json" : "agent/agent_plain.json";
      const auto agent = agent::agent_from_json(json::parse(read_file(stage.require(rel).string())));
      const Eigen::Index need = augmentation::first_legal_start(cfg.darl.env);
      if (split.start < need) {
        throw DataError("test split starts at row " + std::to_string(split.start) + " but the agent needs " +
                        std::to_string(need) + " rows of history");
      }
      curve = baselines::run_policy(agent::deterministic_weights(agent.policy), market, split, cfg.darl.env);
      detail = {{"checkpoint", rel}};
    } else {
      const auto variant = baselines::variant_from_string(name);
      auto it = std::find_if(cfg.baselines.begin(), cfg.baselines.end(),
                             [&](const auto& s) { return s.variant == variant; });
      baselines::StrategyConfig s;
      if (it != cfg.baselines.end()) s = *it;
      s.variant = variant;
      s.seed = derive_seed(cfg.seed, 71 + s.seed);
      curve = baselines::run_strategy(s, market, split, cfg.darl.env);
      detail = {{"strategy", s}};
    }
    const auto report = backtest::evaluate(curve);
    const json doc = {{"name", name},
                      {"display_name", display_name(name)},
                      {"role", backtest::role_name(strategy_role(name))},
                      {"test_start", curve.dates.front().iso()},
                      {"test_end", curve.dates.back().iso()},
                      {"report", backtest::to_json(report)},
                      {"detail", detail}};
    stage.emit("backtest/" + name + "_curve.csv", backtest::curve_to_csv(curve));
    stage.emit("backtest/" + name + "_report.json", doc.dump(2) + "\n");
    log << display_name(name) << ": cumulative " << report.cumulative_return << "%, sharpe " << report.sharpe
        << ", max drawdown " << report.max_drawdown << "%\n";
  }
  stage.commit(cfg.seed);
}

inline void cmd_report(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  Stage stage("report", cfg, out);
  std::vector<std::string> names;
  for (const auto& [rel, _] : stage.manifest().at("artifacts").items()) {
    const std::string prefix = "backtest/", suffix = "_report.json";
    if (rel.rfind(prefix, 0) == 0 && rel.size() > prefix.size() + suffix.size() &&
        rel.compare(rel.size() - suffix.size(), suffix.size(), suffix) == 0) {
      names.push_back(rel.substr(prefix.size(), rel.size() - prefix.size() - suffix.size()));
    }
  }
  if (names.empty()) throw MissingPrerequisite("no backtest results in " + out.string() + "; run `darl backtest` first");
  std::vector<std::string> order{"proposed", "ablation"};
  for (const auto& s : cfg.baselines) order.push_back(baselines::to_string(s.variant));
  auto rank = [&](const std::string& n) { return std::find(order.begin(), order.end(), n) - order.begin(); };
  std::stable_sort(names.begin(), names.end(), [&](const auto& a, const auto& b) { return rank(a) < rank(b); });

  std::vector<backtest::NamedReport> reports;
  std::ostringstream cumulative;
  cumulative << "strategy,date,value,cumulative\n";
  std::map<std::string, std::string> curves;
  for (const auto& name : names) {
    const auto doc = json::parse(read_file(stage.require("backtest/" + name + "_report.json").string()));
    reports.push_back({doc.at("display_name").get<std::string>(),
                       backtest::role_from_name(doc.at("role").get<std::string>()),
                       backtest::report_from_json(doc.at("report"))});
    curves[doc.at("display_name").get<std::string>()] =
        read_file(stage.require("backtest/" + name + "_curve.csv").string());
  }
  const auto rows = backtest::compare(reports);
  for (const auto& row : rows) {
    std::istringstream in(curves.at(row.entry.name));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line))
      if (!line.empty()) cumulative << row.entry.name << ',' << line << '\n';
  }
  const std::string table = backtest::comparison_to_text(rows);
  stage.emit("report/comparison.json", backtest::comparison_to_json(rows).dump(2) + "\n");
  stage.emit("report/comparison.txt", table);
  stage.emit("report/cumulative.csv", cumulative.str());
  stage.commit(cfg.seed);
  log << table;
}

// ---------------------------------------------------------------------------
// Command line

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Diffusion-augmented reinforcement learning for portfolio allocation", "darl"};
  app.require_subcommand(1);
  std::string config_path, out_dir, strategy = "all";
  std::optional<std::uint64_t> seed;
  std::optional<double> intensity;
  std::optional<Eigen::Index> count;
  bool no_augment = false;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run configuration");
    sub->add_option("--seed", seed, "run seed (for `sample`: the sampling seed)");
    sub->add_option("--out", out_dir, "output directory");
  };
  auto* ingest = app.add_subcommand("ingest", "validate prices and build the dataset cache");
  auto* train_diffusion = app.add_subcommand("train-diffusion", "train the conditional diffusion model");
  auto* sample = app.add_subcommand("sample", "draw synthetic windows from the diffusion model");
  auto* train_agent = app.add_subcommand("train-agent", "train the PPO agent");
  auto* backtest_cmd = app.add_subcommand("backtest", "evaluate strategies on the test split");
  auto* report = app.add_subcommand("report", "write the comparison table and cumulative curves");
  for (auto* sub : {ingest, train_diffusion, sample, train_agent, backtest_cmd, report}) common(sub);
  sample->add_option("--intensity", intensity, "crash intensity in [0, 1]");
  sample->add_option("--count", count, "number of windows");
  train_agent->add_flag("--no-augment", no_augment, "train on real episodes only (ablation)");
  backtest_cmd->add_option("--strategy", strategy,
                           "all, proposed, ablation, markowitz, olmar, hybrid_ga, equal_weight or index");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, r;
    const int code = app.exit(e, o, r);
    out << o.str();
    err << r.str();
    return code == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    const bool is_sample = sample->parsed();
    if (seed && !is_sample) cfg.seed = *seed;
    const fs::path dir = out_dir.empty() ? fs::path(cfg.out_dir) : fs::path(out_dir);
    DirectoryLock lock(dir);
    if (ingest->parsed()) cmd_ingest(cfg, dir, out);
    if (train_diffusion->parsed()) cmd_train_diffusion(cfg, dir, out);
    if (is_sample) cmd_sample(cfg, dir, {intensity, count, seed}, out);
    if (train_agent->parsed()) cmd_train_agent(cfg, dir, !no_augment, out);
    if (backtest_cmd->parsed()) {
      if (strategy != "all" && strategy != "proposed" && strategy != "ablation") {
        baselines::variant_from_string(strategy);
      }
      cmd_backtest(cfg, dir, strategy, out);
    }
    if (report->parsed()) cmd_report(cfg, dir, out);
    return 0;
  } catch (const MissingPrerequisite& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  } catch (const LeakError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace darl::pipeline

#endif  // DARL_PIPELINE_HPP_
