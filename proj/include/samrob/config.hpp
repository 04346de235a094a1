#pragma once

// Flat JSON run configuration. Every key is optional; unknown keys are
// rejected so typos never silently fall back to defaults.

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "samrob/atomic_file.hpp"
#include "samrob/error.hpp"
#include "samrob/phantom.hpp"
#include "samrob/protocol.hpp"
#include "samrob/training.hpp"

namespace samrob {

struct RunConfig {
  TrainConfig train;
  std::string scheme_path;
  std::string dataset_path;
  std::string model_path;
  std::string report_path;
  std::string log_path;
  std::size_t height = 64;
  std::size_t width = 64;
  double noise = kDefaultNoiseSigma;
  std::uint64_t phantom_seed = 0;
  ExperimentSpec experiment;
};

inline std::string to_string(FeatureKind k) { return k == FeatureKind::RawSignal ? "raw" : "sh"; }

inline FeatureKind parse_feature_kind(const std::string& s) {
  if (s == "sh")
    return FeatureKind::ShCoefficients;
  if (s == "raw")
    return FeatureKind::RawSignal;
  throw UsageError("features must be 'sh' or 'raw' (got '" + s + "')");
}

inline const std::set<std::string>& run_config_keys() {
  static const std::set<std::string> keys{
      "uniform_counts", "random_ranges", "mu",      "learning_rate", "batch_size",   "epochs",
      "seed",           "loss_mode",     "hidden",  "sh_order",      "lambda",       "features",
      "scheme",         "dataset",       "model",   "report",        "log",          "dims",
      "noise",          "phantom_seed",  "protocol", "seeds",        "rs_counts",    "sweep_totals",
      "flexible"};
  return keys;
}

inline RunConfig parse_run_config(const nlohmann::json& j) {
  if (!j.is_object())
    throw UsageError("config must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!run_config_keys().contains(key))
      throw UsageError("unknown config key '" + key + "'");

  RunConfig c;
  std::string current;
  auto get = [&](const char* key, auto& out) {
    if (j.contains(key)) {
      current = key;
      out = j.at(key).get<std::remove_reference_t<decltype(out)>>();
    }
  };
  try {
    TrainConfig& t = c.train;
    get("uniform_counts", t.uniform_counts);
    if (j.contains("random_ranges")) {
      current = "random_ranges";
      t.random_ranges.clear();
      for (const auto& r : j.at("random_ranges")) {
        const auto pair = r.get<std::vector<std::size_t>>();
        if (pair.size() != 2)
          throw UsageError("random_ranges entries must be [lo, hi]");
        t.random_ranges.push_back({pair[0], pair[1]});
      }
    }
    get("mu", t.mu);
    get("learning_rate", t.learning_rate);
    get("batch_size", t.batch_size);
    get("epochs", t.epochs);
    get("seed", t.seed);
    if (j.contains("loss_mode")) {
      current = "loss_mode";
      t.loss_mode = parse_loss_mode(j.at("loss_mode").get<std::string>());
    }
    get("hidden", t.hidden);
    get("sh_order", t.sh_order);
    get("lambda", t.lambda);
    if (j.contains("features")) {
      current = "features";
      t.features = parse_feature_kind(j.at("features").get<std::string>());
    }
    get("scheme", c.scheme_path);
    get("dataset", c.dataset_path);
    get("model", c.model_path);
    get("report", c.report_path);
    get("log", c.log_path);
    if (j.contains("dims")) {
      current = "dims";
      const auto d = j.at("dims").get<std::vector<std::size_t>>();
      if (d.size() != 2)
        throw UsageError("dims must be [height, width]");
      c.height = d[0];
      c.width = d[1];
    }
    get("noise", c.noise);
    get("phantom_seed", c.phantom_seed);
    if (j.contains("protocol")) {
      current = "protocol";
      c.experiment.protocol = parse_protocol(j.at("protocol").get<std::string>());
    }
    get("seeds", c.experiment.seeds);
    get("rs_counts", c.experiment.rs_counts);
    get("sweep_totals", c.experiment.sweep_totals);
    if (j.contains("flexible")) {
      current = "flexible";
      c.experiment.flexible.clear();
      for (const auto& s : j.at("flexible"))
        c.experiment.flexible.push_back({s.get<std::vector<std::size_t>>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config key '" + current + "' has the wrong type");
  }
  return c;
}

inline RunConfig read_run_config(const std::string& path) {
  const std::string text = read_file_bytes(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
  return parse_run_config(j);
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  const TrainConfig& t = c.train;
  j["uniform_counts"] = t.uniform_counts;
  auto ranges = nlohmann::json::array();
  for (const auto& r : t.random_ranges)
    ranges.push_back({r.lo, r.hi});
  j["random_ranges"] = ranges;
  j["mu"] = t.mu;
  j["learning_rate"] = t.learning_rate;
  j["batch_size"] = t.batch_size;
  j["epochs"] = t.epochs;
  j["seed"] = t.seed;
  j["loss_mode"] = to_string(t.loss_mode);
  j["hidden"] = t.hidden;
  j["sh_order"] = t.sh_order;
  j["lambda"] = t.lambda;
  j["features"] = to_string(t.features);
  j["scheme"] = c.scheme_path;
  j["dataset"] = c.dataset_path;
  j["model"] = c.model_path;
  j["report"] = c.report_path;
  j["log"] = c.log_path;
  j["dims"] = {c.height, c.width};
  j["noise"] = c.noise;
  j["phantom_seed"] = c.phantom_seed;
  j["protocol"] = to_string(c.experiment.protocol);
  j["seeds"] = c.experiment.seeds;
  j["rs_counts"] = c.experiment.rs_counts;
  j["sweep_totals"] = c.experiment.sweep_totals;
  auto flex = nlohmann::json::array();
  for (const auto& s : c.experiment.flexible)
    flex.push_back(s.per_shell);
  j["flexible"] = flex;
  return j;
}

} // namespace samrob
