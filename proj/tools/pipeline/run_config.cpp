#include "run_config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "snigl/error.hpp"

namespace snigl::pipeline {

using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_pns: return "no_pns";
    case Variant::no_ensemble: return "no_ensemble";
    case Variant::erm_baseline: return "erm_baseline";
  }
  return "full";
}

Variant parse_variant(const std::string& name) {
  for (auto v : all_variants())
    if (to_string(v) == name) return v;
  throw DomainError("unknown variant '" + name + "' (expected full|no_pns|no_ensemble|erm_baseline)");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v{Variant::full, Variant::no_pns, Variant::no_ensemble, Variant::erm_baseline};
  return v;
}

training::Objective objective_of(Variant v) {
  switch (v) {
    case Variant::no_pns: return training::Objective::no_pns;
    case Variant::erm_baseline: return training::Objective::erm;
    default: return training::Objective::full;
  }
}

std::string model_dir_of(Variant v) { return v == Variant::no_ensemble ? to_string(Variant::full) : to_string(v); }

std::string to_string(SplitScheme s) {
  switch (s) {
    case SplitScheme::bias_levels: return "bias_levels";
    case SplitScheme::base_kind: return "base_kind";
    case SplitScheme::size_threshold: return "size_threshold";
  }
  return "bias_levels";
}

SplitScheme parse_split_scheme(const std::string& name) {
  if (name == "bias_levels") return SplitScheme::bias_levels;
  if (name == "base_kind") return SplitScheme::base_kind;
  if (name == "size_threshold") return SplitScheme::size_threshold;
  throw DomainError("unknown split '" + name + "' (expected bias_levels|base_kind|size_threshold)");
}

void DataSection::validate() const {
  if (source == "files") {
    if (train_path.empty() || test_path.empty()) throw DomainError("data.source=files needs train_path and test_path");
    return;
  }
  if (source != "spmotif") throw DomainError("unknown data.source '" + source + "' (expected spmotif|files)");
  if (base_min == 0 || base_min > base_max) throw DomainError("data.base_min must lie in [1, base_max]");
  if (split == SplitScheme::bias_levels) {
    if (train_bias.size() < 2) throw DomainError("data.train_bias needs at least two levels");
    for (double b : train_bias)
      if (!(b >= 1.0 / 3.0 - 1e-12 && b <= 1.0)) throw DomainError("data.train_bias levels must lie in [1/3, 1]");
    if (n_train < train_bias.size() * 30 || n_test < 30) throw DomainError("data.n_train / n_test too small");
  } else {
    if (pool_size < 60) throw DomainError("data.pool_size too small");
    if (!(pool_bias >= 1.0 / 3.0 - 1e-12 && pool_bias <= 1.0)) throw DomainError("data.pool_bias must lie in [1/3, 1]");
  }
}

void EvalSection::validate() const {
  if (seeds.empty()) throw DomainError("eval.seeds must list at least one seed");
  if (variants.empty()) throw DomainError("eval.variants must list at least one variant");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw DomainError("eval.seeds contains duplicates");
}

void RunConfig::validate() const {
  data.validate();
  train.validate();
  adapt.validate();
  eval.validate();
  if (out.empty()) throw DomainError("out directory must be set");
}

RunConfig profile_defaults(const std::string& name) {
  RunConfig c;
  c.profile = name;
  if (name == "standard") {
    c.train.epochs = 200;
    c.train.model.hidden = 300;
  } else if (name == "desk") {
    c.train.epochs = 60;
    c.train.model.hidden = 32;
  } else {
    throw DomainError("unknown profile '" + name + "' (expected standard|desk)");
  }
  c.train.learning_rate = 1e-3;
  c.train.lambda_ci = 1e-3;
  c.adapt.learning_rate = 1e-4;
  c.adapt.epochs = 200;
  return c;
}

namespace {

// Reads keys from one object and rejects whatever is left over.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw DomainError("config section '" + name_ + "' must be an object");
  }

  template <typename T>
  void read(const char* key, T& into) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      into = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw DomainError("config key '" + path(key) + "': " + e.what());
    }
  }

  template <typename T, typename Parse>
  void read_enum(const char* key, T& into, Parse parse) {
    std::string s;
    bool present = j_.contains(key);
    read(key, s);
    if (present) into = parse(s);
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw DomainError("unknown config key '" + path(k) + "'");
  }

  std::string path(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

void read_data(const json& j, DataSection& d) {
  Section s(j, "data");
  s.read("source", d.source);
  s.read("train_path", d.train_path);
  s.read("test_path", d.test_path);
  s.read_enum("split", d.split, parse_split_scheme);
  s.read("train_bias", d.train_bias);
  s.read("n_train", d.n_train);
  s.read("n_test", d.n_test);
  s.read("base_min", d.base_min);
  s.read("base_max", d.base_max);
  s.read("pool_size", d.pool_size);
  s.read("pool_bias", d.pool_bias);
  s.read_enum("holdout_base", d.holdout_base, data::parse_base_kind);
  if (const json* t = s.child("size_threshold")) {
    if (t->is_null()) d.size_threshold.reset();
    else d.size_threshold = t->get<std::size_t>();
  }
  s.read("seed", d.seed);
  s.finish();
}

void read_train(const json& j, training::TrainConfig& t) {
  Section s(j, "train");
  s.read("hidden", t.model.hidden);
  s.read_enum("readout", t.model.readout, model::parse_readout);
  s.read("lambda_ci", t.lambda_ci);
  s.read("learning_rate", t.learning_rate);
  s.read("epochs", t.epochs);
  s.read("batch_size", t.batch_size);
  s.read("k", t.k);
  s.read("tau_start", t.tau_start);
  s.read("tau_end", t.tau_end);
  s.read("hard_samples", t.hard_samples);
  s.read("pns_clamp", t.pns_clamp);
  s.read("contrastive_temperature", t.contrastive_temperature);
  s.read("mask_ratio", t.mask_ratio);
  s.read("mask_ratio_weight", t.mask_ratio_weight);
  s.read("hscic_ridge", t.hscic_ridge);
  s.read("clip_norm", t.clip_norm);
  s.finish();
}

std::optional<causation::CalibrationKind> parse_calibration(const std::string& name) {
  if (name == "auto") return std::nullopt;
  if (name == "binary") return causation::CalibrationKind::binary;
  if (name == "multiclass") return causation::CalibrationKind::multiclass;
  throw DomainError("unknown calibration '" + name + "' (expected auto|binary|multiclass)");
}

std::string calibration_name(const std::optional<causation::CalibrationKind>& k) {
  if (!k) return "auto";
  return *k == causation::CalibrationKind::binary ? "binary" : "multiclass";
}

void read_adapt(const json& j, adaptation::AdaptConfig& a) {
  Section s(j, "adapt");
  s.read("learning_rate", a.learning_rate);
  s.read("epochs", a.epochs);
  s.read("batch_size", a.batch_size);
  s.read_enum("pseudo_label_mode", a.pseudo_label_mode, causation::parse_pseudo_label_mode);
  s.read_enum("calibration", a.calibration, parse_calibration);
  s.read_enum("combine_mode", a.combine_mode, causation::parse_combine_mode);
  s.read_enum("eval_mask", a.eval_mask, model::parse_eval_mask);
  s.finish();
}

void read_eval(const json& j, EvalSection& e) {
  Section s(j, "eval");
  s.read("seeds", e.seeds);
  std::vector<std::string> names;
  const bool present = j.contains("variants");
  s.read("variants", names);
  if (present) {
    e.variants.clear();
    for (const auto& n : names) e.variants.push_back(parse_variant(n));
  }
  s.finish();
}

}  // namespace

RunConfig parse_run_config(const json& doc) {
  if (!doc.is_object()) throw DomainError("run config must be a JSON object");
  std::string profile = "standard";
  if (doc.contains("profile")) profile = doc.at("profile").get<std::string>();
  RunConfig c = profile_defaults(profile);
  Section top(doc, "");
  top.child("profile");
  if (const json* d = top.child("data")) read_data(*d, c.data);
  if (const json* t = top.child("train")) read_train(*t, c.train);
  if (const json* a = top.child("adapt")) read_adapt(*a, c.adapt);
  if (const json* e = top.child("eval")) read_eval(*e, c.eval);
  top.read("out", c.out);
  top.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("config file '" + path + "' not found");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw DomainError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(doc);
}

ordered_json to_json(const RunConfig& c) {
  ordered_json j;
  j["profile"] = c.profile;
  auto& d = j["data"];
  d["source"] = c.data.source;
  d["train_path"] = c.data.train_path;
  d["test_path"] = c.data.test_path;
  d["split"] = to_string(c.data.split);
  d["train_bias"] = c.data.train_bias;
  d["n_train"] = c.data.n_train;
  d["n_test"] = c.data.n_test;
  d["base_min"] = c.data.base_min;
  d["base_max"] = c.data.base_max;
  d["pool_size"] = c.data.pool_size;
  d["pool_bias"] = c.data.pool_bias;
  d["holdout_base"] = data::to_string(c.data.holdout_base);
  d["size_threshold"] = c.data.size_threshold ? ordered_json(*c.data.size_threshold) : ordered_json(nullptr);
  d["seed"] = c.data.seed;
  auto& t = j["train"];
  t["hidden"] = c.train.model.hidden;
  t["readout"] = model::to_string(c.train.model.readout);
  t["lambda_ci"] = c.train.lambda_ci;
  t["learning_rate"] = c.train.learning_rate;
  t["epochs"] = c.train.epochs;
  t["batch_size"] = c.train.batch_size;
  t["k"] = c.train.k;
  t["tau_start"] = c.train.tau_start;
  t["tau_end"] = c.train.tau_end;
  t["hard_samples"] = c.train.hard_samples;
  t["pns_clamp"] = c.train.pns_clamp;
  t["contrastive_temperature"] = c.train.contrastive_temperature;
  t["mask_ratio"] = c.train.mask_ratio;
  t["mask_ratio_weight"] = c.train.mask_ratio_weight;
  t["hscic_ridge"] = c.train.hscic_ridge;
  t["clip_norm"] = c.train.clip_norm;
  auto& a = j["adapt"];
  a["learning_rate"] = c.adapt.learning_rate;
  a["epochs"] = c.adapt.epochs;
  a["batch_size"] = c.adapt.batch_size;
  a["pseudo_label_mode"] = causation::to_string(c.adapt.pseudo_label_mode);
  a["calibration"] = calibration_name(c.adapt.calibration);
  a["combine_mode"] = causation::to_string(c.adapt.combine_mode);
  a["eval_mask"] = model::to_string(c.adapt.eval_mask);
  auto& e = j["eval"];
  e["seeds"] = c.eval.seeds;
  std::vector<std::string> names;
  for (auto v : c.eval.variants) names.push_back(to_string(v));
  e["variants"] = names;
  j["out"] = c.out;
  return j;
}

}  // namespace snigl::pipeline
