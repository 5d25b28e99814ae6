#include "commands.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <fstream>
#include <functional>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "plot.hpp"
#include "snigl/adaptation.hpp"
#include "snigl/error.hpp"
#include "snigl/model.hpp"

namespace snigl::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const MissingInputError*>(&e)) return kMissingInput;
  if (dynamic_cast<const WriteError*>(&e)) return kWriteFailure;
  if (dynamic_cast<const DegenerateError*>(&e)) return kDegenerateCalibration;
  if (dynamic_cast<const DomainError*>(&e)) return kInvalidArguments;
  if (dynamic_cast<const nlohmann::json::exception*>(&e)) return kInvalidArguments;
  return kFailure;
}

std::size_t worker_limit() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SNIGL_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) throw DomainError("SNIGL_THREADS must be a positive integer");
    n = static_cast<std::size_t>(v);
  }
  return n;
}

namespace {

std::mutex log_mutex;

void say(std::ostream& log, const std::string& line) {
  std::lock_guard lock(log_mutex);
  log << line << '\n' << std::flush;
}

// Runs jobs on at most worker_limit() threads; rethrows the first failure.
void run_jobs(std::vector<std::function<void()>> jobs) {
  const std::size_t workers = std::min(worker_limit(), jobs.size());
  if (workers <= 1) {
    for (auto& j : jobs) j();
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w)
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < jobs.size(); i = next++) {
        try {
          jobs[i]();
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw WriteError("cannot create directory '" + dir.string() + "': " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_dir(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw WriteError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw WriteError("write to '" + path.string() + "' failed");
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

// Timestamps live only here so every other artifact is reproducible.
class CommandStamp {
 public:
  CommandStamp(fs::path metadata, std::string command)
      : path_(std::move(metadata)), command_(std::move(command)), started_(utc_now()) {}

  void finish() {
    ordered_json j = ordered_json::object();
    if (std::ifstream in(path_); in) {
      try {
        j = ordered_json::parse(in);
      } catch (const json::exception&) {
        j = ordered_json::object();
      }
    }
    j[command_] = {{"started", started_}, {"finished", utc_now()}};
    write_text(path_, j.dump(2) + "\n");
  }

 private:
  fs::path path_;
  std::string command_;
  std::string started_;
};

std::vector<const data::Graph*> pointers(const data::Dataset& d) {
  std::vector<const data::Graph*> out;
  out.reserve(d.graphs.size());
  for (const auto& g : d.graphs) out.push_back(&g);
  return out;
}

std::string fmt(double x, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << x;
  return s.str();
}

void require_file(const fs::path& p, const std::string& what, const std::string& hint) {
  if (!fs::exists(p)) throw MissingInputError(what + " '" + p.string() + "' not found; " + hint);
}

}  // namespace

DatasetSummary summarize_dataset(const data::Dataset& dataset) {
  DatasetSummary s;
  s.graphs = dataset.graphs.size();
  s.label_counts.assign(dataset.num_classes, 0);
  std::size_t nodes = 0, edges = 0, paired = 0, with_base = 0;
  for (const auto& g : dataset.graphs) {
    nodes += g.num_nodes;
    edges += g.edges.size();
    if (g.label < s.label_counts.size()) ++s.label_counts[g.label];
    if (!g.base.empty() && g.label < data::kMotifClasses) {
      ++with_base;
      paired += g.base == data::to_string(data::paired_base(g.label));
    }
  }
  if (s.graphs > 0) {
    s.mean_nodes = static_cast<double>(nodes) / static_cast<double>(s.graphs);
    s.mean_edges = static_cast<double>(edges) / static_cast<double>(s.graphs);
  }
  if (with_base > 0) s.paired_fraction = static_cast<double>(paired) / static_cast<double>(with_base);
  return s;
}

std::string format_summary(const DatasetSummary& s) {
  std::ostringstream o;
  o << "graphs=" << s.graphs << " mean_nodes=" << fmt(s.mean_nodes, 2) << " mean_edges=" << fmt(s.mean_edges, 2)
    << " labels=[";
  for (std::size_t k = 0; k < s.label_counts.size(); ++k) o << (k ? "," : "") << s.label_counts[k];
  o << "] paired_base=" << fmt(s.paired_fraction, 4);
  return o.str();
}

DatasetSummary cmd_generate(const GenerateOptions& options, std::ostream& log) {
  if (options.dataset != "spmotif") throw DomainError("unknown dataset '" + options.dataset + "' (expected spmotif)");
  if (options.out.empty()) throw DomainError("--out is required");
  data::MotifSpec spec;
  spec.bias = options.bias;
  spec.feature_bias = options.feature_bias;
  spec.base_min = options.base_min;
  spec.base_max = options.base_max;
  spec.validate();
  const auto ds = data::generate_spurious_motif(options.n, spec, options.seed, options.env);
  const fs::path out(options.out);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  data::save_dataset(ds, out.string());
  const auto summary = summarize_dataset(ds);
  say(log, "wrote " + out.string() + ": " + format_summary(summary));
  return summary;
}

DataSplits prepare_data(const DataSection& d) {
  d.validate();
  if (d.source == "files") {
    DataSplits s{data::load_dataset(d.train_path), data::load_dataset(d.test_path)};
    if (s.train.feature_dim != s.test.feature_dim || s.train.num_classes != s.test.num_classes)
      throw DomainError("train and test files disagree on feature width or class count");
    return s;
  }
  if (d.split == SplitScheme::bias_levels) {
    auto s = data::split_bias_levels(d.train_bias, d.n_train / d.train_bias.size(), d.n_test, d.seed, d.base_min,
                                     d.base_max);
    return {std::move(s.train), std::move(s.test)};
  }
  data::MotifSpec spec;
  spec.bias = d.pool_bias;
  spec.feature_bias = d.pool_bias;
  spec.base_min = d.base_min;
  spec.base_max = d.base_max;
  const auto pool = data::generate_spurious_motif(d.pool_size, spec, d.seed);
  auto s = d.split == SplitScheme::base_kind ? data::split_base_kind(pool, d.holdout_base)
                                             : data::split_size_threshold(pool, d.size_threshold);
  return {std::move(s.train), std::move(s.test)};
}

void write_effective_config(const RunConfig& config) {
  write_text(RunPaths{config.out}.config(), to_json(config).dump(2) + "\n");
}

void cmd_train(const RunConfig& config, const std::vector<Variant>& variants, std::ostream& log) {
  config.validate();
  const RunPaths paths{config.out};
  CommandStamp stamp(paths.metadata(), "train");
  write_effective_config(config);
  const auto splits = prepare_data(config.data);
  ensure_dir(paths.train_data().parent_path());
  data::save_dataset(splits.train, paths.train_data().string());
  data::save_dataset(splits.test, paths.test_data().string());
  say(log, "train data: " + format_summary(summarize_dataset(splits.train)));
  say(log, "test data:  " + format_summary(summarize_dataset(splits.test)));

  // One checkpoint per (seed, objective); no_ensemble shares the full model.
  std::set<std::string> models;
  std::vector<Variant> to_train;
  for (auto v : variants)
    if (models.insert(model_dir_of(v)).second) to_train.push_back(v == Variant::no_ensemble ? Variant::full : v);

  const auto test_graphs = pointers(splits.test);
  std::vector<std::function<void()>> jobs;
  for (auto seed : config.eval.seeds)
    for (auto v : to_train)
      jobs.emplace_back([&, seed, v] {
        training::TrainConfig tc = config.train;
        tc.objective = objective_of(v);
        tc.seed = seed;
        tc.model.feature_dim = splits.train.feature_dim;
        tc.model.num_classes = splits.train.num_classes;
        const auto result = training::train(tc, splits.train);
        ensure_dir(paths.model_dir(seed, v));
        model::save_checkpoint(result.params, paths.checkpoint(seed, v).string());
        training::write_epoch_log(result.log, paths.train_log(seed, v).string());
        model::export_masks(test_graphs, result.params, model::Branch::invariant, paths.masks(seed, v).string());
        const auto& last = result.log.back();
        say(log, "seed " + std::to_string(seed) + " " + model_dir_of(v) + ": " + std::to_string(tc.epochs) +
                     " epochs, last loss " + fmt(last.risks.total) + ", train acc " + fmt(last.train_accuracy));
      });
  run_jobs(std::move(jobs));
  stamp.finish();
}

void cmd_adapt(const RunConfig& config, const std::vector<Variant>& variants, std::ostream& log) {
  config.validate();
  const RunPaths paths{config.out};
  require_file(paths.test_data(), "test data", "run train first");
  for (auto seed : config.eval.seeds)
    for (auto v : variants) require_file(paths.checkpoint(seed, v), "checkpoint", "run train first");
  CommandStamp stamp(paths.metadata(), "adapt");
  write_effective_config(config);
  const auto test = data::load_dataset(paths.test_data().string());

  std::vector<std::function<void()>> jobs;
  for (auto seed : config.eval.seeds)
    for (auto v : variants)
      jobs.emplace_back([&, seed, v] {
        const auto params = model::load_checkpoint(paths.checkpoint(seed, v).string());
        adaptation::AdaptConfig ac = config.adapt;
        ac.seed = seed;
        ac.no_ensemble = v == Variant::no_ensemble || v == Variant::erm_baseline;
        const auto result = adaptation::adapt(params, test, ac);
        ensure_dir(paths.variant_dir(seed, v));
        adaptation::write_predictions(result.predictions, paths.predictions(seed, v).string());
        std::string line = "seed " + std::to_string(seed) + " " + to_string(v) + ": invariant acc " +
                           fmt(adaptation::invariant_accuracy(result.predictions));
        if (result.calibration) {
          model::save_checkpoint(result.params, (paths.variant_dir(seed, v) / "adapted.bin").string());
          write_text(paths.variant_dir(seed, v) / "calibration.txt", result.calibration->to_record());
          line += ", head fit " + fmt(result.head_train_accuracy) + ", final acc " +
                  fmt(adaptation::accuracy(result.predictions));
        }
        say(log, line);
      });
  run_jobs(std::move(jobs));
  stamp.finish();
}

MetricsReport cmd_eval(const RunConfig& config, const std::vector<Variant>& variants, std::ostream& log) {
  config.validate();
  const RunPaths paths{config.out};
  for (auto v : variants)
    for (auto seed : config.eval.seeds) require_file(paths.predictions(seed, v), "predictions", "run adapt first");
  CommandStamp stamp(paths.metadata(), "eval");
  write_effective_config(config);

  MetricsReport report;
  for (auto v : variants) {
    VariantMetrics m;
    m.variant = v;
    for (auto seed : config.eval.seeds) {
      const auto preds = adaptation::read_predictions(paths.predictions(seed, v).string());
      if (preds.empty()) throw MissingInputError("predictions for seed " + std::to_string(seed) + " are empty");
      report.num_classes = preds.front().invariant.size();
      m.seeds.push_back(seed);
      m.accuracy.push_back(adaptation::accuracy(preds));
      m.invariant_accuracy.push_back(adaptation::invariant_accuracy(preds));
      if (report.num_classes == 2) {
        std::vector<double> scores;
        std::vector<std::size_t> labels;
        for (const auto& p : preds)
          if (p.true_label) {
            scores.push_back(p.final()[1]);
            labels.push_back(*p.true_label);
          }
        m.auc.push_back(adaptation::roc_auc(scores, labels));
      }
      if (fs::exists(paths.masks(seed, v))) {
        try {
          const auto [motif, other] = mask_edge_means(paths.masks(seed, v).string());
          m.mask_motif.push_back(motif);
          m.mask_other.push_back(other);
        } catch (const DomainError&) {
          // Ingested data without motif annotations.
        }
      }
    }
    if (m.mask_motif.size() != m.seeds.size()) {
      m.mask_motif.clear();
      m.mask_other.clear();
    }
    const auto acc = m.accuracy_summary();
    std::string line = to_string(v) + ": accuracy " + fmt(acc.mean) + " +- " + fmt(acc.std);
    if (const auto auc = m.auc_summary()) line += ", auc " + fmt(auc->mean) + " +- " + fmt(auc->std);
    say(log, line);
    report.variants.push_back(std::move(m));
  }
  report.validate();
  save_report(report, paths.report().string());
  save_report_csv(report, paths.report_csv().string());
  stamp.finish();
  return report;
}

void cmd_plot(const fs::path& run_dir, std::ostream& log) {
  const RunPaths paths{run_dir};
  require_file(paths.config(), "effective config", "run train first");
  require_file(paths.report(), "metrics report", "run eval first");
  const auto config = load_run_config(paths.config().string());
  const auto report = load_report(paths.report().string());
  ensure_dir(paths.plots());

  std::vector<LossSeries> losses;
  std::set<std::string> seen;
  const auto seed = config.eval.seeds.front();
  for (const auto& m : report.variants) {
    const auto model = model_dir_of(m.variant);
    if (!seen.insert(model).second) continue;
    require_file(paths.train_log(seed, m.variant), "training log", "run train first");
    const auto log_rows = training::read_epoch_log(paths.train_log(seed, m.variant).string());
    if (log_rows.empty()) throw MissingInputError("training log '" + paths.train_log(seed, m.variant).string() + "' is empty");
    losses.push_back({model, log_rows});
  }
  const Variant mask_variant = report.variants.front().variant;
  require_file(paths.masks(seed, mask_variant), "mask export", "run train first");
  CommandStamp stamp(paths.metadata(), "plot");
  write_loss_curves(losses, paths.plots() / "loss_curve");
  write_ablation_bars(report, paths.plots() / "ablation_bars");
  write_mask_overlay(paths.masks(seed, mask_variant), 4, paths.plots() / "mask_overlay");
  say(log, "wrote plots under " + paths.plots().string());
  stamp.finish();
}

}  // namespace snigl::pipeline
