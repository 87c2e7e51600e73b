#pragma once

// Pipeline drivers behind the CLI subcommands: generate, train, eval, and
// sweep. Each stage validates the dataset hash embedded by the previous one
// and every artifact of a run lands in one output directory.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "arl/io.hpp"

namespace arl {

namespace fs = std::filesystem;

// Desk-scale reference setup: a dominant group "alpha" that is almost fully
// labeled and an under-represented group "beta" whose identities are mostly
// unlabeled. Small scale s keeps the softmax informative at a few dozen
// classes. Shipped as configs/standard.json.
inline ExperimentConfig standard_config() {
  ExperimentConfig cfg;
  cfg.population.observation_dim = 24;
  cfg.population.intra_class_noise = 0.14;
  cfg.population.subspace_overlap = 0.1;
  cfg.population.max_identity_cosine = 0.5;
  cfg.population.groups = {
      {"alpha", 30, 6, 11, 8, 0.7, 0.8, 10, 5},
      {"beta", 46, 6, 22, 8, 0.5, 4.0 / 46.0, 10, 5},
  };
  cfg.train.hp.s = 10.0;
  cfg.train.hp.lr = 0.4;
  cfg.train.hp.labeled_per_batch = 24;
  cfg.train.hp.unlabeled_per_batch = 8;
  cfg.train.mode = Mode::kArlC;
  cfg.train.seed = 1;
  cfg.train.embed_dim = 16;
  cfg.train.phase1_epochs = 30;
  cfg.train.phase2_epochs = 100;
  cfg.train.phase2_lr_factor = 0.5;
  cfg.train.select_quota_per_group = 200;
  cfg.fpr_targets = {1e-1, 1e-2, 1e-3};
  return cfg;
}

inline Dataset build_dataset(const ExperimentConfig& cfg) {
  Rng root(cfg.train.seed);
  Rng gen_rng = root.split("population");
  Dataset ds = generate_population(cfg.population, gen_rng);
  if (cfg.planted_overlap_count > 0) {
    Rng plant_rng = root.split("plant-overlap");
    ds.unlabeled = plant_overlap(ds, ds.unlabeled, cfg.planted_overlap_count,
                                 cfg.population.intra_class_noise, plant_rng);
  }
  return ds;
}

// generate: write the dataset (with manifest) into out_dir/dataset.json.
inline std::string cmd_generate(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  Dataset ds = build_dataset(cfg);
  std::string path = (fs::path(cfg.out_dir) / "dataset.json").string();
  save_dataset(ds, cfg, path);
  return path;
}

struct TrainOutputs {
  std::string phase1_checkpoint;
  std::string phase2_checkpoint;  // empty in baseline mode
  std::string metrics_csv;
  TrainResult result;
};

// train: run both phases against a generated dataset, emitting checkpoints
// at the phase boundaries plus the per-step metrics log.
inline TrainOutputs cmd_train(const ExperimentConfig& cfg, const std::string& dataset_path) {
  LoadedDataset loaded = load_dataset(dataset_path);
  std::uint64_t hash = config_hash(cfg);
  if (loaded.config_hash_hex != hash_hex(hash) || loaded.seed != cfg.train.seed)
    throw ChecksumMismatch("dataset " + dataset_path + " was generated from a different config");

  fs::create_directories(cfg.out_dir);
  TrainOutputs out;
  out.result = run_training(loaded.data, cfg.train);

  std::string prefix = (fs::path(cfg.out_dir) / mode_name(cfg.train.mode)).string();
  out.phase1_checkpoint = prefix + ".phase1.ckpt";
  save_checkpoint({1, hash, cfg.train.seed, out.result.phase1_model, out.result.phase1_bank},
                  out.phase1_checkpoint);
  if (cfg.train.mode != Mode::kBaseline) {
    out.phase2_checkpoint = prefix + ".phase2.ckpt";
    save_checkpoint({2, hash, cfg.train.seed, out.result.model, out.result.bank},
                    out.phase2_checkpoint);
  }
  out.metrics_csv = prefix + ".metrics.csv";
  save_metrics_csv(out.result.metrics, hash, cfg.train.seed, out.metrics_csv);
  return out;
}

struct EvalOutputs {
  std::string report_csv;
  std::string summary_json;
  EvalReport report;
};

// eval: score a checkpoint against the dataset's held-out pairs. With a
// baseline summary, percent metrics carry "(delta)" suffixes as well.
inline EvalOutputs cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                            const std::string& dataset_path,
                            const std::string& baseline_report_path = "") {
  LoadedDataset loaded = load_dataset(dataset_path);
  Checkpoint ck = load_checkpoint(checkpoint_path);
  if (hash_hex(ck.config_hash) != loaded.config_hash_hex || ck.seed != loaded.seed)
    throw ChecksumMismatch("checkpoint " + checkpoint_path +
                           " does not belong to dataset " + dataset_path);

  EvalOutputs out;
  out.report = evaluate(loaded.data.test_images, ck.model, cfg.fpr_targets);

  EvalReport baseline;
  bool have_baseline = false;
  if (!baseline_report_path.empty()) {
    std::ifstream in(baseline_report_path);
    if (!in) throw IoError("cannot open baseline report: " + baseline_report_path);
    baseline = report_from_json(json::parse(in).at("report"));
    have_baseline = true;
  }

  fs::create_directories(cfg.out_dir);
  std::string stem = fs::path(checkpoint_path).stem().string();  // e.g. arl_c.phase2
  out.report_csv = (fs::path(cfg.out_dir) / (stem + ".report.csv")).string();
  out.summary_json = (fs::path(cfg.out_dir) / (stem + ".summary.json")).string();
  save_report_csv(out.report, ck.config_hash, ck.seed, out.report_csv,
                  have_baseline ? &baseline : nullptr);

  json summary{{"config_hash", hash_hex(ck.config_hash)},
               {"seed", ck.seed},
               {"checkpoint", fs::path(checkpoint_path).filename().string()},
               {"phase", ck.phase},
               {"report", report_to_json(out.report)}};
  std::ofstream js(out.summary_json);
  if (!js) throw IoError("cannot write summary: " + out.summary_json);
  js << summary.dump(1) << "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Sweep: cartesian grid of config overrides x seeds, one run per cell.

struct SweepGrid {
  // Dotted config paths, e.g. "hyperparams.t" -> {0.1, 0.3, 0.5}.
  std::vector<std::pair<std::string, std::vector<json>>> parameters;
  std::vector<std::uint64_t> seeds;
};

inline SweepGrid load_grid(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open grid: " + path);
  json j = json::parse(in, nullptr, true, true);
  SweepGrid g;
  for (const auto& [key, values] : j.at("parameters").items())
    g.parameters.emplace_back(key, std::vector<json>(values.begin(), values.end()));
  j.at("seeds").get_to(g.seeds);
  if (g.seeds.empty()) throw InvalidSpec("sweep: no seeds");
  return g;
}

inline void apply_override(json& config, const std::string& dotted, const json& value) {
  json* node = &config;
  size_t start = 0;
  while (true) {
    size_t dotpos = dotted.find('.', start);
    std::string key = dotted.substr(start, dotpos - start);
    if (dotpos == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dotpos + 1;
  }
}

struct SweepCell {
  std::map<std::string, json> overrides;
  std::uint64_t seed = 0;
  EvalReport report;
};

struct SweepResult {
  std::vector<SweepCell> cells;
  std::string csv_path;
};

// One generate+train+eval run per (grid point, seed); the aggregate CSV
// carries per-cell rows plus mean and spread across seeds per grid point.
inline SweepResult cmd_sweep(const ExperimentConfig& base_cfg, const SweepGrid& grid) {
  json base_json = base_cfg;
  std::vector<std::map<std::string, json>> points{{}};
  for (const auto& [key, values] : grid.parameters) {
    std::vector<std::map<std::string, json>> next;
    for (const auto& point : points) {
      for (const json& v : values) {
        auto p = point;
        p[key] = v;
        next.push_back(std::move(p));
      }
    }
    points = std::move(next);
  }

  SweepResult out;
  fs::create_directories(base_cfg.out_dir);
  int cell_id = 0;
  for (const auto& point : points) {
    for (std::uint64_t seed : grid.seeds) {
      json cj = base_json;
      for (const auto& [key, v] : point) apply_override(cj, key, v);
      apply_override(cj, "seed", seed);
      ExperimentConfig cfg = cj.get<ExperimentConfig>();
      cfg.out_dir = (fs::path(base_cfg.out_dir) / ("cell" + std::to_string(cell_id++))).string();

      std::string dataset = cmd_generate(cfg);
      TrainOutputs tr = cmd_train(cfg, dataset);
      std::string ckpt = cfg.train.mode == Mode::kBaseline ? tr.phase1_checkpoint
                                                           : tr.phase2_checkpoint;
      EvalOutputs ev = cmd_eval(cfg, ckpt, dataset);
      out.cells.push_back({point, seed, std::move(ev.report)});
    }
  }

  // Aggregate CSV: per-cell rows then per-point mean/spread across seeds.
  out.csv_path = (fs::path(base_cfg.out_dir) / "sweep.csv").string();
  std::ofstream csv(out.csv_path);
  if (!csv) throw IoError("cannot write sweep csv: " + out.csv_path);
  csv << "# base_config_hash=" << hash_hex(config_hash(base_cfg)) << " seeds=";
  for (size_t i = 0; i < grid.seeds.size(); ++i) csv << (i ? "," : "") << grid.seeds[i];
  csv << "\n";
  csv << "point,seed,group,metric,fpr,value\n";
  auto point_key = [](const std::map<std::string, json>& p) {
    std::string s;
    for (const auto& [k, v] : p) s += (s.empty() ? "" : " ") + k + "=" + v.dump();
    return s.empty() ? std::string("-") : s;
  };
  struct Key {
    std::string point, group, metric;
    double fpr;
    bool operator<(const Key& o) const {
      return std::tie(point, group, metric, fpr) < std::tie(o.point, o.group, o.metric, o.fpr);
    }
  };
  std::map<Key, Vec> agg;
  for (const SweepCell& cell : out.cells) {
    std::string pk = point_key(cell.overrides);
    for (const GroupReport& g : cell.report.groups) {
      for (const auto& [target, value] : g.tpr_at) {
        if (!value) continue;
        csv << pk << ',' << cell.seed << ',' << g.group << ",tpr," << fmt_double(target)
            << ',' << fmt_double(*value) << "\n";
        agg[{pk, g.group, "tpr", target}].push_back(*value);
      }
      csv << pk << ',' << cell.seed << ',' << g.group << ",accuracy,,"
          << fmt_double(g.accuracy.accuracy) << "\n";
      agg[{pk, g.group, "accuracy", 0.0}].push_back(g.accuracy.accuracy);
      csv << pk << ',' << cell.seed << ',' << g.group << ",median_diff,,"
          << fmt_double(g.medians.difference) << "\n";
      agg[{pk, g.group, "median_diff", 0.0}].push_back(g.medians.difference);
    }
  }
  csv << "point,,group,metric,fpr,mean,std\n";
  for (const auto& [key, values] : agg) {
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    double sd = values.size() > 1 ? std::sqrt(ss / static_cast<double>(values.size() - 1)) : 0.0;
    csv << key.point << ",,"
        << key.group << ',' << key.metric << ','
        << (key.metric == "tpr" ? fmt_double(key.fpr) : std::string()) << ','
        << fmt_double(mean) << ',' << fmt_double(sd) << "\n";
  }
  return out;
}

}  // namespace arl
