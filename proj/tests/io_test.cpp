#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "arl/experiment.hpp"

using namespace arl;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("arl_io_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.population.observation_dim = 12;
  cfg.population.intra_class_noise = 0.3;
  cfg.population.groups = {
      {"a", 6, 3, 1, 3, 0.7, 1.0, 3, 3},
      {"b", 8, 3, 2, 3, 0.5, 0.25, 3, 3},
  };
  cfg.train.hp.s = 16.0;
  cfg.train.hp.lr = 0.3;
  cfg.train.hp.labeled_per_batch = 9;
  cfg.train.hp.unlabeled_per_batch = 3;
  cfg.train.embed_dim = 8;
  cfg.train.phase1_epochs = 4;
  cfg.train.phase2_epochs = 3;
  cfg.train.select_quota_per_group = 20;
  cfg.train.seed = 3;
  cfg.fpr_targets = {1e-1, 1e-2};
  return cfg;
}

}  // namespace

TEST(ConfigIo, JsonRoundTrip) {
  ExperimentConfig cfg = standard_config();
  cfg.train.mode = Mode::kArlCG;
  cfg.train.seed = 99;
  json j = cfg;
  ExperimentConfig back = j.get<ExperimentConfig>();
  EXPECT_EQ(back.train.mode, Mode::kArlCG);
  EXPECT_EQ(back.train.seed, 99u);
  EXPECT_EQ(back.population.groups.size(), cfg.population.groups.size());
  EXPECT_EQ(back.population.groups[1].tag, "beta");
  EXPECT_DOUBLE_EQ(back.train.hp.lambda_c, cfg.train.hp.lambda_c);
  EXPECT_EQ(back.fpr_targets, cfg.fpr_targets);
  EXPECT_EQ(config_hash(back), config_hash(cfg));
}

TEST(ConfigIo, HashTracksDatasetRelevantFieldsOnly) {
  ExperimentConfig a = standard_config();
  ExperimentConfig b = a;
  b.train.mode = Mode::kBaseline;  // mode does not change the dataset
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.train.seed = 2;
  EXPECT_NE(config_hash(a), config_hash(b));
  ExperimentConfig c = a;
  c.population.intra_class_noise = 0.5;
  EXPECT_NE(config_hash(a), config_hash(c));
  ExperimentConfig d = a;
  d.planted_overlap_count = 3;
  EXPECT_NE(config_hash(a), config_hash(d));
}

TEST(ConfigIo, LoadRejectsMissingFile) {
  EXPECT_THROW(load_config("/nonexistent/config.json"), IoError);
}

#ifdef ARL_SOURCE_DIR
TEST(ConfigIo, ShippedStandardConfigStaysInSync) {
  ExperimentConfig shipped = load_config(std::string(ARL_SOURCE_DIR) + "/configs/standard.json");
  ExperimentConfig builtin = standard_config();
  EXPECT_EQ(config_hash(shipped), config_hash(builtin));
  EXPECT_EQ(shipped.train.mode, builtin.train.mode);
  EXPECT_DOUBLE_EQ(shipped.train.hp.s, builtin.train.hp.s);
  EXPECT_EQ(shipped.train.phase2_epochs, builtin.train.phase2_epochs);
}
#endif

TEST(DatasetIo, RoundTripIsExact) {
  fs::path dir = temp_dir("dataset");
  ExperimentConfig cfg = tiny_config();
  cfg.planted_overlap_count = 2;
  Dataset ds = build_dataset(cfg);
  std::string path = (dir / "dataset.json").string();
  save_dataset(ds, cfg, path);

  LoadedDataset loaded = load_dataset(path);
  EXPECT_EQ(loaded.config_hash_hex, hash_hex(config_hash(cfg)));
  EXPECT_EQ(loaded.seed, cfg.train.seed);
  const Dataset& back = loaded.data;
  EXPECT_EQ(back.n_classes, ds.n_classes);
  ASSERT_EQ(back.labeled.size(), ds.labeled.size());
  for (size_t i = 0; i < ds.labeled.size(); ++i) {
    EXPECT_EQ(back.labeled[i].observation, ds.labeled[i].observation);  // bit-exact
    EXPECT_EQ(back.labeled[i].class_id, ds.labeled[i].class_id);
    EXPECT_EQ(back.labeled[i].gender_score, ds.labeled[i].gender_score);
  }
  ASSERT_EQ(back.unlabeled.size(), ds.unlabeled.size());
  for (size_t i = 0; i < ds.unlabeled.size(); ++i) {
    EXPECT_EQ(back.unlabeled[i].observation, ds.unlabeled[i].observation);
    EXPECT_EQ(back.unlabeled[i].planted_class, ds.unlabeled[i].planted_class);
  }
  EXPECT_EQ(back.test_images.size(), ds.test_images.size());
  EXPECT_EQ(back.class_means, ds.class_means);
}

TEST(DatasetIo, GenerateIsByteDeterministic) {
  fs::path d1 = temp_dir("gen1"), d2 = temp_dir("gen2");
  ExperimentConfig cfg = tiny_config();
  cfg.out_dir = d1.string();
  std::string p1 = cmd_generate(cfg);
  cfg.out_dir = d2.string();
  std::string p2 = cmd_generate(cfg);
  EXPECT_EQ(slurp(p1), slurp(p2));
}

TEST(CheckpointIo, RoundTripIsExact) {
  fs::path dir = temp_dir("ckpt");
  Rng rng(17);
  Checkpoint ck;
  ck.phase = 2;
  ck.config_hash = 0xdeadbeefcafef00dull;
  ck.seed = 42;
  ck.model = EmbeddingModel::random_init(6, 9, rng);
  ck.bank.dim = 6;
  for (int i = 0; i < 4; ++i) ck.bank.labeled.push_back(normalize(rng.normal_vec(6)));
  ck.bank.append_unlabeled(normalize(rng.normal_vec(6)), 7, "alpha");
  ck.bank.append_unlabeled(normalize(rng.normal_vec(6)), 9, "beta");

  std::string path = (dir / "model.ckpt").string();
  save_checkpoint(ck, path);
  Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(back.phase, 2);
  EXPECT_EQ(back.config_hash, ck.config_hash);
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.model.projection, ck.model.projection);
  EXPECT_EQ(back.bank.labeled_count(), 4);
  EXPECT_EQ(back.bank.unlabeled_count(), 2);
  EXPECT_EQ(back.bank.column(4).c, ck.bank.column(4).c);
  EXPECT_EQ(back.bank.unlabeled_ethnicity, ck.bank.unlabeled_ethnicity);
  EXPECT_EQ(back.bank.column_of_pseudo(9), 5);
}

TEST(CheckpointIo, RejectsCorruptFiles) {
  fs::path dir = temp_dir("ckpt_bad");
  std::string path = (dir / "bad.ckpt").string();
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTACKPT";
  }
  EXPECT_THROW(load_checkpoint(path), IoError);
  {
    std::ofstream out(path, std::ios::binary);
    out << "ARLCKPT1";  // header only, then truncated
  }
  EXPECT_THROW(load_checkpoint(path), IoError);
  EXPECT_THROW(load_checkpoint((dir / "missing.ckpt").string()), IoError);
}

TEST(FormatDouble, RoundTripsExactly) {
  Rng rng(18);
  for (int i = 0; i < 2000; ++i) {
    double x = std::exp(rng.uniform(-30.0, 30.0)) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    EXPECT_EQ(std::strtod(fmt_double(x).c_str(), nullptr), x);
  }
  EXPECT_EQ(fmt_double(0.25), "0.25");
  EXPECT_EQ(fmt_double(1.0), "1");
}

TEST(Pipeline, TrainRefusesForeignDataset) {
  fs::path dir = temp_dir("mismatch");
  ExperimentConfig cfg = tiny_config();
  cfg.out_dir = dir.string();
  std::string dataset = cmd_generate(cfg);
  ExperimentConfig other = cfg;
  other.train.seed = 12345;
  EXPECT_THROW(cmd_train(other, dataset), ChecksumMismatch);
}

TEST(Pipeline, EvalRefusesForeignCheckpoint) {
  fs::path dir = temp_dir("mismatch2");
  ExperimentConfig cfg = tiny_config();
  cfg.train.mode = Mode::kBaseline;
  cfg.out_dir = (dir / "run").string();
  std::string dataset = cmd_generate(cfg);
  TrainOutputs tr = cmd_train(cfg, dataset);

  ExperimentConfig other = cfg;
  other.train.seed = 777;
  other.out_dir = (dir / "other").string();
  std::string other_dataset = cmd_generate(other);
  EXPECT_THROW(cmd_eval(cfg, tr.phase1_checkpoint, other_dataset), ChecksumMismatch);
}

TEST(Pipeline, EndToEndRerunIsByteIdentical) {
  ExperimentConfig cfg = tiny_config();
  cfg.train.mode = Mode::kArlC;

  auto run = [&cfg](const fs::path& dir) {
    ExperimentConfig c = cfg;
    c.out_dir = dir.string();
    std::string dataset = cmd_generate(c);
    TrainOutputs tr = cmd_train(c, dataset);
    EvalOutputs ev = cmd_eval(c, tr.phase2_checkpoint, dataset);
    return std::tuple{slurp(dataset), slurp(tr.metrics_csv), slurp(ev.report_csv),
                      slurp(ev.summary_json), slurp(tr.phase2_checkpoint)};
  };
  auto a = run(temp_dir("rerun1"));
  auto b = run(temp_dir("rerun2"));
  EXPECT_EQ(std::get<0>(a), std::get<0>(b));
  EXPECT_EQ(std::get<1>(a), std::get<1>(b));
  EXPECT_EQ(std::get<2>(a), std::get<2>(b));
  EXPECT_EQ(std::get<3>(a), std::get<3>(b));
  EXPECT_EQ(std::get<4>(a), std::get<4>(b));
}

TEST(Pipeline, DeltaReportCarriesParenthesizedGains) {
  fs::path dir = temp_dir("delta");
  ExperimentConfig cfg = tiny_config();
  cfg.out_dir = dir.string();
  cfg.train.mode = Mode::kBaseline;
  std::string dataset = cmd_generate(cfg);
  TrainOutputs base = cmd_train(cfg, dataset);
  EvalOutputs base_ev = cmd_eval(cfg, base.phase1_checkpoint, dataset);

  cfg.train.mode = Mode::kArl;
  TrainOutputs arl = cmd_train(cfg, dataset);
  EvalOutputs arl_ev = cmd_eval(cfg, arl.phase2_checkpoint, dataset, base_ev.summary_json);

  std::string csv = slurp(arl_ev.report_csv);
  EXPECT_NE(csv.find("("), std::string::npos);
  // value(delta) formatting like 85.00(1.25) on the tpr rows
  std::istringstream lines(csv);
  std::string line;
  bool saw_tpr_delta = false;
  while (std::getline(lines, line)) {
    if (line.find(",tpr,") != std::string::npos && line.find("(") != std::string::npos)
      saw_tpr_delta = true;
  }
  EXPECT_TRUE(saw_tpr_delta);
}

TEST(Pipeline, MetricsFileEmbedsHashAndSeed) {
  fs::path dir = temp_dir("stamp");
  ExperimentConfig cfg = tiny_config();
  cfg.out_dir = dir.string();
  cfg.train.mode = Mode::kBaseline;
  std::string dataset = cmd_generate(cfg);
  TrainOutputs tr = cmd_train(cfg, dataset);
  std::string head = slurp(tr.metrics_csv).substr(0, 80);
  EXPECT_NE(head.find(hash_hex(config_hash(cfg))), std::string::npos);
  EXPECT_NE(head.find("seed=3"), std::string::npos);
}

TEST(Sweep, GridOfOneMatchesSingleRun) {
  fs::path dir = temp_dir("sweep1");
  ExperimentConfig cfg = tiny_config();
  cfg.train.mode = Mode::kBaseline;
  cfg.out_dir = dir.string();
  SweepGrid grid;
  grid.seeds = {3};
  SweepResult sr = cmd_sweep(cfg, grid);
  ASSERT_EQ(sr.cells.size(), 1u);

  ExperimentConfig single = cfg;
  single.out_dir = (dir / "single").string();
  std::string dataset = cmd_generate(single);
  TrainOutputs tr = cmd_train(single, dataset);
  EvalOutputs ev = cmd_eval(single, tr.phase1_checkpoint, dataset);
  ASSERT_EQ(sr.cells[0].report.groups.size(), ev.report.groups.size());
  for (size_t g = 0; g < ev.report.groups.size(); ++g)
    EXPECT_EQ(sr.cells[0].report.groups[g].accuracy.accuracy,
              ev.report.groups[g].accuracy.accuracy);
}

TEST(Sweep, GridTimesSeedsProducesAllCells) {
  fs::path dir = temp_dir("sweep9");
  ExperimentConfig cfg = tiny_config();
  cfg.train.mode = Mode::kArlC;
  cfg.train.phase1_epochs = 2;
  cfg.train.phase2_epochs = 2;
  cfg.out_dir = dir.string();
  SweepGrid grid;
  grid.parameters = {{"hyperparams.t", {json(0.1), json(0.3), json(0.5)}}};
  grid.seeds = {1, 2, 3};
  SweepResult sr = cmd_sweep(cfg, grid);
  EXPECT_EQ(sr.cells.size(), 9u);
  std::string csv = slurp(sr.csv_path);
  EXPECT_NE(csv.find("hyperparams.t=0.1"), std::string::npos);
  EXPECT_NE(csv.find("mean"), std::string::npos);
}

#ifdef ARL_CLI_PATH
TEST(Cli, EndToEndSubcommands) {
  fs::path dir = temp_dir("cli");
  ExperimentConfig cfg = tiny_config();
  cfg.out_dir = (dir / "run").string();
  {
    std::ofstream out(dir / "config.json");
    out << json(cfg).dump(1);
  }
  std::string cli = ARL_CLI_PATH;
  auto sh = [&dir](const std::string& cmd) {
    return std::system((cmd + " >> " + (dir / "log.txt").string() + " 2>&1").c_str());
  };
  std::string cfg_arg = " --config " + (dir / "config.json").string();
  EXPECT_EQ(sh(cli + " generate" + cfg_arg), 0);
  EXPECT_EQ(sh(cli + " train" + cfg_arg + " --mode baseline --dataset " +
               (dir / "run/dataset.json").string()),
            0);
  EXPECT_EQ(sh(cli + " eval" + cfg_arg + " --dataset " + (dir / "run/dataset.json").string() +
               " --checkpoint " + (dir / "run/baseline.phase1.ckpt").string()),
            0);
  EXPECT_TRUE(fs::exists(dir / "run/baseline.phase1.report.csv"));
  EXPECT_TRUE(fs::exists(dir / "run/baseline.phase1.summary.json"));

  // errors surface as machine-readable records with nonzero exit
  EXPECT_NE(sh(cli + " train" + cfg_arg + " --dataset /nonexistent.json"), 0);
  EXPECT_NE(sh(cli + " train" + cfg_arg + " --seed 999 --dataset " +
               (dir / "run/dataset.json").string()),
            0);
}
#endif
