#pragma once

// Persistence: experiment config (JSON), dataset files (JSON with an
// embedded manifest), checkpoints (flat little-endian binary), and the CSV
// metrics/report formats. Every output embeds the dataset hash and seed so
// mismatched pipeline stages are refused instead of silently mixed.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "arl/core.hpp"
#include "arl/eval.hpp"
#include "arl/model.hpp"
#include "arl/synth.hpp"
#include "arl/train.hpp"

namespace arl {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Experiment configuration

struct ExperimentConfig {
  PopulationSpec population;
  TrainConfig train;
  std::vector<double> fpr_targets = default_fpr_targets();
  int planted_overlap_count = 0;  // contamination injected by `generate`
  std::string out_dir = "out";
};

inline void to_json(json& j, const GroupSpec& g) {
  j = json{{"tag", g.tag},
           {"identity_count", g.identity_count},
           {"images_per_identity", g.images_per_identity},
           {"subspace_seed", g.subspace_seed},
           {"subspace_dim", g.subspace_dim},
           {"gender_mix", g.gender_mix},
           {"labeled_fraction", g.labeled_fraction},
           {"test_identity_count", g.test_identity_count},
           {"test_images_per_identity", g.test_images_per_identity}};
}

inline void from_json(const json& j, GroupSpec& g) {
  j.at("tag").get_to(g.tag);
  j.at("identity_count").get_to(g.identity_count);
  j.at("images_per_identity").get_to(g.images_per_identity);
  g.subspace_seed = j.value("subspace_seed", std::uint64_t{0});
  g.subspace_dim = j.value("subspace_dim", 4);
  g.gender_mix = j.value("gender_mix", 0.5);
  g.labeled_fraction = j.value("labeled_fraction", 1.0);
  g.test_identity_count = j.value("test_identity_count", 0);
  g.test_images_per_identity = j.value("test_images_per_identity", 4);
}

inline void to_json(json& j, const PopulationSpec& p) {
  j = json{{"groups", p.groups},
           {"observation_dim", p.observation_dim},
           {"intra_class_noise", p.intra_class_noise},
           {"subspace_overlap", p.subspace_overlap},
           {"max_identity_cosine", p.max_identity_cosine}};
}

inline void from_json(const json& j, PopulationSpec& p) {
  j.at("groups").get_to(p.groups);
  j.at("observation_dim").get_to(p.observation_dim);
  j.at("intra_class_noise").get_to(p.intra_class_noise);
  p.subspace_overlap = j.value("subspace_overlap", 0.2);
  p.max_identity_cosine = j.value("max_identity_cosine", 0.6);
}

inline void to_json(json& j, const Hyperparams& h) {
  j = json{{"s", h.s},
           {"m", h.m},
           {"t", h.t},
           {"lambda_u", h.lambda_u},
           {"lambda_c", h.lambda_c},
           {"lr", h.lr},
           {"momentum", h.momentum},
           {"weight_decay", h.weight_decay},
           {"labeled_per_batch", h.labeled_per_batch},
           {"unlabeled_per_batch", h.unlabeled_per_batch},
           {"labeled_vs_full_bank", h.labeled_vs_full_bank}};
}

inline void from_json(const json& j, Hyperparams& h) {
  Hyperparams d;
  h.s = j.value("s", d.s);
  h.m = j.value("m", d.m);
  h.t = j.value("t", d.t);
  h.lambda_u = j.value("lambda_u", d.lambda_u);
  h.lambda_c = j.value("lambda_c", d.lambda_c);
  h.lr = j.value("lr", d.lr);
  h.momentum = j.value("momentum", d.momentum);
  h.weight_decay = j.value("weight_decay", d.weight_decay);
  h.labeled_per_batch = j.value("labeled_per_batch", d.labeled_per_batch);
  h.unlabeled_per_batch = j.value("unlabeled_per_batch", d.unlabeled_per_batch);
  h.labeled_vs_full_bank = j.value("labeled_vs_full_bank", d.labeled_vs_full_bank);
}

inline void to_json(json& j, const ExperimentConfig& c) {
  j = json{{"population", c.population},
           {"hyperparams", c.train.hp},
           {"mode", mode_name(c.train.mode)},
           {"seed", c.train.seed},
           {"embed_dim", c.train.embed_dim},
           {"phase1_epochs", c.train.phase1_epochs},
           {"phase2_epochs", c.train.phase2_epochs},
           {"phase1_lr", c.train.phase1_lr},
           {"phase2_lr_factor", c.train.phase2_lr_factor},
           {"overlap_threshold", c.train.overlap_threshold},
           {"select_quota_per_group", c.train.select_quota_per_group},
           {"fpr_targets", c.fpr_targets},
           {"planted_overlap_count", c.planted_overlap_count},
           {"out_dir", c.out_dir}};
}

inline void from_json(const json& j, ExperimentConfig& c) {
  j.at("population").get_to(c.population);
  if (j.contains("hyperparams")) j.at("hyperparams").get_to(c.train.hp);
  c.train.mode = parse_mode(j.value("mode", std::string("arl_c")));
  c.train.seed = j.value("seed", std::uint64_t{1});
  TrainConfig d;
  c.train.embed_dim = j.value("embed_dim", d.embed_dim);
  c.train.phase1_epochs = j.value("phase1_epochs", d.phase1_epochs);
  c.train.phase2_epochs = j.value("phase2_epochs", d.phase2_epochs);
  c.train.phase1_lr = j.value("phase1_lr", d.phase1_lr);
  c.train.phase2_lr_factor = j.value("phase2_lr_factor", d.phase2_lr_factor);
  c.train.overlap_threshold = j.value("overlap_threshold", d.overlap_threshold);
  c.train.select_quota_per_group = j.value("select_quota_per_group", d.select_quota_per_group);
  if (j.contains("fpr_targets")) j.at("fpr_targets").get_to(c.fpr_targets);
  c.planted_overlap_count = j.value("planted_overlap_count", 0);
  c.out_dir = j.value("out_dir", std::string("out"));
}

// Hash of the dataset-determining part of the config (population + seed +
// contamination). Reruns with a different mode still evaluate against the
// same dataset; anything that changes the generated data changes the hash.
inline std::uint64_t config_hash(const ExperimentConfig& c) {
  json j{{"population", c.population},
         {"seed", c.train.seed},
         {"planted_overlap_count", c.planted_overlap_count}};
  return detail::fnv1a64(j.dump());
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  json j = json::parse(in, nullptr, true, true);  // allow comments
  return j.get<ExperimentConfig>();
}

// ---------------------------------------------------------------------------
// Dataset persistence (JSON; desk-scale sizes keep this practical)

inline json sample_to_json(const LabeledSample& s) {
  return json{{"obs", s.observation},
              {"class", s.class_id},
              {"ethnicity", s.ethnicity},
              {"gender_score", s.gender_score}};
}

inline json sample_to_json(const UnlabeledSample& s) {
  return json{{"obs", s.observation}, {"pseudo_id", s.pseudo_id},
              {"ethnicity", s.ethnicity}, {"gender_score", s.gender_score},
              {"magnitude", s.feature_magnitude}, {"planted_class", s.planted_class}};
}

inline void save_dataset(const Dataset& ds, const ExperimentConfig& cfg,
                         const std::string& path) {
  json j;
  j["manifest"] = json{{"format", "arl-dataset"},
                       {"version", 1},
                       {"config_hash", hash_hex(config_hash(cfg))},
                       {"seed", cfg.train.seed},
                       {"n_classes", ds.n_classes},
                       {"n_labeled", ds.labeled.size()},
                       {"n_unlabeled", ds.unlabeled.size()},
                       {"n_test_images", ds.test_images.size()},
                       {"population", cfg.population}};
  j["group_tags"] = ds.group_tags;
  j["next_pseudo_id"] = ds.next_pseudo_id;
  j["class_means"] = ds.class_means;
  j["class_ethnicity"] = ds.class_ethnicity;
  j["class_gender_base"] = ds.class_gender_base;
  json labeled = json::array();
  for (const auto& s : ds.labeled) labeled.push_back(sample_to_json(s));
  j["labeled"] = std::move(labeled);
  json unlabeled = json::array();
  for (const auto& s : ds.unlabeled) unlabeled.push_back(sample_to_json(s));
  j["unlabeled"] = std::move(unlabeled);
  json test = json::array();
  for (const auto& im : ds.test_images)
    test.push_back(json{{"obs", im.observation}, {"identity", im.identity},
                        {"ethnicity", im.ethnicity}});
  j["test_images"] = std::move(test);

  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset: " + path);
  out << j.dump(1) << "\n";
}

struct LoadedDataset {
  Dataset data;
  std::string config_hash_hex;
  std::uint64_t seed = 0;
};

inline LoadedDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset: " + path);
  json j = json::parse(in);
  if (j.value("/manifest/format"_json_pointer, std::string()) != "arl-dataset")
    throw IoError("not a dataset file: " + path);
  LoadedDataset out;
  out.config_hash_hex = j["manifest"]["config_hash"].get<std::string>();
  out.seed = j["manifest"]["seed"].get<std::uint64_t>();
  Dataset& ds = out.data;
  ds.n_classes = j["manifest"]["n_classes"].get<int>();
  j.at("group_tags").get_to(ds.group_tags);
  ds.next_pseudo_id = j.value("next_pseudo_id", 0);
  j.at("class_means").get_to(ds.class_means);
  j.at("class_ethnicity").get_to(ds.class_ethnicity);
  j.at("class_gender_base").get_to(ds.class_gender_base);
  for (const json& s : j.at("labeled"))
    ds.labeled.push_back({s.at("obs").get<Vec>(), s.at("class").get<int>(),
                          s.at("ethnicity").get<std::string>(),
                          s.at("gender_score").get<double>()});
  for (const json& s : j.at("unlabeled"))
    ds.unlabeled.push_back({s.at("obs").get<Vec>(), s.at("pseudo_id").get<int>(),
                            s.at("ethnicity").get<std::string>(),
                            s.at("gender_score").get<double>(),
                            s.at("magnitude").get<double>(),
                            s.value("planted_class", -1)});
  for (const json& s : j.at("test_images"))
    ds.test_images.push_back({s.at("obs").get<Vec>(), s.at("identity").get<int>(),
                              s.at("ethnicity").get<std::string>()});
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: flat binary, little-endian
//
//   magic "ARLCKPT1" | u32 version | u32 phase | u64 config_hash | u64 seed
//   u32 d | u32 p | u32 n_labeled | u32 m_unlabeled
//   f64[d*p]   projection, row-major
//   f64[n*d]   labeled weight columns, one class after another
//   f64[m*d]   unlabeled weight columns likewise
//   u32[m]     pseudo ids
//   m x (u32 length + bytes)  ethnicity tags

namespace detail {

inline void put_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f64(std::string& b, double d) {
  std::uint64_t v;
  static_assert(sizeof v == sizeof d);
  std::memcpy(&v, &d, 8);
  put_u64(b, v);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  std::uint32_t u32() {
    if (pos + 4 > buf.size()) throw IoError("checkpoint truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    if (pos + 8 > buf.size()) throw IoError("checkpoint truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
    return v;
  }
  double f64() {
    std::uint64_t v = u64();
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }
  std::string bytes(size_t n) {
    if (pos + n > buf.size()) throw IoError("checkpoint truncated");
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace detail

struct Checkpoint {
  int phase = 1;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  EmbeddingModel model;
  WeightBank bank;
};

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::string b;
  b.append("ARLCKPT1");
  detail::put_u32(b, 1);
  detail::put_u32(b, static_cast<std::uint32_t>(ck.phase));
  detail::put_u64(b, ck.config_hash);
  detail::put_u64(b, ck.seed);
  detail::put_u32(b, static_cast<std::uint32_t>(ck.model.embed_dim));
  detail::put_u32(b, static_cast<std::uint32_t>(ck.model.obs_dim));
  detail::put_u32(b, static_cast<std::uint32_t>(ck.bank.labeled_count()));
  detail::put_u32(b, static_cast<std::uint32_t>(ck.bank.unlabeled_count()));
  for (double d : ck.model.projection) detail::put_f64(b, d);
  for (const auto& w : ck.bank.labeled)
    for (double d : w.c) detail::put_f64(b, d);
  for (const auto& w : ck.bank.unlabeled)
    for (double d : w.c) detail::put_f64(b, d);
  for (int id : ck.bank.unlabeled_pseudo_id) detail::put_u32(b, static_cast<std::uint32_t>(id));
  for (const std::string& tag : ck.bank.unlabeled_ethnicity) {
    detail::put_u32(b, static_cast<std::uint32_t>(tag.size()));
    b.append(tag);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  std::string buf = ss.str();
  detail::Reader r{buf};
  if (r.bytes(8) != "ARLCKPT1") throw IoError("bad checkpoint magic: " + path);
  if (r.u32() != 1) throw IoError("unsupported checkpoint version");
  Checkpoint ck;
  ck.phase = static_cast<int>(r.u32());
  ck.config_hash = r.u64();
  ck.seed = r.u64();
  int d = static_cast<int>(r.u32());
  int p = static_cast<int>(r.u32());
  int n = static_cast<int>(r.u32());
  int m = static_cast<int>(r.u32());
  ck.model.embed_dim = d;
  ck.model.obs_dim = p;
  ck.model.projection.resize(static_cast<size_t>(d) * p);
  for (double& x : ck.model.projection) x = r.f64();
  ck.bank.dim = d;
  auto read_col = [&r, d]() {
    UnitVector w;
    w.c.resize(d);
    for (double& x : w.c) x = r.f64();
    return w;
  };
  for (int i = 0; i < n; ++i) ck.bank.labeled.push_back(read_col());
  std::vector<UnitVector> cols;
  for (int i = 0; i < m; ++i) cols.push_back(read_col());
  std::vector<int> ids(m);
  for (int& id : ids) id = static_cast<int>(r.u32());
  for (int i = 0; i < m; ++i) {
    std::uint32_t len = r.u32();
    ck.bank.append_unlabeled(cols[i], ids[i], r.bytes(len));
  }
  return ck;
}

// ---------------------------------------------------------------------------
// CSV writers

// Shortest round-trip formatting so identical runs give identical bytes.
inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  double back = std::strtod(buf, nullptr);
  if (back == v) {
    for (int prec = 1; prec <= 16; ++prec) {
      char shorter[32];
      std::snprintf(shorter, sizeof shorter, "%.*g", prec, v);
      if (std::strtod(shorter, nullptr) == v) return shorter;
    }
  }
  return buf;
}

inline void save_metrics_csv(const std::vector<StepMetrics>& metrics, std::uint64_t hash,
                             std::uint64_t seed, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write metrics: " + path);
  out << "# config_hash=" << hash_hex(hash) << " seed=" << seed << "\n";
  out << "step,phase,loss_labeled,loss_unlabeled,loss_cosine,total,safe_pairs\n";
  for (const StepMetrics& m : metrics) {
    out << m.step << ',' << m.phase << ',' << fmt_double(m.loss_labeled) << ','
        << fmt_double(m.loss_unlabeled) << ',' << fmt_double(m.loss_cosine) << ','
        << fmt_double(m.total) << ',' << m.safe_pair_count << "\n";
  }
}

// ---------------------------------------------------------------------------
// Evaluation report files

inline std::string fmt_percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

inline std::string fmt_fixed(double v, int prec = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

inline json report_to_json(const EvalReport& r) {
  json groups = json::array();
  for (const GroupReport& g : r.groups) {
    json tpr = json::array();
    for (const auto& [target, value] : g.tpr_at) {
      json row{{"fpr", target}};
      if (value) row["tpr"] = *value;
      else row["tpr"] = nullptr;
      tpr.push_back(std::move(row));
    }
    groups.push_back(json{{"group", g.group},
                          {"n_positive", g.n_positive},
                          {"n_negative", g.n_negative},
                          {"tpr_at_fpr", std::move(tpr)},
                          {"auc", g.auc},
                          {"median_positive", g.medians.positive},
                          {"median_negative", g.medians.negative},
                          {"median_difference", g.medians.difference},
                          {"accuracy", g.accuracy.accuracy},
                          {"accuracy_threshold", g.accuracy.threshold}});
  }
  json j{{"groups", std::move(groups)}, {"warnings", r.warnings}};
  if (r.groups.size() >= 2) {
    j["accuracy_avg"] = r.accuracy_summary.avg;
    j["accuracy_std"] = r.accuracy_summary.std_dev;
  }
  return j;
}

inline EvalReport report_from_json(const json& j) {
  EvalReport r;
  for (const json& g : j.at("groups")) {
    GroupReport gr;
    gr.group = g.at("group").get<std::string>();
    gr.n_positive = g.value("n_positive", 0);
    gr.n_negative = g.value("n_negative", 0);
    for (const json& row : g.at("tpr_at_fpr")) {
      std::optional<double> v;
      if (!row.at("tpr").is_null()) v = row.at("tpr").get<double>();
      gr.tpr_at.emplace_back(row.at("fpr").get<double>(), v);
    }
    gr.auc = g.value("auc", 0.0);
    gr.medians.positive = g.value("median_positive", 0.0);
    gr.medians.negative = g.value("median_negative", 0.0);
    gr.medians.difference = g.value("median_difference", 0.0);
    gr.accuracy.accuracy = g.value("accuracy", 0.0);
    gr.accuracy.threshold = g.value("accuracy_threshold", 0.0);
    r.groups.push_back(std::move(gr));
  }
  if (j.contains("accuracy_avg")) {
    r.accuracy_summary.avg = j["accuracy_avg"].get<double>();
    r.accuracy_summary.std_dev = j["accuracy_std"].get<double>();
  }
  if (j.contains("warnings")) j.at("warnings").get_to(r.warnings);
  return r;
}

// Rows ordered by (group, metric, fpr) for diff-based testing. With a
// baseline report, percent metrics render as "value(delta)".
inline void save_report_csv(const EvalReport& r, std::uint64_t hash, std::uint64_t seed,
                            const std::string& path,
                            const EvalReport* baseline = nullptr) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report: " + path);
  out << "# config_hash=" << hash_hex(hash) << " seed=" << seed << "\n";
  out << "group,metric,fpr,value,formatted\n";

  auto baseline_group = [baseline](const std::string& tag) -> const GroupReport* {
    if (!baseline) return nullptr;
    for (const GroupReport& g : baseline->groups)
      if (g.group == tag) return &g;
    return nullptr;
  };
  auto pct = [](double v, const double* base) {
    std::string s = fmt_percent(v);
    if (base) s += "(" + fmt_percent(v - *base) + ")";
    return s;
  };
  auto fixed = [](double v, const double* base, int prec) {
    std::string s = fmt_fixed(v, prec);
    if (base) s += "(" + fmt_fixed(v - *base, prec) + ")";
    return s;
  };

  for (const GroupReport& g : r.groups) {
    const GroupReport* bg = baseline_group(g.group);
    for (size_t i = 0; i < g.tpr_at.size(); ++i) {
      const auto& [target, value] = g.tpr_at[i];
      out << g.group << ",tpr," << fmt_double(target) << ',';
      if (value) {
        const double* base = nullptr;
        double bv = 0.0;
        if (bg && i < bg->tpr_at.size() && bg->tpr_at[i].second) {
          bv = *bg->tpr_at[i].second;
          base = &bv;
        }
        out << fmt_double(*value) << ',' << pct(*value, base);
      } else {
        out << ",unsupported";
      }
      out << "\n";
    }
    double b_auc = bg ? bg->auc : 0.0;
    out << g.group << ",auc,," << fmt_double(g.auc) << ','
        << fixed(g.auc, bg ? &b_auc : nullptr, 4) << "\n";
    double b_acc = bg ? bg->accuracy.accuracy : 0.0;
    out << g.group << ",accuracy,," << fmt_double(g.accuracy.accuracy) << ','
        << pct(g.accuracy.accuracy, bg ? &b_acc : nullptr) << "\n";
    double b_diff = bg ? bg->medians.difference : 0.0;
    out << g.group << ",median_diff,," << fmt_double(g.medians.difference) << ','
        << fixed(g.medians.difference, bg ? &b_diff : nullptr, 3) << "\n";
    out << g.group << ",median_neg,," << fmt_double(g.medians.negative) << ','
        << fmt_fixed(g.medians.negative, 3) << "\n";
    out << g.group << ",median_pos,," << fmt_double(g.medians.positive) << ','
        << fmt_fixed(g.medians.positive, 3) << "\n";
  }
  if (r.groups.size() >= 2) {
    const double* b_avg = nullptr;
    const double* b_std = nullptr;
    double ba = 0.0, bs = 0.0;
    if (baseline && baseline->groups.size() >= 2) {
      ba = baseline->accuracy_summary.avg;
      bs = baseline->accuracy_summary.std_dev;
      b_avg = &ba;
      b_std = &bs;
    }
    out << "ALL,accuracy_avg,," << fmt_double(r.accuracy_summary.avg) << ','
        << pct(r.accuracy_summary.avg, b_avg) << "\n";
    out << "ALL,accuracy_std,," << fmt_double(r.accuracy_summary.std_dev) << ','
        << pct(r.accuracy_summary.std_dev, b_std) << "\n";
  }
  for (const std::string& w : r.warnings) out << "WARN,warning,,," << w << "\n";
}

}  // namespace arl
