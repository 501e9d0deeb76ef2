#include "s4l/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace s4l {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// §-style experimental defaults keyed by target dataset.
struct DatasetDefaults {
  int n_classes;
  int stage2_episodes;
  double sslcl_dropout;
  int eval_every;
  double subsample_fraction;
};

bool dataset_defaults(const std::string& name, DatasetDefaults& out) {
  if (name == "UP") {
    out = {9, 700, 0.15, 20, 1.0};
    return true;
  }
  if (name == "IP") {
    out = {16, 500, 0.28, 50, 1.0};
    return true;
  }
  if (name == "SA") {
    out = {16, 700, 0.28, 50, 1.0};
    return true;
  }
  if (name == "HC") {
    out = {16, 700, 0.28, 20, 0.15};
    return true;
  }
  return false;
}

std::string data_rooted(const std::string& path) {
  if (path.empty()) return path;
  const char* root = std::getenv("S4LFSC_DATA_ROOT");
  if (!root || fs::path(path).is_absolute()) return path;
  return (fs::path(root) / path).string();
}

void parse_stage(const json& j, StageConfig& s) {
  s.episodes = j.value("episodes", s.episodes);
  s.lr = j.value("lr", s.lr);
  s.rm_batch = j.value("rm_batch", s.rm_batch);
  s.mr_batch = j.value("mr_batch", s.mr_batch);
  s.mask_ratio = j.value("mask_ratio", s.mask_ratio);
  s.sslcl_dropout = j.value("sslcl_dropout", s.sslcl_dropout);
  s.eval_every = j.value("eval_every", s.eval_every);
  s.ways = j.value("ways", s.ways);
  s.shots = j.value("shots", s.shots);
  s.queries = j.value("queries", s.queries);
}

json stage_to_json(const StageConfig& s) {
  return json{{"episodes", s.episodes},
              {"lr", s.lr},
              {"rm_batch", s.rm_batch},
              {"mr_batch", s.mr_batch},
              {"mask_ratio", s.mask_ratio},
              {"sslcl_dropout", s.sslcl_dropout},
              {"eval_every", s.eval_every},
              {"ways", s.ways},
              {"shots", s.shots},
              {"queries", s.queries}};
}

void check_key(bool ok, const std::string& key, const std::string& why) {
  if (!ok) raise(ErrorKind::Config, "config key '" + key + "': " + why);
}

}  // namespace

ExperimentConfig parse_config_json(const std::string& text,
                                   const ConfigOverrides& overrides) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    raise(ErrorKind::Config, std::string("config parse error: ") + e.what());
  }

  ExperimentConfig cfg;
  cfg.name = j.value("name", cfg.name);
  cfg.target_name = j.value("target_name", cfg.target_name);

  // schedule defaults shared by all targets
  cfg.stage1.episodes = 1100;
  cfg.stage3.episodes = 1000;

  DatasetDefaults d;
  if (dataset_defaults(cfg.target_name, d)) {
    cfg.stage2.episodes = d.stage2_episodes;
    cfg.stage3.sslcl_dropout = d.sslcl_dropout;
    cfg.stage3.eval_every = d.eval_every;
    cfg.subsample_fraction = d.subsample_fraction;
  } else if (cfg.target_name != "custom") {
    raise(ErrorKind::Config, "config key 'target_name': unknown dataset '" +
                                 cfg.target_name + "'");
  }

  cfg.target_cube = data_rooted(j.value("target_cube", ""));
  cfg.target_gt = data_rooted(j.value("target_gt", ""));
  cfg.hetero_dir = data_rooted(j.value("hetero_dir", ""));
  cfg.homog_cube = data_rooted(j.value("homog_cube", ""));
  cfg.homog_gt = data_rooted(j.value("homog_gt", ""));
  cfg.spatial_ckpt = data_rooted(j.value("spatial_ckpt", ""));
  cfg.spectral_ckpt = data_rooted(j.value("spectral_ckpt", ""));
  cfg.out_dir = j.value("out_dir", cfg.out_dir);

  cfg.k0 = j.value("k0", cfg.k0);
  cfg.n_runs = j.value("n_runs", cfg.n_runs);
  cfg.base_seed = j.value("base_seed", cfg.base_seed);
  cfg.subsample_fraction = j.value("subsample_fraction", cfg.subsample_fraction);
  cfg.target_count = j.value("target_count", cfg.target_count);
  cfg.patch_size = j.value("patch_size", cfg.patch_size);
  cfg.fsl_min_class = j.value("fsl_min_class", cfg.fsl_min_class);
  cfg.fsl_cap = j.value("fsl_cap", cfg.fsl_cap);
  cfg.squared_distance = j.value("squared_distance", cfg.squared_distance);

  if (j.contains("stage1")) parse_stage(j["stage1"], cfg.stage1);
  if (j.contains("stage2")) parse_stage(j["stage2"], cfg.stage2);
  if (j.contains("stage3")) parse_stage(j["stage3"], cfg.stage3);

  if (j.contains("ablation")) {
    const json& a = j["ablation"];
    cfg.ablation.rm_mode = a.value("rm_mode", cfg.ablation.rm_mode);
    cfg.ablation.hom_fsl = a.value("hom_fsl", cfg.ablation.hom_fsl);
    cfg.ablation.mr_ssl = a.value("mr_ssl", cfg.ablation.mr_ssl);
    cfg.ablation.sslcl_mode = a.value("sslcl_mode", cfg.ablation.sslcl_mode);
  }

  if (overrides.has_seed) cfg.base_seed = overrides.seed;
  if (!overrides.out_dir.empty()) cfg.out_dir = overrides.out_dir;
  cfg.quiet = overrides.quiet;

  // validation
  check_key(cfg.k0 >= 1, "k0", "must be >= 1");
  check_key(cfg.n_runs >= 1, "n_runs", "must be >= 1");
  check_key(cfg.target_count >= cfg.k0, "target_count", "must be >= k0");
  check_key(cfg.patch_size % 2 == 1, "patch_size", "must be odd");
  check_key(cfg.subsample_fraction > 0.0 && cfg.subsample_fraction <= 1.0,
            "subsample_fraction", "must be in (0, 1]");
  check_key(cfg.ablation.rm_mode == "rm6" || cfg.ablation.rm_mode == "rot4" ||
                cfg.ablation.rm_mode == "off",
            "ablation.rm_mode", "must be rm6 | rot4 | off");
  check_key(cfg.ablation.sslcl_mode == "aug" ||
                cfg.ablation.sslcl_mode == "dropout" ||
                cfg.ablation.sslcl_mode == "off",
            "ablation.sslcl_mode", "must be aug | dropout | off");
  for (const StageConfig* s : {&cfg.stage1, &cfg.stage2, &cfg.stage3}) {
    check_key(s->lr > 0.0, "lr", "must be positive");
    check_key(s->mask_ratio >= 0.0 && s->mask_ratio <= 1.0, "mask_ratio",
              "must be in [0, 1]");
    check_key(s->eval_every >= 1, "eval_every", "must be >= 1");
    check_key(s->shots >= 1 && s->queries >= 1, "shots/queries",
              "must be >= 1");
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path,
                             const ConfigOverrides& overrides) {
  std::ifstream f(path);
  if (!f) raise(ErrorKind::Config, "config key 'config': cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  return parse_config_json(text, overrides);
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json j{{"name", cfg.name},
         {"target_name", cfg.target_name},
         {"target_cube", cfg.target_cube},
         {"target_gt", cfg.target_gt},
         {"hetero_dir", cfg.hetero_dir},
         {"homog_cube", cfg.homog_cube},
         {"homog_gt", cfg.homog_gt},
         {"spatial_ckpt", cfg.spatial_ckpt},
         {"spectral_ckpt", cfg.spectral_ckpt},
         {"out_dir", cfg.out_dir},
         {"k0", cfg.k0},
         {"n_runs", cfg.n_runs},
         {"base_seed", cfg.base_seed},
         {"subsample_fraction", cfg.subsample_fraction},
         {"target_count", cfg.target_count},
         {"patch_size", cfg.patch_size},
         {"fsl_min_class", cfg.fsl_min_class},
         {"fsl_cap", cfg.fsl_cap},
         {"squared_distance", cfg.squared_distance},
         {"stage1", stage_to_json(cfg.stage1)},
         {"stage2", stage_to_json(cfg.stage2)},
         {"stage3", stage_to_json(cfg.stage3)},
         {"ablation",
          {{"rm_mode", cfg.ablation.rm_mode},
           {"hom_fsl", cfg.ablation.hom_fsl},
           {"mr_ssl", cfg.ablation.mr_ssl},
           {"sslcl_mode", cfg.ablation.sslcl_mode}}}};
  return j.dump(2);
}

void save_resolved_config(const ExperimentConfig& cfg, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) raise(ErrorKind::Io, "cannot write " + path);
  f << config_to_json(cfg) << "\n";
}

}  // namespace s4l
