#pragma once

#include <cstdint>
#include <string>

#include "s4l/errors.hpp"

namespace s4l {

// Per-stage settings. ways = 0 means "use the target class count".
struct StageConfig {
  int episodes = 0;
  double lr = 0.001;
  int rm_batch = 128;
  int mr_batch = 1024;
  double mask_ratio = 0.75;
  double sslcl_dropout = 0.15;
  int eval_every = 20;
  int ways = 0;
  int shots = 1;
  int queries = 19;
};

struct AblationFlags {
  std::string rm_mode = "rm6";     // rm6 | rot4 | off
  bool hom_fsl = true;
  bool mr_ssl = true;
  std::string sslcl_mode = "aug";  // aug | dropout | off
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::string target_name = "custom";  // UP | IP | SA | HC | custom
  std::string target_cube, target_gt;
  std::string hetero_dir;
  std::string homog_cube, homog_gt;
  std::string out_dir = "out";
  std::string spatial_ckpt, spectral_ckpt;  // optional pre-existing stages

  int k0 = 5;
  int n_runs = 10;
  uint64_t base_seed = 7;
  double subsample_fraction = 1.0;
  int target_count = 200;
  int patch_size = 33;
  int fsl_min_class = 400;  // stage-2 pool rule: classes with more samples...
  int fsl_cap = 400;        // ...capped at this many items
  bool squared_distance = false;
  bool quiet = false;

  StageConfig stage1, stage2, stage3;
  AblationFlags ablation;
};

// Loads a config file, fills per-dataset defaults for recognized target
// names, and applies command-line overrides (precedence: overrides > file >
// defaults). Relative dataset paths are prefixed by $S4LFSC_DATA_ROOT when
// set.
struct ConfigOverrides {
  bool has_seed = false;
  uint64_t seed = 0;
  std::string out_dir;
  bool quiet = false;
};

ExperimentConfig load_config(const std::string& path,
                             const ConfigOverrides& overrides = {});
ExperimentConfig parse_config_json(const std::string& text,
                                   const ConfigOverrides& overrides = {});
std::string config_to_json(const ExperimentConfig& cfg);
void save_resolved_config(const ExperimentConfig& cfg, const std::string& path);

}  // namespace s4l
