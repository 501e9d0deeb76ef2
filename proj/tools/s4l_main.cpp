// Command-line surface for the S4L-FSC pipeline: dataset import, split
// generation, the three training stages, evaluation, and full multi-run
// experiments.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "s4l/config.hpp"
#include "s4l/pipeline.hpp"
#include "s4l/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace s4l;

namespace {

struct GlobalArgs {
  std::string config_path;
  ConfigOverrides overrides;
};

ExperimentConfig load_cfg(const GlobalArgs& g) {
  if (g.config_path.empty())
    raise(ErrorKind::Config, "config key 'config': --config is required");
  return load_config(g.config_path, g.overrides);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) raise(ErrorKind::Io, "cannot write " + path);
  f << text;
}

void snapshot_config(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  save_resolved_config(cfg, (fs::path(cfg.out_dir) / "config.resolved.json").string());
}

CubeDescriptor read_cube_descriptor(const std::string& path) {
  std::ifstream f(path);
  if (!f) raise(ErrorKind::Io, "cannot open " + path);
  json j;
  f >> j;
  CubeDescriptor d;
  d.height = j.at("height").get<int64_t>();
  d.width = j.at("width").get<int64_t>();
  d.bands = j.at("bands").get<int64_t>();
  d.dtype = j.value("dtype", "f32le");
  d.order = j.value("order", "hwb");
  return d;
}

GtDescriptor read_gt_descriptor(const std::string& path) {
  std::ifstream f(path);
  if (!f) raise(ErrorKind::Io, "cannot open " + path);
  json j;
  f >> j;
  GtDescriptor d;
  d.height = j.at("height").get<int64_t>();
  d.width = j.at("width").get<int64_t>();
  d.dtype = j.value("dtype", "u16le");
  return d;
}

int cmd_import(const std::string& name, const std::string& payload,
               const std::string& descriptor, const std::string& gt_payload,
               const std::string& gt_descriptor, bool normalize,
               double subsample, uint64_t seed, const std::string& out_dir) {
  fs::create_directories(out_dir);
  HsiCube cube = import_cube(payload, read_cube_descriptor(descriptor), name);
  if (normalize) cube = normalize_cube(std::move(cube));
  save_cube(cube, (fs::path(out_dir) / (name + ".cube.json")).string());
  std::printf("wrote %s.cube.{json,bin} (%lldx%lldx%lld)\n", name.c_str(),
              static_cast<long long>(cube.height),
              static_cast<long long>(cube.width),
              static_cast<long long>(cube.bands));
  if (!gt_payload.empty()) {
    GroundTruthMap gt =
        import_gt(gt_payload, read_gt_descriptor(gt_descriptor), name);
    if (subsample < 1.0) {
      Rng rng(seed);
      gt = subsample_classes(gt, subsample, rng);
    }
    save_gt(gt, (fs::path(out_dir) / (name + ".gt.json")).string());
    std::printf("wrote %s.gt.{json,bin} (%d classes)\n", name.c_str(),
                gt.n_classes);
  }
  return 0;
}

int cmd_make_splits(const std::string& gt_path, int k0, uint64_t seed,
                    int target_count, const std::string& out_dir) {
  fs::create_directories(out_dir);
  GroundTruthMap gt = load_gt(gt_path);
  SplitSpec split = build_splits(gt, k0, seed);
  std::string base = gt.name.empty() ? "target" : gt.name;
  save_split(split, (fs::path(out_dir) / (base + ".split.json")).string());
  Rng rng(derive_seed(seed, 0x52));
  AugmentedLabeledSet aug = build_augmented_set(split, target_count, rng);
  save_augmented_set(aug, (fs::path(out_dir) / (base + ".aug.json")).string());
  std::printf("wrote %s.split.json (%d x %d labeled, %zu test)\n", base.c_str(),
              split.n_classes, k0, split.test.size());
  return 0;
}

int cmd_pretrain_spatial(const GlobalArgs& g) {
  ExperimentConfig cfg = load_cfg(g);
  snapshot_config(cfg);
  HeteroPool pool = load_hetero_pool(cfg.hetero_dir, cfg.patch_size);
  GroundTruthMap gt = load_gt(cfg.target_gt);
  RunLog log;
  auto model = pretrain_spatial(cfg, gt.n_classes, pool, log);
  std::string ckpt = (fs::path(cfg.out_dir) / "spatial.ckpt.json").string();
  save_checkpoint(model->reg, ckpt);
  log.checkpoints["spatial"] = ckpt;
  write_runlog(log, (fs::path(cfg.out_dir) / "stage1.runlog.jsonl").string());
  std::printf("stage 1 done: %s (%.1fs)\n", ckpt.c_str(), log.train_seconds);
  return 0;
}

int cmd_pretrain_spectral(const GlobalArgs& g) {
  ExperimentConfig cfg = load_cfg(g);
  snapshot_config(cfg);
  HsiCube homog = load_cube(cfg.homog_cube);
  if (!homog.normalized) homog = normalize_cube(std::move(homog));
  GroundTruthMap homog_gt = load_gt(cfg.homog_gt);
  HsiCube target = load_cube(cfg.target_cube);
  GroundTruthMap gt = load_gt(cfg.target_gt);
  SpectralPools pools = build_spectral_pools(homog, homog_gt, cfg.fsl_min_class,
                                             cfg.fsl_cap, cfg.base_seed);
  RunLog log;
  auto model =
      pretrain_spectral(cfg, gt.n_classes, target.bands, pools, log);
  std::string ckpt = (fs::path(cfg.out_dir) / "spectral.ckpt.json").string();
  save_checkpoint(model->reg, ckpt);
  log.checkpoints["spectral"] = ckpt;
  write_runlog(log, (fs::path(cfg.out_dir) / "stage2.runlog.jsonl").string());
  std::printf("stage 2 done: %s (%.1fs)\n", ckpt.c_str(), log.train_seconds);
  return 0;
}

int cmd_finetune(const GlobalArgs& g, const std::string& split_path) {
  ExperimentConfig cfg = load_cfg(g);
  snapshot_config(cfg);
  HsiCube cube = load_cube(cfg.target_cube);
  if (!cube.normalized) cube = normalize_cube(std::move(cube));
  GroundTruthMap gt = load_gt(cfg.target_gt);
  if (cfg.subsample_fraction < 1.0) {
    Rng rng(derive_seed(cfg.base_seed, 0x55));
    gt = subsample_classes(gt, cfg.subsample_fraction, rng);
  }

  SplitSpec split;
  if (!split_path.empty()) {
    split = load_split(split_path);
  } else {
    split = build_splits(gt, cfg.k0, derive_seed(cfg.base_seed, 0x51));
  }
  Rng aug_rng(derive_seed(cfg.base_seed, 0x52));
  AugmentedLabeledSet aug = build_augmented_set(split, cfg.target_count, aug_rng);

  TensorArchive spatial_archive, spectral_archive;
  const TensorArchive* spatial_ptr = nullptr;
  const TensorArchive* spectral_ptr = nullptr;
  if (!cfg.spatial_ckpt.empty()) {
    if (!fs::exists(cfg.spatial_ckpt))
      raise(ErrorKind::Transfer, "spatial checkpoint missing: " + cfg.spatial_ckpt);
    spatial_archive = TensorArchive::load(cfg.spatial_ckpt);
    spatial_ptr = &spatial_archive;
  }
  if (!cfg.spectral_ckpt.empty()) {
    if (!fs::exists(cfg.spectral_ckpt))
      raise(ErrorKind::Transfer,
            "spectral checkpoint missing: " + cfg.spectral_ckpt);
    spectral_archive = TensorArchive::load(cfg.spectral_ckpt);
    spectral_ptr = &spectral_archive;
  }

  FinetuneResult ft = finetune_target(cfg, cube, split, aug, spatial_ptr,
                                      spectral_ptr, cfg.base_seed);
  std::string ckpt = (fs::path(cfg.out_dir) / "target.ckpt.json").string();
  save_checkpoint(ft.model->reg, ckpt);
  ft.log.checkpoints["target"] = ckpt;
  write_runlog(ft.log, (fs::path(cfg.out_dir) / "stage3.runlog.jsonl").string());
  const MetricsReport& rep = ft.log.final_report();
  write_text((fs::path(cfg.out_dir) / "report.json").string(),
             metrics_to_json(rep) + "\n");
  std::printf("stage 3 done: oa=%.4f aa=%.4f kappa=%.4f\n", rep.oa, rep.aa,
              rep.kappa);
  return 0;
}

int cmd_evaluate(const GlobalArgs& g, const std::string& ckpt_path,
                 const std::string& split_path) {
  ExperimentConfig cfg = load_cfg(g);
  snapshot_config(cfg);
  HsiCube cube = load_cube(cfg.target_cube);
  if (!cube.normalized) cube = normalize_cube(std::move(cube));
  GroundTruthMap gt = load_gt(cfg.target_gt);
  if (cfg.subsample_fraction < 1.0) {
    Rng rng(derive_seed(cfg.base_seed, 0x55));
    gt = subsample_classes(gt, cfg.subsample_fraction, rng);
  }
  SplitSpec split = split_path.empty()
                        ? build_splits(gt, cfg.k0, derive_seed(cfg.base_seed, 0x51))
                        : load_split(split_path);

  FusedModel<Real> model(cube.bands, split.n_classes, cfg.stage3.sslcl_dropout,
                         cfg.base_seed);
  TensorArchive archive = TensorArchive::load(ckpt_path);
  load_checkpoint(model.reg, archive, {}, true);

  std::vector<int> predictions;
  MetricsReport rep = evaluate_model(model, cube, split, cfg.patch_size,
                                     cfg.squared_distance, &predictions);
  write_text((fs::path(cfg.out_dir) / "report.json").string(),
             metrics_to_json(rep) + "\n");
  std::vector<MetricsReport> one{rep};
  write_text((fs::path(cfg.out_dir) / "report.txt").string(),
             aggregate_to_table(aggregate_runs(one)));
  render_map(gt, predictions, default_palette(gt.n_classes),
             (fs::path(cfg.out_dir) / "map.png").string());
  std::printf("evaluate: oa=%.4f aa=%.4f kappa=%.4f -> %s\n", rep.oa, rep.aa,
              rep.kappa, cfg.out_dir.c_str());
  return 0;
}

int cmd_run(const GlobalArgs& g) {
  ExperimentConfig cfg = load_cfg(g);
  snapshot_config(cfg);
  ExperimentData data = load_experiment_data(cfg);
  ExperimentResult result = run_experiment(cfg, data);
  save_experiment_report(result, cfg.out_dir);
  for (size_t r = 0; r < result.run_logs.size(); ++r)
    write_runlog(result.run_logs[r],
                 (fs::path(cfg.out_dir) /
                  ("run" + std::to_string(r) + ".runlog.jsonl")).string());
  write_runlog(result.stage1_log,
               (fs::path(cfg.out_dir) / "stage1.runlog.jsonl").string());
  if (!result.stage2_log.steps.empty())
    write_runlog(result.stage2_log,
                 (fs::path(cfg.out_dir) / "stage2.runlog.jsonl").string());
  std::printf("experiment done: OA %.2f +- %.2f, AA %.2f +- %.2f, Kappa %.2f +- %.2f\n",
              100 * result.aggregate.oa.mean, 100 * result.aggregate.oa.stddev,
              100 * result.aggregate.aa.mean, 100 * result.aggregate.aa.stddev,
              100 * result.aggregate.kappa.mean,
              100 * result.aggregate.kappa.stddev);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"S4L-FSC few-shot hyperspectral classification pipeline"};
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_option("--config", g.config_path, "experiment config JSON");
  uint64_t seed_flag = 0;
  auto* seed_opt = app.add_option("--seed", seed_flag, "override base seed");
  app.add_option("--out", g.overrides.out_dir, "override output directory");
  app.add_flag("--quiet", g.overrides.quiet, "suppress progress output");

  // import
  auto* imp = app.add_subcommand("import", "convert raw payloads to canonical containers");
  std::string name = "cube", payload, descriptor, gt_payload, gt_descriptor;
  bool do_normalize = false;
  double subsample = 1.0;
  uint64_t import_seed = 0;
  std::string import_out = "data";
  imp->add_option("--name", name, "dataset name");
  imp->add_option("--payload", payload, "raw cube payload")->required();
  imp->add_option("--descriptor", descriptor, "cube layout descriptor JSON")->required();
  imp->add_option("--gt-payload", gt_payload, "raw ground-truth payload");
  imp->add_option("--gt-descriptor", gt_descriptor, "ground-truth descriptor JSON");
  imp->add_flag("--normalize", do_normalize, "min-max normalize per band");
  imp->add_option("--subsample", subsample, "per-class retention fraction");
  imp->add_option("--subsample-seed", import_seed, "seed for subsampling");
  imp->add_option("--out-dir", import_out, "output directory");

  // make-splits
  auto* mks = app.add_subcommand("make-splits", "build labeled/test split and augmentation plan");
  std::string gt_path;
  int k0 = 5;
  uint64_t split_seed = 0;
  int target_count = 200;
  std::string split_out = "data";
  mks->add_option("--gt", gt_path, "canonical .gt.json")->required();
  mks->add_option("--k0", k0, "labeled samples per class");
  mks->add_option("--split-seed", split_seed, "split seed");
  mks->add_option("--target-count", target_count, "augmented set size per class");
  mks->add_option("--out-dir", split_out, "output directory");

  auto* ps = app.add_subcommand("pretrain-spatial", "stage 1: heterogeneous pretraining");
  auto* pc = app.add_subcommand("pretrain-spectral", "stage 2: homogeneous pretraining");

  auto* ft = app.add_subcommand("finetune", "stage 3: target-domain fine-tuning");
  std::string split_path;
  ft->add_option("--split", split_path, "existing .split.json (defaults to a fresh draw)");

  auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint on the test split");
  std::string eval_ckpt, eval_split;
  ev->add_option("--ckpt", eval_ckpt, "target model checkpoint .json")->required();
  ev->add_option("--split", eval_split, "existing .split.json");

  auto* run = app.add_subcommand("run", "full experiment: stages 1-3 x n_runs");

  CLI11_PARSE(app, argc, argv);
  if (!seed_opt->empty()) {
    g.overrides.has_seed = true;
    g.overrides.seed = seed_flag;
  }

  try {
    if (imp->parsed())
      return cmd_import(name, payload, descriptor, gt_payload, gt_descriptor,
                        do_normalize, subsample, import_seed, import_out);
    if (mks->parsed())
      return cmd_make_splits(gt_path, k0, split_seed, target_count, split_out);
    if (ps->parsed()) return cmd_pretrain_spatial(g);
    if (pc->parsed()) return cmd_pretrain_spectral(g);
    if (ft->parsed()) return cmd_finetune(g, split_path);
    if (ev->parsed()) return cmd_evaluate(g, eval_ckpt, eval_split);
    if (run->parsed()) return cmd_run(g);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
