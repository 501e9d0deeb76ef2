#include "s4l/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "s4l/losses.hpp"

namespace s4l {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int resolve_ways(const StageConfig& stage, int target_classes) {
  return stage.ways > 0 ? stage.ways : target_classes;
}

// Draw `count` indices from [0, n): without replacement when the pool is
// large enough, otherwise independent uniform draws.
std::vector<int64_t> draw_batch(int64_t n, int64_t count, Rng& rng) {
  if (n >= count) return rng.sample_without_replacement(n, count);
  std::vector<int64_t> idx(count);
  for (int64_t i = 0; i < count; ++i) idx[i] = rng.uniform_int(n);
  return idx;
}

void log_step(RunLog& log, int stage, int episode,
              std::vector<std::pair<std::string, double>> components) {
  StepRecord rec;
  rec.stage = stage;
  rec.episode = episode;
  rec.total = 0.0;
  for (auto& [k, v] : components) rec.total += v;
  rec.components = std::move(components);
  log.steps.push_back(std::move(rec));
}

}  // namespace

const MetricsReport& RunLog::best_report() const {
  if (best_eval < 0) raise(ErrorKind::Contract, "run log holds no evaluation");
  return evals[best_eval].report;
}

const MetricsReport& RunLog::final_report() const {
  if (final_eval < 0) raise(ErrorKind::Contract, "run log holds no evaluation");
  return evals[final_eval].report;
}

// --- pools --------------------------------------------------------------------

HeteroPool load_hetero_pool(const std::string& dir, int patch_size) {
  if (!fs::is_directory(dir))
    raise(ErrorKind::Config, "hetero pool directory not found: " + dir);
  std::vector<std::string> class_dirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) class_dirs.push_back(e.path().string());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty())
    raise(ErrorKind::Config, "hetero pool has no class subdirectories");

  HeteroPool pool;
  for (const auto& cd : class_dirs) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(cd)) {
      auto p = e.path().string();
      if (p.size() > 10 && p.substr(p.size() - 10) == ".cube.json")
        files.push_back(p);
    }
    std::sort(files.begin(), files.end());
    std::vector<Patch> items;
    for (const auto& f : files) {
      HsiCube cube = load_cube(f);
      if (cube.bands != 3)
        raise(ErrorKind::Config, "hetero item " + f + " must have 3 bands");
      Patch p;
      p.size = patch_size;
      p.bands = 3;
      p.label = static_cast<int>(pool.classes.size()) + 1;
      if (cube.height == patch_size && cube.width == patch_size) {
        p.window = cube.values;
      } else {
        p.window = bicubic_resize(cube.values, static_cast<int>(cube.height),
                                  static_cast<int>(cube.width), 3, patch_size,
                                  patch_size);
      }
      items.push_back(std::move(p));
    }
    if (items.empty())
      raise(ErrorKind::Config, "hetero class directory " + cd + " is empty");
    pool.classes.push_back(std::move(items));
  }
  return pool;
}

SpectralPools build_spectral_pools(const HsiCube& cube, const GroundTruthMap& gt,
                                   int min_class, int cap, uint64_t seed) {
  if (cube.height != gt.height || cube.width != gt.width)
    raise(ErrorKind::Shape, "cube and ground truth dimensions differ");
  SpectralPools pools;
  pools.bands = cube.bands;
  auto coords = class_coordinates(gt);
  Rng rng(derive_seed(seed, 0x9001));
  for (int c = 1; c <= gt.n_classes; ++c) {
    // every labeled spectrum feeds the reconstruction pool
    for (const Coord& p : coords[c]) {
      const float* s = cube.spectrum(p.y, p.x);
      pools.mr_all.emplace_back(s, s + cube.bands);
    }
    // the FSL pool keeps classes with more than min_class samples, capped
    if (static_cast<int>(coords[c].size()) > min_class) {
      int64_t n = static_cast<int64_t>(coords[c].size());
      int64_t take = std::min<int64_t>(cap, n);
      std::vector<std::vector<float>> items;
      for (int64_t i : rng.sample_without_replacement(n, take)) {
        const float* s = cube.spectrum(coords[c][i].y, coords[c][i].x);
        items.emplace_back(s, s + cube.bands);
      }
      pools.fsl_classes.push_back(std::move(items));
    }
  }
  if (pools.mr_all.empty())
    raise(ErrorKind::Config, "homogeneous dataset has no labeled spectra");
  return pools;
}

// --- stage 1: heterogeneous spatial pretraining ---------------------------------

std::shared_ptr<Stage1Model<Real>> pretrain_spatial(const ExperimentConfig& cfg,
                                                    int target_classes,
                                                    const HeteroPool& pool,
                                                    RunLog& log) {
  const StageConfig& st = cfg.stage1;
  if (st.episodes < 1) raise(ErrorKind::Config, "stage1 episodes must be >= 1");
  if (pool.classes.empty())
    raise(ErrorKind::Config, "heterogeneous pool is empty");
  int ways = resolve_ways(st, target_classes);
  if (static_cast<int>(pool.classes.size()) < ways)
    raise(ErrorKind::Config, "heterogeneous pool has fewer classes than ways");

  uint64_t seed = derive_seed(cfg.base_seed, 1);
  bool rm_on = cfg.ablation.rm_mode != "off";
  bool rot4 = cfg.ablation.rm_mode == "rot4";
  auto model = std::make_shared<Stage1Model<Real>>(rot4 ? 4 : 6,
                                                   derive_seed(seed, 0x11));
  std::vector<ag::Var<Real>> trainable;
  for (auto& [n, v] : model->reg.params) trainable.push_back(v);
  nn::Adam<Real> opt(trainable, st.lr);

  Rng ep_rng(derive_seed(seed, 0x12));
  Rng rm_rng(derive_seed(seed, 0x13));
  auto sizes = pool.class_sizes();

  // flattened index for RM base draws
  std::vector<std::pair<int, int>> flat;
  for (size_t c = 0; c < pool.classes.size(); ++c)
    for (size_t i = 0; i < pool.classes[c].size(); ++i)
      flat.emplace_back(static_cast<int>(c), static_cast<int>(i));

  auto t0 = Clock::now();
  for (int ep = 0; ep < st.episodes; ++ep) {
    opt.zero_grad();
    std::vector<std::pair<std::string, double>> components;

    Episode e = sample_episode(sizes, ways, st.shots, st.queries, ep_rng);
    std::vector<Patch> batch;
    std::vector<int> support_labels, query_labels;
    for (const auto& it : e.support) {
      batch.push_back(pool.classes[it.cls][it.index]);
      support_labels.push_back(it.local);
    }
    for (const auto& it : e.query) {
      batch.push_back(pool.classes[it.cls][it.index]);
      query_labels.push_back(it.local);
    }
    auto feats = model->embed(batch, true);
    int64_t n_sup = static_cast<int64_t>(e.support.size());
    int64_t n_all = feats->value.dim(0);
    auto protos = losses::class_prototypes(ag::slice_rows(feats, 0, n_sup),
                                           support_labels, ways);
    auto logp = losses::proto_log_probs(ag::slice_rows(feats, n_sup, n_all),
                                        protos, cfg.squared_distance);
    auto fsl = losses::fsl_episode_loss(logp, query_labels);
    components.emplace_back("fsl", static_cast<double>(fsl->value[0]));
    ag::Var<Real> total = fsl;

    if (rm_on) {
      std::vector<Patch> base;
      for (int64_t i : draw_batch(static_cast<int64_t>(flat.size()),
                                  st.rm_batch, rm_rng)) {
        base.push_back(pool.classes[flat[i].first][flat[i].second]);
      }
      auto expanded = rot4 ? rot4_expand(base) : rm_expand(base);
      std::vector<Patch> rm_batch;
      std::vector<int> rm_labels;
      for (auto& [patch, k] : expanded) {
        rm_batch.push_back(std::move(patch));
        rm_labels.push_back(k);
      }
      auto logits = model->rm_logits(rm_batch, true);
      auto rm = losses::rm_loss(logits, rm_labels);
      components.emplace_back("rm", static_cast<double>(rm->value[0]));
      total = losses::stage_total(total, rm);
    }

    ag::backward(total);
    opt.step();
    log_step(log, 1, ep + 1, std::move(components));
  }
  log.train_seconds = seconds_since(t0);
  return model;
}

// --- stage 2: homogeneous spectral pretraining -----------------------------------

std::shared_ptr<Stage2Model<Real>> pretrain_spectral(const ExperimentConfig& cfg,
                                                     int target_classes,
                                                     int64_t target_bands,
                                                     const SpectralPools& pools,
                                                     RunLog& log) {
  const StageConfig& st = cfg.stage2;
  if (st.episodes < 1) raise(ErrorKind::Config, "stage2 episodes must be >= 1");
  bool fsl_on = cfg.ablation.hom_fsl;
  bool mr_on = cfg.ablation.mr_ssl;
  if (!fsl_on && !mr_on)
    raise(ErrorKind::Config, "stage 2 disabled entirely; skip it instead");

  int ways = resolve_ways(st, target_classes);
  if (fsl_on && static_cast<int>(pools.fsl_classes.size()) < ways)
    raise(ErrorKind::Config,
          "homogeneous FSL pool has " +
              std::to_string(pools.fsl_classes.size()) +
              " qualifying classes, need " + std::to_string(ways));

  uint64_t seed = derive_seed(cfg.base_seed, 2);
  auto model = std::make_shared<Stage2Model<Real>>(pools.bands, target_bands,
                                                   derive_seed(seed, 0x21));
  std::vector<ag::Var<Real>> trainable;
  for (auto& [n, v] : model->reg.params) trainable.push_back(v);
  nn::Adam<Real> opt(trainable, st.lr);

  Rng ep_rng(derive_seed(seed, 0x22));
  Rng mr_rng(derive_seed(seed, 0x23));
  auto sizes = pools.class_sizes();

  auto t0 = Clock::now();
  for (int ep = 0; ep < st.episodes; ++ep) {
    opt.zero_grad();
    std::vector<std::pair<std::string, double>> components;
    ag::Var<Real> total;

    if (fsl_on) {
      Episode e = sample_episode(sizes, ways, st.shots, st.queries, ep_rng);
      std::vector<std::vector<float>> batch;
      std::vector<int> support_labels, query_labels;
      for (const auto& it : e.support) {
        batch.push_back(pools.fsl_classes[it.cls][it.index]);
        support_labels.push_back(it.local);
      }
      for (const auto& it : e.query) {
        batch.push_back(pools.fsl_classes[it.cls][it.index]);
        query_labels.push_back(it.local);
      }
      auto feats = model->embed(batch, true);
      int64_t n_sup = static_cast<int64_t>(e.support.size());
      int64_t n_all = feats->value.dim(0);
      auto protos = losses::class_prototypes(ag::slice_rows(feats, 0, n_sup),
                                             support_labels, ways);
      auto logp = losses::proto_log_probs(ag::slice_rows(feats, n_sup, n_all),
                                          protos, cfg.squared_distance);
      auto fsl = losses::fsl_episode_loss(logp, query_labels);
      components.emplace_back("fsl", static_cast<double>(fsl->value[0]));
      total = fsl;
    }

    if (mr_on) {
      std::vector<std::vector<float>> masked;
      Arr<Real> target({st.mr_batch, static_cast<int64_t>(pools.bands)});
      auto idx = draw_batch(static_cast<int64_t>(pools.mr_all.size()),
                            st.mr_batch, mr_rng);
      for (int64_t i = 0; i < st.mr_batch; ++i) {
        const auto& x = pools.mr_all[idx[i]];
        MaskedSpectrum m = mask_spectrum(x, st.mask_ratio, mr_rng);
        masked.push_back(std::move(m.masked));
        for (int64_t b = 0; b < pools.bands; ++b)
          target[i * pools.bands + b] = x[b];
      }
      auto recon = model->reconstruct(masked, true);
      auto mr = losses::mr_loss(ag::constant(std::move(target)), recon);
      components.emplace_back("mr", static_cast<double>(mr->value[0]));
      total = total ? losses::stage_total(total, mr) : mr;
    }

    ag::backward(total);
    opt.step();
    log_step(log, 2, ep + 1, std::move(components));
  }
  log.train_seconds = seconds_since(t0);
  return model;
}

// --- stage 3: target-domain fine-tuning ------------------------------------------

namespace {

struct TargetPools {
  // augmented set grouped by ascending class id
  std::vector<int> class_ids;
  std::vector<const std::vector<AugmentedEntry>*> entries;
  std::vector<Patch> originals;        // D_l patches
  std::vector<int> original_locals;    // 0..N-1 local labels (class order)
};

TargetPools build_target_pools(const HsiCube& cube, const SplitSpec& split,
                               const AugmentedLabeledSet& aug, int patch_size) {
  TargetPools tp;
  for (const auto& [cls, entries] : aug.per_class) {
    tp.class_ids.push_back(cls);
    tp.entries.push_back(&entries);
  }
  int local = 0;
  for (const auto& [cls, coords] : split.labeled) {
    for (const Coord& c : coords) {
      Patch p = extract_patch(cube, c.y, c.x, patch_size);
      p.label = cls;
      tp.originals.push_back(std::move(p));
      tp.original_locals.push_back(local);
    }
    ++local;
  }
  return tp;
}

}  // namespace

FinetuneResult finetune_target(const ExperimentConfig& cfg, const HsiCube& cube,
                               const SplitSpec& split,
                               const AugmentedLabeledSet& aug,
                               const TensorArchive* spatial_archive,
                               const TensorArchive* spectral_archive,
                               uint64_t run_seed) {
  const StageConfig& st = cfg.stage3;
  if (st.episodes < 1) raise(ErrorKind::Config, "stage3 episodes must be >= 1");
  int n_classes = split.n_classes;
  int ways = resolve_ways(st, n_classes);

  FinetuneResult result;
  result.model = std::make_shared<FusedModel<Real>>(
      cube.bands, n_classes, st.sslcl_dropout, derive_seed(run_seed, 0x31));
  FusedModel<Real>& model = *result.model;

  if (spatial_archive)
    result.spatial_transfer = load_checkpoint(
        model.reg, *spatial_archive, {"spatial/backbone", "spatial/head"}, true);
  if (spectral_archive)
    result.spectral_transfer =
        load_checkpoint(model.reg, *spectral_archive, {"spectral/"}, true);

  std::vector<ag::Var<Real>> trainable;
  for (auto& [n, v] : model.reg.params) trainable.push_back(v);
  nn::Adam<Real> opt(trainable, st.lr);

  Rng ep_rng(derive_seed(run_seed, 0x32));
  Rng aug_rng(derive_seed(run_seed, 0x33));
  Rng drop_rng(derive_seed(run_seed, 0x34));

  TargetPools tp = build_target_pools(cube, split, aug, cfg.patch_size);
  std::vector<int64_t> sizes(tp.entries.size());
  for (size_t c = 0; c < tp.entries.size(); ++c)
    sizes[c] = static_cast<int64_t>(tp.entries[c]->size());

  bool sslcl_on = cfg.ablation.sslcl_mode != "off";
  bool sslcl_aug = cfg.ablation.sslcl_mode == "aug";

  RunLog& log = result.log;
  auto t0 = Clock::now();
  double spent_testing = 0.0;
  for (int ep = 0; ep < st.episodes; ++ep) {
    opt.zero_grad();
    std::vector<std::pair<std::string, double>> components;

    Episode e = sample_episode(sizes, ways, st.shots, st.queries, ep_rng);
    std::vector<Patch> batch;
    std::vector<int> support_labels, query_labels;
    for (const auto& it : e.support) {
      batch.push_back(materialize_entry(cube, (*tp.entries[it.cls])[it.index],
                                        tp.class_ids[it.cls], cfg.patch_size));
      support_labels.push_back(it.local);
    }
    for (const auto& it : e.query) {
      batch.push_back(materialize_entry(cube, (*tp.entries[it.cls])[it.index],
                                        tp.class_ids[it.cls], cfg.patch_size));
      query_labels.push_back(it.local);
    }
    auto fused = model.trunk(batch, true);
    auto emb = model.fsl_embedding(fused, true, drop_rng);
    int64_t n_sup = static_cast<int64_t>(e.support.size());
    int64_t n_all = emb->value.dim(0);
    auto protos = losses::class_prototypes(ag::slice_rows(emb, 0, n_sup),
                                           support_labels, ways);
    auto logp = losses::proto_log_probs(ag::slice_rows(emb, n_sup, n_all),
                                        protos, cfg.squared_distance);
    auto fsl = losses::fsl_episode_loss(logp, query_labels);
    components.emplace_back("fsl", static_cast<double>(fsl->value[0]));
    ag::Var<Real> total = fsl;

    if (sslcl_on) {
      ag::Var<Real> z1, z2;
      if (sslcl_aug) {
        std::vector<Patch> view1, view2;
        for (const Patch& p : tp.originals) {
          view1.push_back(sslcl_augment(p, aug_rng));
          view2.push_back(sslcl_augment(p, aug_rng));
        }
        z1 = model.sslcl_probs(model.trunk(view1, true), true, drop_rng);
        z2 = model.sslcl_probs(model.trunk(view2, true), true, drop_rng);
      } else {
        // dropout-only views of the unaugmented batch
        auto shared = model.trunk(tp.originals, true);
        z1 = model.sslcl_probs(shared, true, drop_rng);
        z2 = model.sslcl_probs(shared, true, drop_rng);
      }
      auto cl = losses::sslcl_loss(z1, z2);
      components.emplace_back("sslcl", static_cast<double>(cl->value[0]));
      total = losses::stage_total(total, cl);
    }

    ag::backward(total);
    opt.step();
    log_step(log, 3, ep + 1, std::move(components));

    bool cadence = (ep + 1) % st.eval_every == 0;
    bool last = ep + 1 == st.episodes;
    if (cadence || last) {
      auto te0 = Clock::now();
      MetricsReport rep = evaluate_model(model, cube, split, cfg.patch_size,
                                         cfg.squared_distance);
      double secs = seconds_since(te0);
      spent_testing += secs;
      log.evals.push_back({ep + 1, rep, secs});
      int idx = static_cast<int>(log.evals.size()) - 1;
      if (log.best_eval < 0 || rep.oa > log.evals[log.best_eval].report.oa)
        log.best_eval = idx;
      log.final_eval = idx;
      if (!cfg.quiet)
        std::printf("  [stage3 ep %4d] oa=%.4f aa=%.4f kappa=%.4f\n", ep + 1,
                    rep.oa, rep.aa, rep.kappa);
    }
  }
  log.test_seconds = spent_testing;
  log.train_seconds = seconds_since(t0) - spent_testing;
  return result;
}

MetricsReport evaluate_model(const FusedModel<Real>& model, const HsiCube& cube,
                             const SplitSpec& split, int patch_size,
                             bool squared_distance,
                             std::vector<int>* predictions_full) {
  ag::NoGrad guard;
  Rng unused(0);
  int n_classes = split.n_classes;

  // prototypes from the K0 originals per class
  std::vector<Patch> originals;
  std::vector<int> locals;
  int local = 0;
  for (const auto& [cls, coords] : split.labeled) {
    for (const Coord& c : coords)
      originals.push_back(extract_patch(cube, c.y, c.x, patch_size));
    for (size_t i = 0; i < coords.size(); ++i) locals.push_back(local);
    ++local;
  }
  std::vector<int> class_order;
  for (const auto& [cls, _] : split.labeled) class_order.push_back(cls);

  auto fused = model.trunk(originals, false);
  auto emb = model.fsl_embedding(fused, false, unused);
  int64_t dim = emb->value.dim(1);
  std::vector<double> protos(static_cast<size_t>(n_classes) * dim, 0.0);
  std::vector<int64_t> counts(n_classes, 0);
  for (size_t i = 0; i < originals.size(); ++i) {
    for (int64_t d = 0; d < dim; ++d)
      protos[locals[i] * dim + d] += emb->value[static_cast<int64_t>(i) * dim + d];
    ++counts[locals[i]];
  }
  for (int c = 0; c < n_classes; ++c)
    for (int64_t d = 0; d < dim; ++d) protos[c * dim + d] /= counts[c];

  if (predictions_full)
    predictions_full->assign(static_cast<size_t>(cube.height * cube.width), 0);

  std::vector<int> truth, predicted;
  const int64_t chunk = 256;
  for (size_t start = 0; start < split.test.size(); start += chunk) {
    size_t stop = std::min(split.test.size(), start + chunk);
    std::vector<Patch> batch;
    for (size_t i = start; i < stop; ++i)
      batch.push_back(extract_patch(cube, split.test[i].first.y,
                                    split.test[i].first.x, patch_size));
    auto feats = model.fsl_embedding(model.trunk(batch, false), false, unused);
    for (size_t i = start; i < stop; ++i) {
      const Real* f = feats->value.data() + static_cast<int64_t>(i - start) * dim;
      int best = 0;
      double best_d = 0.0;
      for (int c = 0; c < n_classes; ++c) {
        double s = 0.0;
        for (int64_t d = 0; d < dim; ++d) {
          double diff = f[d] - protos[c * dim + d];
          s += diff * diff;
        }
        double dist = squared_distance ? s : std::sqrt(s);
        if (c == 0 || dist < best_d) {
          best_d = dist;
          best = c;
        }
      }
      truth.push_back(split.test[i].second);
      predicted.push_back(class_order[best]);
      if (predictions_full)
        (*predictions_full)[split.test[i].first.y * cube.width +
                            split.test[i].first.x] = class_order[best];
    }
  }

  // the labeled pixels themselves render as their own class on maps
  if (predictions_full)
    for (const auto& [cls, coords] : split.labeled)
      for (const Coord& c : coords)
        (*predictions_full)[c.y * cube.width + c.x] = cls;

  return compute_metrics(truth, predicted, n_classes);
}

// --- experiments -----------------------------------------------------------------

ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
  ExperimentData data;
  auto need = [](const std::string& path, const char* key) {
    if (path.empty())
      raise(ErrorKind::Config, std::string("config key '") + key + "': missing");
    if (!fs::exists(path))
      raise(ErrorKind::Config,
            std::string("config key '") + key + "': no such file " + path);
  };
  need(cfg.target_cube, "target_cube");
  need(cfg.target_gt, "target_gt");
  data.target_cube = load_cube(cfg.target_cube);
  if (!data.target_cube.normalized)
    data.target_cube = normalize_cube(std::move(data.target_cube));
  data.target_gt = load_gt(cfg.target_gt);

  need(cfg.hetero_dir, "hetero_dir");
  data.hetero = load_hetero_pool(cfg.hetero_dir, cfg.patch_size);

  if (cfg.ablation.hom_fsl || cfg.ablation.mr_ssl) {
    need(cfg.homog_cube, "homog_cube");
    need(cfg.homog_gt, "homog_gt");
    data.homog_cube = load_cube(cfg.homog_cube);
    if (!data.homog_cube.normalized)
      data.homog_cube = normalize_cube(std::move(data.homog_cube));
    data.homog_gt = load_gt(cfg.homog_gt);
  }
  return data;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const ExperimentData& data) {
  ExperimentResult result;
  auto t0 = Clock::now();
  int n_classes = data.target_gt.n_classes;

  // target ground truth, optionally subsampled once per experiment
  GroundTruthMap gt = data.target_gt;
  if (cfg.subsample_fraction < 1.0) {
    Rng rng(derive_seed(cfg.base_seed, 0x55));
    gt = subsample_classes(gt, cfg.subsample_fraction, rng);
  }

  if (!cfg.quiet) std::printf("[stage 1] spatial pretraining\n");
  auto stage1 = pretrain_spatial(cfg, n_classes, data.hetero, result.stage1_log);
  TensorArchive spatial_archive = archive_from_registry(stage1->reg);

  TensorArchive spectral_archive;
  bool stage2_ran = cfg.ablation.hom_fsl || cfg.ablation.mr_ssl;
  if (stage2_ran) {
    if (!cfg.quiet) std::printf("[stage 2] spectral pretraining\n");
    SpectralPools pools =
        build_spectral_pools(data.homog_cube, data.homog_gt, cfg.fsl_min_class,
                             cfg.fsl_cap, cfg.base_seed);
    auto stage2 = pretrain_spectral(cfg, n_classes, data.target_cube.bands,
                                    pools, result.stage2_log);
    spectral_archive = archive_from_registry(stage2->reg);
  } else if (!cfg.quiet) {
    std::printf("[stage 2] skipped (ablation)\n");
  }

  std::vector<MetricsReport> best_reports, final_reports;
  for (int run = 0; run < cfg.n_runs; ++run) {
    uint64_t run_seed = cfg.base_seed + static_cast<uint64_t>(run);
    if (!cfg.quiet) std::printf("[stage 3] run %d/%d (seed %llu)\n", run + 1,
                                cfg.n_runs,
                                static_cast<unsigned long long>(run_seed));
    SplitSpec split = build_splits(gt, cfg.k0, derive_seed(run_seed, 0x51));
    split.subsample_fraction = cfg.subsample_fraction;
    Rng aug_rng(derive_seed(run_seed, 0x52));
    AugmentedLabeledSet aug =
        build_augmented_set(split, cfg.target_count, aug_rng);

    FinetuneResult ft = finetune_target(
        cfg, data.target_cube, split, aug, &spatial_archive,
        stage2_ran ? &spectral_archive : nullptr, run_seed);
    best_reports.push_back(ft.log.best_report());
    final_reports.push_back(ft.log.final_report());
    result.run_logs.push_back(std::move(ft.log));
  }

  result.aggregate = aggregate_runs(best_reports);
  result.aggregate_final = aggregate_runs(final_reports);
  result.train_seconds = result.stage1_log.train_seconds +
                         result.stage2_log.train_seconds;
  for (const auto& log : result.run_logs) {
    result.train_seconds += log.train_seconds;
    result.test_seconds += log.test_seconds;
  }
  if (!cfg.quiet)
    std::printf("[done] oa=%.4f +- %.4f (%.1fs train, %.1fs test)\n",
                result.aggregate.oa.mean, result.aggregate.oa.stddev,
                result.train_seconds, result.test_seconds);
  (void)t0;
  return result;
}

// --- serialization -----------------------------------------------------------------

void write_runlog(const RunLog& log, const std::string& jsonl_path) {
  std::ofstream f(jsonl_path, std::ios::trunc);
  if (!f) raise(ErrorKind::Io, "cannot write " + jsonl_path);
  for (const auto& s : log.steps) {
    json comps = json::object();
    for (const auto& [k, v] : s.components) comps[k] = v;
    json j{{"type", "step"},
           {"stage", s.stage},
           {"episode", s.episode},
           {"components", comps},
           {"total", s.total}};
    f << j.dump() << "\n";
  }
  for (const auto& e : log.evals) {
    json j{{"type", "eval"},
           {"episode", e.episode},
           {"oa", e.report.oa},
           {"aa", e.report.aa},
           {"kappa", e.report.kappa},
           {"seconds", e.seconds}};
    f << j.dump() << "\n";
  }
  json t{{"type", "timing"},
         {"train_seconds", log.train_seconds},
         {"test_seconds", log.test_seconds}};
  f << t.dump() << "\n";
  for (const auto& [k, v] : log.checkpoints) {
    json j{{"type", "checkpoint"}, {"stage", k}, {"path", v}};
    f << j.dump() << "\n";
  }
}

void save_experiment_report(const ExperimentResult& result,
                            const std::string& out_dir) {
  fs::create_directories(out_dir);
  json runs = json::array();
  for (const auto& log : result.run_logs) {
    const auto& best = log.best_report();
    const auto& fin = log.final_report();
    runs.push_back({{"best", {{"oa", best.oa}, {"aa", best.aa}, {"kappa", best.kappa}}},
                    {"final", {{"oa", fin.oa}, {"aa", fin.aa}, {"kappa", fin.kappa}}},
                    {"train_seconds", log.train_seconds},
                    {"test_seconds", log.test_seconds}});
  }
  json j{{"aggregate", json::parse(aggregate_to_json(result.aggregate))},
         {"aggregate_final", json::parse(aggregate_to_json(result.aggregate_final))},
         {"runs", runs},
         {"timings",
          {{"train_seconds", result.train_seconds},
           {"test_seconds", result.test_seconds}}}};
  {
    std::ofstream f(fs::path(out_dir) / "report.json", std::ios::trunc);
    f << j.dump(2) << "\n";
  }
  {
    std::ofstream f(fs::path(out_dir) / "report.txt", std::ios::trunc);
    f << aggregate_to_table(result.aggregate);
  }
}

}  // namespace s4l
