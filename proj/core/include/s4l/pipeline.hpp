#pragma once

// Three-stage training pipeline: heterogeneous spatial pretraining (FSL +
// rotation-mirror prediction), homogeneous spectral pretraining (FSL +
// masked reconstruction), and target-domain fine-tuning (FSL + view
// consistency), plus evaluation, multi-run experiments and logging.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "s4l/augment.hpp"
#include "s4l/config.hpp"
#include "s4l/metrics.hpp"
#include "s4l/network.hpp"

namespace s4l {

using Real = float;

struct StepRecord {
  int stage = 0;
  int episode = 0;  // 1-based
  std::vector<std::pair<std::string, double>> components;
  double total = 0.0;
};

struct EvalRecord {
  int episode = 0;
  MetricsReport report;
  double seconds = 0.0;
};

struct RunLog {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  double train_seconds = 0.0;
  double test_seconds = 0.0;
  std::map<std::string, std::string> checkpoints;
  int best_eval = -1;   // highest-OA cadence evaluation
  int final_eval = -1;  // last cadence evaluation

  const MetricsReport& best_report() const;
  const MetricsReport& final_report() const;
};

void write_runlog(const RunLog& log, const std::string& jsonl_path);

// --- training pools ----------------------------------------------------------

struct HeteroPool {
  std::vector<std::vector<Patch>> classes;  // 33x33x3 items grouped by class

  std::vector<int64_t> class_sizes() const {
    std::vector<int64_t> s;
    for (const auto& c : classes) s.push_back(static_cast<int64_t>(c.size()));
    return s;
  }
};

// Directory layout: one subdirectory per class (sorted by name), each holding
// <item>.cube.json containers; items are resized to patch_size via bicubic
// interpolation when needed.
HeteroPool load_hetero_pool(const std::string& dir, int patch_size);

struct SpectralPools {
  int64_t bands = 0;
  std::vector<std::vector<std::vector<float>>> fsl_classes;  // capped draw
  std::vector<std::vector<float>> mr_all;                    // every labeled spectrum

  std::vector<int64_t> class_sizes() const {
    std::vector<int64_t> s;
    for (const auto& c : fsl_classes) s.push_back(static_cast<int64_t>(c.size()));
    return s;
  }
};

// FSL pool: classes with more than min_class samples, capped at cap items
// drawn once under the given seed. MR pool: every labeled spectrum.
SpectralPools build_spectral_pools(const HsiCube& cube, const GroundTruthMap& gt,
                                   int min_class, int cap, uint64_t seed);

// --- stages -------------------------------------------------------------------

std::shared_ptr<Stage1Model<Real>> pretrain_spatial(const ExperimentConfig& cfg,
                                                    int target_classes,
                                                    const HeteroPool& pool,
                                                    RunLog& log);

std::shared_ptr<Stage2Model<Real>> pretrain_spectral(const ExperimentConfig& cfg,
                                                     int target_classes,
                                                     int64_t target_bands,
                                                     const SpectralPools& pools,
                                                     RunLog& log);

struct FinetuneResult {
  std::shared_ptr<FusedModel<Real>> model;
  RunLog log;
  TransferReport spatial_transfer, spectral_transfer;
};

FinetuneResult finetune_target(const ExperimentConfig& cfg, const HsiCube& cube,
                               const SplitSpec& split,
                               const AugmentedLabeledSet& aug,
                               const TensorArchive* spatial_archive,
                               const TensorArchive* spectral_archive,
                               uint64_t run_seed);

// Prototype classification of the test remainder: prototypes come from the
// K0 original labeled samples only, on fusionFSL embeddings in inference
// mode. When predictions_full is given it receives a full-size class map.
MetricsReport evaluate_model(const FusedModel<Real>& model, const HsiCube& cube,
                             const SplitSpec& split, int patch_size,
                             bool squared_distance,
                             std::vector<int>* predictions_full = nullptr);

// --- experiments ----------------------------------------------------------------

struct ExperimentData {
  HeteroPool hetero;
  HsiCube homog_cube;
  GroundTruthMap homog_gt;
  HsiCube target_cube;
  GroundTruthMap target_gt;
};

// Loads and normalizes everything the config points at.
ExperimentData load_experiment_data(const ExperimentConfig& cfg);

struct ExperimentResult {
  RunAggregate aggregate;        // over per-run best-OA reports
  RunAggregate aggregate_final;  // over per-run final reports
  std::vector<RunLog> run_logs;
  RunLog stage1_log, stage2_log;
  double train_seconds = 0.0;
  double test_seconds = 0.0;
};

// Stages 1-2 once, then n_runs stage-3 runs with seed = base_seed + run
// index, each redrawing the labeled/test split.
ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const ExperimentData& data);

void save_experiment_report(const ExperimentResult& result,
                            const std::string& out_dir);

}  // namespace s4l
