#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pampose/config.hpp"
#include "pampose/data.hpp"
#include "pampose/metrics.hpp"
#include "pampose/posenet.hpp"

namespace pampose::harness {

using config::RunConfig;
using data::SceneSample;
using geometry::Pose;
using losses::ObjectModel;

// Predicts a residual pose (applied by left-composition) for the current
// estimate against an observed scene.
using Refiner = std::function<Pose(const Pose& current, const SceneSample& observed)>;

// est_K = r_K * ... * r_1 * initial; K = 0 returns the initial pose.
Pose iterative_refine(const Pose& initial, const SceneSample& observed, const Refiner& refiner,
                      int iterations);

// Object models for the configured shapes, seeded from the run seed.
std::vector<ObjectModel> build_models(const RunConfig& config);

struct TrainResult {
    metrics::MetricReport report;
    std::vector<double> epoch_losses;          // pose network
    std::vector<double> refiner_epoch_losses;  // empty when the refiner is off
};

// Full training run: pose network, then (optionally) the refiner on the
// frozen network, then held-out evaluation with and without refinement.
// When out_dir is non-empty writes checkpoint.bin, report.json, report.csv,
// loss_curve.csv and config.resolved.cfg there. Deterministic in the config.
// Training divergence raises NumericError naming epoch and scene.
TrainResult train(const RunConfig& config, const std::string& out_dir = "");

// Held-out evaluation of a stored checkpoint (same scene streams as train).
metrics::MetricReport evaluate_checkpoint(const std::string& checkpoint_path,
                                          const std::string& out_dir = "");

// Evaluation core: one pose per scene from `predict`, optionally a second
// refined section from `refine` on exactly the same scenes.
using Predictor = std::function<Pose(const SceneSample& scene, const ObjectModel& model)>;
metrics::MetricReport evaluate(const std::vector<ObjectModel>& models, const RunConfig& config,
                               const Predictor& predict, const Predictor& refine = nullptr);

// --- ablations ---------------------------------------------------------------

struct AblationArm {
    std::string name;
    std::map<std::string, std::string> overrides;  // config keys over the base run
};

struct ArmResult {
    std::string name;
    bool ok = false;
    std::string error;
    std::int64_t total_params = 0;
    std::int64_t pam_params = 0;
    double final_train_loss = 0.0;
    metrics::ObjectMetrics aggregate;  // unrefined aggregate metrics
};

struct SweepResult {
    std::vector<ArmResult> arms;
    bool all_ok = true;
};

// {base, CAP, GAP, CAP+GAP} at the base reduction ratio
std::vector<AblationArm> paths_grid();
// reduction ratio in {4, 8, 16, 32, 64}
std::vector<AblationArm> reduction_grid();

// Runs every arm on the shared base config (paired seeds and scene streams);
// a failing arm is recorded and the sweep continues. `threads` arms run
// concurrently, each on its own graph.
SweepResult ablation_sweep(const RunConfig& base, const std::vector<AblationArm>& arms,
                           int threads = 1);

std::string sweep_to_csv(const SweepResult& result);
std::string sweep_to_json(const SweepResult& result, const RunConfig& base);

// --- classification experiment -------------------------------------------------

struct ClassifyResult {
    double accuracy_pam = 0.0;
    double accuracy_base = 0.0;
    std::int64_t params_pam = 0;
    std::int64_t params_base = 0;
    std::vector<double> losses_pam, losses_base;
};

// Seeded three-shape task (sphere / box / cylinder, xyz only), trained twice:
// with the attention block and without. Deterministic in the config.
ClassifyResult classify_experiment(const RunConfig& config);

std::string classify_to_json(const ClassifyResult& result, const RunConfig& config);

}  // namespace pampose::harness
