#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "breathscan/detector.hpp"
#include "breathscan/evaluation.hpp"
#include "breathscan/features.hpp"
#include "breathscan/labeling.hpp"

namespace breathscan {

// One training utterance: model-clock features plus the rule-derived
// P/B/U frame sets.
struct SelfTrainItem {
    FeatureSequence features;
    LabelSets rule_sets;
};

// One validation utterance with manually-derived gold labels (Mask marks
// unannotated pause frames) and the pause-frame domain used for threshold
// calibration.
struct ValidationItem {
    FeatureSequence features;
    LabelSequence gold;
    std::vector<long> pause_frames;
};

struct SelfTrainConfig {
    DetectorConfig detector;
    OptimizerConfig optimizer;
    TrainScheduleConfig schedule;  // per-iteration training schedule
    double initial_target_precision = 0.98;
    double precision_decrement = 0.02;
    double precision_floor = 0.80;
    int max_iterations = 4;
    bool accumulate_pseudo = false;      // keep pseudo-labels across iterations
    bool disable_pseudo_labels = false;  // ablation: iterate with B/U unchanged
    std::uint64_t seed = 1234;
    std::string run_dir;  // empty disables snapshot artifacts
};

// Pseudo-labeling cutoffs: breath above alpha, non-breath below beta.
// Unattainable sides degrade to +/-infinity (no pseudo-labels on that side).
struct DynamicThresholds {
    double alpha = std::numeric_limits<double>::infinity();
    double beta = -std::numeric_limits<double>::infinity();
    bool alpha_attainable = false;
    bool beta_attainable = false;
};

// Sweep over the sorted unique probabilities of validation pause frames:
// alpha is the smallest candidate whose >=-suffix reaches the target breath
// precision, beta the largest candidate whose <=-prefix reaches the target
// non-breath precision, constrained to beta < alpha.
DynamicThresholds calibrate_thresholds(const std::vector<std::pair<float, Label>>& pause_frames,
                                       double target_precision);

// Gathers (prob, gold) pairs over validation pause frames and calibrates.
DynamicThresholds calibrate_thresholds(Detector<float>& det,
                                       const std::vector<ValidationItem>& validation,
                                       double target_precision);

struct PseudoLabels {
    std::vector<long> breath;
    std::vector<long> nonbreath;
};

// Thresholded predictions restricted to mask-eligible frames P \ (B u U).
std::vector<PseudoLabels> pseudo_label(const Detector<float>& det,
                                       const std::vector<SelfTrainItem>& corpus,
                                       const std::vector<LabelSets>& current_sets,
                                       const DynamicThresholds& th);

struct IterationRecord {
    int k = 0;
    double target_precision = 0.0;  // unused for k = 0
    DynamicThresholds thresholds;   // unused for k = 0
    long pseudo_breath = 0;
    long pseudo_nonbreath = 0;
    long merge_conflicts = 0;
    long breath_frames = 0;     // training set sizes after merging
    long nonbreath_frames = 0;
    DetectionMetrics validation;  // sweep_threshold on the validation set
    double train_loss = 0.0;
    long train_steps = 0;
    std::string checkpoint_hash;
    std::string parent_hash;
    bool no_pseudo_labels = false;  // degenerate-iteration warning
};

struct SelfTrainResult {
    std::unique_ptr<Detector<float>> detector;  // the algorithm's output
    int output_iteration = 0;
    std::vector<IterationRecord> history;
};

std::string iteration_record_to_json(const IterationRecord& rec);

// Algorithm: train the initial detector on rule labels, then iterate
// calibrate -> pseudo-label -> relabel -> warm-start retrain, evaluating
// validation IoU at the IoU-maximizing threshold after every iteration.
// Stops at the first strict IoU decline (returning the previous iteration's
// detector) or after max_iterations.
SelfTrainResult run_self_training(const std::vector<SelfTrainItem>& corpus,
                                  const std::vector<ValidationItem>& validation,
                                  const SelfTrainConfig& cfg);

}  // namespace breathscan
