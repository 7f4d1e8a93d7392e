#pragma once

#include <string>

#include "breathscan/detector.hpp"
#include "breathscan/features.hpp"
#include "breathscan/rule_annotator.hpp"

namespace breathscan {

// Everything a pipeline run needs, serialized as one JSON document so a run
// directory carries its exact configuration. Flag overrides win over the
// config file.
struct PipelineConfig {
    FrameConfig rule_pipeline = FrameConfig::rule_default();
    FrameConfig model_pipeline = FrameConfig::model_default();
    RuleThresholds rule_thresholds;
    DetectorConfig detector = DetectorConfig::desk();
    OptimizerConfig optimizer;
    TrainScheduleConfig schedule;

    double initial_target_precision = 0.98;
    double precision_decrement = 0.02;
    double precision_floor = 0.80;
    int max_iterations = 4;
    bool accumulate_pseudo = false;
    bool disable_pseudo_labels = false;  // ablation: iterate without pseudo-labels
    bool use_nonbreath_set = true;       // ablation: drop U from training labels

    std::string corpus_dir;
    std::string pause_tsv;
    std::string gold_tsv;
    std::string run_dir;

    double detect_threshold = 0.5;
    double detect_min_duration = 0.0;  // seconds; shorter intervals dropped

    std::uint64_t seed = 1234;
    int jobs = 0;  // 0 keeps the OpenMP default

    void validate() const;
};

PipelineConfig pipeline_config_from_json_string(const std::string& text);
PipelineConfig load_pipeline_config(const std::string& path);
std::string pipeline_config_to_json_string(const PipelineConfig& cfg);

}  // namespace breathscan
