#pragma once

#include <map>
#include <string>
#include <vector>

#include "breathscan/labeling.hpp"
#include "breathscan/prediction.hpp"

namespace breathscan {

// Frame-wise detection quality. Undefined-denominator cases report 1.0 and
// set the matching flag so sweeps stay total without silent misreads.
struct DetectionMetrics {
    double iou = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double threshold = 0.5;
    long tp = 0;
    long fp = 0;
    long fn = 0;
    bool iou_flagged = false;
    bool precision_flagged = false;
    bool recall_flagged = false;
};

// Micro-averaged corpus metrics: binarize probs at threshold (prob >=
// threshold is positive) and tally over every non-Mask gold frame. Lengths
// must match per utterance; every prediction needs gold.
DetectionMetrics metrics_at(const std::vector<Prediction>& preds,
                            const std::map<std::string, LabelSequence>& gold, double threshold);

// Per-utterance macro average of iou/precision/recall at one threshold.
DetectionMetrics macro_metrics_at(const std::vector<Prediction>& preds,
                                  const std::map<std::string, LabelSequence>& gold,
                                  double threshold);

// Evaluates the sorted unique predicted probabilities (plus 0.5) and returns
// the IoU argmax; ties break toward the larger threshold. Requires at least
// one gold-positive frame.
DetectionMetrics sweep_threshold(const std::vector<Prediction>& preds,
                                 const std::map<std::string, LabelSequence>& gold);

// [start, end) in seconds.
struct BreathInterval {
    double start = 0.0;
    double end = 0.0;
};

// Run-length merge of frames with prob >= threshold; frame f covers
// [f*hop, (f+1)*hop). Intervals shorter than min_duration are dropped.
std::vector<BreathInterval> merge_breath_intervals(const std::vector<float>& probs,
                                                   double threshold, double hop_sec,
                                                   double min_duration);

}  // namespace breathscan
