#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "breathscan/audio_io.hpp"
#include "breathscan/features.hpp"
#include "breathscan/labeling.hpp"

namespace breathscan {

// Feature thresholds for rule-based pause classification. Defaults follow
// the reference configuration: breath needs duration > 300 ms,
// max VMS > 150, max ZCR > 1e-4 and NA-VMS > 0.6; non-breath needs
// max VMS < 150 and max ZCR < 5e-5.
struct RuleThresholds {
    double min_breath_duration = 0.3;
    double breath_max_vms_gt = 150.0;
    double breath_max_zcr_gt = 1e-4;
    double breath_na_vms_gt = 0.6;
    double nonbreath_max_vms_lt = 150.0;
    double nonbreath_max_zcr_lt = 5e-5;

    // Enforces the ordering that makes Breath and NonBreath mutually
    // exclusive (nonbreath ZCR bound below the breath ZCR bound).
    void validate() const;
};

enum class PauseClass { Breath, NonBreath, Unclassified };

const char* pause_class_name(PauseClass c);
std::optional<PauseClass> pause_class_from_name(const std::string& s);

// Half-open frame index range [begin, end).
struct FrameRange {
    long begin = 0;
    long end = 0;

    long size() const { return end > begin ? end - begin : 0; }
    bool empty() const { return end <= begin; }
};

// Frames whose center time t*hop + window/2 lies in [start, end). May be
// empty for pauses shorter than the span between centers. When n_frames is
// non-negative the range is clamped to [0, n_frames).
FrameRange frames_of_pause(const PauseInterval& pause, const FrameConfig& cfg, long n_frames = -1);

// Scalar feature summary of one pause on the rule frame clock.
struct PauseStats {
    double duration = 0.0;
    double max_vms = 0.0;
    double max_zcr = 0.0;
    double na_vms = 0.0;
    long n_frames = 0;
};

PauseStats pause_stats(const FeatureSequence& features, const PauseInterval& pause);

PauseClass classify_stats(const PauseStats& st, const RuleThresholds& th);

// Validates the pause against the clip duration, summarizes its frames and
// applies the threshold rules. Pauses that map to no frame stay Unclassified.
PauseClass classify_pause(const FeatureSequence& features, const PauseInterval& pause,
                          const RuleThresholds& th, double clip_duration_sec);

struct ClassifiedPause {
    PauseInterval interval;
    PauseClass cls = PauseClass::Unclassified;
};

struct UtteranceAnnotation {
    std::string utterance_id;
    std::vector<ClassifiedPause> pauses;
};

struct ClassMatchStats {
    long predicted = 0;
    long matched = 0;  // predicted and gold agree
    long gold = 0;

    double precision() const { return predicted ? double(matched) / predicted : 1.0; }
    double recall() const { return gold ? double(matched) / gold : 1.0; }
};

struct AnnotationReport {
    long n_utterances = 0;
    long n_failed = 0;
    long n_pauses = 0;
    long n_breath = 0;
    long n_nonbreath = 0;
    long n_unclassified = 0;
    std::vector<std::string> failures;

    bool has_gold = false;
    // Pause-level and frame-level agreement with gold spans; both views are
    // reported since either reading of recall is defensible.
    ClassMatchStats breath_pauses, nonbreath_pauses;
    ClassMatchStats breath_frames, nonbreath_frames;
};

struct AnnotateResult {
    std::vector<UtteranceAnnotation> annotations;
    AnnotationReport report;
};

using GoldSpans = std::map<std::string, std::vector<ClassifiedPause>>;

// Classifies every pause of every clip on the rule frame clock. Parallel per
// utterance with a deterministic ordered merge; a failing utterance is
// logged, skipped and counted rather than aborting the run.
AnnotateResult annotate_corpus(const std::vector<AudioClip>& clips,
                               const std::map<std::string, std::vector<PauseInterval>>& pauses,
                               const RuleThresholds& th, const FrameConfig& rule_cfg,
                               const GoldSpans* gold = nullptr);

// Projects classified pause spans onto another frame clock by frame-center
// membership, yielding the P/B/U index sets used to build training labels.
LabelSets project_frame_sets(const UtteranceAnnotation& ann, const FrameConfig& cfg,
                             long n_frames);

// Annotation TSV: `utterance_id<TAB>start<TAB>end<TAB>class` with class in
// {breath, non-breath, unclassified}.
void write_annotation_tsv(const std::string& path,
                          const std::vector<UtteranceAnnotation>& annotations);
GoldSpans read_annotation_tsv(const std::string& path);

// Sweeps breath thresholds over the observed feature quantiles of labeled
// pauses: maximal recall subject to breath precision >= target. Non-breath
// bounds sweep the same grids for non-breath precision >= target. Duration
// gate is kept from `base`.
RuleThresholds calibrate_rule_thresholds(const std::vector<std::pair<PauseStats, bool>>& labeled,
                                         double target_precision, const RuleThresholds& base);

// Gold frame labels from manual annotation spans: breath spans become 1,
// pause frames inside `unclassified` spans become Mask, remaining pause
// frames and all speech frames become 0.
LabelSequence build_gold_labels(const std::vector<PauseInterval>& pauses,
                                const std::vector<ClassifiedPause>& gold_spans,
                                const FrameConfig& cfg, long n_frames,
                                std::string utterance_id = {});

}  // namespace breathscan
