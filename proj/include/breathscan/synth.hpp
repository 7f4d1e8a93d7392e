#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "breathscan/audio_io.hpp"
#include "breathscan/rule_annotator.hpp"

namespace breathscan {

// Seeded synthetic speech corpus with exact ground truth: utterances
// alternate harmonic "speech" segments with pauses containing either a
// band-limited noise burst (breath), digital silence (non-breath) or a short
// damped click (neither). Used by the test suite and the `synth` subcommand.
struct SynthConfig {
    std::uint64_t seed = 42;
    int sample_rate = 22050;
    int n_utterances = 50;
    int min_pauses = 2;
    int max_pauses = 4;

    double breath_fraction = 0.5;  // pause type mix; remainder splits
    double click_fraction = 0.0;   // silence vs click

    double min_pause_dur = 0.35;
    double max_pause_dur = 0.75;
    double min_speech_dur = 0.35;
    double max_speech_dur = 0.8;

    // Breath burst amplitude is log-uniform in [min, max]; low values make
    // bursts hard to separate from the background noise.
    double breath_amp_min = 0.05;
    double breath_amp_max = 0.25;
    double speech_amp = 0.3;

    // White background noise added everywhere except silence pauses, which
    // stay digitally silent so the non-breath rule can fire.
    double bg_noise_amp = 0.0;
};

struct SynthPause {
    PauseInterval interval;
    PauseClass truth = PauseClass::Unclassified;  // Unclassified marks clicks
    // Event extent inside the pause (burst or click span); equals the pause
    // for silence.
    double event_start = 0.0;
    double event_end = 0.0;
};

struct SynthUtterance {
    AudioClip clip;
    std::vector<SynthPause> pauses;
};

std::vector<SynthUtterance> synth_corpus(const SynthConfig& cfg);

// The fixed 20-pause corpus used by the rule-engine tests: 10 breath-like,
// 5 digital-silence and 5 click-like pauses with generous margins on every
// threshold.
std::vector<SynthUtterance> synth_rule_demo_corpus(std::uint64_t seed = 7);

// Writes wav/<utt>.wav plus pauses.tsv and gold.tsv (annotation TSV of the
// ground-truth classes, breath spans trimmed to the burst extent).
void write_synth_corpus(const std::string& dir, const std::vector<SynthUtterance>& corpus);

std::vector<PauseInterval> synth_pause_intervals(const SynthUtterance& u);
GoldSpans synth_gold_spans(const std::vector<SynthUtterance>& corpus);

}  // namespace breathscan
