#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "breathscan/audio_io.hpp"

namespace breathscan {

// One frame clock. The rule pipeline runs 22050 Hz / win 256 / hop 128 /
// 256 mels; the detector pipeline runs 16000 Hz / win 400 (25 ms) /
// hop 160 (10 ms) / 128 mels.
struct FrameConfig {
    int sample_rate = 16000;
    int window_length = 400;
    int hop_length = 160;
    int n_mels = 128;
    double fmin = 0.0;
    double fmax = 0.0;  // 0 means sample_rate / 2

    double effective_fmax() const { return fmax > 0.0 ? fmax : sample_rate / 2.0; }
    double hop_sec() const { return static_cast<double>(hop_length) / sample_rate; }
    double frame_center_sec(long frame) const {
        return (static_cast<double>(frame) * hop_length + window_length * 0.5) / sample_rate;
    }
    void validate() const;

    static FrameConfig rule_default();
    static FrameConfig model_default();
};

// Frames start at sample 0 with no centering. A clip shorter than one window
// yields a single zero-padded frame; otherwise only complete windows count.
long frame_count(long num_samples, const FrameConfig& cfg);

// Per-frame feature channels on one frame clock. log_mel is row-major
// [n_mels x F] in dB; zcr and vms have length F.
struct FeatureSequence {
    std::vector<double> log_mel;
    std::vector<double> zcr;
    std::vector<double> vms;
    long n_frames = 0;
    FrameConfig frame_config;
    std::string utterance_id;

    double mel_at(int mel, long frame) const { return log_mel[std::size_t(mel) * n_frames + frame]; }
};

// Precomputed per-config state (Hann window, DFT tables, mel filterbank).
// Read-only after construction; share one instance across worker threads.
class FeatureExtractor {
public:
    explicit FeatureExtractor(const FrameConfig& cfg);

    FeatureSequence extract(const AudioClip& clip) const;

    // Power spectrogram -> Slaney mel filterbank -> 10*log10 with a floor at
    // (global max - 80 dB). Row-major [n_mels x F].
    std::vector<double> log_mel_spectrogram(const AudioClip& clip, long* out_frames = nullptr) const;
    std::vector<double> zcr(const AudioClip& clip) const;

    const FrameConfig& config() const { return cfg_; }
    // Triangular filterbank [n_mels x n_bins]; exposed for inspection/tests.
    const std::vector<double>& mel_filterbank() const { return mel_fb_; }
    int n_bins() const { return n_bins_; }

private:
    FrameConfig cfg_;
    int n_bins_;
    std::vector<double> window_;
    std::vector<double> cos_table_;
    std::vector<double> sin_table_;
    std::vector<double> mel_fb_;
};

// Population variance over mel bins, one value per frame.
std::vector<double> vms(const std::vector<double>& log_mel, int n_mels, long n_frames);

// Mean of min-max normalized values; 0 when the segment is constant.
double na_vms(const double* v, long n);
double na_vms(const std::vector<double>& v);

// Mel filter center frequencies (Slaney scale), n_mels entries. Used by the
// filterbank construction and exposed so tests can locate the peak filter of
// a tone independently.
std::vector<double> mel_center_frequencies(int n_mels, double fmin, double fmax);

inline constexpr std::uint32_t kFeatureDumpVersion = 1;

// Binary dump: magic "BSFT", version u32, F u32, n_mels u32, then float32
// row-major log-mel, float32 zcr[F], float32 vms[F]. Little-endian.
void write_feature_dump(const std::string& path, const FeatureSequence& fs);
FeatureSequence read_feature_dump(const std::string& path);

}  // namespace breathscan
