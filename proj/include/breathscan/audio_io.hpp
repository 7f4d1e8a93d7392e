#pragma once

#include <map>
#include <string>
#include <vector>

namespace breathscan {

// Mono audio in [-1, 1]. The two pipelines run at 22050 Hz (rule annotation)
// and 16000 Hz (detector input); resample() bridges them.
struct AudioClip {
    std::vector<double> samples;
    int sample_rate = 0;
    std::string utterance_id;

    double duration_sec() const {
        return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
    }
};

// One forced-alignment pause, [start, end) in seconds.
struct PauseInterval {
    std::string utterance_id;
    double start = 0.0;
    double end = 0.0;

    double duration() const { return end - start; }
};

// Reads RIFF/WAVE, PCM 16-bit or IEEE float32. Multi-channel input is
// averaged to mono. utterance_id is the file stem.
AudioClip load_wav(const std::string& path);

// 16-bit PCM writer; int16 round trips bit-exactly through load_wav.
void write_wav(const std::string& path, const AudioClip& clip);

struct ResampleConfig {
    double kaiser_beta = 8.0;
    int taps_per_phase = 64;  // zero crossings covered by the sinc kernel
};

// Band-limited windowed-sinc resampling. Pass-through when rates match.
AudioClip resample(const AudioClip& clip, int target_rate, const ResampleConfig& cfg = {});

// Pause TSV: `utterance_id<TAB>start_sec<TAB>end_sec`, '#' comments and blank
// lines skipped. Result is grouped per utterance, sorted by start, and
// validated non-overlapping; violations name the offending line.
std::map<std::string, std::vector<PauseInterval>> parse_pause_file(const std::string& path);

}  // namespace breathscan
