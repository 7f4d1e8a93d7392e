#include "breathscan/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "breathscan/kernels.hpp"
#include "breathscan/util.hpp"

namespace breathscan {

namespace {

constexpr double kPowerFloor = 1e-10;
constexpr double kTopDb = 80.0;

// Slaney mel scale (linear below 1 kHz, log above), matching the common
// filterbank convention for log-mel extraction.
constexpr double kFsp = 200.0 / 3.0;
constexpr double kMinLogHz = 1000.0;
constexpr double kMinLogMel = kMinLogHz / kFsp;
const double kLogStep = std::log(6.4) / 27.0;

double hz_to_mel(double hz) {
    if (hz < kMinLogHz) return hz / kFsp;
    return kMinLogMel + std::log(hz / kMinLogHz) / kLogStep;
}

double mel_to_hz(double mel) {
    if (mel < kMinLogMel) return mel * kFsp;
    return kMinLogHz * std::exp(kLogStep * (mel - kMinLogMel));
}

std::vector<double> mel_band_edges(int n_mels, double fmin, double fmax) {
    std::vector<double> hz(n_mels + 2);
    const double m0 = hz_to_mel(fmin);
    const double m1 = hz_to_mel(fmax);
    for (int i = 0; i < n_mels + 2; ++i)
        hz[i] = mel_to_hz(m0 + (m1 - m0) * i / (n_mels + 1));
    return hz;
}

}  // namespace

void FrameConfig::validate() const {
    if (sample_rate <= 0) throw ConfigError("FrameConfig: sample_rate must be positive");
    if (hop_length <= 0 || hop_length > window_length)
        throw ConfigError(format_str("FrameConfig: need 0 < hop (%d) <= window (%d)", hop_length,
                                     window_length));
    if (n_mels < 1) throw ConfigError("FrameConfig: n_mels must be >= 1");
    if (effective_fmax() > sample_rate / 2.0 + 1e-9)
        throw ConfigError(format_str("FrameConfig: fmax %g above Nyquist %g", effective_fmax(),
                                     sample_rate / 2.0));
    if (fmin < 0.0 || fmin >= effective_fmax())
        throw ConfigError("FrameConfig: need 0 <= fmin < fmax");
}

FrameConfig FrameConfig::rule_default() {
    FrameConfig c;
    c.sample_rate = 22050;
    c.window_length = 256;
    c.hop_length = 128;
    c.n_mels = 256;
    return c;
}

FrameConfig FrameConfig::model_default() {
    FrameConfig c;
    c.sample_rate = 16000;
    c.window_length = 400;  // 25 ms
    c.hop_length = 160;     // 10 ms
    c.n_mels = 128;
    return c;
}

long frame_count(long num_samples, const FrameConfig& cfg) {
    if (num_samples <= 0) throw ValidationError("frame_count: empty clip");
    if (num_samples < cfg.window_length) return 1;
    return 1 + (num_samples - cfg.window_length) / cfg.hop_length;
}

std::vector<double> mel_center_frequencies(int n_mels, double fmin, double fmax) {
    const auto edges = mel_band_edges(n_mels, fmin, fmax);
    return {edges.begin() + 1, edges.end() - 1};
}

FeatureExtractor::FeatureExtractor(const FrameConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const int n = cfg_.window_length;
    n_bins_ = n / 2 + 1;

    // Periodic Hann.
    window_.resize(n);
    for (int i = 0; i < n; ++i) window_[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / n);

    cos_table_.resize(std::size_t(n_bins_) * n);
    sin_table_.resize(std::size_t(n_bins_) * n);
    for (int k = 0; k < n_bins_; ++k) {
        for (int i = 0; i < n; ++i) {
            const double phi = 2.0 * M_PI * k * i / n;
            cos_table_[std::size_t(k) * n + i] = std::cos(phi);
            sin_table_[std::size_t(k) * n + i] = std::sin(phi);
        }
    }

    // Triangular filters on the Slaney scale with 2/bandwidth area norm.
    const auto edges = mel_band_edges(cfg_.n_mels, cfg_.fmin, cfg_.effective_fmax());
    mel_fb_.assign(std::size_t(cfg_.n_mels) * n_bins_, 0.0);
    for (int m = 0; m < cfg_.n_mels; ++m) {
        const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
        const double enorm = 2.0 / (hi - lo);
        for (int k = 0; k < n_bins_; ++k) {
            const double fk = static_cast<double>(k) * cfg_.sample_rate / n;
            const double up = (fk - lo) / (mid - lo);
            const double down = (hi - fk) / (hi - mid);
            const double w = std::max(0.0, std::min(up, down));
            mel_fb_[std::size_t(m) * n_bins_ + k] = w * enorm;
        }
    }
}

std::vector<double> FeatureExtractor::log_mel_spectrogram(const AudioClip& clip,
                                                          long* out_frames) const {
    if (clip.sample_rate != cfg_.sample_rate)
        throw ValidationError(format_str("log_mel: clip rate %d != config rate %d (%s)",
                                         clip.sample_rate, cfg_.sample_rate,
                                         clip.utterance_id.c_str()));
    const long f = frame_count(static_cast<long>(clip.samples.size()), cfg_);
    if (out_frames) *out_frames = f;

    std::vector<double> power(std::size_t(f) * n_bins_);
    kernels::dft_power_frames(clip.samples.data(), static_cast<long>(clip.samples.size()),
                              cfg_.window_length, cfg_.hop_length, static_cast<int>(f),
                              window_.data(), cos_table_.data(), sin_table_.data(), power.data());

    // mel_power[m, f] = sum_k fb[m, k] * power[f, k]
    std::vector<double> mel(std::size_t(cfg_.n_mels) * f);
    kernels::matmul_nt<double>(mel_fb_.data(), power.data(), mel.data(), cfg_.n_mels, n_bins_,
                               static_cast<int>(f));

    double db_max = -1e300;
    for (auto& v : mel) {
        v = 10.0 * std::log10(std::max(v, kPowerFloor));
        db_max = std::max(db_max, v);
    }
    const double floor_db = db_max - kTopDb;
    for (auto& v : mel) v = std::max(v, floor_db);
    return mel;
}

std::vector<double> FeatureExtractor::zcr(const AudioClip& clip) const {
    if (clip.sample_rate != cfg_.sample_rate)
        throw ValidationError(format_str("zcr: clip rate %d != config rate %d", clip.sample_rate,
                                         cfg_.sample_rate));
    const long num = static_cast<long>(clip.samples.size());
    const long f = frame_count(num, cfg_);
    const int n = cfg_.window_length;
    std::vector<double> out(f);
    // sgn(0) = +1, so digital silence has zero crossings.
    auto sgn = [](double x) { return x < 0.0 ? -1 : 1; };
    for (long fr = 0; fr < f; ++fr) {
        const long start = fr * cfg_.hop_length;
        long flips = 0;
        int prev = start < num ? sgn(clip.samples[start]) : 1;
        for (int i = 1; i < n; ++i) {
            const long idx = start + i;
            const int s = idx < num ? sgn(clip.samples[idx]) : 1;
            if (s != prev) ++flips;
            prev = s;
        }
        out[fr] = static_cast<double>(flips) / (n - 1);
    }
    return out;
}

std::vector<double> vms(const std::vector<double>& log_mel, int n_mels, long n_frames) {
    if (n_mels < 2) throw ConfigError("vms: need at least 2 mel bins");
    if (log_mel.size() != std::size_t(n_mels) * n_frames)
        throw ValidationError("vms: log_mel size does not match n_mels * n_frames");
    std::vector<double> out(n_frames);
    for (long f = 0; f < n_frames; ++f) {
        double mean = 0.0;
        for (int m = 0; m < n_mels; ++m) mean += log_mel[std::size_t(m) * n_frames + f];
        mean /= n_mels;
        double acc = 0.0;
        for (int m = 0; m < n_mels; ++m) {
            const double d = log_mel[std::size_t(m) * n_frames + f] - mean;
            acc += d * d;
        }
        out[f] = acc / n_mels;
    }
    return out;
}

double na_vms(const double* v, long n) {
    if (n < 1) throw ValidationError("na_vms: empty segment");
    double lo = v[0], hi = v[0];
    for (long i = 1; i < n; ++i) {
        lo = std::min(lo, v[i]);
        hi = std::max(hi, v[i]);
    }
    if (hi == lo) return 0.0;  // flat segment: maximally non-breath-like
    double acc = 0.0;
    for (long i = 0; i < n; ++i) acc += v[i] - lo;
    return acc / ((hi - lo) * static_cast<double>(n));
}

double na_vms(const std::vector<double>& v) { return na_vms(v.data(), static_cast<long>(v.size())); }

FeatureSequence FeatureExtractor::extract(const AudioClip& clip) const {
    FeatureSequence fs;
    fs.frame_config = cfg_;
    fs.utterance_id = clip.utterance_id;
    fs.log_mel = log_mel_spectrogram(clip, &fs.n_frames);
    fs.zcr = zcr(clip);
    fs.vms = vms(fs.log_mel, cfg_.n_mels, fs.n_frames);
    return fs;
}

void write_feature_dump(const std::string& path, const FeatureSequence& fs) {
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw RuntimeAbort("cannot open for writing: " + path);
    std::fwrite("BSFT", 1, 4, f);
    write_u32(f, kFeatureDumpVersion);
    write_u32(f, static_cast<std::uint32_t>(fs.n_frames));
    write_u32(f, static_cast<std::uint32_t>(fs.frame_config.n_mels));
    std::vector<float> buf(fs.log_mel.begin(), fs.log_mel.end());
    write_f32_array(f, buf.data(), buf.size());
    buf.assign(fs.zcr.begin(), fs.zcr.end());
    write_f32_array(f, buf.data(), buf.size());
    buf.assign(fs.vms.begin(), fs.vms.end());
    write_f32_array(f, buf.data(), buf.size());
    std::fclose(f);
}

FeatureSequence read_feature_dump(const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw FormatError("cannot open feature dump: " + path);
    struct Closer {
        FILE* f;
        ~Closer() { std::fclose(f); }
    } closer{f};

    char magic[4];
    if (std::fread(magic, 1, 4, f) != 4 || std::memcmp(magic, "BSFT", 4) != 0)
        throw FormatError("bad feature dump magic: " + path);
    const std::uint32_t version = read_u32(f, "version");
    if (version != kFeatureDumpVersion)
        throw FormatError(format_str("unsupported feature dump version %u: %s", version,
                                     path.c_str()));
    FeatureSequence fs;
    fs.n_frames = read_u32(f, "frame count");
    fs.frame_config.n_mels = static_cast<int>(read_u32(f, "n_mels"));
    const std::size_t mel_n = std::size_t(fs.frame_config.n_mels) * fs.n_frames;
    std::vector<float> buf(mel_n);
    read_f32_array(f, buf.data(), mel_n, "log-mel");
    fs.log_mel.assign(buf.begin(), buf.end());
    buf.resize(fs.n_frames);
    read_f32_array(f, buf.data(), fs.n_frames, "zcr");
    fs.zcr.assign(buf.begin(), buf.end());
    read_f32_array(f, buf.data(), fs.n_frames, "vms");
    fs.vms.assign(buf.begin(), buf.end());
    return fs;
}

}  // namespace breathscan
