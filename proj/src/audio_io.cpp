#include "breathscan/audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "breathscan/util.hpp"

namespace breathscan {

namespace {

struct WavFmt {
    std::uint16_t audio_format = 0;
    std::uint16_t channels = 0;
    std::uint32_t sample_rate = 0;
    std::uint16_t bits_per_sample = 0;
};

std::uint16_t le16(const unsigned char* p) { return std::uint16_t(p[0] | (p[1] << 8)); }
std::uint32_t le32(const unsigned char* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}

}  // namespace

AudioClip load_wav(const std::string& path) {
    std::string raw;
    try {
        raw = read_text_file(path);
    } catch (const FormatError&) {
        throw FormatError("cannot open wav file: " + path);
    }
    const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
    const std::size_t n = raw.size();

    if (n < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0)
        throw FormatError("not a RIFF/WAVE file: " + path);

    WavFmt fmt;
    bool have_fmt = false;
    const unsigned char* data = nullptr;
    std::size_t data_size = 0;

    std::size_t off = 12;
    while (off + 8 <= n) {
        const char* id = reinterpret_cast<const char*>(p + off);
        const std::uint32_t chunk_size = le32(p + off + 4);
        const std::size_t body = off + 8;
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (chunk_size < 16 || body + 16 > n)
                throw FormatError("truncated fmt chunk: " + path);
            fmt.audio_format = le16(p + body);
            fmt.channels = le16(p + body + 2);
            fmt.sample_rate = le32(p + body + 4);
            fmt.bits_per_sample = le16(p + body + 14);
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            if (body + chunk_size > n)
                throw FormatError(
                    format_str("truncated wav: data chunk claims %u bytes, %zu available (%s)",
                               chunk_size, n - body, path.c_str()));
            data = p + body;
            data_size = chunk_size;
        }
        // Chunks are word-aligned.
        off = body + chunk_size + (chunk_size & 1);
    }

    if (!have_fmt || data == nullptr) throw FormatError("missing fmt/data chunk: " + path);
    if (fmt.channels == 0 || fmt.sample_rate == 0)
        throw FormatError("malformed fmt chunk: " + path);

    const bool pcm16 = fmt.audio_format == 1 && fmt.bits_per_sample == 16;
    const bool f32 = fmt.audio_format == 3 && fmt.bits_per_sample == 32;
    if (!pcm16 && !f32)
        throw FormatError(format_str("unsupported codec in %s: format=%u bits=%u (PCM16 and "
                                     "float32 are supported)",
                                     path.c_str(), fmt.audio_format, fmt.bits_per_sample));

    const std::size_t bytes_per_sample = fmt.bits_per_sample / 8;
    const std::size_t frame_bytes = bytes_per_sample * fmt.channels;
    const std::size_t num_frames = data_size / frame_bytes;
    if (num_frames == 0) throw FormatError("wav contains no samples: " + path);

    AudioClip clip;
    clip.sample_rate = static_cast<int>(fmt.sample_rate);
    clip.utterance_id = std::filesystem::path(path).stem().string();
    clip.samples.resize(num_frames);

    const double inv_ch = 1.0 / fmt.channels;
    for (std::size_t i = 0; i < num_frames; ++i) {
        double acc = 0.0;
        const unsigned char* fp = data + i * frame_bytes;
        for (unsigned c = 0; c < fmt.channels; ++c) {
            if (pcm16) {
                std::int16_t v;
                std::memcpy(&v, fp + c * 2, 2);
                acc += v / 32768.0;
            } else {
                float v;
                std::memcpy(&v, fp + c * 4, 4);
                acc += v;
            }
        }
        clip.samples[i] = std::clamp(acc * inv_ch, -1.0, 1.0);
    }
    return clip;
}

void write_wav(const std::string& path, const AudioClip& clip) {
    if (clip.sample_rate <= 0) throw ValidationError("write_wav: sample_rate must be positive");
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw RuntimeAbort("cannot open for writing: " + path);

    const std::uint32_t data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
    auto w16 = [&](std::uint16_t v) { std::fwrite(&v, 2, 1, f); };
    auto w32 = [&](std::uint32_t v) { std::fwrite(&v, 4, 1, f); };

    std::fwrite("RIFF", 1, 4, f);
    w32(36 + data_bytes);
    std::fwrite("WAVE", 1, 4, f);
    std::fwrite("fmt ", 1, 4, f);
    w32(16);
    w16(1);  // PCM
    w16(1);  // mono
    w32(static_cast<std::uint32_t>(clip.sample_rate));
    w32(static_cast<std::uint32_t>(clip.sample_rate) * 2);
    w16(2);
    w16(16);
    std::fwrite("data", 1, 4, f);
    w32(data_bytes);
    for (double s : clip.samples) {
        long v = std::lround(s * 32768.0);
        v = std::clamp(v, -32768L, 32767L);
        const std::int16_t out = static_cast<std::int16_t>(v);
        std::fwrite(&out, 2, 1, f);
    }
    std::fclose(f);
}

namespace {

// Modified Bessel I0 by power series; converges fast for the beta range used.
double bessel_i0(double x) {
    const double half = x * 0.5;
    double term = 1.0, sum = 1.0;
    for (int k = 1; k < 64; ++k) {
        term *= (half / k) * (half / k);
        sum += term;
        if (term < sum * 1e-18) break;
    }
    return sum;
}

double sinc(double t) {
    if (std::abs(t) < 1e-12) return 1.0;
    const double x = M_PI * t;
    return std::sin(x) / x;
}

}  // namespace

AudioClip resample(const AudioClip& clip, int target_rate, const ResampleConfig& cfg) {
    if (target_rate <= 0) throw ValidationError("resample: target_rate must be positive");
    if (clip.samples.empty()) throw ValidationError("resample: empty clip");
    if (target_rate == clip.sample_rate) return clip;

    const long in_len = static_cast<long>(clip.samples.size());
    const long out_len =
        (in_len * static_cast<long>(target_rate) + clip.sample_rate / 2) / clip.sample_rate;

    const double ratio = static_cast<double>(target_rate) / clip.sample_rate;
    const double cutoff = std::min(1.0, ratio);  // relative to input Nyquist
    const double half_width = (cfg.taps_per_phase / 2) / cutoff;
    const double inv_i0_beta = 1.0 / bessel_i0(cfg.kaiser_beta);

    AudioClip out;
    out.sample_rate = target_rate;
    out.utterance_id = clip.utterance_id;
    out.samples.resize(static_cast<std::size_t>(std::max(out_len, 1L)));

    const double* x = clip.samples.data();
    double* y = out.samples.data();
    const long n_out = static_cast<long>(out.samples.size());

#pragma omp parallel for schedule(static)
    for (long m = 0; m < n_out; ++m) {
        const double pos = static_cast<double>(m) * clip.sample_rate / target_rate;
        const long j0 = std::max(0L, static_cast<long>(std::ceil(pos - half_width)));
        const long j1 = std::min(in_len - 1, static_cast<long>(std::floor(pos + half_width)));
        double acc = 0.0, wsum = 0.0;
        for (long j = j0; j <= j1; ++j) {
            const double t = pos - j;
            const double u = t / half_width;
            const double k2 = 1.0 - u * u;
            if (k2 < 0.0) continue;
            const double w =
                sinc(cutoff * t) * bessel_i0(cfg.kaiser_beta * std::sqrt(k2)) * inv_i0_beta;
            acc += x[j] * w;
            wsum += w;
        }
        // Normalizing by the in-range kernel mass pins DC gain to exactly 1
        // and removes passband droop at clip edges.
        y[m] = (std::abs(wsum) > 1e-12) ? acc / wsum : 0.0;
    }
    return out;
}

std::map<std::string, std::vector<PauseInterval>> parse_pause_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open pause file: " + path);

    struct Entry {
        PauseInterval iv;
        int line = 0;
    };
    std::map<std::string, std::vector<Entry>> grouped;

    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::size_t first = line.find_first_not_of(" \t");
        if (first == std::string::npos) continue;
        if (line[first] == '#') continue;

        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            std::size_t tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (fields.size() != 3)
            throw ValidationError(format_str("%s:%d: expected 3 tab-separated fields, got %zu",
                                             path.c_str(), lineno, fields.size()));

        auto parse_num = [&](const std::string& s, const char* what) {
            char* endp = nullptr;
            const double v = std::strtod(s.c_str(), &endp);
            if (endp == s.c_str() || *endp != '\0')
                throw ValidationError(
                    format_str("%s:%d: cannot parse %s '%s'", path.c_str(), lineno, what, s.c_str()));
            return v;
        };

        Entry e;
        e.iv.utterance_id = fields[0];
        e.iv.start = parse_num(fields[1], "start time");
        e.iv.end = parse_num(fields[2], "end time");
        e.line = lineno;
        if (e.iv.utterance_id.empty())
            throw ValidationError(format_str("%s:%d: empty utterance id", path.c_str(), lineno));
        if (e.iv.start < 0.0)
            throw ValidationError(format_str("%s:%d: negative start time", path.c_str(), lineno));
        if (e.iv.end <= e.iv.start)
            throw ValidationError(format_str("%s:%d: interval end %s <= start %s", path.c_str(),
                                             lineno, fields[2].c_str(), fields[1].c_str()));
        grouped[e.iv.utterance_id].push_back(e);
    }

    std::map<std::string, std::vector<PauseInterval>> out;
    for (auto& [utt, entries] : grouped) {
        std::stable_sort(entries.begin(), entries.end(),
                         [](const Entry& a, const Entry& b) { return a.iv.start < b.iv.start; });
        for (std::size_t i = 1; i < entries.size(); ++i) {
            if (entries[i].iv.start < entries[i - 1].iv.end)
                throw ValidationError(format_str(
                    "%s:%d: interval [%s] overlaps previous interval in utterance '%s' (line %d)",
                    path.c_str(), entries[i].line,
                    format_str("%g, %g", entries[i].iv.start, entries[i].iv.end).c_str(),
                    utt.c_str(), entries[i - 1].line));
        }
        auto& v = out[utt];
        v.reserve(entries.size());
        for (auto& e : entries) v.push_back(e.iv);
    }
    return out;
}

}  // namespace breathscan
