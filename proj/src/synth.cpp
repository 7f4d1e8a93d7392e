#include "breathscan/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "breathscan/nn.hpp"
#include "breathscan/util.hpp"

namespace breathscan {

namespace {

// Windowed-sinc band-pass FIR (Hamming window).
std::vector<double> bandpass_fir(double lo_hz, double hi_hz, int sample_rate, int taps = 127) {
    std::vector<double> h(taps);
    const int mid = taps / 2;
    const double f1 = lo_hz / sample_rate, f2 = hi_hz / sample_rate;
    for (int i = 0; i < taps; ++i) {
        const int n = i - mid;
        const double lp2 = n == 0 ? 2.0 * f2 : std::sin(2.0 * M_PI * f2 * n) / (M_PI * n);
        const double lp1 = n == 0 ? 2.0 * f1 : std::sin(2.0 * M_PI * f1 * n) / (M_PI * n);
        const double w = 0.54 - 0.46 * std::cos(2.0 * M_PI * i / (taps - 1));
        h[i] = (lp2 - lp1) * w;
    }
    return h;
}

std::vector<double> convolve_same(const std::vector<double>& x, const std::vector<double>& h) {
    const int mid = static_cast<int>(h.size()) / 2;
    std::vector<double> y(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < h.size(); ++k) {
            const long src = static_cast<long>(i) + static_cast<long>(k) - mid;
            if (src < 0 || src >= static_cast<long>(x.size())) continue;
            acc += x[src] * h[k];
        }
        y[i] = acc;
    }
    return y;
}

// Smooth rise/fall envelope with ~15% edges.
double burst_envelope(double pos01) {
    const double edge = 0.15;
    if (pos01 < edge) return 0.5 - 0.5 * std::cos(M_PI * pos01 / edge);
    if (pos01 > 1.0 - edge) return 0.5 - 0.5 * std::cos(M_PI * (1.0 - pos01) / edge);
    return 1.0;
}

void add_speech(std::vector<double>& s, long begin, long end, int sr, nn::Rng& rng, double amp) {
    const double f0 = rng.uniform(110.0, 220.0);
    const double phase0 = rng.uniform(0.0, 2.0 * M_PI);
    for (long i = begin; i < end; ++i) {
        const double t = static_cast<double>(i - begin) / sr;
        const double pos = static_cast<double>(i - begin) / std::max(1L, end - begin - 1);
        double v = 0.0;
        for (int k = 1; k <= 4; ++k)
            v += std::sin(2.0 * M_PI * f0 * k * t + phase0 * k) / k;
        s[i] += amp * burst_envelope(pos) * v * 0.5;
    }
}

void add_breath_burst(std::vector<double>& s, long begin, long end, int sr, nn::Rng& rng,
                      double amp) {
    const long n = end - begin;
    std::vector<double> noise(n);
    for (auto& v : noise) v = rng.normal();
    const double lo = rng.uniform(300.0, 800.0);
    const double hi = rng.uniform(2500.0, 6000.0);
    noise = convolve_same(noise, bandpass_fir(lo, hi, sr));
    double rms = 0.0;
    for (double v : noise) rms += v * v;
    rms = std::sqrt(rms / std::max<long>(1, n));
    const double gain = rms > 0.0 ? amp / rms : 0.0;
    for (long i = 0; i < n; ++i) {
        const double pos = static_cast<double>(i) / std::max(1L, n - 1);
        s[begin + i] += gain * burst_envelope(pos) * noise[i];
    }
}

void add_click(std::vector<double>& s, long at, int sr, nn::Rng& rng) {
    const double freq = rng.uniform(2500.0, 4500.0);
    const double tau = rng.uniform(0.0004, 0.001);
    const double amp = rng.uniform(0.3, 0.6);
    const long n = static_cast<long>(0.004 * sr);
    for (long i = 0; i < n && at + i < static_cast<long>(s.size()); ++i) {
        const double t = static_cast<double>(i) / sr;
        s[at + i] += amp * std::exp(-t / tau) * std::sin(2.0 * M_PI * freq * t);
    }
}

}  // namespace

std::vector<SynthUtterance> synth_corpus(const SynthConfig& cfg) {
    nn::Rng rng(cfg.seed);
    std::vector<SynthUtterance> corpus;
    corpus.reserve(cfg.n_utterances);

    for (int u = 0; u < cfg.n_utterances; ++u) {
        const int n_pauses =
            cfg.min_pauses + static_cast<int>(rng.below(cfg.max_pauses - cfg.min_pauses + 1));

        // Plan the alternating speech/pause layout in samples.
        struct Span {
            long begin, end;
            int kind;  // 0 speech, 1 breath, 2 silence, 3 click
        };
        std::vector<Span> spans;
        long cursor = 0;
        auto push_speech = [&] {
            const long n = static_cast<long>(rng.uniform(cfg.min_speech_dur, cfg.max_speech_dur) *
                                             cfg.sample_rate);
            spans.push_back({cursor, cursor + n, 0});
            cursor += n;
        };
        push_speech();
        for (int p = 0; p < n_pauses; ++p) {
            const long n = static_cast<long>(rng.uniform(cfg.min_pause_dur, cfg.max_pause_dur) *
                                             cfg.sample_rate);
            int kind;
            const double r = rng.uniform();
            if (r < cfg.breath_fraction)
                kind = 1;
            else if (rng.uniform() < cfg.click_fraction)
                kind = 3;
            else
                kind = 2;
            spans.push_back({cursor, cursor + n, kind});
            cursor += n;
            push_speech();
        }

        SynthUtterance utt;
        utt.clip.sample_rate = cfg.sample_rate;
        utt.clip.utterance_id = format_str("synth_%04d", u);
        utt.clip.samples.assign(cursor, 0.0);
        auto& s = utt.clip.samples;

        for (const Span& span : spans) {
            const double t0 = static_cast<double>(span.begin) / cfg.sample_rate;
            const double t1 = static_cast<double>(span.end) / cfg.sample_rate;
            switch (span.kind) {
                case 0:
                    add_speech(s, span.begin, span.end, cfg.sample_rate, rng, cfg.speech_amp);
                    break;
                case 1: {
                    const double margin = rng.uniform(0.02, 0.06);
                    const long b0 = span.begin + static_cast<long>(margin * cfg.sample_rate);
                    const long b1 = span.end - static_cast<long>(margin * cfg.sample_rate);
                    const double amp = std::exp(
                        rng.uniform(std::log(cfg.breath_amp_min), std::log(cfg.breath_amp_max)));
                    add_breath_burst(s, b0, b1, cfg.sample_rate, rng, amp);
                    SynthPause sp;
                    sp.interval = {utt.clip.utterance_id, t0, t1};
                    sp.truth = PauseClass::Breath;
                    sp.event_start = static_cast<double>(b0) / cfg.sample_rate;
                    sp.event_end = static_cast<double>(b1) / cfg.sample_rate;
                    utt.pauses.push_back(sp);
                    break;
                }
                case 2: {
                    SynthPause sp;
                    sp.interval = {utt.clip.utterance_id, t0, t1};
                    sp.truth = PauseClass::NonBreath;
                    sp.event_start = t0;
                    sp.event_end = t1;
                    utt.pauses.push_back(sp);
                    break;
                }
                case 3: {
                    const long mid = (span.begin + span.end) / 2;
                    add_click(s, mid, cfg.sample_rate, rng);
                    SynthPause sp;
                    sp.interval = {utt.clip.utterance_id, t0, t1};
                    sp.truth = PauseClass::Unclassified;
                    sp.event_start = static_cast<double>(mid) / cfg.sample_rate;
                    sp.event_end = static_cast<double>(mid) / cfg.sample_rate + 0.004;
                    utt.pauses.push_back(sp);
                    break;
                }
            }
        }

        // Silence pauses are digitally silent one analysis window beyond
        // their boundaries, so pause-edge frames (whose windows straddle the
        // boundary) stay crossing-free and the non-breath rule can fire.
        const long margin = 256;
        std::vector<std::uint8_t> silent(s.size(), 0);
        for (const Span& span : spans) {
            if (span.kind != 2) continue;
            const long lo = std::max(0L, span.begin - margin);
            const long hi = std::min<long>(s.size(), span.end + margin);
            for (long i = lo; i < hi; ++i) {
                s[i] = 0.0;
                silent[i] = 1;
            }
        }
        if (cfg.bg_noise_amp > 0.0) {
            for (std::size_t i = 0; i < s.size(); ++i)
                if (!silent[i]) s[i] += cfg.bg_noise_amp * rng.normal();
        }

        for (auto& v : s) v = std::clamp(v, -1.0, 1.0);
        corpus.push_back(std::move(utt));
    }
    return corpus;
}

std::vector<SynthUtterance> synth_rule_demo_corpus(std::uint64_t seed) {
    // 20 pauses over 5 utterances: 10 breath, 5 silence, 5 click, each far
    // from its thresholds.
    SynthConfig cfg;
    cfg.seed = seed;
    cfg.n_utterances = 5;
    cfg.min_pauses = 4;
    cfg.max_pauses = 4;
    cfg.breath_fraction = 0.0;  // kinds assigned manually below
    cfg.bg_noise_amp = 0.0;
    cfg.breath_amp_min = 0.15;
    cfg.breath_amp_max = 0.3;
    cfg.min_pause_dur = 0.45;
    cfg.max_pause_dur = 0.6;

    // Generate the layout with silence pauses, then rewrite pause contents
    // deterministically: per utterance the four pauses cycle
    // breath/silence/breath/click.
    auto corpus = synth_corpus(cfg);
    nn::Rng rng(seed ^ 0xabcdef12345ULL);
    for (auto& utt : corpus) {
        auto& s = utt.clip.samples;
        const int sr = utt.clip.sample_rate;
        for (std::size_t p = 0; p < utt.pauses.size(); ++p) {
            auto& sp = utt.pauses[p];
            const long begin = static_cast<long>(sp.interval.start * sr);
            const long end = static_cast<long>(sp.interval.end * sr);
            const long margin = 256;  // keep pause-edge analysis windows clean
            std::fill(s.begin() + std::max(0L, begin - margin),
                      s.begin() + std::min<long>(s.size(), end + margin), 0.0);
            const int kind = p % 4 == 3 ? 3 : (p % 2 == 0 ? 1 : 2);
            if (kind == 1) {
                const long b0 = begin + static_cast<long>(0.04 * sr);
                const long b1 = end - static_cast<long>(0.04 * sr);
                add_breath_burst(s, b0, b1, sr, rng, rng.uniform(0.15, 0.3));
                sp.truth = PauseClass::Breath;
                sp.event_start = static_cast<double>(b0) / sr;
                sp.event_end = static_cast<double>(b1) / sr;
            } else if (kind == 2) {
                sp.truth = PauseClass::NonBreath;
                sp.event_start = sp.interval.start;
                sp.event_end = sp.interval.end;
            } else {
                const long mid = (begin + end) / 2;
                add_click(s, mid, sr, rng);
                sp.truth = PauseClass::Unclassified;
                sp.event_start = static_cast<double>(mid) / sr;
                sp.event_end = static_cast<double>(mid) / sr + 0.004;
            }
        }
        for (auto& v : s) v = std::clamp(v, -1.0, 1.0);
    }
    return corpus;
}

std::vector<PauseInterval> synth_pause_intervals(const SynthUtterance& u) {
    std::vector<PauseInterval> out;
    for (const auto& sp : u.pauses) out.push_back(sp.interval);
    return out;
}

GoldSpans synth_gold_spans(const std::vector<SynthUtterance>& corpus) {
    GoldSpans gold;
    for (const auto& utt : corpus) {
        for (const auto& sp : utt.pauses) {
            ClassifiedPause cp;
            cp.interval.utterance_id = utt.clip.utterance_id;
            cp.cls = sp.truth;
            if (sp.truth == PauseClass::Breath) {
                cp.interval.start = sp.event_start;
                cp.interval.end = sp.event_end;
            } else {
                cp.interval.start = sp.interval.start;
                cp.interval.end = sp.interval.end;
            }
            gold[utt.clip.utterance_id].push_back(cp);
        }
    }
    return gold;
}

void write_synth_corpus(const std::string& dir, const std::vector<SynthUtterance>& corpus) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "wav");

    std::string pause_tsv = "# utterance_id\tstart\tend\n";
    for (const auto& utt : corpus) {
        write_wav((fs::path(dir) / "wav" / (utt.clip.utterance_id + ".wav")).string(), utt.clip);
        for (const auto& sp : utt.pauses)
            pause_tsv += format_str("%s\t%s\t%s\n", utt.clip.utterance_id.c_str(),
                                    format_double(sp.interval.start).c_str(),
                                    format_double(sp.interval.end).c_str());
    }
    write_text_file((fs::path(dir) / "pauses.tsv").string(), pause_tsv);

    std::vector<UtteranceAnnotation> gold;
    for (const auto& utt : corpus) {
        UtteranceAnnotation ann;
        ann.utterance_id = utt.clip.utterance_id;
        const GoldSpans spans = synth_gold_spans({utt});
        auto it = spans.find(utt.clip.utterance_id);
        if (it != spans.end()) ann.pauses = it->second;
        gold.push_back(std::move(ann));
    }
    write_annotation_tsv((fs::path(dir) / "gold.tsv").string(), gold);
}

}  // namespace breathscan
