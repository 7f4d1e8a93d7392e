#include "breathscan/rule_annotator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "breathscan/util.hpp"

namespace breathscan {

void RuleThresholds::validate() const {
    if (min_breath_duration <= 0.0)
        throw ConfigError("RuleThresholds: min_breath_duration must be positive");
    if (breath_max_vms_gt <= 0.0 || breath_max_zcr_gt <= 0.0 || nonbreath_max_vms_lt <= 0.0 ||
        nonbreath_max_zcr_lt <= 0.0)
        throw ConfigError("RuleThresholds: feature thresholds must be positive");
    if (breath_na_vms_gt <= 0.0 || breath_na_vms_gt >= 1.0)
        throw ConfigError("RuleThresholds: breath_na_vms_gt must lie in (0, 1)");
    if (!(nonbreath_max_zcr_lt < breath_max_zcr_gt))
        throw ConfigError(
            format_str("RuleThresholds: nonbreath_max_zcr_lt (%g) must be below "
                       "breath_max_zcr_gt (%g); the bound keeps the classes mutually exclusive",
                       nonbreath_max_zcr_lt, breath_max_zcr_gt));
}

const char* pause_class_name(PauseClass c) {
    switch (c) {
        case PauseClass::Breath: return "breath";
        case PauseClass::NonBreath: return "non-breath";
        case PauseClass::Unclassified: return "unclassified";
    }
    return "?";
}

std::optional<PauseClass> pause_class_from_name(const std::string& s) {
    if (s == "breath") return PauseClass::Breath;
    if (s == "non-breath" || s == "nonbreath") return PauseClass::NonBreath;
    if (s == "unclassified") return PauseClass::Unclassified;
    return std::nullopt;
}

FrameRange frames_of_pause(const PauseInterval& pause, const FrameConfig& cfg, long n_frames) {
    // center(f) = (f*hop + window/2) / sr; keep centers in [start, end).
    const double half_window = 0.5 * cfg.window_length;
    const double lo = (pause.start * cfg.sample_rate - half_window) / cfg.hop_length;
    const double hi = (pause.end * cfg.sample_rate - half_window) / cfg.hop_length;
    FrameRange r;
    r.begin = std::max(0L, static_cast<long>(std::ceil(lo)));
    r.end = std::max(0L, static_cast<long>(std::ceil(hi)));
    if (n_frames >= 0) {
        r.begin = std::min(r.begin, n_frames);
        r.end = std::min(r.end, n_frames);
    }
    return r;
}

PauseStats pause_stats(const FeatureSequence& features, const PauseInterval& pause) {
    const FrameRange r = frames_of_pause(pause, features.frame_config, features.n_frames);
    PauseStats st;
    st.duration = pause.duration();
    st.n_frames = r.size();
    if (r.empty()) return st;
    st.max_vms = *std::max_element(features.vms.begin() + r.begin, features.vms.begin() + r.end);
    st.max_zcr = *std::max_element(features.zcr.begin() + r.begin, features.zcr.begin() + r.end);
    st.na_vms = na_vms(features.vms.data() + r.begin, r.size());
    return st;
}

PauseClass classify_stats(const PauseStats& st, const RuleThresholds& th) {
    if (st.n_frames == 0) return PauseClass::Unclassified;
    const bool breath = st.duration > th.min_breath_duration && st.max_vms > th.breath_max_vms_gt &&
                        st.max_zcr > th.breath_max_zcr_gt && st.na_vms > th.breath_na_vms_gt;
    const bool nonbreath =
        st.max_vms < th.nonbreath_max_vms_lt && st.max_zcr < th.nonbreath_max_zcr_lt;
    if (breath) return PauseClass::Breath;
    if (nonbreath) return PauseClass::NonBreath;
    return PauseClass::Unclassified;
}

PauseClass classify_pause(const FeatureSequence& features, const PauseInterval& pause,
                          const RuleThresholds& th, double clip_duration_sec) {
    if (pause.start < 0.0 || pause.end > clip_duration_sec + 1e-9)
        throw ValidationError(format_str("pause [%g, %g) outside clip bounds [0, %g) in '%s'",
                                         pause.start, pause.end, clip_duration_sec,
                                         features.utterance_id.c_str()));
    return classify_stats(pause_stats(features, pause), th);
}

namespace {

// Pause-level gold class: breath when any gold breath span overlaps it.
bool overlaps_breath_span(const PauseInterval& pause, const std::vector<ClassifiedPause>& spans) {
    for (const auto& s : spans) {
        if (s.cls != PauseClass::Breath) continue;
        if (s.interval.start < pause.end && pause.start < s.interval.end) return true;
    }
    return false;
}

void tally_gold(const UtteranceAnnotation& ann, const std::vector<ClassifiedPause>& gold_spans,
                const FrameConfig& cfg, long n_frames, AnnotationReport& rep) {
    // Frame-level gold breath membership on the rule clock.
    std::vector<std::uint8_t> gold_breath_frames(n_frames, 0);
    for (const auto& s : gold_spans) {
        if (s.cls != PauseClass::Breath) continue;
        const FrameRange r = frames_of_pause(s.interval, cfg, n_frames);
        for (long i = r.begin; i < r.end; ++i) gold_breath_frames[i] = 1;
    }
    for (auto v : gold_breath_frames) rep.breath_frames.gold += v;

    long pause_frames = 0, gold_breath_in_pauses = 0;
    for (const auto& cp : ann.pauses) {
        const bool gold_breath = overlaps_breath_span(cp.interval, gold_spans);
        if (gold_breath)
            ++rep.breath_pauses.gold;
        else
            ++rep.nonbreath_pauses.gold;

        if (cp.cls == PauseClass::Breath) {
            ++rep.breath_pauses.predicted;
            if (gold_breath) ++rep.breath_pauses.matched;
        } else if (cp.cls == PauseClass::NonBreath) {
            ++rep.nonbreath_pauses.predicted;
            if (!gold_breath) ++rep.nonbreath_pauses.matched;
        }

        const FrameRange r = frames_of_pause(cp.interval, cfg, n_frames);
        pause_frames += r.size();
        for (long i = r.begin; i < r.end; ++i) {
            gold_breath_in_pauses += gold_breath_frames[i];
            if (cp.cls == PauseClass::Breath) {
                ++rep.breath_frames.predicted;
                if (gold_breath_frames[i]) ++rep.breath_frames.matched;
            } else if (cp.cls == PauseClass::NonBreath) {
                ++rep.nonbreath_frames.predicted;
                if (!gold_breath_frames[i]) ++rep.nonbreath_frames.matched;
            }
        }
    }
    rep.nonbreath_frames.gold += pause_frames - gold_breath_in_pauses;
}

}  // namespace

AnnotateResult annotate_corpus(const std::vector<AudioClip>& clips,
                               const std::map<std::string, std::vector<PauseInterval>>& pauses,
                               const RuleThresholds& th, const FrameConfig& rule_cfg,
                               const GoldSpans* gold) {
    th.validate();
    const FeatureExtractor extractor(rule_cfg);

    const long n = static_cast<long>(clips.size());
    std::vector<UtteranceAnnotation> annotations(n);
    std::vector<std::string> errors(n);
    std::vector<long> frame_counts(n, 0);

#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < n; ++i) {
        const AudioClip& clip = clips[i];
        UtteranceAnnotation ann;
        ann.utterance_id = clip.utterance_id;
        try {
            auto it = pauses.find(clip.utterance_id);
            if (it != pauses.end() && !it->second.empty()) {
                const FeatureSequence fs = extractor.extract(clip);
                frame_counts[i] = fs.n_frames;
                const double dur = clip.duration_sec();
                for (const PauseInterval& pv : it->second)
                    ann.pauses.push_back({pv, classify_pause(fs, pv, th, dur)});
            }
            annotations[i] = std::move(ann);
        } catch (const Error& e) {
            errors[i] = e.what();
        }
    }

    AnnotateResult result;
    result.report.n_utterances = n;
    for (long i = 0; i < n; ++i) {
        if (!errors[i].empty()) {
            ++result.report.n_failed;
            result.report.failures.push_back(clips[i].utterance_id + ": " + errors[i]);
            BS_LOG_WARN("annotate: skipping utterance '%s': %s", clips[i].utterance_id.c_str(),
                        errors[i].c_str());
            continue;
        }
        for (const auto& cp : annotations[i].pauses) {
            ++result.report.n_pauses;
            switch (cp.cls) {
                case PauseClass::Breath: ++result.report.n_breath; break;
                case PauseClass::NonBreath: ++result.report.n_nonbreath; break;
                case PauseClass::Unclassified: ++result.report.n_unclassified; break;
            }
        }
        if (gold) {
            auto git = gold->find(clips[i].utterance_id);
            if (git != gold->end()) {
                result.report.has_gold = true;
                tally_gold(annotations[i], git->second, rule_cfg, frame_counts[i], result.report);
            }
        }
        result.annotations.push_back(std::move(annotations[i]));
    }
    return result;
}

LabelSets project_frame_sets(const UtteranceAnnotation& ann, const FrameConfig& cfg,
                             long n_frames) {
    LabelSets sets;
    sets.n_frames = n_frames;
    std::vector<std::uint8_t> p(n_frames, 0), b(n_frames, 0), u(n_frames, 0);
    for (const auto& cp : ann.pauses) {
        const FrameRange r = frames_of_pause(cp.interval, cfg, n_frames);
        for (long i = r.begin; i < r.end; ++i) {
            p[i] = 1;
            if (cp.cls == PauseClass::Breath) b[i] = 1;
            if (cp.cls == PauseClass::NonBreath) u[i] = 1;
        }
    }
    for (long i = 0; i < n_frames; ++i) {
        if (p[i]) sets.pause.push_back(i);
        if (b[i] && u[i]) continue;  // adjacent conflicting pauses: leave masked
        if (b[i]) sets.breath.push_back(i);
        if (u[i]) sets.nonbreath.push_back(i);
    }
    return sets;
}

void write_annotation_tsv(const std::string& path,
                          const std::vector<UtteranceAnnotation>& annotations) {
    std::string out = "# utterance_id\tstart\tend\tclass\n";
    for (const auto& ann : annotations) {
        for (const auto& cp : ann.pauses) {
            out += format_str("%s\t%s\t%s\t%s\n", ann.utterance_id.c_str(),
                              format_double(cp.interval.start).c_str(),
                              format_double(cp.interval.end).c_str(), pause_class_name(cp.cls));
        }
    }
    write_text_file(path, out);
}

GoldSpans read_annotation_tsv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open annotation file: " + path);
    GoldSpans out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::size_t first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;

        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            std::size_t tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (fields.size() != 4)
            throw ValidationError(format_str("%s:%d: expected 4 tab-separated fields, got %zu",
                                             path.c_str(), lineno, fields.size()));
        ClassifiedPause cp;
        cp.interval.utterance_id = fields[0];
        char* endp = nullptr;
        cp.interval.start = std::strtod(fields[1].c_str(), &endp);
        if (endp == fields[1].c_str() || *endp)
            throw ValidationError(format_str("%s:%d: bad start time", path.c_str(), lineno));
        cp.interval.end = std::strtod(fields[2].c_str(), &endp);
        if (endp == fields[2].c_str() || *endp)
            throw ValidationError(format_str("%s:%d: bad end time", path.c_str(), lineno));
        if (cp.interval.end <= cp.interval.start)
            throw ValidationError(format_str("%s:%d: span end <= start", path.c_str(), lineno));
        const auto cls = pause_class_from_name(fields[3]);
        if (!cls)
            throw ValidationError(format_str("%s:%d: unknown class '%s'", path.c_str(), lineno,
                                             fields[3].c_str()));
        cp.cls = *cls;
        out[fields[0]].push_back(cp);
    }
    return out;
}

LabelSequence build_gold_labels(const std::vector<PauseInterval>& pauses,
                                const std::vector<ClassifiedPause>& gold_spans,
                                const FrameConfig& cfg, long n_frames, std::string utterance_id) {
    std::vector<std::uint8_t> in_pause(n_frames, 0), breath(n_frames, 0), masked(n_frames, 0);
    for (const auto& pv : pauses) {
        const FrameRange r = frames_of_pause(pv, cfg, n_frames);
        for (long i = r.begin; i < r.end; ++i) in_pause[i] = 1;
    }
    for (const auto& span : gold_spans) {
        const FrameRange r = frames_of_pause(span.interval, cfg, n_frames);
        for (long i = r.begin; i < r.end; ++i) {
            if (span.cls == PauseClass::Breath) breath[i] = 1;
            if (span.cls == PauseClass::Unclassified) masked[i] = 1;
        }
    }
    LabelSequence seq;
    seq.utterance_id = std::move(utterance_id);
    seq.labels.resize(n_frames);
    for (long i = 0; i < n_frames; ++i) {
        if (breath[i])
            seq.labels[i] = Label::Breath;
        else if (in_pause[i] && masked[i])
            seq.labels[i] = Label::Mask;
        else
            seq.labels[i] = Label::NonBreath;
    }
    return seq;
}

RuleThresholds calibrate_rule_thresholds(const std::vector<std::pair<PauseStats, bool>>& labeled,
                                         double target_precision, const RuleThresholds& base) {
    if (labeled.empty()) throw ConfigError("calibrate_rule_thresholds: no labeled pauses");

    auto quantile_grid = [&](auto getter) {
        std::set<double> vals;
        for (const auto& [st, is_breath] : labeled) vals.insert(getter(st));
        std::vector<double> sorted(vals.begin(), vals.end());
        std::vector<double> grid;
        const int kQuantiles = 16;
        for (int q = 0; q <= kQuantiles; ++q) {
            const std::size_t idx =
                std::min(sorted.size() - 1, q * (sorted.size() - 1) / kQuantiles);
            grid.push_back(sorted[idx]);
        }
        grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
        return grid;
    };

    const auto vms_grid = quantile_grid([](const PauseStats& s) { return s.max_vms; });
    const auto zcr_grid = quantile_grid([](const PauseStats& s) { return s.max_zcr; });
    const auto navms_grid = quantile_grid([](const PauseStats& s) { return s.na_vms; });

    RuleThresholds best = base;
    long best_recall_hits = -1;
    long total_breath = 0;
    for (const auto& [st, is_breath] : labeled) total_breath += is_breath;

    for (double tv : vms_grid) {
        for (double tz : zcr_grid) {
            for (double tn : navms_grid) {
                if (tn <= 0.0 || tn >= 1.0) continue;
                long predicted = 0, correct = 0;
                for (const auto& [st, is_breath] : labeled) {
                    const bool hyp = st.duration > base.min_breath_duration && st.max_vms > tv &&
                                     st.max_zcr > tz && st.na_vms > tn;
                    if (hyp) {
                        ++predicted;
                        if (is_breath) ++correct;
                    }
                }
                if (predicted == 0) continue;
                const double precision = double(correct) / predicted;
                if (precision + 1e-12 < target_precision) continue;
                if (correct > best_recall_hits) {
                    best_recall_hits = correct;
                    best.breath_max_vms_gt = tv;
                    best.breath_max_zcr_gt = tz;
                    best.breath_na_vms_gt = tn;
                }
            }
        }
    }
    if (best_recall_hits < 0)
        BS_LOG_WARN("calibrate: no breath threshold combination reaches precision %g; keeping "
                    "base thresholds",
                    target_precision);

    // Non-breath side: maximize coverage subject to non-breath precision.
    long best_nb = -1;
    for (double tv : vms_grid) {
        for (double tz : zcr_grid) {
            if (!(tz < best.breath_max_zcr_gt)) continue;  // keep classes exclusive
            long predicted = 0, correct = 0;
            for (const auto& [st, is_breath] : labeled) {
                const bool hyp = st.max_vms < tv && st.max_zcr < tz;
                if (hyp) {
                    ++predicted;
                    if (!is_breath) ++correct;
                }
            }
            if (predicted == 0) continue;
            const double precision = double(correct) / predicted;
            if (precision + 1e-12 < target_precision) continue;
            if (correct > best_nb) {
                best_nb = correct;
                best.nonbreath_max_vms_lt = tv;
                best.nonbreath_max_zcr_lt = tz;
            }
        }
    }
    if (best_nb < 0)
        BS_LOG_WARN("calibrate: no non-breath threshold combination reaches precision %g",
                    target_precision);

    best.validate();
    return best;
}

}  // namespace breathscan
