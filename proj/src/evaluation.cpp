#include "breathscan/evaluation.hpp"

#include <algorithm>
#include <cmath>

#include "breathscan/util.hpp"

namespace breathscan {

namespace {

struct Tally {
    long tp = 0, fp = 0, fn = 0;
};

DetectionMetrics metrics_from_tally(const Tally& t, double threshold) {
    DetectionMetrics m;
    m.threshold = threshold;
    m.tp = t.tp;
    m.fp = t.fp;
    m.fn = t.fn;
    if (t.tp + t.fp + t.fn == 0) {
        m.iou = 1.0;
        m.iou_flagged = true;
    } else {
        m.iou = static_cast<double>(t.tp) / static_cast<double>(t.tp + t.fp + t.fn);
    }
    if (t.tp + t.fp == 0) {
        m.precision = 1.0;
        m.precision_flagged = true;
    } else {
        m.precision = static_cast<double>(t.tp) / static_cast<double>(t.tp + t.fp);
    }
    if (t.tp + t.fn == 0) {
        m.recall = 1.0;
        m.recall_flagged = true;
    } else {
        m.recall = static_cast<double>(t.tp) / static_cast<double>(t.tp + t.fn);
    }
    return m;
}

const LabelSequence& gold_for(const std::map<std::string, LabelSequence>& gold,
                              const Prediction& pred) {
    auto it = gold.find(pred.utterance_id);
    if (it == gold.end())
        throw ValidationError("no gold labels for utterance '" + pred.utterance_id + "'");
    if (it->second.size() != pred.size())
        throw ValidationError(format_str("length mismatch for utterance '%s': %ld predicted vs "
                                         "%ld gold frames",
                                         pred.utterance_id.c_str(), pred.size(),
                                         it->second.size()));
    return it->second;
}

Tally tally_at(const Prediction& pred, const LabelSequence& gold_seq, double threshold) {
    Tally t;
    for (long i = 0; i < pred.size(); ++i) {
        const Label y = gold_seq.labels[i];
        if (y == Label::Mask) continue;
        const bool hyp = pred.probs[i] >= threshold;
        const bool ref = y == Label::Breath;
        if (hyp && ref)
            ++t.tp;
        else if (hyp && !ref)
            ++t.fp;
        else if (!hyp && ref)
            ++t.fn;
    }
    return t;
}

}  // namespace

DetectionMetrics metrics_at(const std::vector<Prediction>& preds,
                            const std::map<std::string, LabelSequence>& gold, double threshold) {
    Tally total;
    for (const auto& pred : preds) {
        const Tally t = tally_at(pred, gold_for(gold, pred), threshold);
        total.tp += t.tp;
        total.fp += t.fp;
        total.fn += t.fn;
    }
    return metrics_from_tally(total, threshold);
}

DetectionMetrics macro_metrics_at(const std::vector<Prediction>& preds,
                                  const std::map<std::string, LabelSequence>& gold,
                                  double threshold) {
    if (preds.empty()) throw ValidationError("macro_metrics_at: no predictions");
    DetectionMetrics acc;
    acc.threshold = threshold;
    for (const auto& pred : preds) {
        const Tally t = tally_at(pred, gold_for(gold, pred), threshold);
        const DetectionMetrics m = metrics_from_tally(t, threshold);
        acc.iou += m.iou;
        acc.precision += m.precision;
        acc.recall += m.recall;
        acc.tp += t.tp;
        acc.fp += t.fp;
        acc.fn += t.fn;
        acc.iou_flagged |= m.iou_flagged;
        acc.precision_flagged |= m.precision_flagged;
        acc.recall_flagged |= m.recall_flagged;
    }
    const double n = static_cast<double>(preds.size());
    acc.iou /= n;
    acc.precision /= n;
    acc.recall /= n;
    return acc;
}

DetectionMetrics sweep_threshold(const std::vector<Prediction>& preds,
                                 const std::map<std::string, LabelSequence>& gold) {
    // Gather (prob, is_breath) over non-mask frames plus the full candidate
    // grid; prefix sums over the descending order give each candidate's
    // confusion counts in O(n log n).
    struct Frame {
        float prob;
        bool positive;
    };
    std::vector<Frame> frames;
    std::vector<float> candidates;
    long gold_positives = 0;
    for (const auto& pred : preds) {
        const LabelSequence& gs = gold_for(gold, pred);
        for (long i = 0; i < pred.size(); ++i) {
            candidates.push_back(pred.probs[i]);
            if (gs.labels[i] == Label::Mask) continue;
            const bool pos = gs.labels[i] == Label::Breath;
            frames.push_back({pred.probs[i], pos});
            gold_positives += pos;
        }
    }
    if (gold_positives == 0)
        throw ValidationError("sweep_threshold: gold contains no positive frames");

    candidates.push_back(0.5f);
    std::sort(candidates.begin(), candidates.end(), std::greater<float>());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    std::sort(frames.begin(), frames.end(),
              [](const Frame& a, const Frame& b) { return a.prob > b.prob; });

    DetectionMetrics best;
    bool have_best = false;
    std::size_t fi = 0;
    Tally t;
    t.fn = gold_positives;
    // Candidates descend, so frames entering the positive set only accumulate.
    for (float cand : candidates) {
        while (fi < frames.size() && frames[fi].prob >= cand) {
            if (frames[fi].positive) {
                ++t.tp;
                --t.fn;
            } else {
                ++t.fp;
            }
            ++fi;
        }
        const DetectionMetrics m = metrics_from_tally(t, cand);
        // Strict improvement keeps the largest threshold on ties.
        if (!have_best || m.iou > best.iou) {
            best = m;
            have_best = true;
        }
    }
    return best;
}

std::vector<BreathInterval> merge_breath_intervals(const std::vector<float>& probs,
                                                   double threshold, double hop_sec,
                                                   double min_duration) {
    std::vector<BreathInterval> out;
    const long n = static_cast<long>(probs.size());
    long run_start = -1;
    for (long i = 0; i <= n; ++i) {
        const bool on = i < n && probs[i] >= threshold;
        if (on && run_start < 0) run_start = i;
        if (!on && run_start >= 0) {
            const double t0 = run_start * hop_sec;
            const double t1 = i * hop_sec;
            if (t1 - t0 >= min_duration - 1e-12) out.push_back({t0, t1});
            run_start = -1;
        }
    }
    return out;
}

}  // namespace breathscan
