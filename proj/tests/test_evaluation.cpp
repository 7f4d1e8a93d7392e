#include <doctest.h>

#include <algorithm>
#include <map>

#include "breathscan/evaluation.hpp"
#include "breathscan/nn.hpp"
#include "breathscan/util.hpp"

using namespace breathscan;

namespace {

// One utterance where predicted-positive frames are {1..10} and gold-positive
// frames are {6..15} over 20 frames.
std::pair<std::vector<Prediction>, std::map<std::string, LabelSequence>> worked_example() {
    Prediction pred;
    pred.utterance_id = "u";
    pred.probs.assign(20, 0.1f);
    for (int i = 1; i <= 10; ++i) pred.probs[i] = 0.9f;

    LabelSequence gold;
    gold.utterance_id = "u";
    gold.labels.assign(20, Label::NonBreath);
    for (int i = 6; i <= 15; ++i) gold.labels[i] = Label::Breath;

    std::map<std::string, LabelSequence> gm;
    gm.emplace("u", gold);
    return {{pred}, gm};
}

struct OracleCounts {
    long tp = 0, fp = 0, fn = 0;
};

OracleCounts oracle_confusion(const std::vector<Prediction>& preds,
                              const std::map<std::string, LabelSequence>& gold, double thr) {
    OracleCounts c;
    for (const auto& p : preds) {
        const auto& g = gold.at(p.utterance_id);
        for (long i = 0; i < p.size(); ++i) {
            if (g.labels[i] == Label::Mask) continue;
            const bool hyp = p.probs[i] >= thr;
            const bool ref = g.labels[i] == Label::Breath;
            c.tp += hyp && ref;
            c.fp += hyp && !ref;
            c.fn += !hyp && ref;
        }
    }
    return c;
}

}  // namespace

TEST_CASE("worked example: IoU is exactly one third") {
    auto [preds, gold] = worked_example();
    const DetectionMetrics m = metrics_at(preds, gold, 0.5);
    CHECK(m.tp == 5);
    CHECK(m.fp == 5);
    CHECK(m.fn == 5);
    CHECK(m.iou == 5.0 / 15.0);
    CHECK(m.iou == doctest::Approx(1.0 / 3.0));
    CHECK(m.precision == 0.5);
    CHECK(m.recall == 0.5);
}

TEST_CASE("perfect prediction scores 1.0 everywhere") {
    Prediction pred;
    pred.utterance_id = "u";
    pred.probs = {0.9f, 0.1f, 0.8f, 0.2f};
    LabelSequence gold;
    gold.utterance_id = "u";
    gold.labels = {Label::Breath, Label::NonBreath, Label::Breath, Label::NonBreath};
    std::map<std::string, LabelSequence> gm;
    gm.emplace("u", gold);
    const DetectionMetrics m = metrics_at({pred}, gm, 0.5);
    CHECK(m.iou == 1.0);
    CHECK(m.precision == 1.0);
    CHECK(m.recall == 1.0);
    CHECK_FALSE(m.precision_flagged);
}

TEST_CASE("no predicted positives flags precision as 1.0") {
    Prediction pred;
    pred.utterance_id = "u";
    pred.probs = {0.1f, 0.2f, 0.3f};
    LabelSequence gold;
    gold.utterance_id = "u";
    gold.labels = {Label::Breath, Label::NonBreath, Label::Breath};
    std::map<std::string, LabelSequence> gm;
    gm.emplace("u", gold);
    const DetectionMetrics m = metrics_at({pred}, gm, 0.5);
    CHECK(m.iou == 0.0);
    CHECK(m.recall == 0.0);
    CHECK(m.precision == 1.0);
    CHECK(m.precision_flagged);
}

TEST_CASE("length mismatch names the utterance") {
    Prediction pred;
    pred.utterance_id = "shorty";
    pred.probs = {0.5f};
    LabelSequence gold;
    gold.labels = {Label::Breath, Label::NonBreath};
    std::map<std::string, LabelSequence> gm;
    gm.emplace("shorty", gold);
    CHECK_THROWS_WITH_AS(metrics_at({pred}, gm, 0.5), doctest::Contains("shorty"),
                         ValidationError);
}

TEST_CASE("metrics_at equals a brute-force confusion matrix on random cases") {
    nn::Rng rng(777);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n_utts = 1 + static_cast<int>(rng.below(3));
        std::vector<Prediction> preds;
        std::map<std::string, LabelSequence> gold;
        for (int u = 0; u < n_utts; ++u) {
            const long frames = 1 + static_cast<long>(rng.below(30));
            Prediction p;
            p.utterance_id = format_str("u%d", u);
            LabelSequence g;
            g.utterance_id = p.utterance_id;
            for (long i = 0; i < frames; ++i) {
                p.probs.push_back(static_cast<float>(rng.uniform()));
                const double r = rng.uniform();
                g.labels.push_back(r < 0.4   ? Label::Breath
                                   : r < 0.8 ? Label::NonBreath
                                             : Label::Mask);
            }
            preds.push_back(std::move(p));
            gold.emplace(g.utterance_id, std::move(g));
        }
        const double thr = rng.uniform(0.05, 0.95);
        const DetectionMetrics m = metrics_at(preds, gold, thr);
        const OracleCounts c = oracle_confusion(preds, gold, thr);
        CHECK(m.tp == c.tp);
        CHECK(m.fp == c.fp);
        CHECK(m.fn == c.fn);
        if (c.tp + c.fp + c.fn > 0)
            CHECK(m.iou == static_cast<double>(c.tp) / (c.tp + c.fp + c.fn));
    }
}

TEST_CASE("metrics are invariant to utterance order") {
    nn::Rng rng(5150);
    std::vector<Prediction> preds;
    std::map<std::string, LabelSequence> gold;
    for (int u = 0; u < 6; ++u) {
        Prediction p;
        p.utterance_id = format_str("u%d", u);
        LabelSequence g;
        g.utterance_id = p.utterance_id;
        for (int i = 0; i < 25; ++i) {
            p.probs.push_back(static_cast<float>(rng.uniform()));
            g.labels.push_back(rng.uniform() < 0.5 ? Label::Breath : Label::NonBreath);
        }
        preds.push_back(std::move(p));
        gold.emplace(g.utterance_id, std::move(g));
    }
    const DetectionMetrics a = metrics_at(preds, gold, 0.4);
    std::reverse(preds.begin(), preds.end());
    const DetectionMetrics b = metrics_at(preds, gold, 0.4);
    CHECK(a.iou == b.iou);
    CHECK(a.tp == b.tp);
}

TEST_CASE("sweep returns IoU 1.0 at the largest separating threshold") {
    Prediction pred;
    pred.utterance_id = "u";
    pred.probs = {0.9f, 0.9f, 0.1f, 0.1f};
    LabelSequence gold;
    gold.utterance_id = "u";
    gold.labels = {Label::Breath, Label::Breath, Label::NonBreath, Label::NonBreath};
    std::map<std::string, LabelSequence> gm;
    gm.emplace("u", gold);
    const DetectionMetrics best = sweep_threshold({pred}, gm);
    CHECK(best.iou == 1.0);
    CHECK(best.threshold == doctest::Approx(0.9));  // tie broken toward the larger threshold
}

TEST_CASE("sweep on a constant predictor picks the better of all-positive/all-negative") {
    Prediction pred;
    pred.utterance_id = "u";
    pred.probs.assign(10, 0.5f);
    LabelSequence gold;
    gold.utterance_id = "u";
    // 7 breath, 3 non-breath: all-positive IoU = 0.7; all-negative IoU = 0.
    for (int i = 0; i < 10; ++i) gold.labels.push_back(i < 7 ? Label::Breath : Label::NonBreath);
    std::map<std::string, LabelSequence> gm;
    gm.emplace("u", gold);

    // two-candidate brute force as the oracle
    const DetectionMetrics all_pos = metrics_at({pred}, gm, 0.5);
    const DetectionMetrics all_neg = metrics_at({pred}, gm, 0.9);
    const double want = std::max(all_pos.iou, all_neg.iou);

    const DetectionMetrics best = sweep_threshold({pred}, gm);
    CHECK(best.iou == want);
    CHECK(best.iou == doctest::Approx(0.7));
}

TEST_CASE("sweep never returns IoU below the 0.5 operating point") {
    nn::Rng rng(31337);
    for (int trial = 0; trial < 200; ++trial) {
        Prediction pred;
        pred.utterance_id = "u";
        LabelSequence gold;
        gold.utterance_id = "u";
        const long frames = 2 + static_cast<long>(rng.below(40));
        bool has_pos = false;
        for (long i = 0; i < frames; ++i) {
            pred.probs.push_back(static_cast<float>(rng.uniform()));
            const bool pos = rng.uniform() < 0.4;
            has_pos |= pos;
            gold.labels.push_back(pos ? Label::Breath : Label::NonBreath);
        }
        if (!has_pos) gold.labels[0] = Label::Breath;
        std::map<std::string, LabelSequence> gm;
        gm.emplace("u", gold);
        const DetectionMetrics best = sweep_threshold({pred}, gm);
        const DetectionMetrics mid = metrics_at({pred}, gm, 0.5);
        CHECK(best.iou >= mid.iou);
    }
}

TEST_CASE("interval merging at 10 ms hop") {
    const double hop = 0.010;
    SUBCASE("worked example: two runs, min-dur 0") {
        const auto ivs = merge_breath_intervals({0.9f, 0.9f, 0.1f, 0.9f}, 0.5, hop, 0.0);
        REQUIRE(ivs.size() == 2);
        CHECK(ivs[0].start == doctest::Approx(0.0));
        CHECK(ivs[0].end == doctest::Approx(0.020));
        CHECK(ivs[1].start == doctest::Approx(0.030));
        CHECK(ivs[1].end == doctest::Approx(0.040));
    }
    SUBCASE("all probs below threshold yield no intervals") {
        CHECK(merge_breath_intervals({0.1f, 0.2f, 0.3f}, 0.5, hop, 0.0).empty());
    }
    SUBCASE("min duration drops short runs") {
        CHECK(merge_breath_intervals({0.9f, 0.9f, 0.1f, 0.9f}, 0.5, hop, 0.030).empty());
        const auto ivs = merge_breath_intervals({0.9f, 0.9f, 0.9f, 0.1f}, 0.5, hop, 0.030);
        REQUIRE(ivs.size() == 1);
        CHECK(ivs[0].end - ivs[0].start == doctest::Approx(0.030));
    }
}

TEST_CASE("sweep requires at least one gold positive") {
    Prediction pred;
    pred.utterance_id = "u";
    pred.probs = {0.5f, 0.6f};
    LabelSequence gold;
    gold.utterance_id = "u";
    gold.labels = {Label::NonBreath, Label::NonBreath};
    std::map<std::string, LabelSequence> gm;
    gm.emplace("u", gold);
    CHECK_THROWS_AS(sweep_threshold({pred}, gm), ValidationError);
}
