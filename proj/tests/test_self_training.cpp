#include <doctest.h>

#include <cmath>
#include <set>

#include "breathscan/self_training.hpp"
#include "breathscan/util.hpp"
#include "support/synth_pipeline.hpp"

using namespace breathscan;
using namespace breathscan::testsupport;

namespace {

std::vector<std::pair<float, Label>> separated_frames() {
    // perfectly separated predictor: breath frames at 0.9, others at 0.1
    std::vector<std::pair<float, Label>> frames;
    for (int i = 0; i < 40; ++i) frames.push_back({0.9f, Label::Breath});
    for (int i = 0; i < 60; ++i) frames.push_back({0.1f, Label::NonBreath});
    return frames;
}

}  // namespace

TEST_CASE("calibration on a separated predictor picks the separating grid points") {
    const DynamicThresholds th = calibrate_thresholds(separated_frames(), 0.98);
    REQUIRE(th.alpha_attainable);
    REQUIRE(th.beta_attainable);
    // alpha: smallest unique probability whose >=-suffix is pure breath
    CHECK(th.alpha == doctest::Approx(0.9));
    CHECK(th.beta == doctest::Approx(0.1));
    CHECK(th.beta < th.alpha);
    // brute-force oracle: sweep every unique probability by hand
    for (float cand : {0.1f, 0.9f}) {
        long total = 0, breath = 0;
        for (auto& [p, y] : separated_frames()) {
            if (p >= cand) {
                ++total;
                breath += y == Label::Breath;
            }
        }
        const bool ok = static_cast<double>(breath) / total >= 0.98;
        if (cand < th.alpha) CHECK_FALSE(ok);
        if (cand == doctest::Approx(th.alpha)) CHECK(ok);
    }
}

TEST_CASE("target zero accepts the smallest unique probability") {
    const DynamicThresholds th = calibrate_thresholds(separated_frames(), 0.0);
    REQUIRE(th.alpha_attainable);
    CHECK(th.alpha == doctest::Approx(0.1));
}

TEST_CASE("constant predictor below the target yields unattainable thresholds") {
    std::vector<std::pair<float, Label>> frames;
    for (int i = 0; i < 50; ++i)
        frames.push_back({0.5f, i % 2 == 0 ? Label::Breath : Label::NonBreath});
    const DynamicThresholds th = calibrate_thresholds(frames, 0.98);
    CHECK_FALSE(th.alpha_attainable);
    CHECK_FALSE(th.beta_attainable);
    CHECK(std::isinf(th.alpha));
    CHECK(std::isinf(th.beta));
    CHECK(th.beta < th.alpha);
}

TEST_CASE("beta is constrained strictly below alpha") {
    // Noisy middle ground; both sides attainable at a mild target but the
    // prefix candidate at alpha itself must be rejected.
    std::vector<std::pair<float, Label>> frames;
    for (int i = 0; i < 30; ++i) frames.push_back({0.8f, Label::Breath});
    for (int i = 0; i < 30; ++i) frames.push_back({0.2f, Label::NonBreath});
    frames.push_back({0.8f, Label::NonBreath});
    frames.push_back({0.2f, Label::Breath});
    const DynamicThresholds th = calibrate_thresholds(frames, 0.9);
    REQUIRE(th.alpha_attainable);
    REQUIRE(th.beta_attainable);
    CHECK(th.beta < th.alpha);
}

TEST_CASE("calibration ignores masked frames and rejects empty input") {
    std::vector<std::pair<float, Label>> frames;
    for (int i = 0; i < 10; ++i) frames.push_back({0.7f, Label::Mask});
    CHECK_THROWS_AS(calibrate_thresholds(frames, 0.9), ConfigError);
    CHECK_THROWS_AS(calibrate_thresholds({}, 0.9), ConfigError);
}

TEST_CASE("pseudo_label applies strict thresholds on mask-eligible frames only") {
    const DetectorConfig dcfg = [] {
        DetectorConfig c = DetectorConfig::tiny();
        c.n_mels = 16;
        return c;
    }();
    Detector<float> det(dcfg, 3);

    // one synthetic item with a hand-built frame set
    nn::Rng rng(5);
    SelfTrainItem item;
    item.features.frame_config = FrameConfig::model_default();
    item.features.frame_config.n_mels = dcfg.n_mels;
    item.features.n_frames = 12;
    item.features.utterance_id = "u";
    item.features.log_mel.resize(16 * 12);
    item.features.zcr.resize(12);
    item.features.vms.resize(12);
    for (auto& v : item.features.log_mel) v = rng.uniform(-60.0, 0.0);
    for (auto& v : item.features.zcr) v = rng.uniform(0.0, 1.0);
    for (auto& v : item.features.vms) v = rng.uniform(0.0, 200.0);
    item.rule_sets.n_frames = 12;
    item.rule_sets.pause = {2, 3, 4, 5, 6};
    item.rule_sets.breath = {3};
    item.rule_sets.nonbreath = {4};

    const std::vector<float> probs = det.forward(item.features, false);

    SUBCASE("unattainable alpha produces no breath pseudo-labels") {
        DynamicThresholds th;  // defaults: +inf / -inf
        const auto pseudo = pseudo_label(det, {item}, {item.rule_sets}, th);
        CHECK(pseudo[0].breath.empty());
        CHECK(pseudo[0].nonbreath.empty());
    }

    SUBCASE("strict comparisons against the thresholds") {
        DynamicThresholds th;
        th.alpha = 0.5;
        th.alpha_attainable = true;
        th.beta = 0.5;
        th.beta_attainable = true;
        const auto pseudo = pseudo_label(det, {item}, {item.rule_sets}, th);
        // eligible frames: 2, 5, 6 (3 is rule breath, 4 rule non-breath)
        for (long f : pseudo[0].breath) {
            CHECK((f == 2 || f == 5 || f == 6));
            CHECK(probs[f] > 0.5f);
        }
        for (long f : pseudo[0].nonbreath) {
            CHECK((f == 2 || f == 5 || f == 6));
            CHECK(probs[f] < 0.5f);
        }
        CHECK(pseudo[0].breath.size() + pseudo[0].nonbreath.size() ==
              3);  // 0.5 is never equal to a sigmoid output here
    }

    SUBCASE("frames already rule-labeled are excluded regardless of probability") {
        DynamicThresholds th;
        th.alpha = 0.0;  // everything above
        th.alpha_attainable = true;
        const auto pseudo = pseudo_label(det, {item}, {item.rule_sets}, th);
        for (long f : pseudo[0].breath) {
            CHECK(f != 3);
            CHECK(f != 4);
        }
    }
}

TEST_CASE("self-training on the synthetic corpus: pipeline contracts") {
    // A deliberately small run to keep unit tests quick; the acceptance suite
    // runs the full efficacy configuration.
    SynthConfig train_cfg = efficacy_train_config();
    train_cfg.n_utterances = 14;
    SynthConfig val_cfg = efficacy_val_config();
    val_cfg.n_utterances = 6;
    const auto data =
        assemble_synth_selftrain(synth_corpus(train_cfg), synth_corpus(val_cfg), 0.3, 42,
                                 FrameConfig::rule_default(), FrameConfig::model_default());
    REQUIRE(data.train.size() == 14);
    REQUIRE(data.withheld_pauses > 0);

    SelfTrainConfig cfg;
    cfg.detector = DetectorConfig::tiny();
    cfg.detector.n_mels = 128;
    cfg.optimizer.peak_lr = 2e-3;
    cfg.schedule.epochs = 2;
    cfg.schedule.batch_size = 8;
    cfg.max_iterations = 2;
    cfg.seed = 77;

    SUBCASE("max_iterations zero returns the initial detector with one history entry") {
        SelfTrainConfig zero = cfg;
        zero.max_iterations = 0;
        const SelfTrainResult res = run_self_training(data.train, data.validation, zero);
        CHECK(res.history.size() == 1);
        CHECK(res.output_iteration == 0);
        CHECK(res.detector != nullptr);
        CHECK(hex64(param_hash(*res.detector)) == res.history[0].checkpoint_hash);
    }

    SUBCASE("pseudo-label soundness and warm-start hash chain") {
        const SelfTrainResult res = run_self_training(data.train, data.validation, cfg);
        REQUIRE(res.history.size() >= 2);
        for (std::size_t k = 1; k < res.history.size(); ++k)
            CHECK(res.history[k].parent_hash == res.history[k - 1].checkpoint_hash);
        // stopping-rule consistency
        const int out = res.output_iteration;
        for (int k = 1; k <= out; ++k)
            CHECK(res.history[k].validation.iou >= res.history[k - 1].validation.iou);
        if (out + 1 < static_cast<int>(res.history.size()))
            CHECK(res.history[out].validation.iou > res.history[out + 1].validation.iou);
        CHECK(hex64(param_hash(*res.detector)) == res.history[out].checkpoint_hash);
        // target precision schedule: 0.98, then 0.96
        CHECK(res.history[1].target_precision == doctest::Approx(0.98));
        if (res.history.size() > 2)
            CHECK(res.history[2].target_precision == doctest::Approx(0.96));
    }

    SUBCASE("empty breath set refuses to start") {
        auto broken = data.train;
        for (auto& item : broken) item.rule_sets.breath.clear();
        CHECK_THROWS_WITH_AS(run_self_training(broken, data.validation, cfg),
                             doctest::Contains("breath set"), ValidationError);
    }

    SUBCASE("disable_pseudo_labels keeps the training sets frozen") {
        SelfTrainConfig ablat = cfg;
        ablat.max_iterations = 1;
        ablat.disable_pseudo_labels = true;
        const SelfTrainResult res = run_self_training(data.train, data.validation, ablat);
        REQUIRE(res.history.size() >= 2);
        CHECK(res.history[1].pseudo_breath == 0);
        CHECK(res.history[1].pseudo_nonbreath == 0);
        CHECK(res.history[1].breath_frames == res.history[0].breath_frames);
    }
}

TEST_CASE("pseudo-labels never collide with rule sets across a real run") {
    SynthConfig train_cfg = efficacy_train_config();
    train_cfg.n_utterances = 10;
    SynthConfig val_cfg = efficacy_val_config();
    val_cfg.n_utterances = 5;
    const auto data =
        assemble_synth_selftrain(synth_corpus(train_cfg), synth_corpus(val_cfg), 0.4, 11,
                                 FrameConfig::rule_default(), FrameConfig::model_default());

    DetectorConfig dcfg = DetectorConfig::tiny();
    dcfg.n_mels = 128;
    Detector<float> det(dcfg, 9);
    std::vector<LabelSets> sets;
    for (const auto& item : data.train) sets.push_back(item.rule_sets);

    DynamicThresholds th;
    th.alpha = 0.55;
    th.alpha_attainable = true;
    th.beta = 0.45;
    th.beta_attainable = true;
    const auto pseudo = pseudo_label(det, data.train, sets, th);
    for (std::size_t i = 0; i < pseudo.size(); ++i) {
        std::set<long> rule_labeled(sets[i].breath.begin(), sets[i].breath.end());
        rule_labeled.insert(sets[i].nonbreath.begin(), sets[i].nonbreath.end());
        std::set<long> pause(sets[i].pause.begin(), sets[i].pause.end());
        for (long f : pseudo[i].breath) {
            CHECK(pause.count(f));
            CHECK_FALSE(rule_labeled.count(f));
        }
        for (long f : pseudo[i].nonbreath) {
            CHECK(pause.count(f));
            CHECK_FALSE(rule_labeled.count(f));
        }
    }
}
