#include <doctest.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>

#include "breathscan/detector.hpp"
#include "breathscan/nn.hpp"
#include "breathscan/util.hpp"

using namespace breathscan;

namespace {

FeatureSequence random_features(long frames, int n_mels, std::uint64_t seed,
                                std::string id = "utt") {
    nn::Rng rng(seed);
    FeatureSequence fs;
    fs.frame_config = FrameConfig::model_default();
    fs.frame_config.n_mels = n_mels;
    fs.n_frames = frames;
    fs.utterance_id = std::move(id);
    fs.log_mel.resize(std::size_t(n_mels) * frames);
    fs.zcr.resize(frames);
    fs.vms.resize(frames);
    for (auto& v : fs.log_mel) v = rng.uniform(-80.0, 0.0);
    for (auto& v : fs.zcr) v = rng.uniform(0.0, 1.0);
    for (auto& v : fs.vms) v = rng.uniform(0.0, 400.0);
    return fs;
}

DetectorConfig small_cfg() {
    DetectorConfig cfg = DetectorConfig::tiny();
    cfg.n_mels = 16;
    return cfg;
}

}  // namespace

TEST_CASE("forward output length equals input frame count") {
    const DetectorConfig cfg = small_cfg();
    Detector<float> det(cfg, 7);
    for (long f : {1L, 2L, 3L, 4L, 7L, 100L, 101L}) {
        const auto probs = det.forward(random_features(f, cfg.n_mels, 11 + f), false);
        CHECK(static_cast<long>(probs.size()) == f);
        for (float p : probs) {
            CHECK(p > 0.0f);
            CHECK(p < 1.0f);
        }
    }
}

TEST_CASE("empty input is a validation error") {
    const DetectorConfig cfg = small_cfg();
    Detector<float> det(cfg, 7);
    FeatureSequence fs = random_features(1, cfg.n_mels, 3);
    fs.n_frames = 0;
    fs.log_mel.clear();
    fs.zcr.clear();
    fs.vms.clear();
    CHECK_THROWS_AS(det.forward(fs, false), ValidationError);
}

TEST_CASE("all-zero parameters output probability one half everywhere") {
    const DetectorConfig cfg = small_cfg();
    Detector<float> det(cfg, 7);
    det.params().fill_value(0.0f);
    const auto probs = det.forward(random_features(9, cfg.n_mels, 21), false);
    for (float p : probs) CHECK(p == 0.5f);
}

TEST_CASE("repeated eval-mode forwards are bit-identical") {
    const DetectorConfig cfg = small_cfg();
    Detector<float> det(cfg, 7);
    const FeatureSequence fs = random_features(3, cfg.n_mels, 5);
    const auto a = det.forward(fs, false);
    const auto b = det.forward(fs, false);
    CHECK(a == b);
}

TEST_CASE("padded batch forward equals per-utterance forward on real frames") {
    const DetectorConfig cfg = small_cfg();
    Detector<float> det(cfg, 7);
    const FeatureSequence f1 = random_features(23, cfg.n_mels, 31, "a");
    const FeatureSequence f2 = random_features(57, cfg.n_mels, 32, "b");
    const FeatureSequence f3 = random_features(8, cfg.n_mels, 33, "c");

    const auto batch = forward_batch(det, {&f1, &f2, &f3}, false);
    const auto s1 = det.forward(f1, false);
    const auto s2 = det.forward(f2, false);
    const auto s3 = det.forward(f3, false);
    REQUIRE(batch.size() == 3);
    for (std::size_t i = 0; i < s1.size(); ++i)
        CHECK(std::abs(batch[0][i] - s1[i]) < 1e-5f);
    for (std::size_t i = 0; i < s2.size(); ++i)
        CHECK(std::abs(batch[1][i] - s2[i]) < 1e-5f);
    for (std::size_t i = 0; i < s3.size(); ++i)
        CHECK(std::abs(batch[2][i] - s3[i]) < 1e-5f);
}

TEST_CASE("masked BCE unit examples") {
    SUBCASE("symmetric BCE at 0.5 equals ln 2") {
        LabelSequence lb;
        lb.labels = {Label::NonBreath, Label::Breath};
        const std::vector<double> probs = {0.5, 0.5};
        CHECK(nn::masked_bce_loss(probs, lb) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("confident correct prediction") {
        LabelSequence lb;
        lb.labels = {Label::Breath};
        const std::vector<double> probs = {0.9};
        CHECK(nn::masked_bce_loss(probs, lb) ==
              doctest::Approx(-std::log(0.9)).epsilon(1e-12));
    }
    SUBCASE("all-mask sequence has zero loss and zero gradient") {
        LabelSequence lb;
        lb.labels = {Label::Mask, Label::Mask};
        const std::vector<double> probs = {0.9, 0.2};
        CHECK(nn::masked_bce_loss(probs, lb) == 0.0);
        std::vector<double> g(2, 123.0);
        nn::masked_bce_grad_logits(probs.data(), lb.labels.data(), 2, 1.0, g.data());
        CHECK(g[0] == 0.0);
        CHECK(g[1] == 0.0);
    }
}

TEST_CASE("loss is bit-invariant to logits at masked positions") {
    LabelSequence lb;
    lb.labels = {Label::Breath, Label::Mask, Label::NonBreath, Label::Mask};
    std::vector<double> probs = {0.7, 0.99, 0.2, 0.01};
    const double base = nn::masked_bce_loss(probs, lb);
    probs[1] = 0.0001;
    probs[3] = 0.9999;
    CHECK(nn::masked_bce_loss(probs, lb) == base);
}

TEST_CASE("head is elementwise and monotone in its logit") {
    // sigmoid strictness
    for (double x : {-3.0, -0.5, 0.0, 0.7, 4.0})
        CHECK(nn::sigmoid(x + 1e-3) > nn::sigmoid(x));

    // raising every logit by a constant (head bias) raises every probability;
    // per-frame independence follows from the elementwise head.
    const DetectorConfig cfg = small_cfg();
    Detector<float> det(cfg, 7);
    const FeatureSequence fs = random_features(14, cfg.n_mels, 77);
    const auto before = det.forward(fs, false);
    for (auto& p : det.params().params())
        if (p.name == "head.b") (*p.value)[0] += 0.25f;
    const auto after = det.forward(fs, false);
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(after[i] > before[i]);
}

TEST_CASE("desk preset stays under 200k parameters") {
    Detector<float> det(DetectorConfig::desk(), 1);
    CHECK(det.params().total_size() <= 200000);
    CHECK(det.params().total_size() > 10000);
}

TEST_CASE("checkpoint round trip preserves parameters, config and outputs") {
    const DetectorConfig cfg = small_cfg();
    Detector<float> det(cfg, 77);
    const FeatureSequence fs = random_features(15, cfg.n_mels, 8);
    const auto before = det.forward(fs, false);

    const auto path = (std::filesystem::temp_directory_path() /
                       format_str("breathscan_ckpt_%d.bsck", getpid()))
                          .string();
    save_checkpoint(path, det);
    CHECK(std::filesystem::exists(path + ".manifest"));

    const auto loaded = load_checkpoint<float>(path);
    CHECK(loaded->config().hash() == cfg.hash());
    CHECK(param_hash(*loaded) == param_hash(det));
    const auto after = loaded->forward(fs, false);
    CHECK(before == after);

    const std::string manifest = read_text_file(path + ".manifest");
    CHECK(manifest.find("total_parameters") != std::string::npos);
    std::filesystem::remove(path);
    std::filesystem::remove(path + ".manifest");
}

TEST_CASE("clone preserves parameters and behaves identically") {
    const DetectorConfig cfg = small_cfg();
    Detector<float> det(cfg, 5);
    const auto copy = det.clone();
    const FeatureSequence fs = random_features(12, cfg.n_mels, 4);
    CHECK(det.forward(fs, false) == copy->forward(fs, false));
}

namespace {

std::pair<std::vector<FeatureSequence>, std::vector<LabelSequence>> toy_dataset(
    const DetectorConfig& cfg, int n, std::uint64_t seed) {
    std::vector<FeatureSequence> feats;
    std::vector<LabelSequence> labels;
    nn::Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        const long frames = 10 + static_cast<long>(rng.below(30));
        feats.push_back(random_features(frames, cfg.n_mels, seed * 100 + i,
                                        format_str("toy%d", i)));
        LabelSequence lb;
        lb.utterance_id = feats.back().utterance_id;
        for (long f = 0; f < frames; ++f) {
            const double r = rng.uniform();
            lb.labels.push_back(r < 0.3   ? Label::Breath
                                : r < 0.9 ? Label::NonBreath
                                          : Label::Mask);
        }
        labels.push_back(std::move(lb));
    }
    return {std::move(feats), std::move(labels)};
}

std::vector<TrainItem> make_items(const std::vector<FeatureSequence>& f,
                                  const std::vector<LabelSequence>& l) {
    std::vector<TrainItem> items;
    for (std::size_t i = 0; i < f.size(); ++i) items.push_back({&f[i], &l[i]});
    return items;
}

}  // namespace

TEST_CASE("zero epochs leave parameters unchanged") {
    const DetectorConfig cfg = small_cfg();
    Detector<float> det(cfg, 3);
    const std::uint64_t before = param_hash(det);
    auto [feats, labels] = toy_dataset(cfg, 4, 9);
    TrainScheduleConfig sched;
    sched.epochs = 0;
    const TrainStats stats = train_epochs(det, make_items(feats, labels), {}, sched, 42);
    CHECK(stats.steps == 0);
    CHECK(param_hash(det) == before);
}

TEST_CASE("training with a fixed seed is deterministic") {
    const DetectorConfig cfg = small_cfg();
    auto [feats, labels] = toy_dataset(cfg, 6, 13);
    OptimizerConfig opt;
    opt.peak_lr = 1e-3;
    TrainScheduleConfig sched;
    sched.epochs = 3;
    sched.batch_size = 2;

    Detector<float> a(cfg, 3), b(cfg, 3);
    train_epochs(a, make_items(feats, labels), opt, sched, 42);
    train_epochs(b, make_items(feats, labels), opt, sched, 42);
    CHECK(param_hash(a) == param_hash(b));

    Detector<float> c(cfg, 3);
    train_epochs(c, make_items(feats, labels), opt, sched, 43);
    CHECK(param_hash(c) != param_hash(a));  // different shuffle/dropout stream
}

TEST_CASE("training aborts with diagnostics on divergence") {
    const DetectorConfig cfg = small_cfg();
    Detector<float> det(cfg, 3);
    auto [feats, labels] = toy_dataset(cfg, 4, 17);
    OptimizerConfig opt;
    opt.peak_lr = 1e18;  // guaranteed blow-up
    TrainScheduleConfig sched;
    sched.epochs = 50;
    sched.batch_size = 2;
    CHECK_THROWS_AS(train_epochs(det, make_items(feats, labels), opt, sched, 1), RuntimeAbort);
}

TEST_CASE("training requires at least one unmasked frame") {
    const DetectorConfig cfg = small_cfg();
    Detector<float> det(cfg, 3);
    auto [feats, labels] = toy_dataset(cfg, 2, 19);
    for (auto& lb : labels) std::fill(lb.labels.begin(), lb.labels.end(), Label::Mask);
    CHECK_THROWS_AS(train_epochs(det, make_items(feats, labels), {}, {}, 1), ValidationError);
}

TEST_CASE("ablated input channels change the architecture") {
    DetectorConfig cfg = small_cfg();
    cfg.use_zcr = false;
    CHECK(cfg.input_channels() == 2);
    Detector<float> det(cfg, 3);
    const auto probs = det.forward(random_features(10, cfg.n_mels, 2), false);
    CHECK(probs.size() == 10);

    cfg.use_vms = false;
    CHECK(cfg.input_channels() == 1);
    Detector<float> det2(cfg, 3);
    CHECK(det2.params().total_size() < det.params().total_size());
}
