#include <doctest.h>

#include <cmath>

#include "breathscan/detector.hpp"
#include "breathscan/nn.hpp"
#include "support/gradcheck_harness.hpp"

using namespace breathscan;
using namespace breathscan::testsupport;
using nn::Mat;

TEST_CASE("gradcheck: every layer type in isolation") {
    for (const auto& [name, err] : check_all_layers(2026)) {
        INFO("layer: ", name);
        CHECK(err < 1e-3);
    }
}

namespace {

FeatureSequence tiny_features(long frames, int n_mels, std::uint64_t seed) {
    nn::Rng rng(seed);
    FeatureSequence fs;
    fs.frame_config.n_mels = n_mels;
    fs.frame_config.sample_rate = 16000;
    fs.frame_config.window_length = 400;
    fs.frame_config.hop_length = 160;
    fs.n_frames = frames;
    fs.utterance_id = "tiny";
    fs.log_mel.resize(std::size_t(n_mels) * frames);
    fs.zcr.resize(frames);
    fs.vms.resize(frames);
    for (auto& v : fs.log_mel) v = rng.uniform(-60.0, 0.0);
    for (auto& v : fs.zcr) v = rng.uniform(0.0, 1.0);
    for (auto& v : fs.vms) v = rng.uniform(0.0, 300.0);
    return fs;
}

}  // namespace

TEST_CASE("gradcheck: composed tiny detector stays under 1e-3") {
    const DetectorConfig cfg = DetectorConfig::tiny();
    Detector<double> det(cfg, 1234);
    CHECK(det.params().total_size() <= 5000);

    const FeatureSequence fs = tiny_features(6, cfg.n_mels, 5);
    LabelSequence labels;
    labels.labels = {Label::Breath, Label::NonBreath, Label::Mask,
                     Label::Breath, Label::NonBreath, Label::NonBreath};

    const GradCheckReport rep = grad_check(det, fs, labels, 1e-4);
    INFO("worst: ", rep.worst_param, " rel err ", rep.max_rel_error);
    CHECK(rep.n_params == det.params().total_size());
    CHECK(rep.max_rel_error < 1e-3);
}

TEST_CASE("gradcheck: all-mask labels zero both gradient routes") {
    const DetectorConfig cfg = DetectorConfig::tiny();
    Detector<double> det(cfg, 99);
    const FeatureSequence fs = tiny_features(4, cfg.n_mels, 3);
    LabelSequence labels;
    labels.labels.assign(4, Label::Mask);

    const std::vector<double> probs = det.forward(fs, false);
    CHECK(nn::masked_bce_loss(probs, labels) == 0.0);

    const GradCheckReport rep = grad_check(det, fs, labels, 1e-4);
    CHECK(rep.max_rel_error == 0.0);  // analytic and numeric both identically zero
    det.params().zero_grad();
    std::vector<double> glogits(4);
    nn::masked_bce_grad_logits(probs.data(), labels.labels.data(), 4, 1.0, glogits.data());
    det.backward(glogits);
    for (const auto& p : det.params().params())
        for (double g : *p.grad) CHECK(g == 0.0);
}

TEST_CASE("single linear layer + sigmoid + BCE matches the closed-form gradient") {
    nn::Rng rng(2718);
    const long n = 12, dim = 5;
    nn::Linear<double> lin;
    lin.init(dim, 1, rng);
    Mat<double> x = gc_random_mat(n, dim, rng);
    std::vector<Label> labels(n);
    for (auto& lb : labels) lb = rng.uniform() < 0.5 ? Label::Breath : Label::NonBreath;

    const Mat<double> logits = lin.forward(x);
    std::vector<double> probs(n);
    for (long i = 0; i < n; ++i) probs[i] = nn::sigmoid(logits.at(i, 0));

    std::vector<double> glogits(n);
    nn::masked_bce_grad_logits(probs.data(), labels.data(), n, static_cast<double>(n),
                               glogits.data());
    Mat<double> gy(n, 1);
    for (long i = 0; i < n; ++i) gy.at(i, 0) = glogits[i];
    lin.backward(gy);

    // closed form: dL/dw = mean_i (p_i - y_i) x_i ; dL/db = mean_i (p_i - y_i)
    for (long j = 0; j < dim; ++j) {
        double want = 0.0;
        for (long i = 0; i < n; ++i) {
            const double y = labels[i] == Label::Breath ? 1.0 : 0.0;
            want += (probs[i] - y) * x.at(i, j);
        }
        want /= static_cast<double>(n);
        CHECK(std::abs(lin.gw[j] - want) < 1e-10);
    }
    double want_b = 0.0;
    for (long i = 0; i < n; ++i) want_b += probs[i] - (labels[i] == Label::Breath ? 1.0 : 0.0);
    want_b /= static_cast<double>(n);
    CHECK(std::abs(lin.gb[0] - want_b) < 1e-10);
}
