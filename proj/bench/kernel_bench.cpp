// Serial-reference vs OpenMP kernel comparison, plus an end-to-end detector
// forward. Build with the main tree; not registered in ctest.

#include <benchmark/benchmark.h>

#include <cmath>
#include <vector>

#include "breathscan/detector.hpp"
#include "breathscan/features.hpp"
#include "breathscan/kernels.hpp"
#include "breathscan/nn.hpp"

using namespace breathscan;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
    nn::Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

void bm_matmul_serial(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const auto a = random_vec(std::size_t(n) * n, 1);
    const auto b = random_vec(std::size_t(n) * n, 2);
    std::vector<double> c(std::size_t(n) * n);
    for (auto _ : state) {
        kernels::ref::matmul(a.data(), b.data(), c.data(), n, n, n);
        benchmark::ClobberMemory();
    }
}

void bm_matmul_omp(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const auto a = random_vec(std::size_t(n) * n, 1);
    const auto b = random_vec(std::size_t(n) * n, 2);
    std::vector<double> c(std::size_t(n) * n);
    for (auto _ : state) {
        kernels::matmul(a.data(), b.data(), c.data(), n, n, n);
        benchmark::ClobberMemory();
    }
}

struct DftSetup {
    int n_fft = 256, hop = 128, n_frames = 0, n_bins = 0;
    std::vector<double> samples, window, cos_t, sin_t, power;

    explicit DftSetup(long num_samples) {
        samples = random_vec(num_samples, 3);
        n_frames = 1 + static_cast<int>((num_samples - n_fft) / hop);
        n_bins = n_fft / 2 + 1;
        window.resize(n_fft);
        cos_t.resize(std::size_t(n_bins) * n_fft);
        sin_t.resize(std::size_t(n_bins) * n_fft);
        for (int i = 0; i < n_fft; ++i)
            window[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / n_fft);
        for (int k = 0; k < n_bins; ++k)
            for (int i = 0; i < n_fft; ++i) {
                cos_t[std::size_t(k) * n_fft + i] = std::cos(2.0 * M_PI * k * i / n_fft);
                sin_t[std::size_t(k) * n_fft + i] = std::sin(2.0 * M_PI * k * i / n_fft);
            }
        power.resize(std::size_t(n_frames) * n_bins);
    }
};

void bm_dft_serial(benchmark::State& state) {
    DftSetup s(static_cast<long>(state.range(0)));
    for (auto _ : state) {
        kernels::ref::dft_power_frames(s.samples.data(), s.samples.size(), s.n_fft, s.hop,
                                       s.n_frames, s.window.data(), s.cos_t.data(),
                                       s.sin_t.data(), s.power.data());
        benchmark::ClobberMemory();
    }
}

void bm_dft_omp(benchmark::State& state) {
    DftSetup s(static_cast<long>(state.range(0)));
    for (auto _ : state) {
        kernels::dft_power_frames(s.samples.data(), s.samples.size(), s.n_fft, s.hop, s.n_frames,
                                  s.window.data(), s.cos_t.data(), s.sin_t.data(),
                                  s.power.data());
        benchmark::ClobberMemory();
    }
}

void bm_detector_forward(benchmark::State& state) {
    DetectorConfig cfg = DetectorConfig::desk();
    Detector<float> det(cfg, 1);
    nn::Rng rng(4);
    FeatureSequence fs;
    fs.frame_config = FrameConfig::model_default();
    fs.n_frames = state.range(0);
    fs.utterance_id = "bench";
    fs.log_mel.resize(std::size_t(cfg.n_mels) * fs.n_frames);
    fs.zcr.resize(fs.n_frames);
    fs.vms.resize(fs.n_frames);
    for (auto& v : fs.log_mel) v = rng.uniform(-60.0, 0.0);
    for (auto& v : fs.zcr) v = rng.uniform(0.0, 1.0);
    for (auto& v : fs.vms) v = rng.uniform(0.0, 300.0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(det.forward(fs, false));
    }
}

BENCHMARK(bm_matmul_serial)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_matmul_omp)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_dft_serial)->Arg(22050 * 4)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_dft_omp)->Arg(22050 * 4)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_detector_forward)->Arg(100)->Arg(500)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
