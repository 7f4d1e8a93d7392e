#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "breathscan/labeling.hpp"
#include "breathscan/util.hpp"

namespace breathscan::nn {

// Deterministic RNG used for init, shuffling and dropout. All draws are
// hand-rolled on top of mt19937_64 so sequences do not depend on standard
// library distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() { return state_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(state_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v;
        do {
            v = state_();
        } while (v >= limit);
        return v % n;
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = uniform(-1.0, 1.0);
            v = uniform(-1.0, 1.0);
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double mul = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * mul;
        have_spare_ = true;
        return u * mul;
    }

    template <typename It>
    void shuffle(It first, It last) {
        const auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) std::swap(first[i - 1], first[below(i)]);
    }

private:
    std::mt19937_64 state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Row-major matrix; sequence data is time-major [frames x channels].
template <typename T>
struct Mat {
    long rows = 0, cols = 0;
    std::vector<T> d;

    Mat() = default;
    Mat(long r, long c) : rows(r), cols(c), d(static_cast<std::size_t>(r) * c, T(0)) {}

    T* data() { return d.data(); }
    const T* data() const { return d.data(); }
    T& at(long i, long j) { return d[static_cast<std::size_t>(i) * cols + j]; }
    const T& at(long i, long j) const { return d[static_cast<std::size_t>(i) * cols + j]; }
    T* row(long i) { return d.data() + static_cast<std::size_t>(i) * cols; }
    const T* row(long i) const { return d.data() + static_cast<std::size_t>(i) * cols; }
    void zero() { std::fill(d.begin(), d.end(), T(0)); }
    bool empty() const { return d.empty(); }
};

// [channels x height x width], used by the 2D subsampling stack
// (channel, mel, frame).
template <typename T>
struct Tensor3 {
    long ch = 0, h = 0, w = 0;
    std::vector<T> d;

    Tensor3() = default;
    Tensor3(long c, long hh, long ww)
        : ch(c), h(hh), w(ww), d(static_cast<std::size_t>(c) * hh * ww, T(0)) {}

    T& at(long c, long y, long x) {
        return d[(static_cast<std::size_t>(c) * h + y) * w + x];
    }
    const T& at(long c, long y, long x) const {
        return d[(static_cast<std::size_t>(c) * h + y) * w + x];
    }
    void zero() { std::fill(d.begin(), d.end(), T(0)); }
};

// Named views over every trainable array; drives the optimizer, checkpoint
// serialization and finite-difference sweeps.
template <typename T>
struct ParamRef {
    std::string name;
    std::vector<T>* value = nullptr;
    std::vector<T>* grad = nullptr;
};

template <typename T>
class ParamRegistry {
public:
    void add(std::string name, std::vector<T>& value, std::vector<T>& grad) {
        params_.push_back({std::move(name), &value, &grad});
    }

    const std::vector<ParamRef<T>>& params() const { return params_; }

    long total_size() const {
        long n = 0;
        for (const auto& p : params_) n += static_cast<long>(p.value->size());
        return n;
    }

    void zero_grad() {
        for (auto& p : params_)
            std::fill(p.grad->begin(), p.grad->end(), T(0));
    }

    void fill_value(T v) {
        for (auto& p : params_)
            std::fill(p.value->begin(), p.value->end(), v);
    }

    double grad_norm() const {
        double acc = 0.0;
        for (const auto& p : params_)
            for (T g : *p.grad) acc += static_cast<double>(g) * static_cast<double>(g);
        return std::sqrt(acc);
    }

private:
    std::vector<ParamRef<T>> params_;
};

inline constexpr double kBceEps = 1e-7;

template <typename T>
struct BceSum {
    double loss_sum = 0.0;
    long n_unmasked = 0;
};

// Sum of per-frame binary cross-entropy over non-mask frames, with the
// probability clamped to [eps, 1-eps]. Mask frames contribute nothing, so
// the loss is bit-invariant to their logits.
template <typename T>
BceSum<T> masked_bce_sum(const T* probs, const Label* labels, long n) {
    BceSum<T> out;
    for (long i = 0; i < n; ++i) {
        if (labels[i] == Label::Mask) continue;
        const double y = labels[i] == Label::Breath ? 1.0 : 0.0;
        double p = static_cast<double>(probs[i]);
        p = std::min(1.0 - kBceEps, std::max(kBceEps, p));
        out.loss_sum += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
        ++out.n_unmasked;
    }
    return out;
}

// Mean masked BCE for one sequence; 0 when every frame is masked.
template <typename T>
double masked_bce_loss(const std::vector<T>& probs, const LabelSequence& labels) {
    if (static_cast<long>(probs.size()) != labels.size())
        throw ValidationError(format_str("masked_bce_loss: %zu probs vs %ld labels", probs.size(),
                                         labels.size()));
    const auto s = masked_bce_sum(probs.data(), labels.labels.data(), labels.size());
    return s.n_unmasked == 0 ? 0.0 : s.loss_sum / s.n_unmasked;
}

// d(loss)/d(logit) with loss = sum(BCE) / denom. Zero at mask frames; also
// zero where the clamp is active, matching the gradient of the computed
// loss exactly.
template <typename T>
void masked_bce_grad_logits(const T* probs, const Label* labels, long n, double denom, T* grad) {
    for (long i = 0; i < n; ++i) {
        if (labels[i] == Label::Mask) {
            grad[i] = T(0);
            continue;
        }
        const double p = static_cast<double>(probs[i]);
        if (p <= kBceEps || p >= 1.0 - kBceEps) {
            grad[i] = T(0);
            continue;
        }
        const double y = labels[i] == Label::Breath ? 1.0 : 0.0;
        grad[i] = static_cast<T>((p - y) / denom);
    }
}

}  // namespace breathscan::nn
