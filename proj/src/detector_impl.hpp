#pragma once

// Template method bodies for Detector<T> and the training entry points;
// included by detector.cpp which instantiates float and double.

#include <algorithm>
#include <cmath>
#include <numeric>

#include "breathscan/detector.hpp"
#include "breathscan/util.hpp"

namespace breathscan {

template <typename T>
Detector<T>::Detector(const DetectorConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    nn::Rng rng(init_seed ^ 0xb5297a4d3f84d5b5ULL);

    const long h = cfg_.hidden_size;
    conv1_.init(cfg_.input_channels(), cfg_.subsample_channels, rng);
    conv2_.init(cfg_.subsample_channels, cfg_.subsample_channels, rng);

    const long mel_sub = nn::Conv2d<T>::out_dim(nn::Conv2d<T>::out_dim(cfg_.n_mels));
    proj_.init(cfg_.subsample_channels * mel_sub, h, rng);
    proj_drop_.p = cfg_.dropout;

    blocks_.resize(cfg_.n_blocks);
    for (auto& b : blocks_)
        b.init(h, cfg_.n_heads, cfg_.conv_kernel, cfg_.ffn_expansion, cfg_.max_rel_distance,
               cfg_.dropout, rng);

    up1_.init(h, h, 3, 2, rng);
    up2_.init(h, h, 3, 2, rng);
    bilstm_.init(h, rng);
    head_.init(h, 1, rng);

    register_all();
}

template <typename T>
void Detector<T>::register_all() {
    reg_ = nn::ParamRegistry<T>();
    conv1_.register_params(reg_, "subsample.conv1");
    conv2_.register_params(reg_, "subsample.conv2");
    proj_.register_params(reg_, "subsample.proj");
    for (std::size_t i = 0; i < blocks_.size(); ++i)
        blocks_[i].register_params(reg_, format_str("block%zu", i));
    up1_.register_params(reg_, "upsample.conv1");
    up2_.register_params(reg_, "upsample.conv2");
    bilstm_.register_params(reg_, "decoder.bilstm");
    head_.register_params(reg_, "head");
}

template <typename T>
std::unique_ptr<Detector<T>> Detector<T>::clone() const {
    auto copy = std::make_unique<Detector<T>>(cfg_, 0);
    const auto& src = reg_.params();
    const auto& dst = copy->reg_.params();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].value = *src[i].value;
    return copy;
}

namespace detail {

// Per-channel standardization; keeps conv inputs well scaled regardless of
// the dB range of the features.
inline void standardize(std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size());
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (double& x : v) x = (x - mean) * inv;
}

}  // namespace detail

template <typename T>
void Detector<T>::build_input(const FeatureSequence& fs) {
    const long L = fs.n_frames;
    const long m = cfg_.n_mels;
    input_ = nn::Tensor3<T>(cfg_.input_channels(), m, L);

    std::vector<double> mel(fs.log_mel);
    detail::standardize(mel);
    for (long y = 0; y < m; ++y)
        for (long t = 0; t < L; ++t)
            input_.at(0, y, t) = static_cast<T>(mel[std::size_t(y) * L + t]);

    long c = 1;
    if (cfg_.use_zcr) {
        std::vector<double> z(fs.zcr);
        detail::standardize(z);
        for (long y = 0; y < m; ++y)
            for (long t = 0; t < L; ++t) input_.at(c, y, t) = static_cast<T>(z[t]);
        ++c;
    }
    if (cfg_.use_vms) {
        std::vector<double> v(fs.vms);
        detail::standardize(v);
        for (long y = 0; y < m; ++y)
            for (long t = 0; t < L; ++t) input_.at(c, y, t) = static_cast<T>(v[t]);
    }
}

template <typename T>
std::vector<T> Detector<T>::forward(const FeatureSequence& fs, bool train) {
    if (fs.n_frames <= 0) throw ValidationError("detector forward: empty feature sequence");
    if (fs.frame_config.n_mels != cfg_.n_mels)
        throw ValidationError(format_str("detector forward: %d mel bins, config expects %d",
                                         fs.frame_config.n_mels, cfg_.n_mels));
    in_frames_ = fs.n_frames;
    build_input(fs);

    nn::Tensor3<T> t1 = conv1_act_.forward(conv1_.forward(input_));
    nn::Tensor3<T> t2 = conv2_act_.forward(conv2_.forward(t1));
    sub_h_ = t2.h;
    sub_w_ = t2.w;

    // [S][M2][L2] -> [L2 x S*M2]
    nn::Mat<T> seq(t2.w, t2.ch * t2.h);
    for (long tt = 0; tt < t2.w; ++tt)
        for (long ch = 0; ch < t2.ch; ++ch)
            for (long y = 0; y < t2.h; ++y)
                seq.at(tt, ch * t2.h + y) = t2.at(ch, y, tt);

    nn::Mat<T> x = proj_drop_.forward(proj_.forward(seq), train, dropout_rng_);
    for (auto& block : blocks_) x = block.forward(x, train, dropout_rng_);

    x = up1_act_.forward(up1_.forward(x));
    x = up2_act_.forward(up2_.forward(x));
    up_out_len_ = x.rows;

    // Length repair: crop right to F (transposed convs always overshoot);
    // zero-pad defensively if they ever undershoot.
    nn::Mat<T> cropped(in_frames_, x.cols);
    const long copy_rows = std::min(in_frames_, x.rows);
    for (long i = 0; i < copy_rows; ++i)
        std::copy(x.row(i), x.row(i) + x.cols, cropped.row(i));

    nn::Mat<T> dec = bilstm_.forward(cropped);
    nn::Mat<T> logits = head_.forward(dec);

    probs_.resize(in_frames_);
    for (long i = 0; i < in_frames_; ++i) probs_[i] = nn::sigmoid(logits.at(i, 0));
    return probs_;
}

template <typename T>
void Detector<T>::backward(const std::vector<T>& glogits) {
    if (static_cast<long>(glogits.size()) != in_frames_)
        throw ValidationError("detector backward: gradient length mismatch");

    nn::Mat<T> g(in_frames_, 1);
    for (long i = 0; i < in_frames_; ++i) g.at(i, 0) = glogits[i];

    nn::Mat<T> gdec = head_.backward(g);
    nn::Mat<T> gcrop = bilstm_.backward(gdec);

    nn::Mat<T> gup(up_out_len_, gcrop.cols);
    gup.zero();
    const long copy_rows = std::min(in_frames_, up_out_len_);
    for (long i = 0; i < copy_rows; ++i)
        std::copy(gcrop.row(i), gcrop.row(i) + gcrop.cols, gup.row(i));

    nn::Mat<T> gx = up2_.backward(up2_act_.backward(gup));
    gx = up1_.backward(up1_act_.backward(gx));

    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) gx = it->backward(gx);
    gx = proj_.backward(proj_drop_.backward(gx));

    nn::Tensor3<T> gt(conv2_.out_ch, sub_h_, sub_w_);
    for (long tt = 0; tt < sub_w_; ++tt)
        for (long ch = 0; ch < conv2_.out_ch; ++ch)
            for (long y = 0; y < sub_h_; ++y)
                gt.at(ch, y, tt) = gx.at(tt, ch * sub_h_ + y);

    nn::Tensor3<T> g2 = conv2_.backward(conv2_act_.backward(gt));
    conv1_.backward(conv1_act_.backward(g2));
}

// ---------------------------------------------------------------------------

template <typename T>
AdamW<T>::AdamW(const nn::ParamRegistry<T>& reg, const OptimizerConfig& cfg) : cfg_(cfg) {
    const long n = reg.total_size();
    m_.assign(n, 0.0);
    v_.assign(n, 0.0);
}

template <typename T>
void AdamW<T>::step(nn::ParamRegistry<T>& reg, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    std::size_t off = 0;
    for (auto& p : reg.params()) {
        auto& val = *p.value;
        auto& grad = *p.grad;
        for (std::size_t i = 0; i < val.size(); ++i, ++off) {
            const double g = static_cast<double>(grad[i]);
            m_[off] = cfg_.beta1 * m_[off] + (1.0 - cfg_.beta1) * g;
            v_[off] = cfg_.beta2 * v_[off] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = m_[off] / bc1;
            const double vhat = v_[off] / bc2;
            const double upd =
                mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * static_cast<double>(val[i]);
            val[i] = static_cast<T>(static_cast<double>(val[i]) - lr * upd);
        }
    }
}

namespace detail {

inline double schedule_lr(long step_1based, long total_steps, long warmup_steps, double peak) {
    if (step_1based <= warmup_steps)
        return peak * static_cast<double>(step_1based) / static_cast<double>(warmup_steps);
    if (total_steps <= warmup_steps) return peak;
    return peak * static_cast<double>(total_steps - step_1based) /
           static_cast<double>(total_steps - warmup_steps);
}

}  // namespace detail

template <typename T>
TrainStats train_epochs(Detector<T>& det, const std::vector<TrainItem>& dataset,
                        const OptimizerConfig& opt_cfg, const TrainScheduleConfig& sched,
                        std::uint64_t seed) {
    if (dataset.empty()) throw ValidationError("train_epochs: empty dataset");
    if (sched.batch_size < 1) throw ConfigError("train_epochs: batch_size must be >= 1");
    if (sched.warmup_frac < 0.0 || sched.warmup_frac > 1.0)
        throw ConfigError("train_epochs: warmup_frac must be in [0, 1]");
    long total_unmasked = 0;
    for (const auto& item : dataset) {
        if (item.features->n_frames != item.labels->size())
            throw ValidationError(format_str("train_epochs: %ld frames vs %ld labels for '%s'",
                                             item.features->n_frames, item.labels->size(),
                                             item.features->utterance_id.c_str()));
        for (Label lb : item.labels->labels) total_unmasked += lb != Label::Mask;
    }
    if (total_unmasked == 0)
        throw ValidationError("train_epochs: every frame is masked; nothing to learn from");

    TrainStats stats;
    if (sched.epochs <= 0) return stats;

    // Bucket by length: sort once, chunk into batches, shuffle batch order
    // each epoch.
    std::vector<long> order(dataset.size());
    std::iota(order.begin(), order.end(), 0L);
    std::stable_sort(order.begin(), order.end(), [&](long a, long b) {
        return dataset[a].features->n_frames < dataset[b].features->n_frames;
    });
    std::vector<std::vector<long>> batches;
    for (std::size_t i = 0; i < order.size(); i += sched.batch_size) {
        batches.emplace_back(order.begin() + i,
                             order.begin() + std::min(order.size(), i + sched.batch_size));
    }

    const long total_steps = static_cast<long>(sched.epochs) * static_cast<long>(batches.size());
    const long warmup_steps =
        std::max(1L, static_cast<long>(std::llround(sched.warmup_frac * total_steps)));

    nn::Rng shuffle_rng(seed);
    det.seed_dropout(seed ^ 0x6a09e667f3bcc909ULL);
    AdamW<T> opt(det.params(), opt_cfg);

    long step = 0;
    std::vector<T> glogits;
    for (int epoch = 0; epoch < sched.epochs; ++epoch) {
        shuffle_rng.shuffle(batches.begin(), batches.end());
        double epoch_loss_sum = 0.0;
        long epoch_unmasked = 0;
        for (const auto& batch : batches) {
            ++step;
            det.params().zero_grad();

            long batch_unmasked = 0;
            for (long idx : batch)
                for (Label lb : dataset[idx].labels->labels) batch_unmasked += lb != Label::Mask;

            double batch_loss_sum = 0.0;
            const double denom = batch_unmasked > 0 ? static_cast<double>(batch_unmasked) : 1.0;
            for (long idx : batch) {
                const auto& item = dataset[idx];
                const std::vector<T> probs = det.forward(*item.features, /*train=*/true);
                const auto bce = nn::masked_bce_sum(probs.data(), item.labels->labels.data(),
                                                    item.labels->size());
                batch_loss_sum += bce.loss_sum;
                glogits.resize(probs.size());
                nn::masked_bce_grad_logits(probs.data(), item.labels->labels.data(),
                                           item.labels->size(), denom, glogits.data());
                det.backward(glogits);
            }

            const double batch_loss = batch_loss_sum / denom;
            const double grad_norm = det.params().grad_norm();
            // Clamped BCE keeps a diverged loss finite, so non-finite
            // gradients are part of the abort condition.
            if (!std::isfinite(batch_loss) || !std::isfinite(grad_norm)) {
                std::string utts;
                for (long idx : batch) {
                    if (!utts.empty()) utts += ", ";
                    utts += dataset[idx].features->utterance_id;
                }
                throw RuntimeAbort(format_str(
                    "non-finite loss at step %ld (epoch %d): loss %g, grad norm %g; batch [%s]",
                    step, epoch, batch_loss, grad_norm, utts.c_str()));
            }

            if (opt_cfg.grad_clip > 0.0 && grad_norm > opt_cfg.grad_clip) {
                const T scale = static_cast<T>(opt_cfg.grad_clip / grad_norm);
                for (auto& p : det.params().params())
                    for (auto& g : *p.grad) g *= scale;
            }

            opt.step(det.params(), detail::schedule_lr(step, total_steps, warmup_steps,
                                                       opt_cfg.peak_lr));
            epoch_loss_sum += batch_loss_sum;
            epoch_unmasked += batch_unmasked;
        }
        stats.final_epoch_loss = epoch_unmasked > 0 ? epoch_loss_sum / epoch_unmasked : 0.0;
        BS_LOG_DEBUG("epoch %d/%d: loss %.6f", epoch + 1, sched.epochs, stats.final_epoch_loss);
    }
    stats.steps = step;
    stats.train_accuracy = frame_accuracy(det, dataset);
    return stats;
}

template <typename T>
std::vector<std::vector<T>> forward_batch(Detector<T>& det,
                                          const std::vector<const FeatureSequence*>& batch,
                                          bool train) {
    std::vector<std::vector<T>> out;
    out.reserve(batch.size());
    for (const FeatureSequence* fs : batch) out.push_back(det.forward(*fs, train));
    return out;
}

template <typename T>
double frame_accuracy(Detector<T>& det, const std::vector<TrainItem>& dataset) {
    long correct = 0, total = 0;
    for (const auto& item : dataset) {
        const std::vector<T> probs = det.forward(*item.features, /*train=*/false);
        for (long i = 0; i < item.labels->size(); ++i) {
            const Label y = item.labels->labels[i];
            if (y == Label::Mask) continue;
            const bool hyp = probs[i] >= T(0.5);
            correct += hyp == (y == Label::Breath);
            ++total;
        }
    }
    return total > 0 ? static_cast<double>(correct) / total : 0.0;
}

template <typename T>
GradCheckReport grad_check(Detector<T>& det, const FeatureSequence& fs,
                           const LabelSequence& labels, double h) {
    auto loss_of = [&]() {
        const std::vector<T> probs = det.forward(fs, /*train=*/false);
        return nn::masked_bce_loss(probs, labels);
    };

    // Analytic gradient.
    det.params().zero_grad();
    const std::vector<T> probs = det.forward(fs, /*train=*/false);
    const auto bce = nn::masked_bce_sum(probs.data(), labels.labels.data(), labels.size());
    std::vector<T> glogits(probs.size());
    nn::masked_bce_grad_logits(probs.data(), labels.labels.data(), labels.size(),
                               bce.n_unmasked > 0 ? double(bce.n_unmasked) : 1.0, glogits.data());
    det.backward(glogits);

    GradCheckReport report;
    for (auto& p : det.params().params()) {
        auto& val = *p.value;
        auto& grad = *p.grad;
        for (std::size_t i = 0; i < val.size(); ++i) {
            ++report.n_params;
            const T saved = val[i];
            val[i] = saved + static_cast<T>(h);
            const double lp = loss_of();
            val[i] = saved - static_cast<T>(h);
            const double lm = loss_of();
            val[i] = saved;
            const double numeric = (lp - lm) / (2.0 * h);
            const double analytic = static_cast<double>(grad[i]);
            const double rel = std::abs(analytic - numeric) /
                               std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_param = format_str("%s[%zu]", p.name.c_str(), i);
            }
        }
    }
    return report;
}

}  // namespace breathscan
