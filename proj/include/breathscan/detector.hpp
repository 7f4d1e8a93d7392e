#pragma once

#include <memory>
#include <string>
#include <vector>

#include "breathscan/features.hpp"
#include "breathscan/labeling.hpp"
#include "breathscan/layers.hpp"
#include "breathscan/nn.hpp"
#include "breathscan/prediction.hpp"

namespace breathscan {

// Architecture hyper-parameters. `full` mirrors the reference scale
// (8 blocks / hidden 256 / kernel 31); `desk` is the CPU-sized variant the
// test suite trains; `tiny` exists for finite-difference checks.
struct DetectorConfig {
    std::string preset = "desk";
    int n_blocks = 2;
    int hidden_size = 32;
    int n_heads = 4;
    int conv_kernel = 7;
    double dropout = 0.1;
    int n_mels = 128;
    int subsample_channels = 8;
    int ffn_expansion = 4;
    int max_rel_distance = 64;
    bool use_zcr = true;  // ablation switches drop the extra input channels
    bool use_vms = true;

    int input_channels() const { return 1 + (use_zcr ? 1 : 0) + (use_vms ? 1 : 0); }
    void validate() const;
    std::uint64_t hash() const;

    static DetectorConfig desk();
    static DetectorConfig full();
    static DetectorConfig tiny();
};

std::string detector_config_to_json_string(const DetectorConfig& cfg);
DetectorConfig detector_config_from_json_string(const std::string& text);

// Frame-wise breath detector: 2D conv downsampling (stride 2 twice),
// conformer-style context blocks at quarter rate, two stride-2 transposed
// convolutions back to frame rate (cropped right to exactly F), BiLSTM
// decoder and a sigmoid head.
template <typename T>
class Detector {
public:
    Detector(const DetectorConfig& cfg, std::uint64_t init_seed);

    // The registry holds pointers into layer storage, so the detector is
    // pinned in place; use clone() for copies.
    Detector(const Detector&) = delete;
    Detector& operator=(const Detector&) = delete;
    Detector(Detector&&) = delete;
    Detector& operator=(Detector&&) = delete;

    // Parameter-preserving deep copy (used for per-thread inference clones).
    std::unique_ptr<Detector> clone() const;

    // Breath probability per input frame; output length equals fs.n_frames.
    std::vector<T> forward(const FeatureSequence& fs, bool train = false);

    // Backprop from d(loss)/d(logit); accumulates parameter gradients.
    void backward(const std::vector<T>& glogits);

    nn::ParamRegistry<T>& params() { return reg_; }
    const nn::ParamRegistry<T>& params() const { return reg_; }
    const DetectorConfig& config() const { return cfg_; }
    void seed_dropout(std::uint64_t seed) { dropout_rng_ = nn::Rng(seed); }

private:
    void build_input(const FeatureSequence& fs);
    void register_all();

    DetectorConfig cfg_;
    nn::Rng dropout_rng_{0x9e3779b97f4a7c15ULL};
    nn::ParamRegistry<T> reg_;

    nn::Conv2d<T> conv1_, conv2_;
    nn::Relu3<T> conv1_act_, conv2_act_;
    nn::Linear<T> proj_;
    nn::Dropout<T> proj_drop_;
    std::vector<nn::ConformerBlock<T>> blocks_;
    nn::ConvTranspose1d<T> up1_, up2_;
    nn::ReluM<T> up1_act_, up2_act_;
    nn::BiLstm<T> bilstm_;
    nn::Linear<T> head_;

    // per-forward caches
    nn::Tensor3<T> input_;
    long in_frames_ = 0;
    long up_out_len_ = 0;
    long sub_h_ = 0, sub_w_ = 0;
    std::vector<T> probs_;
};

using DetectorF = Detector<float>;
using DetectorD = Detector<double>;

// ---------------------------------------------------------------------------

struct OptimizerConfig {
    double peak_lr = 2e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double grad_clip = 0.0;  // global-norm clip; 0 disables
};

struct TrainScheduleConfig {
    int epochs = 10;
    int batch_size = 64;
    double warmup_frac = 0.1;
};

// Adam with decoupled weight decay. Moments are kept in double regardless of
// the parameter type.
template <typename T>
class AdamW {
public:
    AdamW(const nn::ParamRegistry<T>& reg, const OptimizerConfig& cfg);
    void step(nn::ParamRegistry<T>& reg, double lr);
    long step_count() const { return t_; }

private:
    OptimizerConfig cfg_;
    std::vector<double> m_, v_;
    long t_ = 0;
};

struct TrainItem {
    const FeatureSequence* features = nullptr;
    const LabelSequence* labels = nullptr;
};

struct TrainStats {
    long steps = 0;
    double final_epoch_loss = 0.0;
    double train_accuracy = 0.0;  // frame accuracy at 0.5 over unmasked frames
};

// Bucketed-by-length batching with seeded batch-order shuffling; batch loss
// is the mean BCE over the batch's unmasked frames; linear warmup/decay
// schedule over all steps. Deterministic for a fixed seed when run
// single-threaded. Aborts with diagnostics on NaN loss.
template <typename T>
TrainStats train_epochs(Detector<T>& det, const std::vector<TrainItem>& dataset,
                        const OptimizerConfig& opt_cfg, const TrainScheduleConfig& sched,
                        std::uint64_t seed);

// Fraction of unmasked frames classified correctly at threshold 0.5.
template <typename T>
double frame_accuracy(Detector<T>& det, const std::vector<TrainItem>& dataset);

// Batch forward over sequences of mixed length. Each sequence runs at its
// true length inside the batch container, so padded positions cannot leak
// into real frames; outputs match per-utterance forwards exactly.
template <typename T>
std::vector<std::vector<T>> forward_batch(Detector<T>& det,
                                          const std::vector<const FeatureSequence*>& batch,
                                          bool train = false);

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    long n_params = 0;
};

// Central finite differences over every parameter vs the analytic gradient
// of the masked BCE loss. Intended for double-precision detectors.
template <typename T>
GradCheckReport grad_check(Detector<T>& det, const FeatureSequence& fs,
                           const LabelSequence& labels, double h = 1e-4);

// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Checkpoint: magic "BSCK", version u32, config JSON (u32 length + bytes),
// then layer-path-keyed float32 arrays. A text manifest with parameter
// counts and the config hash is written alongside (<path>.manifest).
template <typename T>
void save_checkpoint(const std::string& path, const Detector<T>& det);

template <typename T>
std::unique_ptr<Detector<T>> load_checkpoint(const std::string& path);

// Hash of the serialized parameter payload; recorded in run history to pin
// the warm-start chain.
template <typename T>
std::uint64_t param_hash(const Detector<T>& det);

Prediction predict(Detector<float>& det, const FeatureSequence& fs);

// Read-only parallel inference: clones the detector per thread and keeps
// output order deterministic.
std::vector<Prediction> predict_corpus(const Detector<float>& det,
                                       const std::vector<FeatureSequence>& features);

}  // namespace breathscan
