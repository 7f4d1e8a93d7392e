#include "breathscan/detector.hpp"

#include <omp.h>

#include <cstring>

#include <json.hpp>

#include "detector_impl.hpp"

namespace breathscan {

void DetectorConfig::validate() const {
    if (n_blocks < 1) throw ConfigError("DetectorConfig: n_blocks must be >= 1");
    if (hidden_size < 2 || hidden_size % 2 != 0)
        throw ConfigError("DetectorConfig: hidden_size must be even and >= 2");
    if (n_heads < 1 || hidden_size % n_heads != 0)
        throw ConfigError(format_str("DetectorConfig: hidden_size %d not divisible by n_heads %d",
                                     hidden_size, n_heads));
    if (conv_kernel < 1 || conv_kernel % 2 == 0)
        throw ConfigError("DetectorConfig: conv_kernel must be odd and >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("DetectorConfig: dropout must be in [0, 1)");
    if (n_mels < 1 || subsample_channels < 1 || ffn_expansion < 1 || max_rel_distance < 1)
        throw ConfigError("DetectorConfig: dimensions must be positive");
}

DetectorConfig DetectorConfig::desk() {
    DetectorConfig c;
    c.preset = "desk";
    return c;
}

DetectorConfig DetectorConfig::full() {
    DetectorConfig c;
    c.preset = "full";
    c.n_blocks = 8;
    c.hidden_size = 256;
    c.n_heads = 4;
    c.conv_kernel = 31;
    c.subsample_channels = 256;
    return c;
}

DetectorConfig DetectorConfig::tiny() {
    DetectorConfig c;
    c.preset = "tiny";
    c.n_blocks = 1;
    c.hidden_size = 8;
    c.n_heads = 2;
    c.conv_kernel = 3;
    c.dropout = 0.0;
    c.n_mels = 8;
    c.subsample_channels = 2;
    c.ffn_expansion = 2;
    c.max_rel_distance = 4;
    return c;
}

std::string detector_config_to_json_string(const DetectorConfig& cfg) {
    nlohmann::json j;
    j["preset"] = cfg.preset;
    j["n_blocks"] = cfg.n_blocks;
    j["hidden_size"] = cfg.hidden_size;
    j["n_heads"] = cfg.n_heads;
    j["conv_kernel"] = cfg.conv_kernel;
    j["dropout"] = cfg.dropout;
    j["n_mels"] = cfg.n_mels;
    j["subsample_channels"] = cfg.subsample_channels;
    j["ffn_expansion"] = cfg.ffn_expansion;
    j["max_rel_distance"] = cfg.max_rel_distance;
    j["use_zcr"] = cfg.use_zcr;
    j["use_vms"] = cfg.use_vms;
    return j.dump();
}

DetectorConfig detector_config_from_json_string(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(format_str("bad detector config JSON: %s", e.what()));
    }
    DetectorConfig cfg;
    try {
        cfg.preset = j.value("preset", cfg.preset);
        cfg.n_blocks = j.value("n_blocks", cfg.n_blocks);
        cfg.hidden_size = j.value("hidden_size", cfg.hidden_size);
        cfg.n_heads = j.value("n_heads", cfg.n_heads);
        cfg.conv_kernel = j.value("conv_kernel", cfg.conv_kernel);
        cfg.dropout = j.value("dropout", cfg.dropout);
        cfg.n_mels = j.value("n_mels", cfg.n_mels);
        cfg.subsample_channels = j.value("subsample_channels", cfg.subsample_channels);
        cfg.ffn_expansion = j.value("ffn_expansion", cfg.ffn_expansion);
        cfg.max_rel_distance = j.value("max_rel_distance", cfg.max_rel_distance);
        cfg.use_zcr = j.value("use_zcr", cfg.use_zcr);
        cfg.use_vms = j.value("use_vms", cfg.use_vms);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(format_str("bad detector config field: %s", e.what()));
    }
    cfg.validate();
    return cfg;
}

std::uint64_t DetectorConfig::hash() const {
    const std::string s = detector_config_to_json_string(*this);
    return fnv1a64(s.data(), s.size());
}

template <typename T>
void save_checkpoint(const std::string& path, const Detector<T>& det) {
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw RuntimeAbort("cannot open for writing: " + path);
    std::fwrite("BSCK", 1, 4, f);
    write_u32(f, kCheckpointVersion);
    const std::string cfg_json = detector_config_to_json_string(det.config());
    write_u32(f, static_cast<std::uint32_t>(cfg_json.size()));
    std::fwrite(cfg_json.data(), 1, cfg_json.size(), f);

    const auto& params = det.params().params();
    write_u32(f, static_cast<std::uint32_t>(params.size()));
    std::string manifest = format_str("config_hash %s\n", hex64(det.config().hash()).c_str());
    long total = 0;
    for (const auto& p : params) {
        write_u32(f, static_cast<std::uint32_t>(p.name.size()));
        std::fwrite(p.name.data(), 1, p.name.size(), f);
        write_u32(f, static_cast<std::uint32_t>(p.value->size()));
        std::vector<float> buf(p.value->begin(), p.value->end());
        write_f32_array(f, buf.data(), buf.size());
        manifest += format_str("%s %zu\n", p.name.c_str(), p.value->size());
        total += static_cast<long>(p.value->size());
    }
    manifest += format_str("total_parameters %ld\n", total);
    std::fclose(f);
    write_text_file(path + ".manifest", manifest);
}

template <typename T>
std::unique_ptr<Detector<T>> load_checkpoint(const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw FormatError("cannot open checkpoint: " + path);
    struct Closer {
        FILE* f;
        ~Closer() { std::fclose(f); }
    } closer{f};

    char magic[4];
    if (std::fread(magic, 1, 4, f) != 4 || std::memcmp(magic, "BSCK", 4) != 0)
        throw FormatError("bad checkpoint magic: " + path);
    const std::uint32_t version = read_u32(f, "version");
    if (version != kCheckpointVersion)
        throw FormatError(format_str("unsupported checkpoint version %u: %s", version,
                                     path.c_str()));
    const std::uint32_t cfg_len = read_u32(f, "config length");
    std::string cfg_json(cfg_len, '\0');
    if (std::fread(cfg_json.data(), 1, cfg_len, f) != cfg_len)
        throw FormatError("truncated checkpoint config: " + path);
    const DetectorConfig cfg = detector_config_from_json_string(cfg_json);

    auto det = std::make_unique<Detector<T>>(cfg, 0);
    const auto& params = det->params().params();
    const std::uint32_t n = read_u32(f, "parameter count");
    if (n != params.size())
        throw FormatError(format_str("checkpoint has %u parameter arrays, model expects %zu", n,
                                     params.size()));
    for (const auto& p : params) {
        const std::uint32_t name_len = read_u32(f, "name length");
        std::string name(name_len, '\0');
        if (std::fread(name.data(), 1, name_len, f) != name_len)
            throw FormatError("truncated checkpoint name: " + path);
        if (name != p.name)
            throw FormatError(format_str("checkpoint array '%s' does not match model array '%s'",
                                         name.c_str(), p.name.c_str()));
        const std::uint32_t size = read_u32(f, "array size");
        if (size != p.value->size())
            throw FormatError(format_str("checkpoint array '%s' has %u values, model expects %zu",
                                         name.c_str(), size, p.value->size()));
        std::vector<float> buf(size);
        read_f32_array(f, buf.data(), size, name.c_str());
        std::copy(buf.begin(), buf.end(), p.value->begin());
    }
    return det;
}

template <typename T>
std::uint64_t param_hash(const Detector<T>& det) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : det.params().params()) {
        h = fnv1a64(p.name.data(), p.name.size(), h);
        std::vector<float> buf(p.value->begin(), p.value->end());
        h = fnv1a64(buf.data(), buf.size() * sizeof(float), h);
    }
    return h;
}

Prediction predict(Detector<float>& det, const FeatureSequence& fs) {
    Prediction pred;
    pred.utterance_id = fs.utterance_id;
    pred.probs = det.forward(fs, /*train=*/false);
    return pred;
}

std::vector<Prediction> predict_corpus(const Detector<float>& det,
                                       const std::vector<FeatureSequence>& features) {
    const long n = static_cast<long>(features.size());
    std::vector<Prediction> out(n);
#pragma omp parallel
    {
        // Forward mutates layer caches, so each thread works on its own clone.
        std::unique_ptr<Detector<float>> local = det.clone();
#pragma omp for schedule(dynamic)
        for (long i = 0; i < n; ++i) {
            out[i].utterance_id = features[i].utterance_id;
            out[i].probs = local->forward(features[i], /*train=*/false);
        }
    }
    return out;
}

template class Detector<float>;
template class Detector<double>;
template class AdamW<float>;
template class AdamW<double>;

template TrainStats train_epochs<float>(Detector<float>&, const std::vector<TrainItem>&,
                                        const OptimizerConfig&, const TrainScheduleConfig&,
                                        std::uint64_t);
template TrainStats train_epochs<double>(Detector<double>&, const std::vector<TrainItem>&,
                                         const OptimizerConfig&, const TrainScheduleConfig&,
                                         std::uint64_t);
template double frame_accuracy<float>(Detector<float>&, const std::vector<TrainItem>&);
template double frame_accuracy<double>(Detector<double>&, const std::vector<TrainItem>&);
template std::vector<std::vector<float>> forward_batch<float>(
    Detector<float>&, const std::vector<const FeatureSequence*>&, bool);
template std::vector<std::vector<double>> forward_batch<double>(
    Detector<double>&, const std::vector<const FeatureSequence*>&, bool);
template GradCheckReport grad_check<float>(Detector<float>&, const FeatureSequence&,
                                           const LabelSequence&, double);
template GradCheckReport grad_check<double>(Detector<double>&, const FeatureSequence&,
                                            const LabelSequence&, double);
template void save_checkpoint<float>(const std::string&, const Detector<float>&);
template void save_checkpoint<double>(const std::string&, const Detector<double>&);
template std::unique_ptr<Detector<float>> load_checkpoint<float>(const std::string&);
template std::unique_ptr<Detector<double>> load_checkpoint<double>(const std::string&);
template std::uint64_t param_hash<float>(const Detector<float>&);
template std::uint64_t param_hash<double>(const Detector<double>&);

}  // namespace breathscan
