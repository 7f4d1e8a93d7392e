#include "breathscan/pipeline_config.hpp"

#include <json.hpp>

#include "breathscan/util.hpp"

namespace breathscan {

namespace {

using nlohmann::json;

json frame_config_json(const FrameConfig& c) {
    return {{"sample_rate", c.sample_rate}, {"window_length", c.window_length},
            {"hop_length", c.hop_length},   {"n_mels", c.n_mels},
            {"fmin", c.fmin},               {"fmax", c.fmax}};
}

void frame_config_load(const json& j, FrameConfig& c) {
    c.sample_rate = j.value("sample_rate", c.sample_rate);
    c.window_length = j.value("window_length", c.window_length);
    c.hop_length = j.value("hop_length", c.hop_length);
    c.n_mels = j.value("n_mels", c.n_mels);
    c.fmin = j.value("fmin", c.fmin);
    c.fmax = j.value("fmax", c.fmax);
}

}  // namespace

void PipelineConfig::validate() const {
    rule_pipeline.validate();
    model_pipeline.validate();
    rule_thresholds.validate();
    detector.validate();
    if (detector.n_mels != model_pipeline.n_mels)
        throw ConfigError(format_str("detector n_mels %d != model pipeline n_mels %d",
                                     detector.n_mels, model_pipeline.n_mels));
    if (initial_target_precision <= 0.0 || initial_target_precision > 1.0)
        throw ConfigError("initial_target_precision must be in (0, 1]");
    if (precision_decrement < 0.0) throw ConfigError("precision_decrement must be >= 0");
    if (precision_floor < 0.0 || precision_floor > initial_target_precision)
        throw ConfigError("precision_floor must be in [0, initial_target_precision]");
    if (max_iterations < 0) throw ConfigError("max_iterations must be >= 0");
    if (detect_threshold <= 0.0 || detect_threshold >= 1.0)
        throw ConfigError("detect_threshold must be in (0, 1)");
    if (detect_min_duration < 0.0) throw ConfigError("detect_min_duration must be >= 0");
    if (jobs < 0) throw ConfigError("jobs must be >= 0");
}

std::string pipeline_config_to_json_string(const PipelineConfig& cfg) {
    json j;
    j["rule_pipeline"] = frame_config_json(cfg.rule_pipeline);
    j["model_pipeline"] = frame_config_json(cfg.model_pipeline);
    j["rule_thresholds"] = {{"min_breath_duration", cfg.rule_thresholds.min_breath_duration},
                            {"breath_max_vms_gt", cfg.rule_thresholds.breath_max_vms_gt},
                            {"breath_max_zcr_gt", cfg.rule_thresholds.breath_max_zcr_gt},
                            {"breath_na_vms_gt", cfg.rule_thresholds.breath_na_vms_gt},
                            {"nonbreath_max_vms_lt", cfg.rule_thresholds.nonbreath_max_vms_lt},
                            {"nonbreath_max_zcr_lt", cfg.rule_thresholds.nonbreath_max_zcr_lt}};
    j["detector"] = nlohmann::json::parse(detector_config_to_json_string(cfg.detector));
    j["optimizer"] = {{"peak_lr", cfg.optimizer.peak_lr},
                      {"beta1", cfg.optimizer.beta1},
                      {"beta2", cfg.optimizer.beta2},
                      {"eps", cfg.optimizer.eps},
                      {"weight_decay", cfg.optimizer.weight_decay},
                      {"grad_clip", cfg.optimizer.grad_clip}};
    j["schedule"] = {{"epochs", cfg.schedule.epochs},
                     {"batch_size", cfg.schedule.batch_size},
                     {"warmup_frac", cfg.schedule.warmup_frac}};
    j["self_training"] = {{"initial_target_precision", cfg.initial_target_precision},
                          {"precision_decrement", cfg.precision_decrement},
                          {"precision_floor", cfg.precision_floor},
                          {"max_iterations", cfg.max_iterations},
                          {"accumulate_pseudo", cfg.accumulate_pseudo},
                          {"disable_pseudo_labels", cfg.disable_pseudo_labels},
                          {"use_nonbreath_set", cfg.use_nonbreath_set}};
    j["paths"] = {{"corpus_dir", cfg.corpus_dir},
                  {"pause_tsv", cfg.pause_tsv},
                  {"gold_tsv", cfg.gold_tsv},
                  {"run_dir", cfg.run_dir}};
    j["detect"] = {{"threshold", cfg.detect_threshold},
                   {"min_duration", cfg.detect_min_duration}};
    j["seed"] = cfg.seed;
    j["jobs"] = cfg.jobs;
    return j.dump(2) + "\n";
}

PipelineConfig pipeline_config_from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(format_str("bad pipeline config JSON: %s", e.what()));
    }
    PipelineConfig cfg;
    try {
        if (j.contains("rule_pipeline")) frame_config_load(j["rule_pipeline"], cfg.rule_pipeline);
        if (j.contains("model_pipeline"))
            frame_config_load(j["model_pipeline"], cfg.model_pipeline);
        if (j.contains("rule_thresholds")) {
            const json& t = j["rule_thresholds"];
            auto& th = cfg.rule_thresholds;
            th.min_breath_duration = t.value("min_breath_duration", th.min_breath_duration);
            th.breath_max_vms_gt = t.value("breath_max_vms_gt", th.breath_max_vms_gt);
            th.breath_max_zcr_gt = t.value("breath_max_zcr_gt", th.breath_max_zcr_gt);
            th.breath_na_vms_gt = t.value("breath_na_vms_gt", th.breath_na_vms_gt);
            th.nonbreath_max_vms_lt = t.value("nonbreath_max_vms_lt", th.nonbreath_max_vms_lt);
            th.nonbreath_max_zcr_lt = t.value("nonbreath_max_zcr_lt", th.nonbreath_max_zcr_lt);
        }
        if (j.contains("detector"))
            cfg.detector = detector_config_from_json_string(j["detector"].dump());
        if (j.contains("optimizer")) {
            const json& o = j["optimizer"];
            cfg.optimizer.peak_lr = o.value("peak_lr", cfg.optimizer.peak_lr);
            cfg.optimizer.beta1 = o.value("beta1", cfg.optimizer.beta1);
            cfg.optimizer.beta2 = o.value("beta2", cfg.optimizer.beta2);
            cfg.optimizer.eps = o.value("eps", cfg.optimizer.eps);
            cfg.optimizer.weight_decay = o.value("weight_decay", cfg.optimizer.weight_decay);
            cfg.optimizer.grad_clip = o.value("grad_clip", cfg.optimizer.grad_clip);
        }
        if (j.contains("schedule")) {
            const json& s = j["schedule"];
            cfg.schedule.epochs = s.value("epochs", cfg.schedule.epochs);
            cfg.schedule.batch_size = s.value("batch_size", cfg.schedule.batch_size);
            cfg.schedule.warmup_frac = s.value("warmup_frac", cfg.schedule.warmup_frac);
        }
        if (j.contains("self_training")) {
            const json& s = j["self_training"];
            cfg.initial_target_precision =
                s.value("initial_target_precision", cfg.initial_target_precision);
            cfg.precision_decrement = s.value("precision_decrement", cfg.precision_decrement);
            cfg.precision_floor = s.value("precision_floor", cfg.precision_floor);
            cfg.max_iterations = s.value("max_iterations", cfg.max_iterations);
            cfg.accumulate_pseudo = s.value("accumulate_pseudo", cfg.accumulate_pseudo);
            cfg.disable_pseudo_labels =
                s.value("disable_pseudo_labels", cfg.disable_pseudo_labels);
            cfg.use_nonbreath_set = s.value("use_nonbreath_set", cfg.use_nonbreath_set);
        }
        if (j.contains("paths")) {
            const json& p = j["paths"];
            cfg.corpus_dir = p.value("corpus_dir", cfg.corpus_dir);
            cfg.pause_tsv = p.value("pause_tsv", cfg.pause_tsv);
            cfg.gold_tsv = p.value("gold_tsv", cfg.gold_tsv);
            cfg.run_dir = p.value("run_dir", cfg.run_dir);
        }
        if (j.contains("detect")) {
            const json& d = j["detect"];
            cfg.detect_threshold = d.value("threshold", cfg.detect_threshold);
            cfg.detect_min_duration = d.value("min_duration", cfg.detect_min_duration);
        }
        cfg.seed = j.value("seed", cfg.seed);
        cfg.jobs = j.value("jobs", cfg.jobs);
    } catch (const json::exception& e) {
        throw ConfigError(format_str("bad pipeline config field: %s", e.what()));
    }
    return cfg;
}

PipelineConfig load_pipeline_config(const std::string& path) {
    try {
        return pipeline_config_from_json_string(read_text_file(path));
    } catch (const FormatError& e) {
        throw ConfigError(std::string("cannot read config: ") + e.what());
    }
}

}  // namespace breathscan
