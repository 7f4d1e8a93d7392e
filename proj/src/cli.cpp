#include "breathscan/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "breathscan/audio_io.hpp"
#include "breathscan/detector.hpp"
#include "breathscan/evaluation.hpp"
#include "breathscan/kernels.hpp"
#include "breathscan/pipeline_config.hpp"
#include "breathscan/rule_annotator.hpp"
#include "breathscan/self_training.hpp"
#include "breathscan/synth.hpp"
#include "breathscan/util.hpp"

namespace breathscan {

namespace {

namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitPartial = 2;
constexpr int kExitAbort = 3;

std::vector<std::string> list_wavs(const std::string& dir) {
    if (!fs::is_directory(dir)) throw ConfigError("not a directory: " + dir);
    std::vector<std::string> paths;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".wav")
            paths.push_back(entry.path().string());
    }
    std::sort(paths.begin(), paths.end());
    return paths;
}

void require_path(const std::string& path, const char* what) {
    if (path.empty()) throw ConfigError(format_str("%s is not configured", what));
    if (!fs::exists(path)) throw ConfigError(format_str("%s does not exist: %s", what, path.c_str()));
}

AudioClip load_at_rate(const std::string& path, int rate) {
    return resample(load_wav(path), rate);
}

// Loaded-and-resampled clips for every wav in a directory, with failures
// collected instead of aborting the run.
struct LoadedCorpus {
    std::vector<AudioClip> clips;
    std::vector<std::string> failures;
};

LoadedCorpus load_corpus(const std::string& dir, int rate,
                         const std::set<std::string>* only = nullptr) {
    const std::vector<std::string> paths = list_wavs(dir);
    std::vector<AudioClip> slots(paths.size());
    std::vector<std::string> errors(paths.size());
    std::vector<std::uint8_t> keep(paths.size(), 0);
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < static_cast<long>(paths.size()); ++i) {
        const std::string stem = fs::path(paths[i]).stem().string();
        if (only && !only->count(stem)) continue;
        try {
            slots[i] = load_at_rate(paths[i], rate);
            keep[i] = 1;
        } catch (const Error& e) {
            errors[i] = e.what();
        }
    }
    LoadedCorpus out;
    for (std::size_t i = 0; i < paths.size(); ++i) {
        if (keep[i])
            out.clips.push_back(std::move(slots[i]));
        else if (!errors[i].empty())
            out.failures.push_back(paths[i] + ": " + errors[i]);
    }
    for (const auto& f : out.failures) BS_LOG_WARN("skipping %s", f.c_str());
    return out;
}

std::string resolved_plan(const PipelineConfig& cfg, const std::string& action) {
    return format_str("dry-run: would %s\n", action.c_str()) + pipeline_config_to_json_string(cfg);
}

// ---------------------------------------------------------------------------

int cmd_features(const PipelineConfig& cfg, const std::string& in_dir, const std::string& out_dir,
                 const std::string& pipeline_sel, bool dry_run) {
    const FrameConfig fc = pipeline_sel == "rule" ? cfg.rule_pipeline : cfg.model_pipeline;
    if (dry_run) {
        std::fputs(resolved_plan(cfg, format_str("extract %s-pipeline features from %s into %s",
                                                 pipeline_sel.c_str(), in_dir.c_str(),
                                                 out_dir.c_str()))
                       .c_str(),
                   stdout);
        return kExitOk;
    }
    require_path(in_dir, "input directory");
    const std::vector<std::string> paths = list_wavs(in_dir);
    if (paths.empty()) {
        BS_LOG_INFO("0 files in %s; nothing to do", in_dir.c_str());
        return kExitOk;
    }
    fs::create_directories(out_dir);
    const FeatureExtractor extractor(fc);
    std::vector<std::string> errors(paths.size());
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < static_cast<long>(paths.size()); ++i) {
        try {
            const AudioClip clip = load_at_rate(paths[i], fc.sample_rate);
            const FeatureSequence fseq = extractor.extract(clip);
            write_feature_dump(
                (fs::path(out_dir) / (clip.utterance_id + ".bsft")).string(), fseq);
        } catch (const Error& e) {
            errors[i] = e.what();
        }
    }
    long failed = 0;
    for (std::size_t i = 0; i < paths.size(); ++i) {
        if (!errors[i].empty()) {
            ++failed;
            BS_LOG_ERROR("%s: %s", paths[i].c_str(), errors[i].c_str());
        }
    }
    BS_LOG_INFO("features: %zu file(s), %ld failed", paths.size(), failed);
    return failed ? kExitPartial : kExitOk;
}

int cmd_annotate(const PipelineConfig& cfg, const std::string& out_dir, bool dry_run) {
    if (out_dir.empty())
        throw ConfigError("annotate needs an output directory (--out or a configured run_dir)");
    if (dry_run) {
        std::fputs(resolved_plan(cfg, format_str("annotate %s with pauses from %s into %s",
                                                 cfg.corpus_dir.c_str(), cfg.pause_tsv.c_str(),
                                                 out_dir.c_str()))
                       .c_str(),
                   stdout);
        return kExitOk;
    }
    require_path(cfg.corpus_dir, "corpus_dir");
    require_path(cfg.pause_tsv, "pause_tsv");

    const auto pauses = parse_pause_file(cfg.pause_tsv);
    GoldSpans gold;
    if (!cfg.gold_tsv.empty()) {
        require_path(cfg.gold_tsv, "gold_tsv");
        gold = read_annotation_tsv(cfg.gold_tsv);
    }

    LoadedCorpus corpus = load_corpus(cfg.corpus_dir, cfg.rule_pipeline.sample_rate);
    const AnnotateResult result = annotate_corpus(corpus.clips, pauses, cfg.rule_thresholds,
                                                  cfg.rule_pipeline,
                                                  gold.empty() ? nullptr : &gold);

    fs::create_directories(out_dir);
    write_annotation_tsv((fs::path(out_dir) / "annotation.tsv").string(), result.annotations);

    const AnnotationReport& rep = result.report;
    nlohmann::json summary;
    summary["utterances"] = rep.n_utterances;
    summary["failed_utterances"] = rep.n_failed + static_cast<long>(corpus.failures.size());
    summary["pauses"] = rep.n_pauses;
    summary["breath"] = rep.n_breath;
    summary["nonbreath"] = rep.n_nonbreath;
    summary["unclassified"] = rep.n_unclassified;
    if (rep.has_gold) {
        summary["pause_level"] = {
            {"breath_precision", rep.breath_pauses.precision()},
            {"breath_recall", rep.breath_pauses.recall()},
            {"nonbreath_precision", rep.nonbreath_pauses.precision()},
            {"nonbreath_recall", rep.nonbreath_pauses.recall()}};
        summary["frame_level"] = {
            {"breath_precision", rep.breath_frames.precision()},
            {"breath_recall", rep.breath_frames.recall()},
            {"nonbreath_precision", rep.nonbreath_frames.precision()},
            {"nonbreath_recall", rep.nonbreath_frames.recall()}};
    }
    std::string report_lines = summary.dump() + "\n";
    for (const auto& f : rep.failures)
        report_lines += nlohmann::json{{"failed_utterance", f}}.dump() + "\n";
    for (const auto& f : corpus.failures)
        report_lines += nlohmann::json{{"failed_file", f}}.dump() + "\n";
    write_text_file((fs::path(out_dir) / "report.jsonl").string(), report_lines);

    BS_LOG_INFO("annotate: %ld pauses -> %ld breath, %ld non-breath, %ld unclassified",
                rep.n_pauses, rep.n_breath, rep.n_nonbreath, rep.n_unclassified);
    return (rep.n_failed > 0 || !corpus.failures.empty()) ? kExitPartial : kExitOk;
}

// Validation utterances are the ones named in the gold TSV; everything else
// in the corpus trains.
struct AssembledData {
    std::vector<SelfTrainItem> train;
    std::vector<ValidationItem> validation;
    std::vector<std::string> failures;
};

AssembledData assemble_selftrain_data(const PipelineConfig& cfg) {
    require_path(cfg.corpus_dir, "corpus_dir");
    require_path(cfg.pause_tsv, "pause_tsv");
    require_path(cfg.gold_tsv, "gold_tsv");

    const auto pauses = parse_pause_file(cfg.pause_tsv);
    const GoldSpans gold = read_annotation_tsv(cfg.gold_tsv);

    LoadedCorpus rule_corpus = load_corpus(cfg.corpus_dir, cfg.rule_pipeline.sample_rate);
    AssembledData out;
    out.failures = rule_corpus.failures;

    std::vector<AudioClip> train_clips;
    for (auto& clip : rule_corpus.clips)
        if (!gold.count(clip.utterance_id)) train_clips.push_back(std::move(clip));

    const AnnotateResult annotated =
        annotate_corpus(train_clips, pauses, cfg.rule_thresholds, cfg.rule_pipeline, nullptr);

    const FeatureExtractor model_extractor(cfg.model_pipeline);
    const std::vector<std::string> wav_paths = list_wavs(cfg.corpus_dir);
    std::map<std::string, std::string> path_of;
    for (const auto& p : wav_paths) path_of[fs::path(p).stem().string()] = p;

    // Training items: model-clock features + projected rule sets.
    for (const auto& ann : annotated.annotations) {
        try {
            const AudioClip clip = load_at_rate(path_of.at(ann.utterance_id),
                                                cfg.model_pipeline.sample_rate);
            SelfTrainItem item;
            item.features = model_extractor.extract(clip);
            item.rule_sets = project_frame_sets(ann, cfg.model_pipeline, item.features.n_frames);
            if (!cfg.use_nonbreath_set) item.rule_sets.nonbreath.clear();
            out.train.push_back(std::move(item));
        } catch (const Error& e) {
            out.failures.push_back(ann.utterance_id + ": " + e.what());
            BS_LOG_WARN("selftrain: skipping train utterance %s (%s)", ann.utterance_id.c_str(),
                        e.what());
        }
    }

    for (const auto& [utt, spans] : gold) {
        try {
            auto pit = path_of.find(utt);
            if (pit == path_of.end())
                throw ValidationError("gold utterance has no wav in corpus_dir");
            const AudioClip clip = load_at_rate(pit->second, cfg.model_pipeline.sample_rate);
            ValidationItem item;
            item.features = model_extractor.extract(clip);
            auto pvit = pauses.find(utt);
            const std::vector<PauseInterval> utt_pauses =
                pvit == pauses.end() ? std::vector<PauseInterval>{} : pvit->second;
            item.gold = build_gold_labels(utt_pauses, spans, cfg.model_pipeline,
                                          item.features.n_frames, utt);
            for (const auto& pv : utt_pauses) {
                const FrameRange r = frames_of_pause(pv, cfg.model_pipeline,
                                                     item.features.n_frames);
                for (long f = r.begin; f < r.end; ++f) item.pause_frames.push_back(f);
            }
            out.validation.push_back(std::move(item));
        } catch (const Error& e) {
            out.failures.push_back(utt + ": " + e.what());
            BS_LOG_WARN("selftrain: skipping validation utterance %s (%s)", utt.c_str(), e.what());
        }
    }
    return out;
}

int cmd_selftrain(const PipelineConfig& cfg, bool dry_run) {
    if (dry_run) {
        std::fputs(resolved_plan(cfg, format_str("run self-training on %s into %s",
                                                 cfg.corpus_dir.c_str(), cfg.run_dir.c_str()))
                       .c_str(),
                   stdout);
        return kExitOk;
    }
    if (cfg.run_dir.empty()) throw ConfigError("run_dir is not configured");

    AssembledData data = assemble_selftrain_data(cfg);
    if (data.train.empty()) throw ConfigError("no training utterances after assembly");
    if (data.validation.empty()) throw ConfigError("no validation utterances (gold_tsv empty?)");

    fs::create_directories(cfg.run_dir);
    write_text_file((fs::path(cfg.run_dir) / "config.json").string(),
                    pipeline_config_to_json_string(cfg));

    SelfTrainConfig st;
    st.detector = cfg.detector;
    st.optimizer = cfg.optimizer;
    st.schedule = cfg.schedule;
    st.initial_target_precision = cfg.initial_target_precision;
    st.precision_decrement = cfg.precision_decrement;
    st.precision_floor = cfg.precision_floor;
    st.max_iterations = cfg.max_iterations;
    st.accumulate_pseudo = cfg.accumulate_pseudo;
    st.disable_pseudo_labels = cfg.disable_pseudo_labels;
    st.seed = cfg.seed;
    st.run_dir = cfg.run_dir;

    const SelfTrainResult result = run_self_training(data.train, data.validation, st);
    save_checkpoint((fs::path(cfg.run_dir) / "best.bsck").string(), *result.detector);
    BS_LOG_INFO("self-training finished: output iteration %d, best checkpoint %s/best.bsck",
                result.output_iteration, cfg.run_dir.c_str());
    return data.failures.empty() ? kExitOk : kExitPartial;
}

int cmd_detect(const PipelineConfig& cfg, const std::string& checkpoint, const std::string& input,
               const std::string& out_dir, bool dry_run) {
    if (dry_run) {
        std::fputs(resolved_plan(cfg, format_str("detect breath in %s with %s into %s",
                                                 input.c_str(), checkpoint.c_str(),
                                                 out_dir.c_str()))
                       .c_str(),
                   stdout);
        return kExitOk;
    }
    require_path(checkpoint, "checkpoint");
    require_path(input, "input");

    const auto det = load_checkpoint<float>(checkpoint);
    if (det->config().n_mels != cfg.model_pipeline.n_mels)
        throw ConfigError(format_str("checkpoint expects %d mel bins, model pipeline has %d",
                                     det->config().n_mels, cfg.model_pipeline.n_mels));

    std::vector<std::string> paths;
    if (fs::is_directory(input))
        paths = list_wavs(input);
    else
        paths.push_back(input);
    if (paths.empty()) {
        BS_LOG_INFO("0 files in %s; nothing to do", input.c_str());
        return kExitOk;
    }
    fs::create_directories(out_dir);

    const FeatureExtractor extractor(cfg.model_pipeline);
    std::vector<FeatureSequence> features;
    std::vector<std::string> failures;
    for (const auto& p : paths) {
        try {
            features.push_back(extractor.extract(load_at_rate(p, cfg.model_pipeline.sample_rate)));
        } catch (const Error& e) {
            failures.push_back(p + ": " + e.what());
            BS_LOG_ERROR("%s: %s", p.c_str(), e.what());
        }
    }

    const std::vector<Prediction> preds = predict_corpus(*det, features);

    const double hop_sec = cfg.model_pipeline.hop_sec();
    std::string intervals = "# utterance_id\tstart\tend\n";
    for (const auto& pred : preds) {
        std::string probs_tsv = "# frame\tprob\n";
        for (long i = 0; i < pred.size(); ++i)
            probs_tsv += format_str("%ld\t%s\n", i, format_double(pred.probs[i]).c_str());
        write_text_file((fs::path(out_dir) / (pred.utterance_id + ".probs.tsv")).string(),
                        probs_tsv);

        for (const BreathInterval& iv :
             merge_breath_intervals(pred.probs, cfg.detect_threshold, hop_sec,
                                    cfg.detect_min_duration))
            intervals += format_str("%s\t%s\t%s\n", pred.utterance_id.c_str(),
                                    format_double(iv.start).c_str(),
                                    format_double(iv.end).c_str());
    }
    write_text_file((fs::path(out_dir) / "intervals.tsv").string(), intervals);
    BS_LOG_INFO("detect: %zu utterance(s), %zu failed", preds.size(), failures.size());
    return failures.empty() ? kExitOk : kExitPartial;
}

int cmd_eval(const PipelineConfig& cfg, const std::string& checkpoint, const std::string& out_path,
             double at_threshold, bool macro, bool dry_run) {
    if (dry_run) {
        std::fputs(resolved_plan(cfg, format_str("evaluate %s against %s", checkpoint.c_str(),
                                                 cfg.gold_tsv.c_str()))
                       .c_str(),
                   stdout);
        return kExitOk;
    }
    require_path(checkpoint, "checkpoint");
    require_path(cfg.corpus_dir, "corpus_dir");
    require_path(cfg.pause_tsv, "pause_tsv");
    require_path(cfg.gold_tsv, "gold_tsv");

    const auto det = load_checkpoint<float>(checkpoint);
    const auto pauses = parse_pause_file(cfg.pause_tsv);
    const GoldSpans gold_spans = read_annotation_tsv(cfg.gold_tsv);

    std::set<std::string> wanted;
    for (const auto& [utt, spans] : gold_spans) wanted.insert(utt);
    LoadedCorpus corpus = load_corpus(cfg.corpus_dir, cfg.model_pipeline.sample_rate, &wanted);

    const FeatureExtractor extractor(cfg.model_pipeline);
    std::vector<FeatureSequence> features;
    for (const auto& clip : corpus.clips) features.push_back(extractor.extract(clip));

    std::map<std::string, LabelSequence> gold;
    for (const auto& fseq : features) {
        auto pit = pauses.find(fseq.utterance_id);
        const std::vector<PauseInterval> utt_pauses =
            pit == pauses.end() ? std::vector<PauseInterval>{} : pit->second;
        gold.emplace(fseq.utterance_id,
                     build_gold_labels(utt_pauses, gold_spans.at(fseq.utterance_id),
                                       cfg.model_pipeline, fseq.n_frames, fseq.utterance_id));
    }

    const std::vector<Prediction> preds = predict_corpus(*det, features);
    const DetectionMetrics sweep = sweep_threshold(preds, gold);

    auto to_json = [](const DetectionMetrics& m) {
        nlohmann::json j;
        j["iou"] = m.iou;
        j["precision"] = m.precision;
        j["recall"] = m.recall;
        j["threshold"] = m.threshold;
        j["tp"] = m.tp;
        j["fp"] = m.fp;
        j["fn"] = m.fn;
        j["iou_flagged"] = m.iou_flagged;
        j["precision_flagged"] = m.precision_flagged;
        j["recall_flagged"] = m.recall_flagged;
        return j;
    };

    nlohmann::json out;
    out["averaging"] = "frame-micro";
    out["utterances"] = preds.size();
    out["sweep"] = to_json(sweep);
    if (at_threshold > 0.0) out["at_threshold"] = to_json(metrics_at(preds, gold, at_threshold));
    if (macro) out["macro_at_sweep_threshold"] = to_json(macro_metrics_at(preds, gold, sweep.threshold));

    const std::string text = out.dump(2) + "\n";
    if (out_path.empty() || out_path == "-") {
        std::fputs(text.c_str(), stdout);
    } else {
        fs::create_directories(fs::path(out_path).parent_path().empty()
                                   ? fs::path(".")
                                   : fs::path(out_path).parent_path());
        write_text_file(out_path, text);
    }
    BS_LOG_INFO("eval: IoU %.4f precision %.4f recall %.4f at threshold %.4f", sweep.iou,
                sweep.precision, sweep.recall, sweep.threshold);
    return corpus.failures.empty() ? kExitOk : kExitPartial;
}

int cmd_calibrate(const PipelineConfig& cfg, double target_precision, bool dry_run) {
    if (dry_run) {
        std::fputs(resolved_plan(cfg, format_str("calibrate rule thresholds on %s at precision %g",
                                                 cfg.gold_tsv.c_str(), target_precision))
                       .c_str(),
                   stdout);
        return kExitOk;
    }
    require_path(cfg.corpus_dir, "corpus_dir");
    require_path(cfg.pause_tsv, "pause_tsv");
    require_path(cfg.gold_tsv, "gold_tsv");

    const auto pauses = parse_pause_file(cfg.pause_tsv);
    const GoldSpans gold = read_annotation_tsv(cfg.gold_tsv);
    std::set<std::string> wanted;
    for (const auto& [utt, spans] : gold) wanted.insert(utt);
    LoadedCorpus corpus = load_corpus(cfg.corpus_dir, cfg.rule_pipeline.sample_rate, &wanted);

    const FeatureExtractor extractor(cfg.rule_pipeline);
    std::vector<std::pair<PauseStats, bool>> labeled;
    for (const auto& clip : corpus.clips) {
        auto pit = pauses.find(clip.utterance_id);
        if (pit == pauses.end()) continue;
        const FeatureSequence fseq = extractor.extract(clip);
        const auto& spans = gold.at(clip.utterance_id);
        for (const auto& pv : pit->second) {
            bool is_breath = false;
            for (const auto& s : spans)
                if (s.cls == PauseClass::Breath && s.interval.start < pv.end &&
                    pv.start < s.interval.end)
                    is_breath = true;
            labeled.emplace_back(pause_stats(fseq, pv), is_breath);
        }
    }

    const RuleThresholds th =
        calibrate_rule_thresholds(labeled, target_precision, cfg.rule_thresholds);
    nlohmann::json j;
    j["rule_thresholds"] = {{"min_breath_duration", th.min_breath_duration},
                            {"breath_max_vms_gt", th.breath_max_vms_gt},
                            {"breath_max_zcr_gt", th.breath_max_zcr_gt},
                            {"breath_na_vms_gt", th.breath_na_vms_gt},
                            {"nonbreath_max_vms_lt", th.nonbreath_max_vms_lt},
                            {"nonbreath_max_zcr_lt", th.nonbreath_max_zcr_lt}};
    std::fputs((j.dump(2) + "\n").c_str(), stdout);
    return kExitOk;
}

int cmd_synth(const std::string& out_dir, SynthConfig scfg, bool dry_run) {
    if (dry_run) {
        std::printf("dry-run: would write %d synthetic utterances into %s\n", scfg.n_utterances,
                    out_dir.c_str());
        return kExitOk;
    }
    const auto corpus = synth_corpus(scfg);
    write_synth_corpus(out_dir, corpus);
    BS_LOG_INFO("synth: wrote %d utterances to %s", scfg.n_utterances, out_dir.c_str());
    return kExitOk;
}

std::string find_config_arg(int argc, const char* const* argv) {
    for (int i = 1; i < argc - 1; ++i) {
        const std::string a = argv[i];
        if (a == "--config" || a == "-c") return argv[i + 1];
        if (a.rfind("--config=", 0) == 0) return a.substr(9);
    }
    return {};
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    PipelineConfig cfg;
    try {
        const std::string config_path = find_config_arg(argc, argv);
        if (!config_path.empty()) cfg = load_pipeline_config(config_path);
    } catch (const Error& e) {
        BS_LOG_ERROR("%s", e.what());
        return kExitConfig;
    }

    CLI::App app{"breathscan: frame-wise breath detection in speech"};
    app.require_subcommand(1);

    std::string config_path;
    bool dry_run = false;
    app.add_option("-c,--config", config_path, "pipeline config JSON (flags override it)");
    app.add_flag("--dry-run", dry_run, "validate config and print the plan without writing");
    app.add_option("--jobs", cfg.jobs, "worker threads for per-utterance parallelism");
    app.add_option("--seed", cfg.seed, "run seed");
    app.add_option("--corpus-dir", cfg.corpus_dir, "wav directory");
    app.add_option("--pause-tsv", cfg.pause_tsv, "forced-alignment pause TSV");
    app.add_option("--gold-tsv", cfg.gold_tsv, "gold annotation TSV (defines validation/eval set)");
    app.add_option("--run-dir", cfg.run_dir, "run directory for artifacts");

    // Shared options may appear after the subcommand name; let unmatched
    // subcommand arguments fall through to the parent parser.
    auto add_subcommand = [&](const char* name, const char* desc) {
        CLI::App* sc = app.add_subcommand(name, desc);
        sc->fallthrough();
        return sc;
    };

    // features
    auto* sc_features = add_subcommand("features", "extract and dump acoustic features");
    std::string feat_in, feat_out, feat_pipeline = "model";
    sc_features->add_option("--in", feat_in, "input wav directory")->required();
    sc_features->add_option("--out", feat_out, "output directory for .bsft dumps")->required();
    sc_features->add_option("--pipeline", feat_pipeline, "model|rule frame clock")
        ->check(CLI::IsMember({"model", "rule"}));

    // annotate
    auto* sc_annotate = add_subcommand("annotate", "rule-based pause classification");
    std::string annotate_out;
    sc_annotate->add_option("--out", annotate_out, "output directory (default: run_dir)");

    // selftrain
    auto* sc_selftrain = add_subcommand("selftrain", "full self-training loop");
    sc_selftrain->add_option("--epochs", cfg.schedule.epochs, "epochs per iteration");
    sc_selftrain->add_option("--batch-size", cfg.schedule.batch_size, "training batch size");
    sc_selftrain->add_option("--peak-lr", cfg.optimizer.peak_lr, "peak learning rate");
    sc_selftrain->add_option("--max-iterations", cfg.max_iterations, "self-training iterations");
    sc_selftrain->add_option("--preset", cfg.detector.preset, "detector preset (desk|full)")
        ->check(CLI::IsMember({"desk", "full"}));
    bool no_zcr = false, no_vms = false, no_nonbreath = false, no_pseudo = false;
    sc_selftrain->add_flag("--no-zcr", no_zcr, "ablation: drop the ZCR input channel");
    sc_selftrain->add_flag("--no-vms", no_vms, "ablation: drop the VMS input channel");
    sc_selftrain->add_flag("--no-nonbreath-set", no_nonbreath,
                           "ablation: train without the rule non-breath set");
    sc_selftrain->add_flag("--no-pseudo-labels", no_pseudo,
                           "ablation: iterate without pseudo-labeling");
    sc_selftrain->add_flag("--accumulate-pseudo", cfg.accumulate_pseudo,
                           "carry pseudo-labels across iterations");

    // detect
    auto* sc_detect = add_subcommand("detect", "run inference and emit breath intervals");
    std::string det_ckpt, det_in, det_out;
    sc_detect->add_option("--checkpoint", det_ckpt, "detector checkpoint (.bsck)")->required();
    sc_detect->add_option("--in", det_in, "wav file or directory")->required();
    sc_detect->add_option("--out", det_out, "output directory")->required();
    sc_detect->add_option("--threshold", cfg.detect_threshold, "probability threshold");
    sc_detect->add_option("--min-dur", cfg.detect_min_duration,
                          "drop intervals shorter than this many seconds");

    // eval
    auto* sc_eval = add_subcommand("eval", "threshold sweep + metrics against gold labels");
    std::string eval_ckpt, eval_out;
    double eval_at_threshold = 0.0;
    bool eval_macro = false;
    sc_eval->add_option("--checkpoint", eval_ckpt, "detector checkpoint (.bsck)")->required();
    sc_eval->add_option("--out", eval_out, "metrics.json path ('-' for stdout)");
    sc_eval->add_option("--at-threshold", eval_at_threshold,
                        "also report metrics at this fixed threshold");
    sc_eval->add_flag("--macro", eval_macro, "include per-utterance macro averages");

    // calibrate
    auto* sc_calibrate =
        add_subcommand("calibrate", "sweep rule thresholds against labeled pauses");
    double calib_target = 0.98;
    sc_calibrate->add_option("--target-precision", calib_target, "breath precision target");

    // synth
    auto* sc_synth = add_subcommand("synth", "generate a synthetic demo corpus");
    std::string synth_out;
    SynthConfig scfg;
    sc_synth->add_option("--out", synth_out, "output directory")->required();
    sc_synth->add_option("--utterances", scfg.n_utterances, "number of utterances");
    sc_synth->add_option("--synth-seed", scfg.seed, "generator seed");
    sc_synth->add_option("--bg-noise", scfg.bg_noise_amp, "background noise amplitude");
    sc_synth->add_option("--clicks", scfg.click_fraction, "click fraction among non-breath pauses");

    try {
        app.parse(argc, const_cast<char**>(argv));
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        cfg.detector.use_zcr = cfg.detector.use_zcr && !no_zcr;
        cfg.detector.use_vms = cfg.detector.use_vms && !no_vms;
        cfg.use_nonbreath_set = cfg.use_nonbreath_set && !no_nonbreath;
        cfg.disable_pseudo_labels = cfg.disable_pseudo_labels || no_pseudo;
        if (cfg.detector.preset == "full" && !app.got_subcommand(sc_synth)) {
            DetectorConfig preset = DetectorConfig::full();
            preset.dropout = cfg.detector.dropout;
            preset.n_mels = cfg.detector.n_mels;
            preset.use_zcr = cfg.detector.use_zcr;
            preset.use_vms = cfg.detector.use_vms;
            cfg.detector = preset;
        }
        cfg.validate();
        kernels::set_num_threads(cfg.jobs);

        if (app.got_subcommand(sc_features))
            return cmd_features(cfg, feat_in, feat_out, feat_pipeline, dry_run);
        if (app.got_subcommand(sc_annotate))
            return cmd_annotate(cfg, annotate_out.empty() ? cfg.run_dir : annotate_out, dry_run);
        if (app.got_subcommand(sc_selftrain)) return cmd_selftrain(cfg, dry_run);
        if (app.got_subcommand(sc_detect))
            return cmd_detect(cfg, det_ckpt, det_in, det_out, dry_run);
        if (app.got_subcommand(sc_eval))
            return cmd_eval(cfg, eval_ckpt, eval_out, eval_at_threshold, eval_macro, dry_run);
        if (app.got_subcommand(sc_calibrate)) return cmd_calibrate(cfg, calib_target, dry_run);
        if (app.got_subcommand(sc_synth)) return cmd_synth(synth_out, scfg, dry_run);
        BS_LOG_ERROR("no subcommand selected");
        return kExitConfig;
    } catch (const ConfigError& e) {
        BS_LOG_ERROR("config error: %s", e.what());
        return kExitConfig;
    } catch (const ValidationError& e) {
        BS_LOG_ERROR("validation error: %s", e.what());
        return kExitConfig;
    } catch (const FormatError& e) {
        BS_LOG_ERROR("format error: %s", e.what());
        return kExitConfig;
    } catch (const Error& e) {
        BS_LOG_ERROR("runtime abort: %s", e.what());
        return kExitAbort;
    } catch (const std::exception& e) {
        BS_LOG_ERROR("runtime abort: %s", e.what());
        return kExitAbort;
    }
}

}  // namespace breathscan
