#include "breathscan/self_training.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <json.hpp>

#include "breathscan/util.hpp"

namespace breathscan {

namespace {

struct FrameScore {
    float prob;
    bool breath;
};

DynamicThresholds calibrate_from_scores(std::vector<FrameScore> frames, double target) {
    if (frames.empty())
        throw ConfigError("calibrate_thresholds: validation has no labeled pause frames");
    long n_breath = 0;
    for (const auto& f : frames) n_breath += f.breath;
    if (n_breath == 0 || n_breath == static_cast<long>(frames.size()))
        BS_LOG_WARN("calibrate_thresholds: validation pause frames contain a single class");

    std::sort(frames.begin(), frames.end(),
              [](const FrameScore& a, const FrameScore& b) { return a.prob < b.prob; });

    // prefix_breath[i] = breath count among frames[0..i)
    const long n = static_cast<long>(frames.size());
    std::vector<long> prefix_breath(n + 1, 0);
    for (long i = 0; i < n; ++i) prefix_breath[i + 1] = prefix_breath[i] + frames[i].breath;

    // Candidate grid: unique probabilities with, per candidate, the index of
    // its first occurrence (for suffix counts) and last occurrence + 1 (for
    // prefix counts).
    struct Candidate {
        float prob;
        long first;
        long last1;
    };
    std::vector<Candidate> cands;
    for (long i = 0; i < n; ++i) {
        if (cands.empty() || frames[i].prob != cands.back().prob)
            cands.push_back({frames[i].prob, i, i + 1});
        else
            cands.back().last1 = i + 1;
    }

    const double tol = 1e-12;
    DynamicThresholds th;

    // alpha: smallest candidate whose >= suffix is breath-precise enough.
    for (const auto& c : cands) {
        const long total = n - c.first;
        const long breath = prefix_breath[n] - prefix_breath[c.first];
        if (static_cast<double>(breath) / total + tol >= target) {
            th.alpha = c.prob;
            th.alpha_attainable = true;
            break;
        }
    }
    // beta: largest candidate whose <= prefix is non-breath-precise enough,
    // kept strictly below alpha.
    for (auto it = cands.rbegin(); it != cands.rend(); ++it) {
        if (th.alpha_attainable && static_cast<double>(it->prob) >= th.alpha) continue;
        const long total = it->last1;
        const long nonbreath = total - prefix_breath[it->last1];
        if (static_cast<double>(nonbreath) / total + tol >= target) {
            th.beta = it->prob;
            th.beta_attainable = true;
            break;
        }
    }
    return th;
}

}  // namespace

DynamicThresholds calibrate_thresholds(const std::vector<std::pair<float, Label>>& pause_frames,
                                       double target_precision) {
    std::vector<FrameScore> frames;
    frames.reserve(pause_frames.size());
    for (const auto& [prob, label] : pause_frames) {
        if (label == Label::Mask) continue;
        frames.push_back({prob, label == Label::Breath});
    }
    return calibrate_from_scores(std::move(frames), target_precision);
}

DynamicThresholds calibrate_thresholds(Detector<float>& det,
                                       const std::vector<ValidationItem>& validation,
                                       double target_precision) {
    if (validation.empty()) throw ConfigError("calibrate_thresholds: empty validation set");
    std::vector<FrameScore> frames;
    for (const auto& item : validation) {
        const std::vector<float> probs = det.forward(item.features, /*train=*/false);
        for (long f : item.pause_frames) {
            if (f < 0 || f >= static_cast<long>(probs.size()))
                throw ValidationError(format_str("validation pause frame %ld out of range in '%s'",
                                                 f, item.features.utterance_id.c_str()));
            const Label y = item.gold.labels[f];
            if (y == Label::Mask) continue;
            frames.push_back({probs[f], y == Label::Breath});
        }
    }
    return calibrate_from_scores(std::move(frames), target_precision);
}

std::vector<PseudoLabels> pseudo_label(const Detector<float>& det,
                                       const std::vector<SelfTrainItem>& corpus,
                                       const std::vector<LabelSets>& current_sets,
                                       const DynamicThresholds& th) {
    if (corpus.size() != current_sets.size())
        throw ValidationError("pseudo_label: corpus/sets size mismatch");
    const long n = static_cast<long>(corpus.size());
    std::vector<PseudoLabels> out(n);
#pragma omp parallel
    {
        std::unique_ptr<Detector<float>> local = det.clone();
#pragma omp for schedule(dynamic)
        for (long i = 0; i < n; ++i) {
            const auto& sets = current_sets[i];
            std::vector<std::uint8_t> labeled(sets.n_frames, 0);
            for (long f : sets.breath) labeled[f] = 1;
            for (long f : sets.nonbreath) labeled[f] = 1;

            const std::vector<float> probs = local->forward(corpus[i].features, /*train=*/false);
            for (long f : sets.pause) {
                if (labeled[f]) continue;  // rule labels take precedence
                const double p = probs[f];
                if (p > th.alpha)
                    out[i].breath.push_back(f);
                else if (p < th.beta)
                    out[i].nonbreath.push_back(f);
            }
        }
    }
    return out;
}

namespace {

nlohmann::json threshold_json(const DynamicThresholds& th) {
    nlohmann::json j;
    j["alpha"] = th.alpha_attainable ? nlohmann::json(th.alpha) : nlohmann::json();
    j["beta"] = th.beta_attainable ? nlohmann::json(th.beta) : nlohmann::json();
    return j;
}

nlohmann::json metrics_json(const DetectionMetrics& m) {
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
    j["averaging"] = "frame-micro";
    return j;
}

nlohmann::json record_json(const IterationRecord& rec) {
    nlohmann::json j;
    j["k"] = rec.k;
    if (rec.k > 0) {
        j["target_precision"] = rec.target_precision;
        j["thresholds"] = threshold_json(rec.thresholds);
        j["pseudo_breath"] = rec.pseudo_breath;
        j["pseudo_nonbreath"] = rec.pseudo_nonbreath;
        j["merge_conflicts"] = rec.merge_conflicts;
        j["no_pseudo_labels"] = rec.no_pseudo_labels;
    }
    j["breath_frames"] = rec.breath_frames;
    j["nonbreath_frames"] = rec.nonbreath_frames;
    j["validation"] = metrics_json(rec.validation);
    j["train_loss"] = rec.train_loss;
    j["train_steps"] = rec.train_steps;
    j["checkpoint_hash"] = rec.checkpoint_hash;
    j["parent_hash"] = rec.parent_hash;
    return j;
}

DetectionMetrics evaluate_validation(Detector<float>& det,
                                     const std::vector<ValidationItem>& validation) {
    std::vector<Prediction> preds;
    std::map<std::string, LabelSequence> gold;
    for (const auto& item : validation) {
        Prediction p;
        p.utterance_id = item.features.utterance_id;
        p.probs = det.forward(item.features, /*train=*/false);
        preds.push_back(std::move(p));
        gold.emplace(item.features.utterance_id, item.gold);
    }
    return sweep_threshold(preds, gold);
}

void snapshot_iteration(const std::string& run_dir, const IterationRecord& rec,
                        const Detector<float>& det, const std::vector<SelfTrainItem>& corpus,
                        const std::vector<LabelSets>& sets) {
    if (run_dir.empty()) return;
    namespace fs = std::filesystem;
    const fs::path dir = fs::path(run_dir) / format_str("iter_%d", rec.k);
    fs::create_directories(dir);
    save_checkpoint((dir / "checkpoint.bsck").string(), det);
    write_text_file((dir / "thresholds.json").string(),
                    threshold_json(rec.thresholds).dump(2) + "\n");
    write_text_file((dir / "metrics.json").string(), metrics_json(rec.validation).dump(2) + "\n");
    std::string sets_tsv = "# utterance_id\tframe\tset\n";
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const std::string& utt = corpus[i].features.utterance_id;
        for (long f : sets[i].breath)
            sets_tsv += format_str("%s\t%ld\tB\n", utt.c_str(), f);
        for (long f : sets[i].nonbreath)
            sets_tsv += format_str("%s\t%ld\tU\n", utt.c_str(), f);
    }
    write_text_file((dir / "sets.tsv").string(), sets_tsv);
}

}  // namespace

std::string iteration_record_to_json(const IterationRecord& rec) { return record_json(rec).dump(); }

SelfTrainResult run_self_training(const std::vector<SelfTrainItem>& corpus,
                                  const std::vector<ValidationItem>& validation,
                                  const SelfTrainConfig& cfg) {
    if (corpus.empty()) throw ValidationError("run_self_training: empty corpus");
    if (validation.empty()) throw ConfigError("run_self_training: empty validation set");
    if (cfg.max_iterations < 0) throw ConfigError("run_self_training: negative max_iterations");

    long total_breath = 0;
    for (const auto& item : corpus) total_breath += static_cast<long>(item.rule_sets.breath.size());
    if (total_breath == 0)
        throw ValidationError(
            "run_self_training: rule annotation produced an empty breath set; adjust or "
            "calibrate the rule thresholds before training");

    // Working copies of the frame sets; Algorithm-literal mode always merges
    // fresh pseudo-labels into the original rule sets.
    std::vector<LabelSets> rule_sets, work_sets;
    for (const auto& item : corpus) rule_sets.push_back(item.rule_sets);
    work_sets = rule_sets;

    auto build_items = [&](const std::vector<LabelSets>& sets) {
        std::vector<LabelSequence> labels(corpus.size());
        std::vector<TrainItem> items(corpus.size());
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            labels[i] = build_labels(sets[i], corpus[i].features.utterance_id);
            items[i] = {&corpus[i].features, &labels[i]};
        }
        return std::pair(std::move(labels), std::move(items));
    };

    SelfTrainResult result;
    auto det = std::make_unique<Detector<float>>(cfg.detector, cfg.seed);

    auto count_sets = [&](const std::vector<LabelSets>& sets, IterationRecord& rec) {
        for (const auto& s : sets) {
            rec.breath_frames += static_cast<long>(s.breath.size());
            rec.nonbreath_frames += static_cast<long>(s.nonbreath.size());
        }
    };

    // Iteration 0: initial detector on rule labels.
    {
        IterationRecord rec;
        rec.k = 0;
        rec.parent_hash = hex64(param_hash(*det));
        auto [labels, items] = build_items(work_sets);
        const TrainStats stats = train_epochs(*det, items, cfg.optimizer, cfg.schedule, cfg.seed);
        rec.train_loss = stats.final_epoch_loss;
        rec.train_steps = stats.steps;
        rec.checkpoint_hash = hex64(param_hash(*det));
        rec.validation = evaluate_validation(*det, validation);
        count_sets(work_sets, rec);
        snapshot_iteration(cfg.run_dir, rec, *det, corpus, work_sets);
        result.history.push_back(rec);
        BS_LOG_INFO("self-train iter 0: val IoU %.4f at threshold %.4f", rec.validation.iou,
                    rec.validation.threshold);
    }

    std::unique_ptr<Detector<float>> prev = det->clone();
    int output_iteration = 0;

    for (int k = 1; k <= cfg.max_iterations; ++k) {
        IterationRecord rec;
        rec.k = k;
        rec.target_precision = std::max(cfg.precision_floor,
                                        cfg.initial_target_precision -
                                            cfg.precision_decrement * (k - 1));

        const std::vector<LabelSets>& eligibility = cfg.accumulate_pseudo ? work_sets : rule_sets;
        std::vector<PseudoLabels> pseudo(corpus.size());
        if (!cfg.disable_pseudo_labels) {
            rec.thresholds = calibrate_thresholds(*det, validation, rec.target_precision);
            pseudo = pseudo_label(*det, corpus, eligibility, rec.thresholds);
        }

        PseudoMergeStats merge_total;
        std::vector<LabelSets> next_sets(corpus.size());
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            PseudoMergeStats st;
            next_sets[i] = merge_pseudo(eligibility[i], pseudo[i].breath, pseudo[i].nonbreath, &st);
            merge_total.added_breath += st.added_breath;
            merge_total.added_nonbreath += st.added_nonbreath;
            merge_total.conflicts_dropped += st.conflicts_dropped;
        }
        work_sets = std::move(next_sets);
        rec.pseudo_breath = merge_total.added_breath;
        rec.pseudo_nonbreath = merge_total.added_nonbreath;
        rec.merge_conflicts = merge_total.conflicts_dropped;
        rec.no_pseudo_labels = rec.pseudo_breath == 0 && rec.pseudo_nonbreath == 0;
        if (rec.no_pseudo_labels && !cfg.disable_pseudo_labels)
            BS_LOG_WARN("self-train iter %d: no pseudo-labels at target precision %.3f; the "
                        "training set is unchanged",
                        k, rec.target_precision);
        count_sets(work_sets, rec);

        prev = det->clone();
        rec.parent_hash = hex64(param_hash(*det));
        auto [labels, items] = build_items(work_sets);
        const TrainStats stats =
            train_epochs(*det, items, cfg.optimizer, cfg.schedule, cfg.seed + k);
        rec.train_loss = stats.final_epoch_loss;
        rec.train_steps = stats.steps;
        rec.checkpoint_hash = hex64(param_hash(*det));
        rec.validation = evaluate_validation(*det, validation);
        snapshot_iteration(cfg.run_dir, rec, *det, corpus, work_sets);
        result.history.push_back(rec);
        BS_LOG_INFO("self-train iter %d: val IoU %.4f (alpha %s, beta %s, +%ldB/+%ldU)", k,
                    rec.validation.iou,
                    rec.thresholds.alpha_attainable ? format_double(rec.thresholds.alpha).c_str()
                                                    : "inf",
                    rec.thresholds.beta_attainable ? format_double(rec.thresholds.beta).c_str()
                                                   : "-inf",
                    rec.pseudo_breath, rec.pseudo_nonbreath);

        if (rec.validation.iou < result.history[k - 1].validation.iou) {
            // Strict decline: the previous iteration's detector is the output.
            output_iteration = k - 1;
            result.detector = std::move(prev);
            break;
        }
        output_iteration = k;
    }

    if (!result.detector) result.detector = std::move(det);
    result.output_iteration = output_iteration;

    if (!cfg.run_dir.empty()) {
        std::string lines;
        for (const auto& rec : result.history) lines += iteration_record_to_json(rec) + "\n";
        nlohmann::json tail;
        tail["output_iteration"] = output_iteration;
        tail["output_checkpoint_hash"] = hex64(param_hash(*result.detector));
        lines += tail.dump() + "\n";
        write_text_file((std::filesystem::path(cfg.run_dir) / "history.jsonl").string(), lines);
    }
    return result;
}

}  // namespace breathscan
