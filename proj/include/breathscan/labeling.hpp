#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace breathscan {

// Per-frame training target. Mask frames carry no loss; they serialize as
// -100 in label files.
enum class Label : std::int8_t { NonBreath = 0, Breath = 1, Mask = 2 };

inline constexpr std::int32_t kMaskSerialized = -100;

struct LabelSequence {
    std::vector<Label> labels;
    std::string utterance_id;

    long size() const { return static_cast<long>(labels.size()); }
};

// Frame index sets for one utterance: pause frames P, breath frames B and
// non-breath frames U with B, U subsets of P.
struct LabelSets {
    long n_frames = 0;
    std::vector<long> pause;
    std::vector<long> breath;
    std::vector<long> nonbreath;
};

// Labels: 0 on (T \ P) u U, 1 on B, Mask on P \ (B u U).
// Throws ValidationError on out-of-range indices or subset violations and a
// consistency error when B and U intersect.
LabelSequence build_labels(long n_frames, const std::vector<long>& pause_frames,
                           const std::vector<long>& breath_frames,
                           const std::vector<long>& nonbreath_frames,
                           std::string utterance_id = {});

LabelSequence build_labels(const LabelSets& sets, std::string utterance_id = {});

struct PseudoMergeStats {
    long added_breath = 0;
    long added_nonbreath = 0;
    long conflicts_dropped = 0;   // frame proposed as both breath and non-breath
    long ineligible_skipped = 0;  // frame outside P \ (B u U)
};

// Union of the base sets with the current iteration's pseudo-labels. Rule
// labels outrank pseudo-labels: candidates already in B or U (or outside P)
// are skipped, and frames proposed in both pseudo sets are dropped from both
// so they stay masked. Idempotent.
LabelSets merge_pseudo(const LabelSets& base, const std::vector<long>& pseudo_breath,
                       const std::vector<long>& pseudo_nonbreath,
                       PseudoMergeStats* stats = nullptr);

// Sparse text form: `utterance_id<TAB>frame_index<TAB>label`, label in
// {0, 1, -100}.
void write_label_tsv(const std::string& path, const std::vector<LabelSequence>& sequences);
std::map<std::string, LabelSequence> read_label_tsv(const std::string& path);

inline constexpr std::uint32_t kLabelDumpVersion = 1;

// Dense binary form mirroring the feature dump header: magic "BSLB",
// version u32, F u32, reserved u32, then int32 labels[F].
void write_label_dump(const std::string& path, const LabelSequence& seq);
LabelSequence read_label_dump(const std::string& path);

}  // namespace breathscan
