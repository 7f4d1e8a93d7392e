#include "breathscan/labeling.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "breathscan/util.hpp"

namespace breathscan {

namespace {

std::vector<std::uint8_t> index_mask(long n_frames, const std::vector<long>& idx,
                                     const char* set_name) {
    std::vector<std::uint8_t> mask(n_frames, 0);
    for (long i : idx) {
        if (i < 0 || i >= n_frames)
            throw ValidationError(
                format_str("%s frame index %ld out of range [0, %ld)", set_name, i, n_frames));
        mask[i] = 1;
    }
    return mask;
}

std::vector<long> mask_to_indices(const std::vector<std::uint8_t>& mask) {
    std::vector<long> out;
    for (long i = 0; i < static_cast<long>(mask.size()); ++i)
        if (mask[i]) out.push_back(i);
    return out;
}

}  // namespace

LabelSequence build_labels(long n_frames, const std::vector<long>& pause_frames,
                           const std::vector<long>& breath_frames,
                           const std::vector<long>& nonbreath_frames, std::string utterance_id) {
    if (n_frames < 0) throw ValidationError("build_labels: negative frame count");
    const auto p = index_mask(n_frames, pause_frames, "pause");
    const auto b = index_mask(n_frames, breath_frames, "breath");
    const auto u = index_mask(n_frames, nonbreath_frames, "non-breath");

    for (long i = 0; i < n_frames; ++i) {
        if (b[i] && !p[i])
            throw ValidationError(format_str("build_labels: breath frame %ld outside pause set", i));
        if (u[i] && !p[i])
            throw ValidationError(
                format_str("build_labels: non-breath frame %ld outside pause set", i));
        if (b[i] && u[i])
            throw ValidationError(
                format_str("build_labels: frame %ld in both breath and non-breath sets", i));
    }

    LabelSequence seq;
    seq.utterance_id = std::move(utterance_id);
    seq.labels.resize(n_frames);
    for (long i = 0; i < n_frames; ++i) {
        if (b[i])
            seq.labels[i] = Label::Breath;
        else if (!p[i] || u[i])
            seq.labels[i] = Label::NonBreath;
        else
            seq.labels[i] = Label::Mask;
    }
    return seq;
}

LabelSequence build_labels(const LabelSets& sets, std::string utterance_id) {
    return build_labels(sets.n_frames, sets.pause, sets.breath, sets.nonbreath,
                        std::move(utterance_id));
}

LabelSets merge_pseudo(const LabelSets& base, const std::vector<long>& pseudo_breath,
                       const std::vector<long>& pseudo_nonbreath, PseudoMergeStats* stats) {
    const auto p = index_mask(base.n_frames, base.pause, "pause");
    auto b = index_mask(base.n_frames, base.breath, "breath");
    auto u = index_mask(base.n_frames, base.nonbreath, "non-breath");
    const auto cand_b = index_mask(base.n_frames, pseudo_breath, "pseudo breath");
    const auto cand_u = index_mask(base.n_frames, pseudo_nonbreath, "pseudo non-breath");

    PseudoMergeStats local;
    for (long i = 0; i < base.n_frames; ++i) {
        if (!cand_b[i] && !cand_u[i]) continue;
        if (!p[i] || b[i] || u[i]) {
            ++local.ineligible_skipped;
            continue;
        }
        if (cand_b[i] && cand_u[i]) {
            ++local.conflicts_dropped;  // stays masked
            continue;
        }
        if (cand_b[i]) {
            b[i] = 1;
            ++local.added_breath;
        } else {
            u[i] = 1;
            ++local.added_nonbreath;
        }
    }
    if (stats) *stats = local;

    LabelSets out;
    out.n_frames = base.n_frames;
    out.pause = mask_to_indices(p);
    out.breath = mask_to_indices(b);
    out.nonbreath = mask_to_indices(u);
    return out;
}

void write_label_tsv(const std::string& path, const std::vector<LabelSequence>& sequences) {
    std::string out;
    for (const auto& seq : sequences) {
        for (long i = 0; i < seq.size(); ++i) {
            int v = 0;
            switch (seq.labels[i]) {
                case Label::NonBreath: v = 0; break;
                case Label::Breath: v = 1; break;
                case Label::Mask: v = kMaskSerialized; break;
            }
            out += format_str("%s\t%ld\t%d\n", seq.utterance_id.c_str(), i, v);
        }
    }
    write_text_file(path, out);
}

std::map<std::string, LabelSequence> read_label_tsv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open label file: " + path);
    std::map<std::string, std::vector<std::pair<long, Label>>> grouped;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        char utt[512];
        long frame;
        int value;
        if (std::sscanf(line.c_str(), "%511[^\t]\t%ld\t%d", utt, &frame, &value) != 3)
            throw ValidationError(format_str("%s:%d: malformed label line", path.c_str(), lineno));
        Label lb;
        if (value == 0)
            lb = Label::NonBreath;
        else if (value == 1)
            lb = Label::Breath;
        else if (value == kMaskSerialized)
            lb = Label::Mask;
        else
            throw ValidationError(
                format_str("%s:%d: label value %d not in {0, 1, %d}", path.c_str(), lineno, value,
                           kMaskSerialized));
        if (frame < 0)
            throw ValidationError(format_str("%s:%d: negative frame index", path.c_str(), lineno));
        grouped[utt].emplace_back(frame, lb);
    }

    std::map<std::string, LabelSequence> out;
    for (auto& [utt, entries] : grouped) {
        long max_frame = 0;
        for (auto& [frame, lb] : entries) max_frame = std::max(max_frame, frame);
        LabelSequence seq;
        seq.utterance_id = utt;
        seq.labels.assign(max_frame + 1, Label::NonBreath);
        for (auto& [frame, lb] : entries) seq.labels[frame] = lb;
        out.emplace(utt, std::move(seq));
    }
    return out;
}

void write_label_dump(const std::string& path, const LabelSequence& seq) {
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw RuntimeAbort("cannot open for writing: " + path);
    std::fwrite("BSLB", 1, 4, f);
    write_u32(f, kLabelDumpVersion);
    write_u32(f, static_cast<std::uint32_t>(seq.size()));
    write_u32(f, 0);
    for (Label lb : seq.labels) {
        std::int32_t v = lb == Label::Mask ? kMaskSerialized : static_cast<std::int32_t>(lb);
        write_i32(f, v);
    }
    std::fclose(f);
}

LabelSequence read_label_dump(const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw FormatError("cannot open label dump: " + path);
    struct Closer {
        FILE* f;
        ~Closer() { std::fclose(f); }
    } closer{f};

    char magic[4];
    if (std::fread(magic, 1, 4, f) != 4 || std::memcmp(magic, "BSLB", 4) != 0)
        throw FormatError("bad label dump magic: " + path);
    const std::uint32_t version = read_u32(f, "version");
    if (version != kLabelDumpVersion)
        throw FormatError(format_str("unsupported label dump version %u", version));
    const std::uint32_t n = read_u32(f, "frame count");
    read_u32(f, "reserved");
    LabelSequence seq;
    seq.labels.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::int32_t v = read_i32(f, "label");
        if (v == 0)
            seq.labels[i] = Label::NonBreath;
        else if (v == 1)
            seq.labels[i] = Label::Breath;
        else if (v == kMaskSerialized)
            seq.labels[i] = Label::Mask;
        else
            throw FormatError(format_str("label dump value %d not in {0, 1, %d}", v,
                                         kMaskSerialized));
    }
    return seq;
}

}  // namespace breathscan
