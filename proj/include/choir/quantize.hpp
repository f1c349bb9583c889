#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "choir/score.hpp"

namespace choir {

// Best-matching triad for a set of pitch classes. Every root/quality
// template is scored as |template ∩ pitches| - |pitches \ template|; ties
// break toward the lower root, then maj < min < aug < dim. Scores below 2
// (and the empty set) map to the rootless "other" label.
inline ChordLabel infer_chord(const std::set<int>& pitch_classes) {
    if (pitch_classes.empty()) return ChordLabel::other();

    static constexpr int kTemplates[4][3] = {{0, 4, 7}, {0, 3, 7}, {0, 4, 8}, {0, 3, 6}};

    bool present[kPitchClasses] = {};
    for (int pc : pitch_classes) present[((pc % 12) + 12) % 12] = true;
    int total = 0;
    for (bool p : present) total += p;

    int best_score = 0;
    ChordLabel best = ChordLabel::other();
    bool found = false;
    for (int root = 0; root < kPitchClasses; ++root) {
        for (int q = 0; q < 4; ++q) {
            int hits = 0;
            for (int interval : kTemplates[q]) hits += present[(root + interval) % 12];
            int score = hits - (total - hits);
            if (!found || score > best_score) {
                best_score = score;
                best = ChordLabel(root, static_cast<ChordQuality>(q));
                found = true;
            }
        }
    }
    return best_score < 2 ? ChordLabel::other() : best;
}

enum class VoicePolicy {
    MeanPitchDescending,  // S = highest mean pitch ... B = lowest
    TrackOrder,           // tracks already arrive as S, A, T, B
};

// Quantizes note events onto the 16th-note grid. A note sounds at every
// step whose start tick lies in [onset, onset+duration); when notes in one
// track overlap a step start, the latest onset wins. Chords come from the
// latest annotation at or before the step, falling back to infer_chord
// over the sounding pitches.
inline GridScore quantize(const RawScore& raw, VoicePolicy policy = VoicePolicy::MeanPitchDescending,
                          std::vector<std::string>* warnings = nullptr) {
    if (raw.ppq <= 0) throw data_error("quantize: ppq must be positive");

    std::vector<std::size_t> nonempty;
    for (std::size_t i = 0; i < raw.tracks.size(); ++i)
        if (!raw.tracks[i].empty()) nonempty.push_back(i);
    if (nonempty.empty()) throw data_error("quantize: no non-empty tracks");
    if (nonempty.size() > static_cast<std::size_t>(kVoices))
        throw data_error("quantize: " + std::to_string(nonempty.size()) + " non-empty tracks, expected at most " +
                         std::to_string(kVoices));

    if (policy == VoicePolicy::MeanPitchDescending) {
        std::vector<double> means(nonempty.size());
        for (std::size_t i = 0; i < nonempty.size(); ++i) {
            const auto& notes = raw.tracks[nonempty[i]];
            double sum = 0;
            for (const auto& n : notes) sum += n.pitch;
            means[i] = sum / static_cast<double>(notes.size());
        }
        std::vector<std::size_t> order(nonempty.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return means[a] > means[b]; });
        for (std::size_t i = 0; i + 1 < order.size(); ++i) {
            if (means[order[i]] == means[order[i + 1]] && warnings)
                warnings->push_back("tracks " + std::to_string(nonempty[order[i]]) + " and " +
                                    std::to_string(nonempty[order[i + 1]]) +
                                    " have identical mean pitch; tie broken by track order");
        }
        std::vector<std::size_t> sorted;
        for (std::size_t idx : order) sorted.push_back(nonempty[idx]);
        nonempty = sorted;
    }

    std::int64_t max_end = 0;
    for (std::size_t idx : nonempty)
        for (const auto& n : raw.tracks[idx]) {
            if (n.onset < 0) throw data_error("quantize: negative note onset");
            if (n.duration <= 0) throw data_error("quantize: non-positive note duration");
            max_end = std::max(max_end, n.onset + n.duration);
        }

    // L = ceil(max_end / (ppq/4)), computed exactly in integers.
    std::int64_t length = (4 * max_end + raw.ppq - 1) / raw.ppq;
    if (length < 1) length = 1;

    GridScore score;
    score.steps.resize(static_cast<std::size_t>(length));

    // Step s starts at tick s*ppq/4; note covers it iff 4*onset <= s*ppq < 4*end.
    for (std::size_t v = 0; v < nonempty.size(); ++v) {
        auto notes = raw.tracks[nonempty[v]];
        std::stable_sort(notes.begin(), notes.end(),
                         [](const RawScore::Note& a, const RawScore::Note& b) { return a.onset < b.onset; });
        for (const auto& n : notes) {
            std::int64_t lo = (4 * n.onset + raw.ppq - 1) / raw.ppq;
            std::int64_t hi = (4 * (n.onset + n.duration) + raw.ppq - 1) / raw.ppq;
            for (std::int64_t s = lo; s < hi && s < length; ++s)
                score.steps[static_cast<std::size_t>(s)].voice(static_cast<int>(v)) = n.pitch;
        }
    }

    auto annotations = raw.chord_annotations;
    std::stable_sort(annotations.begin(), annotations.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    std::size_t ann = 0;
    ChordLabel current = ChordLabel::other();
    bool have_annotation = false;
    for (std::int64_t s = 0; s < length; ++s) {
        while (ann < annotations.size() && 4 * annotations[ann].first <= s * raw.ppq) {
            current = annotations[ann].second;
            have_annotation = true;
            ++ann;
        }
        GridStep& step = score.steps[static_cast<std::size_t>(s)];
        if (have_annotation) {
            step.chord = current;
        } else {
            std::set<int> pcs;
            for (int v = 0; v < kVoices; ++v)
                if (step.voice(v)) pcs.insert(*step.voice(v) % 12);
            step.chord = infer_chord(pcs);
        }
    }

    return score;
}

}  // namespace choir
