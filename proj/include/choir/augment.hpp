#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "choir/score.hpp"

namespace choir {

// Uniform pitch shift by k semitones. Chord roots rotate by k mod 12;
// rests and "other" chords are untouched. Throws if any pitch would leave
// [0,127], naming the step and voice.
inline GridScore transpose(const GridScore& score, int k) {
    GridScore out = score;
    for (std::size_t t = 0; t < out.steps.size(); ++t) {
        GridStep& step = out.steps[t];
        for (int v = 0; v < kVoices; ++v) {
            if (!step.voice(v)) continue;
            int shifted = *step.voice(v) + k;
            if (!pitch_in_range(shifted))
                throw data_error("transpose: step " + std::to_string(t) + " voice " + voice_name(v) + " pitch " +
                                 std::to_string(*step.voice(v)) + " shifted by " + std::to_string(k) +
                                 " leaves [0,127]");
            step.voice(v) = shifted;
        }
        if (!step.chord.is_other()) step.chord = ChordLabel(((step.chord.root + k) % 12 + 12) % 12, step.chord.quality);
    }
    return out;
}

// Retrograde: steps in reverse order, each step unchanged.
inline GridScore reverse(const GridScore& score) {
    GridScore out = score;
    std::reverse(out.steps.begin(), out.steps.end());
    return out;
}

struct Transform {
    int k = 0;            // applied semitone shift (0 for untransposed)
    bool reversed = false;

    friend bool operator==(const Transform&, const Transform&) = default;
};

inline std::string transform_name(const Transform& tf) {
    std::string name;
    if (tf.k != 0) name = "transpose(" + std::string(tf.k > 0 ? "+" : "") + std::to_string(tf.k) + ")";
    if (tf.reversed) name += name.empty() ? "reverse" : "+reverse";
    if (name.empty()) name = "original";
    return name;
}

struct TaggedPiece {
    GridScore score;
    std::size_t source = 0;  // index of the source piece
    Transform transform;
};

using Corpus = std::vector<TaggedPiece>;

// Expands a corpus with the two augmentation methods: transposition into
// the 11 other keys and time reversal. A shift that overflows the pitch
// range drops an octave (k-12); a piece no shift fits is skipped with a
// warning. Both methods together yield 24 pieces per source (12 keys x
// forward/reverse), ordered by (source, k, reversed).
inline Corpus expand_dataset(const std::vector<GridScore>& pieces, bool enable_transpose, bool enable_reverse,
                             std::vector<std::string>* warnings = nullptr) {
    if (pieces.empty()) throw data_error("expand_dataset: empty corpus");

    Corpus corpus;
    for (std::size_t i = 0; i < pieces.size(); ++i) {
        std::vector<std::pair<int, GridScore>> keyed;
        keyed.emplace_back(0, pieces[i]);
        if (enable_transpose) {
            for (int k = 1; k <= 11; ++k) {
                try {
                    keyed.emplace_back(k, transpose(pieces[i], k));
                } catch (const data_error&) {
                    try {
                        keyed.emplace_back(k - 12, transpose(pieces[i], k - 12));
                    } catch (const data_error&) {
                        if (warnings)
                            warnings->push_back("piece " + std::to_string(i) + ": shift to key +" + std::to_string(k) +
                                                " does not fit [0,127] even an octave down; skipped");
                    }
                }
            }
        }
        for (auto& [k, score] : keyed) {
            corpus.push_back({score, i, {k, false}});
            if (enable_reverse) corpus.push_back({reverse(score), i, {k, true}});
        }
    }
    return corpus;
}

inline std::string provenance_manifest_json(const Corpus& corpus) {
    auto doc = nlohmann::json::array();
    for (const TaggedPiece& piece : corpus) {
        nlohmann::json entry;
        entry["source"] = piece.source;
        entry["transform"] = transform_name(piece.transform);
        doc.push_back(entry);
    }
    return doc.dump(2) + "\n";
}

}  // namespace choir
