#pragma once

#include <string>

#include "choir/score.hpp"

namespace choir {

// Pianoroll CSV: header row, one row per step, rests as empty cells,
// LF line endings. Meant for external plotting.
inline std::string export_pianoroll(const GridScore& score) {
    std::string out = "step,S,A,T,B,chord\n";
    for (std::size_t t = 0; t < score.length(); ++t) {
        const GridStep& step = score.steps[t];
        out += std::to_string(t);
        for (int v = 0; v < kVoices; ++v) {
            out += ',';
            if (step.voice(v)) out += std::to_string(*step.voice(v));
        }
        out += ',';
        out += chord_to_string(step.chord);
        out += '\n';
    }
    return out;
}

}  // namespace choir
