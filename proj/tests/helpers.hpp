#pragma once

#include <filesystem>
#include <string>
#include <system_error>
#include <unistd.h>
#include <vector>

#include "choir/common.hpp"
#include "choir/score.hpp"

namespace choir::testing {

// Self-cleaning scratch directory under the system temp root.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag = "choir") {
        static int counter = 0;
        path = std::filesystem::temp_directory_path() /
               (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

// Uniformly random chord label across all 49 distinct values.
inline ChordLabel random_chord(Pcg32& rng) {
    int pick = static_cast<int>(rng.below(49));
    if (pick == 48) return ChordLabel::other();
    return ChordLabel(pick / 4, static_cast<ChordQuality>(pick % 4));
}

inline Pitch random_pitch(Pcg32& rng, int lo = kMinPitch, int hi = kMaxPitch, int rest_percent = 15) {
    if (rng.below(100) < static_cast<std::uint32_t>(rest_percent)) return kRest;
    return lo + static_cast<int>(rng.below(static_cast<std::uint32_t>(hi - lo + 1)));
}

inline GridScore random_score(Pcg32& rng, std::size_t steps, int lo = kMinPitch, int hi = kMaxPitch) {
    GridScore score;
    score.title = "random";
    for (std::size_t t = 0; t < steps; ++t) {
        GridStep step;
        step.chord = random_chord(rng);
        for (int v = 0; v < kVoices; ++v) step.voice(v) = random_pitch(rng, lo, hi);
        score.steps.push_back(step);
    }
    return score;
}

// Small deterministic chorale in C major; `phase` varies the line.
inline GridScore fixture_chorale(std::size_t steps, int phase = 0) {
    const int soprano[] = {72, 74, 76, 77, 79, 77, 76, 74};
    const ChordLabel chords[] = {{0, ChordQuality::Major}, {7, ChordQuality::Major},
                                 {9, ChordQuality::Minor}, {5, ChordQuality::Major}};
    GridScore score;
    score.title = "fixture_" + std::to_string(phase);
    for (std::size_t t = 0; t < steps; ++t) {
        GridStep step;
        step.chord = chords[(t / 2 + static_cast<std::size_t>(phase)) % 4];
        step.s = soprano[(t + static_cast<std::size_t>(phase)) % 8];
        step.a = *step.s - 8;
        step.t = *step.s - 16;
        step.b = *step.s - 24;
        score.steps.push_back(step);
    }
    return score;
}

}  // namespace choir::testing
