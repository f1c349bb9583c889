#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "choir/common.hpp"

namespace choir {

// A voice at one grid step either sounds a MIDI pitch in [0,127] or rests.
using Pitch = std::optional<int>;
inline constexpr std::nullopt_t kRest = std::nullopt;

constexpr int kMinPitch = 0;
constexpr int kMaxPitch = 127;
constexpr int kPitchClasses = 12;

inline bool pitch_in_range(int p) { return p >= kMinPitch && p <= kMaxPitch; }

enum class ChordQuality : std::uint8_t { Major = 0, Minor = 1, Augmented = 2, Diminished = 3, Other = 4 };

inline const char* quality_name(ChordQuality q) {
    switch (q) {
        case ChordQuality::Major: return "maj";
        case ChordQuality::Minor: return "min";
        case ChordQuality::Augmented: return "aug";
        case ChordQuality::Diminished: return "dim";
        case ChordQuality::Other: return "other";
    }
    return "other";
}

// 49 distinct labels: 12 roots x 4 triad qualities, plus a rootless "other".
struct ChordLabel {
    int root = 0;  // pitch class in [0,11]; forced to 0 when quality == Other
    ChordQuality quality = ChordQuality::Other;

    ChordLabel() = default;
    ChordLabel(int r, ChordQuality q) : root(q == ChordQuality::Other ? 0 : r), quality(q) {}

    static ChordLabel other() { return ChordLabel(0, ChordQuality::Other); }

    bool is_other() const { return quality == ChordQuality::Other; }

    friend bool operator==(const ChordLabel& a, const ChordLabel& b) {
        return a.quality == b.quality && (a.quality == ChordQuality::Other || a.root == b.root);
    }
    friend bool operator!=(const ChordLabel& a, const ChordLabel& b) { return !(a == b); }
};

inline const std::array<const char*, 12>& pitch_class_names() {
    static const std::array<const char*, 12> names = {"C",  "C#", "D",  "D#", "E",  "F",
                                                      "F#", "G",  "G#", "A",  "A#", "B"};
    return names;
}

// "<ROOT>:<QUAL>" with sharps-only roots; the rootless label prints "X:other".
inline std::string chord_to_string(const ChordLabel& c) {
    if (c.is_other()) return "X:other";
    return std::string(pitch_class_names()[static_cast<std::size_t>(c.root)]) + ":" + quality_name(c.quality);
}

inline ChordLabel chord_from_string(const std::string& text) {
    auto colon = text.find(':');
    if (colon == std::string::npos)
        throw data_error("chord label '" + text + "' is missing ':'");
    std::string root_str = text.substr(0, colon);
    std::string qual_str = text.substr(colon + 1);
    if (qual_str == "other") return ChordLabel::other();

    ChordQuality quality;
    if (qual_str == "maj") quality = ChordQuality::Major;
    else if (qual_str == "min") quality = ChordQuality::Minor;
    else if (qual_str == "aug") quality = ChordQuality::Augmented;
    else if (qual_str == "dim") quality = ChordQuality::Diminished;
    else throw data_error("unknown chord quality '" + qual_str + "' in '" + text + "'");

    for (int pc = 0; pc < kPitchClasses; ++pc) {
        if (root_str == pitch_class_names()[static_cast<std::size_t>(pc)]) return ChordLabel(pc, quality);
    }
    throw data_error("unknown chord root '" + root_str + "' in '" + text + "'");
}

// One 16th-note timestep: a chord label plus the four voice pitches.
struct GridStep {
    ChordLabel chord;
    Pitch s, a, t, b;

    Pitch& voice(int i) {
        switch (i) {
            case 0: return s;
            case 1: return a;
            case 2: return t;
            default: return b;
        }
    }
    const Pitch& voice(int i) const { return const_cast<GridStep*>(this)->voice(i); }

    friend bool operator==(const GridStep& x, const GridStep& y) {
        return x.chord == y.chord && x.s == y.s && x.a == y.a && x.t == y.t && x.b == y.b;
    }
    friend bool operator!=(const GridStep& x, const GridStep& y) { return !(x == y); }
};

constexpr int kVoices = 4;
constexpr int kGridResolution = 4;  // steps per quarter note (16th-note grid)

inline const char* voice_name(int i) {
    static const char* names[kVoices] = {"S", "A", "T", "B"};
    return names[i];
}

// A chorale quantized to the 16th-note grid. The title is metadata;
// equality compares musical content only.
struct GridScore {
    std::string title;
    int resolution = kGridResolution;
    std::vector<GridStep> steps;

    std::size_t length() const { return steps.size(); }

    friend bool operator==(const GridScore& x, const GridScore& y) {
        return x.resolution == y.resolution && x.steps == y.steps;
    }
    friend bool operator!=(const GridScore& x, const GridScore& y) { return !(x == y); }
};

// Pre-quantization form: per-track note events with tick timing, as read
// from a MIDI file, plus whatever chord annotations the source carried.
struct RawScore {
    struct Note {
        std::int64_t onset = 0;     // ticks, >= 0
        std::int64_t duration = 0;  // ticks, > 0
        int pitch = 0;

        friend bool operator==(const Note&, const Note&) = default;
    };

    std::vector<std::vector<Note>> tracks;
    int ppq = 480;
    std::vector<std::pair<std::int64_t, ChordLabel>> chord_annotations;
};

}  // namespace choir
