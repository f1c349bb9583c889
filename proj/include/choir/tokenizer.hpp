#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "choir/score.hpp"

namespace choir {

using TokenSeq = std::vector<int>;

// Shared 178-way vocabulary. Note ids 0..127 are the raw MIDI pitch,
// 128 is the rest token. Chord ids are 129 + root*4 + quality index
// (maj=0, min=1, aug=2, dim=3); 177 is the rootless "other" chord.
namespace vocab {

constexpr int kSize = 178;
constexpr int kNoteCount = 129;
constexpr int kRestId = 128;
constexpr int kChordBase = 129;
constexpr int kOtherChordId = 177;

inline bool is_note_id(int id) { return id >= 0 && id < kNoteCount; }
inline bool is_chord_id(int id) { return id >= kChordBase && id < kSize; }

inline int note_id(const Pitch& p) { return p ? *p : kRestId; }

inline Pitch note_from_id(int id) {
    if (!is_note_id(id)) throw data_error("id " + std::to_string(id) + " is not a note token");
    return id == kRestId ? kRest : Pitch(id);
}

inline int chord_id(const ChordLabel& c) {
    if (c.is_other()) return kOtherChordId;
    return kChordBase + c.root * 4 + static_cast<int>(c.quality);
}

inline ChordLabel chord_from_id(int id) {
    if (!is_chord_id(id)) throw data_error("id " + std::to_string(id) + " is not a chord token");
    if (id == kOtherChordId) return ChordLabel::other();
    int offset = id - kChordBase;
    return ChordLabel(offset / 4, static_cast<ChordQuality>(offset % 4));
}

}  // namespace vocab

enum class Role : int { Chord = 0, S = 1, A = 2, T = 3, B = 4 };

inline const char* role_name(Role r) {
    switch (r) {
        case Role::Chord: return "chord";
        case Role::S: return "S";
        case Role::A: return "A";
        case Role::T: return "T";
        case Role::B: return "B";
    }
    return "?";
}

// Position-to-role structure of a flat sequence. The default layout carries
// the chord token first in every 5-token step; the chordless layout (the
// "chord tokens off" ablation) packs 4 note tokens per step over the
// 129-entry note vocabulary.
struct SeqLayout {
    bool chord_tokens = true;

    int tokens_per_step() const { return chord_tokens ? 5 : 4; }
    int vocab_size() const { return chord_tokens ? vocab::kSize : vocab::kNoteCount; }

    Role role_at(std::size_t pos) const {
        int r = static_cast<int>(pos % static_cast<std::size_t>(tokens_per_step()));
        return chord_tokens ? static_cast<Role>(r) : static_cast<Role>(r + 1);
    }

    bool id_matches_role(int id, Role role) const {
        if (id < 0 || id >= vocab_size()) return false;
        return role == Role::Chord ? vocab::is_chord_id(id) : vocab::is_note_id(id);
    }
};

inline TokenSeq encode(const GridScore& score, const SeqLayout& layout = {}) {
    TokenSeq ids;
    ids.reserve(score.length() * static_cast<std::size_t>(layout.tokens_per_step()));
    for (const GridStep& step : score.steps) {
        if (layout.chord_tokens) ids.push_back(vocab::chord_id(step.chord));
        for (int v = 0; v < kVoices; ++v) ids.push_back(vocab::note_id(step.voice(v)));
    }
    return ids;
}

struct RoleViolation {
    std::size_t position = 0;
    int id = 0;
    Role expected = Role::Chord;
    bool out_of_vocab = false;
};

// Lists every position whose id does not fit its role; empty iff the
// sequence is well-formed. Total over arbitrary id vectors.
inline std::vector<RoleViolation> validate_roles(const TokenSeq& seq, const SeqLayout& layout = {}) {
    std::vector<RoleViolation> violations;
    for (std::size_t p = 0; p < seq.size(); ++p) {
        Role expected = layout.role_at(p);
        int id = seq[p];
        if (id < 0 || id >= layout.vocab_size()) {
            violations.push_back({p, id, expected, true});
        } else if (!layout.id_matches_role(id, expected)) {
            violations.push_back({p, id, expected, false});
        }
    }
    return violations;
}

inline GridScore decode(const TokenSeq& seq, const SeqLayout& layout = {}) {
    if (seq.empty()) throw data_error("decode: empty sequence");
    auto tps = static_cast<std::size_t>(layout.tokens_per_step());
    if (seq.size() % tps != 0)
        throw data_error("decode: length " + std::to_string(seq.size()) + " is not divisible by " +
                         std::to_string(tps) + " (structure breaks at position " +
                         std::to_string(seq.size() - seq.size() % tps) + ")");
    for (std::size_t p = 0; p < seq.size(); ++p) {
        Role expected = layout.role_at(p);
        if (!layout.id_matches_role(seq[p], expected))
            throw data_error("decode: id " + std::to_string(seq[p]) + " at position " + std::to_string(p) +
                             " does not fit role " + role_name(expected));
    }

    GridScore score;
    score.steps.resize(seq.size() / tps);
    for (std::size_t t = 0; t < score.steps.size(); ++t) {
        std::size_t base = t * tps;
        GridStep& step = score.steps[t];
        if (layout.chord_tokens) step.chord = vocab::chord_from_id(seq[base++]);
        for (int v = 0; v < kVoices; ++v) step.voice(v) = vocab::note_from_id(seq[base + static_cast<std::size_t>(v)]);
    }
    return score;
}

// Token file format: one sequence per line, space-separated decimal ids.
inline std::string tokens_to_line(const TokenSeq& seq) {
    std::string line;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (i) line += ' ';
        line += std::to_string(seq[i]);
    }
    return line;
}

inline TokenSeq tokens_from_line(const std::string& line) {
    TokenSeq seq;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        if (i >= line.size()) break;
        bool neg = line[i] == '-';
        if (neg) ++i;
        if (i >= line.size() || line[i] < '0' || line[i] > '9')
            throw data_error(i >= line.size() ? std::string("token file: digits expected after '-'")
                                              : "token file: unexpected character '" + std::string(1, line[i]) + "'");
        long v = 0;
        while (i < line.size() && line[i] >= '0' && line[i] <= '9') {
            v = v * 10 + (line[i] - '0');
            ++i;
        }
        seq.push_back(static_cast<int>(neg ? -v : v));
    }
    return seq;
}

}  // namespace choir
