#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "choir/common.hpp"
#include "choir/model.hpp"
#include "choir/score.hpp"
#include "choir/tokenizer.hpp"
#include "choir/trainer.hpp"

namespace choir {

// Triad pitch classes rotated to the root, ascending; empty for "other"
// (those steps are skipped by every harmonic metric).
inline std::vector<int> chord_tone_set(const ChordLabel& chord) {
    static constexpr std::array<std::array<int, 3>, 4> kTemplates{{{0, 4, 7}, {0, 3, 7}, {0, 4, 8}, {0, 3, 6}}};
    if (chord.is_other()) return {};
    std::vector<int> tones;
    for (int offset : kTemplates[static_cast<std::size_t>(chord.quality)]) tones.push_back((chord.root + offset) % 12);
    std::sort(tones.begin(), tones.end());
    return tones;
}

namespace detail {

inline bool chord_contains(const std::vector<int>& tones, int pc) {
    return std::find(tones.begin(), tones.end(), pc) != tones.end();
}

// Onset = first step of a run of equal pitches (a rest breaks the run).
struct MelodyNote {
    std::size_t step = 0;
    int pitch = 0;
};

inline std::vector<MelodyNote> melody_onsets(const std::vector<Pitch>& melody) {
    std::vector<MelodyNote> notes;
    for (std::size_t i = 0; i < melody.size(); ++i)
        if (melody[i] && (i == 0 || melody[i - 1] != melody[i])) notes.push_back({i, *melody[i]});
    return notes;
}

}  // namespace detail

struct CtnctrBreakdown {
    long long n_c = 0;  // chord-tone onsets
    long long n_n = 0;  // non-chord-tone onsets
    long long n_p = 0;  // non-chord tones resolving by <= 2 semitones
    std::optional<double> value;
};

// (n_c + n_p) / (n_c + n_n) over melody onsets sounding against a known
// chord; absent when no onset is eligible.
inline CtnctrBreakdown ctnctr(const std::vector<Pitch>& melody, const std::vector<ChordLabel>& chords) {
    if (melody.size() != chords.size()) throw data_error("ctnctr: melody and chord rows differ in length");
    CtnctrBreakdown out;
    auto notes = detail::melody_onsets(melody);
    for (std::size_t i = 0; i < notes.size(); ++i) {
        std::vector<int> tones = chord_tone_set(chords[notes[i].step]);
        if (tones.empty()) continue;
        int pc = ((notes[i].pitch % 12) + 12) % 12;
        if (detail::chord_contains(tones, pc)) {
            out.n_c += 1;
        } else {
            out.n_n += 1;
            if (i + 1 < notes.size() && std::abs(notes[i + 1].pitch - notes[i].pitch) <= 2) out.n_p += 1;
        }
    }
    if (out.n_c + out.n_n > 0)
        out.value = static_cast<double>(out.n_c + out.n_p) / static_cast<double>(out.n_c + out.n_n);
    return out;
}

// Consonance of the directed interval from chord tone up to melody,
// (melody_pc - chord_pc) mod 12: +1 for {0,3,4,7,8,9}, 0 for the fourth,
// -1 otherwise. A function of the pitch-class difference, hence exactly
// transposition-invariant.
inline int interval_score(int melody_pc, int chord_pc) {
    int interval = ((melody_pc - chord_pc) % 12 + 12) % 12;
    switch (interval) {
        case 0: case 3: case 4: case 7: case 8: case 9: return 1;
        case 5: return 0;
        default: return -1;
    }
}

// Mean interval score over every (sounding step, chord tone) pair; held
// steps count once each, so longer notes weigh more.
inline std::optional<double> pcs(const std::vector<Pitch>& melody, const std::vector<ChordLabel>& chords) {
    if (melody.size() != chords.size()) throw data_error("pcs: melody and chord rows differ in length");
    long long pairs = 0, total = 0;
    for (std::size_t i = 0; i < melody.size(); ++i) {
        if (!melody[i]) continue;
        std::vector<int> tones = chord_tone_set(chords[i]);
        if (tones.empty()) continue;
        int pc = ((*melody[i] % 12) + 12) % 12;
        for (int tone : tones) {
            total += interval_score(pc, tone);
            pairs += 1;
        }
    }
    if (pairs == 0) return std::nullopt;
    return static_cast<double>(total) / static_cast<double>(pairs);
}

using PitchClassProfile = std::array<double, 12>;
using TonalCentroid = std::array<double, 6>;

// 6-D projection onto the circles of fifths, minor thirds, and major
// thirds; the profile is L1-normalized first.
inline TonalCentroid tonal_centroid(const PitchClassProfile& pcp) {
    double mass = 0;
    for (double w : pcp) {
        if (w < 0) throw data_error("tonal_centroid: negative profile weight");
        mass += w;
    }
    if (mass <= 0) throw data_error("tonal_centroid: zero-mass pitch class profile");
    constexpr double kPi = 3.14159265358979323846;
    TonalCentroid c{};
    for (int l = 0; l < 12; ++l) {
        double w = pcp[static_cast<std::size_t>(l)] / mass;
        c[0] += w * std::sin(l * 7.0 * kPi / 6.0);
        c[1] += w * std::cos(l * 7.0 * kPi / 6.0);
        c[2] += w * std::sin(l * 3.0 * kPi / 2.0);
        c[3] += w * std::cos(l * 3.0 * kPi / 2.0);
        c[4] += w * 0.5 * std::sin(l * 2.0 * kPi / 3.0);
        c[5] += w * 0.5 * std::cos(l * 2.0 * kPi / 3.0);
    }
    return c;
}

inline double centroid_distance(const TonalCentroid& a, const TonalCentroid& b) {
    double sq = 0;
    for (std::size_t i = 0; i < 6; ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(sq);
}

// Mean over sounding steps of the distance between the one-hot melody
// centroid and the uniform chord-tone centroid.
inline std::optional<double> mctd(const std::vector<Pitch>& melody, const std::vector<ChordLabel>& chords) {
    if (melody.size() != chords.size()) throw data_error("mctd: melody and chord rows differ in length");
    long long steps = 0;
    double total = 0;
    for (std::size_t i = 0; i < melody.size(); ++i) {
        if (!melody[i]) continue;
        std::vector<int> tones = chord_tone_set(chords[i]);
        if (tones.empty()) continue;
        PitchClassProfile note{};
        note[static_cast<std::size_t>((*melody[i] % 12 + 12) % 12)] = 1.0;
        PitchClassProfile chord{};
        for (int tone : tones) chord[static_cast<std::size_t>(tone)] = 1.0;
        total += centroid_distance(tonal_centroid(note), tonal_centroid(chord));
        steps += 1;
    }
    if (steps == 0) return std::nullopt;
    return total / static_cast<double>(steps);
}

// TER = 100 - teacher-forced accuracy with chord and soprano targets
// excluded: the error rate over alto/tenor/bass predictions.
inline double token_error_rate(const ModelParams<float>& params, const ModelConfig& cfg,
                               const std::vector<TokenSeq>& seqs, SeqLayout layout = {}) {
    return 100.0 - validation_accuracy(params, cfg, seqs, layout, {Role::Chord, Role::S});
}

// Per-layer mean over heads and query positions of sum_j w[t,j] * (t - j);
// masked keys carry zero weight and contribute nothing.
template <class T>
std::vector<double> attention_distance(const ForwardTrace<T>& trace) {
    std::vector<double> per_layer;
    for (const auto& heads : trace.attention) {
        double total = 0;
        long long rows = 0;
        for (const Mat<T>& w : heads) {
            for (Eigen::Index t = 0; t < w.rows(); ++t) {
                double row = 0;
                for (Eigen::Index j = 0; j < w.cols(); ++j) row += static_cast<double>(w(t, j)) * static_cast<double>(t - j);
                total += row;
                rows += 1;
            }
        }
        per_layer.push_back(rows ? total / static_cast<double>(rows) : 0.0);
    }
    return per_layer;
}

struct PieceMetrics {
    std::string id;
    std::optional<double> ctnctr, pcs, mctd, ter;
};

struct MetricReport {
    std::vector<PieceMetrics> rows;
    PieceMetrics mean;  // id "MEAN"; each field averages the rows where it is present
};

inline void recompute_mean(MetricReport& report) {
    report.mean = PieceMetrics{"MEAN", {}, {}, {}, {}};
    auto average = [&report](std::optional<double> PieceMetrics::* field) {
        double sum = 0;
        long long n = 0;
        for (const auto& row : report.rows)
            if (row.*field) {
                sum += *(row.*field);
                n += 1;
            }
        if (n > 0) report.mean.*field = sum / static_cast<double>(n);
    };
    average(&PieceMetrics::ctnctr);
    average(&PieceMetrics::pcs);
    average(&PieceMetrics::mctd);
    average(&PieceMetrics::ter);
}

// Harmonic metrics per piece with melody taken from one voice (soprano by
// default) against the annotated chord row.
inline MetricReport harmonic_report(const std::vector<GridScore>& pieces, int melody_voice = 0) {
    if (pieces.empty()) throw data_error("harmonic_report: empty corpus");
    if (melody_voice < 0 || melody_voice >= kVoices) throw data_error("harmonic_report: voice index out of range");
    MetricReport report;
    for (std::size_t i = 0; i < pieces.size(); ++i) {
        const GridScore& piece = pieces[i];
        std::vector<Pitch> melody;
        std::vector<ChordLabel> chords;
        for (const GridStep& step : piece.steps) {
            melody.push_back(step.voice(melody_voice));
            chords.push_back(step.chord);
        }
        PieceMetrics row;
        row.id = piece.title.empty() ? "piece_" + std::to_string(i) : piece.title;
        row.ctnctr = ctnctr(melody, chords).value;
        row.pcs = pcs(melody, chords);
        row.mctd = mctd(melody, chords);
        report.rows.push_back(std::move(row));
    }
    recompute_mean(report);
    return report;
}

// Fills the TER column from teacher-forced predictions on each piece.
inline void attach_ter(MetricReport& report, const ModelParams<float>& params, const ModelConfig& cfg,
                       const std::vector<GridScore>& pieces, SeqLayout layout = {}) {
    if (pieces.size() != report.rows.size()) throw data_error("attach_ter: report and corpus sizes differ");
    for (std::size_t i = 0; i < pieces.size(); ++i)
        report.rows[i].ter = token_error_rate(params, cfg, {encode(pieces[i], layout)}, layout);
    recompute_mean(report);
}

namespace detail {

inline std::string metric_cell(const std::optional<double>& v) {
    if (!v) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return buf;
}

inline void append_report_row(std::string& out, const PieceMetrics& row) {
    out += row.id + "," + metric_cell(row.ctnctr) + "," + metric_cell(row.pcs) + "," + metric_cell(row.mctd) + "," +
           metric_cell(row.ter) + "\n";
}

}  // namespace detail

// CSV: one row per piece, a MEAN summary row, and (when a reference report
// is supplied) REFERENCE_MEAN plus DELTA rows of mean differences.
inline std::string report_csv(const MetricReport& report, const MetricReport* reference = nullptr) {
    std::string out = "piece_id,ctnctr,pcs,mctd,ter\n";
    for (const auto& row : report.rows) detail::append_report_row(out, row);
    detail::append_report_row(out, report.mean);
    if (reference) {
        PieceMetrics ref = reference->mean;
        ref.id = "REFERENCE_MEAN";
        detail::append_report_row(out, ref);
        PieceMetrics delta;
        delta.id = "DELTA";
        auto diff = [&](std::optional<double> PieceMetrics::* field) {
            if (report.mean.*field && reference->mean.*field)
                delta.*field = *(report.mean.*field) - *(reference->mean.*field);
        };
        diff(&PieceMetrics::ctnctr);
        diff(&PieceMetrics::pcs);
        diff(&PieceMetrics::mctd);
        diff(&PieceMetrics::ter);
        detail::append_report_row(out, delta);
    }
    return out;
}

}  // namespace choir
