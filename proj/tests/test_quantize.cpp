#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "choir/quantize.hpp"
#include "helpers.hpp"

using namespace choir;

TEST_CASE("infer_chord on plain triads") {
    CHECK(infer_chord({0, 4, 7}) == ChordLabel(0, ChordQuality::Major));
    CHECK(infer_chord({0, 3, 7}) == ChordLabel(0, ChordQuality::Minor));
    CHECK(infer_chord({9, 0, 4}) == ChordLabel(9, ChordQuality::Minor));
    CHECK(infer_chord({2, 6, 9}) == ChordLabel(2, ChordQuality::Major));
    CHECK(infer_chord({5, 8, 0}) == ChordLabel(5, ChordQuality::Minor));
    CHECK(infer_chord({11, 2, 5}) == ChordLabel(11, ChordQuality::Diminished));
    CHECK(infer_chord({7, 11, 2, 19 % 12}) == ChordLabel(7, ChordQuality::Major));
}

TEST_CASE("infer_chord tie-breaks and fallbacks") {
    // C:min and D#:maj both score 2 on {0,3,7,10}; the lower root wins.
    CHECK(infer_chord({0, 3, 7, 10}) == ChordLabel(0, ChordQuality::Minor));
    // The augmented triad is symmetric; the lowest of the three roots wins.
    CHECK(infer_chord({1, 5, 9}) == ChordLabel(1, ChordQuality::Augmented));
    // {0,4} fits C:maj and A:min equally; root then quality order favors C:maj.
    CHECK(infer_chord({0, 4}) == ChordLabel(0, ChordQuality::Major));

    CHECK(infer_chord({}) == ChordLabel::other());
    CHECK(infer_chord({5}) == ChordLabel::other());      // best score 1
    CHECK(infer_chord({0, 1, 2}) == ChordLabel::other());  // no triad holds two of these
    CHECK(infer_chord({0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}) == ChordLabel::other());

    // Out-of-range pitch classes reduce mod 12.
    CHECK(infer_chord({12, 16, 19}) == ChordLabel(0, ChordQuality::Major));
    CHECK(infer_chord({-12, 4, 7}) == ChordLabel(0, ChordQuality::Major));
}

TEST_CASE("quantize covers steps whose start lies inside the note") {
    RawScore raw;
    raw.ppq = 480;
    raw.tracks = {{{0, 480, 70}}};

    GridScore score = quantize(raw, VoicePolicy::TrackOrder);
    REQUIRE(score.length() == 4);
    for (std::size_t t = 0; t < 4; ++t) CHECK(score.steps[t].s == Pitch(70));

    // Off-grid onset: [100,200) only contains the step-1 start tick 120.
    raw.tracks = {{{100, 100, 70}}};
    score = quantize(raw, VoicePolicy::TrackOrder);
    REQUIRE(score.length() == 2);
    CHECK(score.steps[0].s == kRest);
    CHECK(score.steps[1].s == Pitch(70));

    // [130,230) straddles no step start at all; the note is inaudible.
    raw.tracks = {{{130, 100, 70}}};
    score = quantize(raw, VoicePolicy::TrackOrder);
    REQUIRE(score.length() == 2);
    CHECK(score.steps[0].s == kRest);
    CHECK(score.steps[1].s == kRest);
}

TEST_CASE("quantize length is the ceiling of the last note end") {
    RawScore raw;
    raw.ppq = 480;
    raw.tracks = {{{0, 481, 60}}};
    CHECK(quantize(raw, VoicePolicy::TrackOrder).length() == 5);

    raw.tracks = {{{0, 1, 60}}};
    CHECK(quantize(raw, VoicePolicy::TrackOrder).length() == 1);

    raw.ppq = 96;
    raw.tracks = {{{24, 24, 60}, {96, 96, 62}}};
    CHECK(quantize(raw, VoicePolicy::TrackOrder).length() == 8);
}

TEST_CASE("later onsets overwrite within a track") {
    RawScore raw;
    raw.ppq = 480;
    raw.tracks = {{{0, 480, 60}, {60, 120, 72}}};  // [60,180) grabs step 1

    GridScore score = quantize(raw, VoicePolicy::TrackOrder);
    REQUIRE(score.length() == 4);
    CHECK(score.steps[0].s == Pitch(60));
    CHECK(score.steps[1].s == Pitch(72));
    CHECK(score.steps[2].s == Pitch(60));
    CHECK(score.steps[3].s == Pitch(60));
}

TEST_CASE("voice assignment policies") {
    RawScore raw;
    raw.ppq = 480;
    // Mean pitches: track0 = 50, track1 = 71, track2 = 40, track3 = 60.
    raw.tracks = {{{0, 480, 50}},
                  {{0, 240, 70}, {240, 240, 72}},
                  {{0, 480, 40}},
                  {{0, 480, 60}}};

    GridScore by_mean = quantize(raw, VoicePolicy::MeanPitchDescending);
    CHECK(by_mean.steps[0].s == Pitch(70));
    CHECK(by_mean.steps[0].a == Pitch(60));
    CHECK(by_mean.steps[0].t == Pitch(50));
    CHECK(by_mean.steps[0].b == Pitch(40));

    GridScore by_order = quantize(raw, VoicePolicy::TrackOrder);
    CHECK(by_order.steps[0].s == Pitch(50));
    CHECK(by_order.steps[0].a == Pitch(70));
    CHECK(by_order.steps[0].t == Pitch(40));
    CHECK(by_order.steps[0].b == Pitch(60));

    // Two voices only: T and B stay silent.
    RawScore duet;
    duet.ppq = 480;
    duet.tracks = {{{0, 480, 64}}, {{0, 480, 52}}};
    GridScore two = quantize(duet, VoicePolicy::MeanPitchDescending);
    CHECK(two.steps[0].s == Pitch(64));
    CHECK(two.steps[0].a == Pitch(52));
    CHECK(two.steps[0].t == kRest);
    CHECK(two.steps[0].b == kRest);

    // Empty tracks are skipped before assignment.
    RawScore gappy;
    gappy.ppq = 480;
    gappy.tracks = {{}, {{0, 480, 64}}, {}, {{0, 480, 52}}};
    CHECK(quantize(gappy, VoicePolicy::TrackOrder) == two);
}

TEST_CASE("identical mean pitch warns and keeps track order") {
    RawScore raw;
    raw.ppq = 480;
    raw.tracks = {{{0, 480, 60}}, {{0, 480, 60}}};
    std::vector<std::string> warnings;
    GridScore score = quantize(raw, VoicePolicy::MeanPitchDescending, &warnings);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("identical mean pitch") != std::string::npos);
    CHECK(score.steps[0].s == Pitch(60));
    CHECK(score.steps[0].a == Pitch(60));
}

TEST_CASE("chord annotations carry forward, inference fills the gap") {
    RawScore raw;
    raw.ppq = 480;
    raw.tracks = {{{0, 960, 76}}, {{0, 960, 67}}, {{0, 960, 60}}, {{0, 960, 48}}};
    raw.chord_annotations = {{240, ChordLabel(7, ChordQuality::Major)},
                             {480, ChordLabel(9, ChordQuality::Minor)}};

    GridScore score = quantize(raw, VoicePolicy::TrackOrder);
    REQUIRE(score.length() == 8);
    // Steps before the first annotation fall back to inference: {4,7,0} = C:maj.
    CHECK(score.steps[0].chord == ChordLabel(0, ChordQuality::Major));
    CHECK(score.steps[1].chord == ChordLabel(0, ChordQuality::Major));
    // Annotation at tick 240 lands on step 2 (start tick 240).
    CHECK(score.steps[2].chord == ChordLabel(7, ChordQuality::Major));
    CHECK(score.steps[3].chord == ChordLabel(7, ChordQuality::Major));
    for (std::size_t t = 4; t < 8; ++t) CHECK(score.steps[t].chord == ChordLabel(9, ChordQuality::Minor));
}

TEST_CASE("chord inference uses the sounding pitches per step") {
    RawScore raw;
    raw.ppq = 480;
    raw.tracks = {{{0, 240, 76}, {240, 240, 77}},
                  {{0, 240, 67}, {240, 240, 69}},
                  {{0, 240, 60}, {240, 240, 60}},
                  {{0, 240, 48}, {240, 240, 53}}};
    GridScore score = quantize(raw, VoicePolicy::TrackOrder);
    REQUIRE(score.length() == 4);
    CHECK(score.steps[0].chord == ChordLabel(0, ChordQuality::Major));
    CHECK(score.steps[1].chord == ChordLabel(0, ChordQuality::Major));
    CHECK(score.steps[2].chord == ChordLabel(5, ChordQuality::Major));
    CHECK(score.steps[3].chord == ChordLabel(5, ChordQuality::Major));
}

TEST_CASE("quantize input validation") {
    RawScore raw;
    raw.ppq = 480;
    raw.tracks = {};
    CHECK_THROWS_WITH(quantize(raw), Catch::Matchers::ContainsSubstring("no non-empty tracks"));

    raw.tracks = {{}, {}};
    CHECK_THROWS_WITH(quantize(raw), Catch::Matchers::ContainsSubstring("no non-empty tracks"));

    raw.tracks = {{{0, 10, 1}}, {{0, 10, 2}}, {{0, 10, 3}}, {{0, 10, 4}}, {{0, 10, 5}}};
    CHECK_THROWS_WITH(quantize(raw), Catch::Matchers::ContainsSubstring("5 non-empty tracks"));

    raw.tracks = {{{-1, 10, 60}}};
    CHECK_THROWS_WITH(quantize(raw), Catch::Matchers::ContainsSubstring("negative note onset"));

    raw.tracks = {{{0, 0, 60}}};
    CHECK_THROWS_WITH(quantize(raw), Catch::Matchers::ContainsSubstring("non-positive note duration"));

    raw.tracks = {{{0, 10, 60}}};
    raw.ppq = 0;
    CHECK_THROWS_WITH(quantize(raw), Catch::Matchers::ContainsSubstring("ppq"));
}

TEST_CASE("random scores match a per-step brute-force oracle") {
    Pcg32 rng(777);
    for (int trial = 0; trial < 30; ++trial) {
        RawScore raw;
        raw.ppq = 24 + static_cast<int>(rng.below(960));
        raw.tracks.resize(4);
        for (auto& track : raw.tracks) {
            std::size_t n = 1 + rng.below(12);
            for (std::size_t i = 0; i < n; ++i) {
                std::int64_t onset = rng.below(static_cast<std::uint32_t>(raw.ppq * 8));
                std::int64_t duration = 1 + rng.below(static_cast<std::uint32_t>(raw.ppq * 2));
                track.push_back({onset, duration, 30 + static_cast<int>(rng.below(60))});
            }
        }

        GridScore score = quantize(raw, VoicePolicy::TrackOrder);

        std::int64_t max_end = 0;
        for (const auto& track : raw.tracks)
            for (const auto& n : track) max_end = std::max(max_end, n.onset + n.duration);
        std::int64_t want_length = std::max<std::int64_t>(1, (4 * max_end + raw.ppq - 1) / raw.ppq);
        REQUIRE(score.length() == static_cast<std::size_t>(want_length));

        for (std::int64_t s = 0; s < want_length; ++s) {
            std::set<int> sounding;
            for (int v = 0; v < 4; ++v) {
                // Winner at step s: the covering note with the greatest
                // (onset, original index), scanned directly.
                Pitch want = kRest;
                std::int64_t best = -1;
                for (const auto& n : raw.tracks[static_cast<std::size_t>(v)]) {
                    bool covers = 4 * n.onset <= s * raw.ppq && s * raw.ppq < 4 * (n.onset + n.duration);
                    if (covers && n.onset >= best) {
                        best = n.onset;
                        want = n.pitch;
                    }
                }
                CHECK(score.steps[static_cast<std::size_t>(s)].voice(v) == want);
                if (want) sounding.insert(*want % 12);
            }
            CHECK(score.steps[static_cast<std::size_t>(s)].chord == infer_chord(sounding));
        }
    }
}
