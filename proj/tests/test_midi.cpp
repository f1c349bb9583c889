#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <vector>

#include "choir/midi.hpp"
#include "helpers.hpp"

using namespace choir;
using Bytes = std::vector<std::uint8_t>;

namespace {

Bytes header(int format, int ntrks, int division) {
    Bytes b = {'M', 'T', 'h', 'd', 0, 0, 0, 6};
    detail::put_u16be(b, static_cast<std::uint16_t>(format));
    detail::put_u16be(b, static_cast<std::uint16_t>(ntrks));
    detail::put_u16be(b, static_cast<std::uint16_t>(division));
    return b;
}

void add_track(Bytes& file, const Bytes& events) {
    file.insert(file.end(), {'M', 'T', 'r', 'k'});
    detail::put_u32be(file, static_cast<std::uint32_t>(events.size()));
    file.insert(file.end(), events.begin(), events.end());
}

const Bytes kEot = {0x00, 0xFF, 0x2F, 0x00};

Bytes cat(std::initializer_list<Bytes> parts) {
    Bytes out;
    for (const Bytes& p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
}

}  // namespace

TEST_CASE("parse simple format 0 with running status") {
    // Two quarter notes; the offs and the second on reuse the 0x90 status.
    Bytes events = cat({{0x00, 0x90, 0x3C, 0x50},  // on C4
                        {0x60, 0x3C, 0x00},        // off via velocity 0, running status
                        {0x00, 0x3E, 0x50},        // on D4, running status
                        {0x60, 0x3E, 0x00},
                        kEot});
    Bytes file = header(0, 1, 96);
    add_track(file, events);

    RawScore raw = parse_midi(file);
    CHECK(raw.ppq == 96);
    REQUIRE(raw.tracks.size() == 1);
    REQUIRE(raw.tracks[0].size() == 2);
    CHECK(raw.tracks[0][0] == RawScore::Note{0, 96, 60});
    CHECK(raw.tracks[0][1] == RawScore::Note{96, 96, 62});
    CHECK(raw.chord_annotations.empty());
}

TEST_CASE("parse format 1 multi-track with skipped events") {
    Bytes track0 = cat({{0x00, 0xFF, 0x51, 0x03, 0x07, 0xA1, 0x20},                    // tempo meta
                        {0x00, 0xFF, 0x03, 0x05, 'c', 'h', 'o', 'i', 'r'},             // name meta
                        kEot});
    Bytes track1 = cat({{0x00, 0xC0, 0x05},                                            // program change
                        {0x00, 0xB0, 0x40, 0x7F},                                      // controller
                        {0x00, 0x90, 0x45, 0x40},
                        {0x10, 0xE0, 0x00, 0x40},                                      // pitch bend
                        {0x70, 0x80, 0x45, 0x00},                                      // explicit off
                        kEot});
    Bytes file = header(1, 2, 480);
    add_track(file, track0);
    add_track(file, track1);

    RawScore raw = parse_midi(file);
    REQUIRE(raw.tracks.size() == 2);
    CHECK(raw.tracks[0].empty());
    REQUIRE(raw.tracks[1].size() == 1);
    CHECK(raw.tracks[1][0] == RawScore::Note{0, 0x80, 69});
}

TEST_CASE("meta and sysex cancel running status") {
    // After the meta event the bare data bytes have no status to lean on.
    Bytes events = cat({{0x00, 0x90, 0x3C, 0x50},
                        {0x00, 0xFF, 0x01, 0x01, 'x'},
                        {0x00, 0x3C, 0x00},  // would be an off if running status survived
                        kEot});
    Bytes file = header(0, 1, 480);
    add_track(file, events);
    CHECK_THROWS_WITH(parse_midi(file), Catch::Matchers::ContainsSubstring("no running status"));

    Bytes events2 = cat({{0x00, 0x90, 0x3C, 0x50},
                         {0x00, 0xF0, 0x02, 0x01, 0xF7},
                         {0x00, 0x3C, 0x00},
                         kEot});
    Bytes file2 = header(0, 1, 480);
    add_track(file2, events2);
    CHECK_THROWS_WITH(parse_midi(file2), Catch::Matchers::ContainsSubstring("no running status"));
}

TEST_CASE("zero-duration notes are dropped and orphan offs ignored") {
    Bytes events = cat({{0x00, 0x90, 0x3C, 0x50},
                        {0x00, 0x80, 0x3C, 0x00},  // off at the same tick: zero duration
                        {0x00, 0x80, 0x45, 0x00},  // off with no matching on
                        kEot});
    Bytes file = header(0, 1, 480);
    add_track(file, events);
    RawScore raw = parse_midi(file);
    REQUIRE(raw.tracks.size() == 1);
    CHECK(raw.tracks[0].empty());
}

TEST_CASE("same pitch on different channels does not collide") {
    Bytes events = cat({{0x00, 0x90, 0x3C, 0x50},
                        {0x00, 0x91, 0x3C, 0x50},
                        {0x20, 0x80, 0x3C, 0x00},
                        {0x20, 0x81, 0x3C, 0x00},
                        kEot});
    Bytes file = header(0, 1, 480);
    add_track(file, events);
    RawScore raw = parse_midi(file);
    REQUIRE(raw.tracks[0].size() == 2);
    CHECK(raw.tracks[0][0] == RawScore::Note{0, 0x20, 60});
    CHECK(raw.tracks[0][1] == RawScore::Note{0, 0x40, 60});
}

TEST_CASE("parse errors carry location detail") {
    SECTION("bad header tag") {
        Bytes file = {'M', 'T', 'x', 'd', 0, 0, 0, 6};
        CHECK_THROWS_WITH(parse_midi(file), Catch::Matchers::ContainsSubstring("MThd"));
    }
    SECTION("unsupported format") {
        Bytes file = header(2, 1, 480);
        add_track(file, kEot);
        CHECK_THROWS_WITH(parse_midi(file), Catch::Matchers::ContainsSubstring("unsupported format 2"));
    }
    SECTION("smpte division") {
        Bytes file = header(0, 1, 0xE250);
        add_track(file, kEot);
        CHECK_THROWS_WITH(parse_midi(file), Catch::Matchers::ContainsSubstring("SMPTE"));
    }
    SECTION("zero division") {
        Bytes file = header(0, 1, 0);
        add_track(file, kEot);
        CHECK_THROWS_WITH(parse_midi(file), Catch::Matchers::ContainsSubstring("positive"));
    }
    SECTION("overlapping note-on") {
        Bytes events = cat({{0x00, 0x90, 0x3C, 0x50}, {0x10, 0x90, 0x3C, 0x50}, kEot});
        Bytes file = header(0, 1, 480);
        add_track(file, events);
        CHECK_THROWS_WITH(parse_midi(file),
                          Catch::Matchers::ContainsSubstring("overlapping unterminated note-on (pitch 60) in track 0 at tick 16"));
    }
    SECTION("unterminated note-on") {
        Bytes events = cat({{0x00, 0x90, 0x3C, 0x50}, kEot});
        Bytes file = header(0, 1, 480);
        add_track(file, events);
        CHECK_THROWS_WITH(parse_midi(file),
                          Catch::Matchers::ContainsSubstring("unterminated note-on (pitch 60) in track 0 at tick 0"));
    }
    SECTION("vlq too long") {
        Bytes events = cat({{0xFF, 0xFF, 0xFF, 0xFF, 0x7F, 0x90, 0x3C, 0x50}, kEot});
        Bytes file = header(0, 1, 480);
        add_track(file, events);
        CHECK_THROWS_WITH(parse_midi(file), Catch::Matchers::ContainsSubstring("variable-length"));
    }
    SECTION("missing end of track") {
        Bytes events = {0x00, 0x90, 0x3C, 0x50};
        Bytes file = header(0, 1, 480);
        add_track(file, events);
        CHECK_THROWS_WITH(parse_midi(file), Catch::Matchers::ContainsSubstring("no end-of-track"));
    }
    SECTION("track length mismatch") {
        Bytes events = cat({kEot, {0x00}});  // declared length includes a stray byte past EOT
        Bytes file = header(0, 1, 480);
        add_track(file, events);
        CHECK_THROWS_WITH(parse_midi(file), Catch::Matchers::ContainsSubstring("does not match its events"));
    }
    SECTION("truncated file") {
        Bytes file = header(0, 1, 480);
        file.insert(file.end(), {'M', 'T', 'r', 'k', 0, 0, 0, 9});
        CHECK_THROWS_WITH(parse_midi(file), Catch::Matchers::ContainsSubstring("byte offset"));
    }
}

TEST_CASE("write emits fixed header and tempo") {
    GridScore score = choir::testing::fixture_chorale(4);
    Bytes bytes = write_midi(score);

    Bytes want_head = header(1, 4, 480);
    REQUIRE(bytes.size() > want_head.size());
    CHECK(Bytes(bytes.begin(), bytes.begin() + static_cast<long>(want_head.size())) == want_head);

    // Track 0 opens with the 120 BPM tempo meta event.
    Bytes tempo = {0x00, 0xFF, 0x51, 0x03, 0x07, 0xA1, 0x20};
    Bytes track0_start(bytes.begin() + 22, bytes.begin() + 22 + 7);
    CHECK(track0_start == tempo);
}

TEST_CASE("write merges runs and honors rests") {
    GridScore score;
    GridStep step;
    step.s = 72;
    step.a = 60;
    step.t = kRest;
    step.b = 40;
    score.steps.push_back(step);
    step.s = 72;  // held
    step.a = kRest;
    step.b = 41;
    score.steps.push_back(step);
    step.s = kRest;
    step.a = 60;
    step.b = 41;  // held
    score.steps.push_back(step);

    RawScore raw = parse_midi(write_midi(score));
    REQUIRE(raw.tracks.size() == 4);
    CHECK(raw.ppq == 480);

    REQUIRE(raw.tracks[0].size() == 1);
    CHECK(raw.tracks[0][0] == RawScore::Note{0, 240, 72});

    REQUIRE(raw.tracks[1].size() == 2);
    CHECK(raw.tracks[1][0] == RawScore::Note{0, 120, 60});
    CHECK(raw.tracks[1][1] == RawScore::Note{240, 120, 60});

    CHECK(raw.tracks[2].empty());

    REQUIRE(raw.tracks[3].size() == 2);
    CHECK(raw.tracks[3][0] == RawScore::Note{0, 120, 40});
    CHECK(raw.tracks[3][1] == RawScore::Note{120, 240, 41});
}

TEST_CASE("write/parse roundtrip on random scores") {
    Pcg32 rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        GridScore score = choir::testing::random_score(rng, 1 + rng.below(32));
        RawScore raw = parse_midi(write_midi(score));
        REQUIRE(raw.tracks.size() == 4);
        for (int v = 0; v < kVoices; ++v) {
            // Rebuild the per-step pitch map from the notes and compare.
            std::vector<Pitch> grid(score.length(), kRest);
            for (const RawScore::Note& n : raw.tracks[v]) {
                REQUIRE(n.onset % 120 == 0);
                REQUIRE(n.duration % 120 == 0);
                for (std::int64_t s = n.onset / 120; s < (n.onset + n.duration) / 120; ++s)
                    grid[static_cast<std::size_t>(s)] = n.pitch;
            }
            for (std::size_t t = 0; t < score.length(); ++t) CHECK(grid[t] == score.steps[t].voice(v));
        }
    }
}
