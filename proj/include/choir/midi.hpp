#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "choir/score.hpp"

namespace choir {

constexpr int kWritePpq = 480;
constexpr int kWriteTempoUsPerQuarter = 500000;  // 120 BPM

namespace detail {

class MidiReader {
  public:
    explicit MidiReader(std::span<const std::uint8_t> data) : data_(data) {}

    std::size_t pos() const { return pos_; }
    std::size_t size() const { return data_.size(); }

    [[noreturn]] void fail(const std::string& what) const {
        throw data_error("midi: " + what + " at byte offset " + std::to_string(pos_));
    }

    std::uint8_t u8() {
        if (pos_ >= data_.size()) fail("unexpected end of file");
        return data_[pos_++];
    }

    std::uint8_t peek() const {
        if (pos_ >= data_.size()) throw data_error("midi: unexpected end of file at byte offset " + std::to_string(pos_));
        return data_[pos_];
    }

    std::uint16_t u16be() {
        std::uint16_t hi = u8();
        return static_cast<std::uint16_t>((hi << 8) | u8());
    }

    std::uint32_t u32be() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = (v << 8) | u8();
        return v;
    }

    // Variable-length quantity, at most 4 bytes per the SMF spec.
    std::uint32_t vlq() {
        std::uint32_t value = 0;
        for (int i = 0; i < 4; ++i) {
            std::uint8_t byte = u8();
            value = (value << 7) | (byte & 0x7Fu);
            if (!(byte & 0x80u)) return value;
        }
        fail("variable-length quantity longer than 4 bytes");
    }

    void skip(std::size_t n) {
        if (pos_ + n > data_.size()) fail("chunk data runs past end of file");
        pos_ += n;
    }

    void expect_tag(const char* tag) {
        for (int i = 0; i < 4; ++i) {
            if (pos_ >= data_.size() || data_[pos_] != static_cast<std::uint8_t>(tag[i]))
                fail(std::string("expected '") + tag + "' chunk tag");
            ++pos_;
        }
    }

  private:
    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

}  // namespace detail

// Parses a Standard MIDI File (format 0 or 1) into per-track note lists.
// Note-on with velocity 0 counts as note-off; running status is honored;
// meta and sysex events are skipped. Chord annotations stay empty (MIDI
// carries none).
inline RawScore parse_midi(std::span<const std::uint8_t> bytes) {
    detail::MidiReader r(bytes);

    r.expect_tag("MThd");
    std::uint32_t header_len = r.u32be();
    if (header_len < 6) r.fail("header chunk shorter than 6 bytes");
    std::uint16_t format = r.u16be();
    std::uint16_t ntrks = r.u16be();
    std::uint16_t division = r.u16be();
    if (format != 0 && format != 1)
        throw data_error("midi: unsupported format " + std::to_string(format) + " (only 0 and 1)");
    if (division & 0x8000u) throw data_error("midi: SMPTE time division is not supported");
    if (division == 0) throw data_error("midi: ticks-per-quarter division must be positive");
    r.skip(header_len - 6);

    RawScore raw;
    raw.ppq = division;

    for (std::uint16_t track_idx = 0; track_idx < ntrks; ++track_idx) {
        r.expect_tag("MTrk");
        std::uint32_t track_len = r.u32be();
        std::size_t track_end = r.pos() + track_len;
        if (track_end > r.size()) r.fail("track length runs past end of file");

        std::vector<RawScore::Note> notes;
        std::map<int, std::int64_t> active;  // (channel<<8 | pitch) -> onset tick
        std::int64_t tick = 0;
        std::uint8_t running_status = 0;
        bool saw_eot = false;

        while (!saw_eot) {
            if (r.pos() >= track_end) r.fail("track " + std::to_string(track_idx) + " has no end-of-track event");
            tick += r.vlq();

            std::uint8_t status = r.peek();
            if (status & 0x80u) {
                r.u8();
                if (status < 0xF0u) running_status = status;
            } else {
                if (running_status == 0) r.fail("data byte with no running status");
                status = running_status;
            }

            if (status == 0xFFu) {
                std::uint8_t type = r.u8();
                std::uint32_t len = r.vlq();
                r.skip(len);
                running_status = 0;
                if (type == 0x2F) saw_eot = true;
            } else if (status == 0xF0u || status == 0xF7u) {
                std::uint32_t len = r.vlq();
                r.skip(len);
                running_status = 0;
            } else if (status >= 0x80u) {
                std::uint8_t kind = status & 0xF0u;
                int channel = status & 0x0Fu;
                switch (kind) {
                    case 0x80:
                    case 0x90: {
                        int pitch = r.u8() & 0x7F;
                        int velocity = r.u8() & 0x7F;
                        int key = (channel << 8) | pitch;
                        bool is_on = kind == 0x90 && velocity > 0;
                        if (is_on) {
                            if (active.count(key))
                                throw data_error("midi: overlapping unterminated note-on (pitch " +
                                                 std::to_string(pitch) + ") in track " + std::to_string(track_idx) +
                                                 " at tick " + std::to_string(tick));
                            active[key] = tick;
                        } else {
                            auto it = active.find(key);
                            if (it != active.end()) {
                                std::int64_t duration = tick - it->second;
                                if (duration > 0) notes.push_back({it->second, duration, pitch});
                                active.erase(it);
                            }
                        }
                        break;
                    }
                    case 0xA0:
                    case 0xB0:
                    case 0xE0: r.skip(2); break;
                    case 0xC0:
                    case 0xD0: r.skip(1); break;
                    default: r.fail("unexpected status byte " + std::to_string(status));
                }
            } else {
                r.fail("unexpected data byte " + std::to_string(status));
            }
        }

        if (r.pos() != track_end) r.fail("track " + std::to_string(track_idx) + " length does not match its events");
        if (!active.empty()) {
            auto first = active.begin();
            throw data_error("midi: unterminated note-on (pitch " + std::to_string(first->first & 0xFF) +
                             ") in track " + std::to_string(track_idx) + " at tick " +
                             std::to_string(first->second));
        }
        raw.tracks.push_back(std::move(notes));
    }

    return raw;
}

namespace detail {

inline void put_u16be(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
}

inline void put_u32be(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>((v >> shift) & 0xFF));
}

inline void put_vlq(std::vector<std::uint8_t>& out, std::uint32_t v) {
    std::uint8_t stack[5];
    int n = 0;
    stack[n++] = static_cast<std::uint8_t>(v & 0x7F);
    v >>= 7;
    while (v) {
        stack[n++] = static_cast<std::uint8_t>((v & 0x7F) | 0x80);
        v >>= 7;
    }
    while (n) out.push_back(stack[--n]);
}

}  // namespace detail

// Writes a format-1 SMF at ppq 480 with one track per voice (channel =
// voice index) and a 120 BPM tempo event on the first track. Consecutive
// equal pitches merge into one held note; rests emit silence.
inline std::vector<std::uint8_t> write_midi(const GridScore& score) {
    const int step_ticks = kWritePpq / kGridResolution;
    std::vector<std::uint8_t> out;
    out.reserve(64 + score.length() * kVoices * 8);

    detail::put_u32be(out, 0x4D546864u);  // MThd
    detail::put_u32be(out, 6);
    detail::put_u16be(out, 1);
    detail::put_u16be(out, kVoices);
    detail::put_u16be(out, kWritePpq);

    for (int v = 0; v < kVoices; ++v) {
        std::vector<std::uint8_t> track;
        if (v == 0) {
            detail::put_vlq(track, 0);
            track.push_back(0xFF);
            track.push_back(0x51);
            track.push_back(0x03);
            track.push_back((kWriteTempoUsPerQuarter >> 16) & 0xFF);
            track.push_back((kWriteTempoUsPerQuarter >> 8) & 0xFF);
            track.push_back(kWriteTempoUsPerQuarter & 0xFF);
        }

        std::int64_t cursor = 0;
        std::size_t t = 0;
        while (t < score.length()) {
            const Pitch& p = score.steps[t].voice(v);
            if (!p) {
                ++t;
                continue;
            }
            std::size_t run_end = t + 1;
            while (run_end < score.length() && score.steps[run_end].voice(v) == p) ++run_end;
            std::int64_t on_tick = static_cast<std::int64_t>(t) * step_ticks;
            std::int64_t off_tick = static_cast<std::int64_t>(run_end) * step_ticks;

            detail::put_vlq(track, static_cast<std::uint32_t>(on_tick - cursor));
            track.push_back(static_cast<std::uint8_t>(0x90 | v));
            track.push_back(static_cast<std::uint8_t>(*p));
            track.push_back(80);
            detail::put_vlq(track, static_cast<std::uint32_t>(off_tick - on_tick));
            track.push_back(static_cast<std::uint8_t>(0x80 | v));
            track.push_back(static_cast<std::uint8_t>(*p));
            track.push_back(0);
            cursor = off_tick;
            t = run_end;
        }

        detail::put_vlq(track, 0);
        track.push_back(0xFF);
        track.push_back(0x2F);
        track.push_back(0x00);

        detail::put_u32be(out, 0x4D54726Bu);  // MTrk
        detail::put_u32be(out, static_cast<std::uint32_t>(track.size()));
        out.insert(out.end(), track.begin(), track.end());
    }

    return out;
}

}  // namespace choir
