#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>

#include "choir/generate.hpp"
#include "helpers.hpp"

using namespace choir;
using choir::testing::fixture_chorale;

namespace {

std::vector<double> flat_logits(double value = 0.0) { return std::vector<double>(vocab::kSize, value); }

ModelConfig gen_config() {
    ModelConfig cfg;
    cfg.vocab_size = vocab::kSize;
    cfg.d_model = 32;
    cfg.num_heads = 4;
    cfg.num_layers = 1;
    cfg.d_ff = 64;
    cfg.max_len = 64;
    cfg.max_rel_dist = 8;
    cfg.dropout = 0.0;
    return cfg;
}

}  // namespace

TEST_CASE("sample_step keeps every mode inside the role") {
    Pcg32 rng(1);
    SamplingConfig greedy{SamplingMode::Greedy};
    SamplingConfig temp{SamplingMode::Temperature, 0.8};
    SamplingConfig topk{SamplingMode::TopK, 1.0, 8};

    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> logits(vocab::kSize);
        for (auto& l : logits) l = rng.uniform(-4, 4);
        for (Role role : {Role::Chord, Role::S, Role::A, Role::T, Role::B}) {
            for (const SamplingConfig* s : {&greedy, &temp, &topk}) {
                int id = sample_step(logits, role, *s, rng);
                if (role == Role::Chord) {
                    CHECK(vocab::is_chord_id(id));
                } else {
                    CHECK(vocab::is_note_id(id));
                }
            }
        }
    }
}

TEST_CASE("sample_step greedy picks the max, lowest id on ties") {
    Pcg32 rng(2);
    SamplingConfig greedy{SamplingMode::Greedy};

    auto logits = flat_logits();
    logits[64] = 3.0;
    logits[200 % vocab::kSize] = 9.0;  // id 22, also a note; make it the winner
    CHECK(sample_step(logits, Role::A, greedy, rng) == 22);

    logits = flat_logits();
    logits[140] = 5.0;  // chord id
    CHECK(sample_step(logits, Role::Chord, greedy, rng) == 140);
    // The huge note logit is invisible to the chord role.
    logits[60] = 50.0;
    CHECK(sample_step(logits, Role::Chord, greedy, rng) == 140);
    CHECK(sample_step(logits, Role::T, greedy, rng) == 60);

    // All ties: the first id of the role wins.
    logits = flat_logits(1.25);
    CHECK(sample_step(logits, Role::B, greedy, rng) == 0);
    CHECK(sample_step(logits, Role::Chord, greedy, rng) == vocab::kChordBase);
}

TEST_CASE("sample_step concentrates at low temperature") {
    Pcg32 rng(3);
    auto logits = flat_logits(-2.0);
    logits[77] = 4.0;
    SamplingConfig cold{SamplingMode::Temperature, 1e-4};
    for (int i = 0; i < 100; ++i) CHECK(sample_step(logits, Role::A, cold, rng) == 77);

    // A dominant logit keeps nearly all mass even at temperature 1.
    auto sharp = flat_logits(-30.0);
    sharp[42] = 30.0;
    SamplingConfig unit{SamplingMode::Temperature, 1.0};
    for (int i = 0; i < 100; ++i) CHECK(sample_step(sharp, Role::S, unit, rng) == 42);
}

TEST_CASE("sample_step top-k restricts the support") {
    Pcg32 rng(4);
    auto logits = flat_logits(-10.0);
    // Five clear leaders among the notes.
    const std::array<int, 5> leaders = {10, 55, 60, 100, 128};
    for (int id : leaders) logits[static_cast<std::size_t>(id)] = 5.0;

    SamplingConfig k3{SamplingMode::TopK, 1.0, 3};
    for (int i = 0; i < 300; ++i) {
        int id = sample_step(logits, Role::A, k3, rng);
        // Ties broken toward lower ids: support is exactly {10, 55, 60}.
        CHECK((id == 10 || id == 55 || id == 60));
    }

    SamplingConfig k1{SamplingMode::TopK, 1.0, 1};
    for (int i = 0; i < 20; ++i) CHECK(sample_step(logits, Role::T, k1, rng) == 10);
}

TEST_CASE("top-k with full k matches the softmax distribution") {
    // chi-squared fit over a 12-way support, k = 178 (no truncation).
    Pcg32 rng(5);
    auto logits = flat_logits(-40.0);
    std::vector<int> support;
    std::vector<double> raw;
    Pcg32 setup(6);
    for (int i = 0; i < 12; ++i) {
        support.push_back(20 + i * 9);
        raw.push_back(setup.uniform(0.0, 2.0));
        logits[static_cast<std::size_t>(support.back())] = raw.back();
    }
    double z = 0;
    for (double r : raw) z += std::exp(r);
    // Out-of-support ids carry exp(-40)/Z each; over 1e5 draws that mass is
    // ~1e-13, so observing one would already be a failure.

    SamplingConfig full{SamplingMode::TopK, 1.0, vocab::kSize};
    const int draws = 100000;
    std::vector<int> hits(support.size(), 0);
    for (int i = 0; i < draws; ++i) {
        int id = sample_step(logits, Role::A, full, rng);
        auto it = std::find(support.begin(), support.end(), id);
        REQUIRE(it != support.end());
        hits[static_cast<std::size_t>(it - support.begin())] += 1;
    }

    double chi2 = 0;
    for (std::size_t i = 0; i < support.size(); ++i) {
        double expected = draws * std::exp(raw[i]) / z;
        double d = hits[i] - expected;
        chi2 += d * d / expected;
    }
    // 11 degrees of freedom; P(chi2 > 35) < 3e-4.
    CHECK(chi2 < 35.0);
}

TEST_CASE("sample_step rejects bad input") {
    Pcg32 rng(7);
    SamplingConfig bad_temp{SamplingMode::Temperature, 0.0};
    CHECK_THROWS_AS(sample_step(flat_logits(), Role::A, bad_temp, rng), data_error);

    SamplingConfig bad_k{SamplingMode::TopK, 1.0, 0};
    CHECK_THROWS_AS(sample_step(flat_logits(), Role::A, bad_k, rng), data_error);
    SamplingConfig big_k{SamplingMode::TopK, 1.0, 179};
    CHECK_THROWS_AS(sample_step(flat_logits(), Role::A, big_k, rng), data_error);

    SamplingConfig ok{SamplingMode::Temperature, 1.0};
    CHECK_THROWS_AS(sample_step(std::vector<double>(100, 0.0), Role::A, ok, rng), data_error);

    auto drowned = flat_logits(-std::numeric_limits<double>::infinity());
    CHECK_THROWS_AS(sample_step(drowned, Role::A, ok, rng), numeric_error);
}

TEST_CASE("conditioning construction and validation") {
    GridScore score = fixture_chorale(6);
    Conditioning cond = Conditioning::from_score(score);
    REQUIRE(cond.length() == 6);
    CHECK(cond.chords[0] == score.steps[0].chord);
    CHECK(cond.soprano[3] == score.steps[3].s);
    CHECK_NOTHROW(cond.validate());

    Conditioning empty;
    CHECK_THROWS_WITH(empty.validate(), Catch::Matchers::ContainsSubstring("empty"));

    Conditioning ragged = cond;
    ragged.soprano.pop_back();
    CHECK_THROWS_WITH(ragged.validate(), Catch::Matchers::ContainsSubstring("differ in length"));

    Conditioning wild = cond;
    wild.soprano[2] = 130;
    CHECK_THROWS_WITH(wild.validate(), Catch::Matchers::ContainsSubstring("step 2"));
}

TEST_CASE("generate preserves conditioning and emits clean roles") {
    ModelConfig cfg = gen_config();
    ModelParams<float> params = init_params<float>(cfg);
    GridScore source = fixture_chorale(8);
    source.steps[3].s = kRest;  // a soprano rest must survive the trip
    Conditioning cond = Conditioning::from_score(source);

    for (SamplingMode mode : {SamplingMode::Greedy, SamplingMode::Temperature, SamplingMode::TopK}) {
        SamplingConfig sampling;
        sampling.mode = mode;
        sampling.temperature = 0.9;
        sampling.top_k = 8;
        sampling.seed = 11;

        GridScore out = generate(params, cfg, cond, sampling);
        REQUIRE(out.length() == 8);
        CHECK(out.title == "generated");
        for (std::size_t t = 0; t < out.length(); ++t) {
            CHECK(out.steps[t].chord == source.steps[t].chord);
            CHECK(out.steps[t].s == source.steps[t].s);
        }
        CHECK(validate_roles(encode(out)).empty());

        GridScore again = generate(params, cfg, cond, sampling);
        CHECK(again == out);  // fixed seed, fixed output

        sampling.seed = 12;
        GridScore shifted = generate(params, cfg, cond, sampling);
        CHECK(shifted.length() == out.length());
    }
}

TEST_CASE("generate rejects oversized or mismatched input") {
    ModelConfig cfg = gen_config();
    ModelParams<float> params = init_params<float>(cfg);

    Conditioning cond = Conditioning::from_score(fixture_chorale(13));  // 65 tokens > max_len 64
    CHECK_THROWS_WITH(generate(params, cfg, cond, SamplingConfig{}),
                      Catch::Matchers::ContainsSubstring("max_len"));

    ModelConfig noteless = cfg;
    noteless.vocab_size = vocab::kNoteCount;
    ModelParams<float> narrow = init_params<float>(noteless);
    Conditioning ok = Conditioning::from_score(fixture_chorale(4));
    CHECK_THROWS_WITH(generate(narrow, noteless, ok, SamplingConfig{}),
                      Catch::Matchers::ContainsSubstring("chord-first"));
}

TEST_CASE("a bias-only model generates its favorite pitch") {
    ModelConfig cfg = gen_config();
    ModelParams<float> params = ModelParams<float>::zeros(cfg);
    params.head_b(0, 52) = 8.0f;

    Conditioning cond = Conditioning::from_score(fixture_chorale(4));
    SamplingConfig greedy{SamplingMode::Greedy};
    GridScore out = generate(params, cfg, cond, greedy);
    for (const GridStep& step : out.steps) {
        CHECK(step.a == Pitch(52));
        CHECK(step.t == Pitch(52));
        CHECK(step.b == Pitch(52));
    }
}
