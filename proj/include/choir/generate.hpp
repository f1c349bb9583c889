#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "choir/common.hpp"
#include "choir/model.hpp"
#include "choir/score.hpp"
#include "choir/tokenizer.hpp"

namespace choir {

// Per-step chord and soprano rows that the generator is conditioned on;
// alto, tenor, and bass are left to the model.
struct Conditioning {
    std::vector<ChordLabel> chords;
    std::vector<Pitch> soprano;

    static Conditioning from_score(const GridScore& score) {
        Conditioning cond;
        for (const GridStep& step : score.steps) {
            cond.chords.push_back(step.chord);
            cond.soprano.push_back(step.s);
        }
        return cond;
    }

    std::size_t length() const { return chords.size(); }

    void validate() const {
        if (chords.empty()) throw data_error("conditioning: empty");
        if (chords.size() != soprano.size())
            throw data_error("conditioning: chord and soprano rows differ in length");
        for (std::size_t i = 0; i < soprano.size(); ++i)
            if (soprano[i] && !pitch_in_range(*soprano[i]))
                throw data_error("conditioning: soprano pitch out of range at step " + std::to_string(i));
    }
};

enum class SamplingMode { Greedy, Temperature, TopK };

struct SamplingConfig {
    SamplingMode mode = SamplingMode::TopK;
    double temperature = 1.0;
    int top_k = 16;
    std::uint64_t seed = 1;

    void validate() const {
        if (!(temperature > 0.0)) throw data_error("sampling: temperature must be > 0");
        if (mode == SamplingMode::TopK && (top_k < 1 || top_k > vocab::kSize))
            throw data_error("sampling: top_k must lie in [1, " + std::to_string(vocab::kSize) + "]");
    }
};

// Picks a token for `role` from one logits row over the full 178-entry
// vocabulary. Ids outside the role are masked to probability zero before
// renormalization; greedy breaks ties toward the lowest id.
inline int sample_step(const std::vector<double>& logits, Role role, const SamplingConfig& sampling, Pcg32& rng) {
    if (logits.size() != static_cast<std::size_t>(vocab::kSize))
        throw data_error("sample_step: expected " + std::to_string(vocab::kSize) + " logits");
    sampling.validate();
    int lo = role == Role::Chord ? vocab::kChordBase : 0;
    int hi = role == Role::Chord ? vocab::kSize : vocab::kNoteCount;  // exclusive

    if (sampling.mode == SamplingMode::Greedy) {
        int best = lo;
        for (int id = lo + 1; id < hi; ++id)
            if (logits[static_cast<std::size_t>(id)] > logits[static_cast<std::size_t>(best)]) best = id;
        return best;
    }

    std::vector<int> allowed(static_cast<std::size_t>(hi - lo));
    std::iota(allowed.begin(), allowed.end(), lo);
    if (sampling.mode == SamplingMode::TopK && sampling.top_k < static_cast<int>(allowed.size())) {
        std::sort(allowed.begin(), allowed.end(), [&](int a, int b) {
            double la = logits[static_cast<std::size_t>(a)], lb = logits[static_cast<std::size_t>(b)];
            return la != lb ? la > lb : a < b;
        });
        allowed.resize(static_cast<std::size_t>(sampling.top_k));
        std::sort(allowed.begin(), allowed.end());
    }

    double max_logit = logits[static_cast<std::size_t>(allowed[0])];
    for (int id : allowed) max_logit = std::max(max_logit, logits[static_cast<std::size_t>(id)]);
    std::vector<double> weight(allowed.size());
    double total = 0;
    for (std::size_t i = 0; i < allowed.size(); ++i) {
        weight[i] = std::exp((logits[static_cast<std::size_t>(allowed[i])] - max_logit) / sampling.temperature);
        total += weight[i];
    }
    if (!(total > 0.0) || !std::isfinite(total))
        throw numeric_error("sample_step: no probability mass on the allowed role");

    double u = rng.next_double() * total;
    double cum = 0;
    for (std::size_t i = 0; i < allowed.size(); ++i) {
        cum += weight[i];
        if (u < cum) return allowed[i];
    }
    return allowed.back();
}

// Left-to-right conditional generation: chord and soprano tokens are forced
// from the conditioning, alto/tenor/bass sampled from the model with the
// distribution restricted to note ids. Each token is produced by a full
// re-forward over the prefix.
inline GridScore generate(const ModelParams<float>& params, const ModelConfig& cfg, const Conditioning& cond,
                          const SamplingConfig& sampling) {
    cond.validate();
    sampling.validate();
    SeqLayout layout;  // generation is defined over the chord-first layout
    if (cfg.vocab_size != layout.vocab_size())
        throw data_error("generate: model vocabulary does not match the chord-first layout");
    std::size_t total_tokens = cond.length() * static_cast<std::size_t>(layout.tokens_per_step());
    if (total_tokens > static_cast<std::size_t>(cfg.max_len))
        throw data_error("generate: conditioning of " + std::to_string(cond.length()) + " steps needs " +
                         std::to_string(total_tokens) + " tokens, exceeding max_len " + std::to_string(cfg.max_len));

    Pcg32 rng(sampling.seed);
    TokenSeq seq;
    seq.reserve(total_tokens);
    for (std::size_t s = 0; s < cond.length(); ++s) {
        seq.push_back(vocab::chord_id(cond.chords[s]));
        seq.push_back(vocab::note_id(cond.soprano[s]));
        for (Role role : {Role::A, Role::T, Role::B}) {
            Mat<float> logits = forward(seq, params, cfg);
            std::vector<double> row(static_cast<std::size_t>(logits.cols()));
            for (Eigen::Index j = 0; j < logits.cols(); ++j)
                row[static_cast<std::size_t>(j)] = logits(logits.rows() - 1, j);
            seq.push_back(sample_step(row, role, sampling, rng));
        }
    }

    GridScore out = decode(seq, layout);
    out.title = "generated";
    return out;
}

}  // namespace choir
