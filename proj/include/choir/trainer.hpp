#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "choir/augment.hpp"
#include "choir/checkpoint.hpp"
#include "choir/common.hpp"
#include "choir/model.hpp"
#include "choir/tokenizer.hpp"

namespace choir {

struct AblationSwitches {
    bool chord_tokens = true;       // "Chord": chord token leads each step
    bool relative_attention = true; // "rpr": learned relative positions (off freezes R at zero)
    bool transpose_aug = false;     // "amp": transposition amplification
    bool reverse_aug = false;       // "rev": retrograde copies

    SeqLayout layout() const { return SeqLayout{chord_tokens}; }
};

struct TrainConfig {
    int batch_size = 8;
    int crop_len = 160;  // tokens per crop; the model context is crop_len - 1
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double adam_eps = 1e-9;
    int warmup_steps = 100;
    int max_steps = 1000;
    double val_fraction = 0.1;
    double grad_clip = 1.0;
    int log_interval = 50;
    std::uint64_t seed = 1;
    AblationSwitches switches;

    void validate() const {
        if (batch_size < 1) throw data_error("train config: batch_size must be >= 1");
        if (crop_len < 2) throw data_error("train config: crop_len must be >= 2");
        if (!(lr >= 0.0)) throw data_error("train config: lr must be >= 0");
        if (warmup_steps < 1) throw data_error("train config: warmup_steps must be >= 1");
        if (max_steps < 0) throw data_error("train config: max_steps must be >= 0");
        if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw data_error("train config: val_fraction must lie in (0,1)");
        if (!(grad_clip > 0.0)) throw data_error("train config: grad_clip must be > 0");
        if (log_interval < 1) throw data_error("train config: log_interval must be >= 1");
    }
};

struct Batch {
    std::vector<TokenSeq> crops;                     // each crop_len tokens
    std::vector<std::vector<std::uint8_t>> is_real;  // 0 marks repeat-last-step padding
};

// Deterministic stream of random crops aligned to step boundaries. Short
// sequences are padded by repeating their final step; pads are loss-masked.
class BatchStream {
  public:
    BatchStream(std::vector<TokenSeq> seqs, int crop_len, int batch_size, SeqLayout layout, std::uint64_t seed)
        : seqs_(std::move(seqs)), crop_len_(crop_len), batch_size_(batch_size), layout_(layout), rng_(seed) {
        if (seqs_.empty()) throw data_error("make_batches: empty corpus");
        int tps = layout.tokens_per_step();
        bool any_usable = false;
        for (std::size_t i = 0; i < seqs_.size(); ++i) {
            if (seqs_[i].empty() || seqs_[i].size() % static_cast<std::size_t>(tps) != 0)
                throw data_error("make_batches: sequence " + std::to_string(i) +
                                 " length is not a positive multiple of " + std::to_string(tps));
            any_usable = any_usable || seqs_[i].size() >= 10;
        }
        if (!any_usable) throw data_error("make_batches: need at least one sequence of length >= 10");
    }

    Batch next() {
        Batch batch;
        int tps = layout_.tokens_per_step();
        for (int b = 0; b < batch_size_; ++b) {
            const TokenSeq& seq = seqs_[rng_.below(static_cast<std::uint32_t>(seqs_.size()))];
            TokenSeq crop;
            std::vector<std::uint8_t> real;
            auto n = static_cast<std::int64_t>(seq.size());
            if (n >= crop_len_) {
                std::int64_t max_start = n - crop_len_;
                std::int64_t offsets = max_start / tps + 1;
                std::int64_t start = static_cast<std::int64_t>(rng_.below(static_cast<std::uint32_t>(offsets))) * tps;
                crop.assign(seq.begin() + start, seq.begin() + start + crop_len_);
                real.assign(static_cast<std::size_t>(crop_len_), 1);
            } else {
                crop = seq;
                real.assign(seq.size(), 1);
                while (static_cast<int>(crop.size()) < crop_len_) {
                    for (int i = 0; i < tps && static_cast<int>(crop.size()) < crop_len_; ++i) {
                        crop.push_back(seq[seq.size() - static_cast<std::size_t>(tps - i)]);
                        real.push_back(0);
                    }
                }
            }
            batch.crops.push_back(std::move(crop));
            batch.is_real.push_back(std::move(real));
        }
        return batch;
    }

    std::uint64_t rng_state() const { return rng_.state(); }
    std::uint64_t rng_inc() const { return rng_.inc(); }
    void restore_rng(std::uint64_t state, std::uint64_t inc) { rng_ = Pcg32::from_state(state, inc); }

  private:
    std::vector<TokenSeq> seqs_;
    int crop_len_;
    int batch_size_;
    SeqLayout layout_;
    Pcg32 rng_;
};

inline BatchStream make_batches(const std::vector<TokenSeq>& seqs, int crop_len, int batch_size, SeqLayout layout,
                                std::uint64_t seed) {
    return BatchStream(seqs, crop_len, batch_size, layout, seed);
}

// Teacher-forced argmax accuracy over every target position whose role is
// not excluded. Sequences longer than the context window are scored in
// consecutive windows.
inline double validation_accuracy(const ModelParams<float>& params, const ModelConfig& cfg,
                                  const std::vector<TokenSeq>& seqs, SeqLayout layout,
                                  const std::vector<Role>& exclude = {}) {
    if (seqs.empty()) throw data_error("validation_accuracy: empty corpus");
    auto excluded = [&exclude](Role r) { return std::find(exclude.begin(), exclude.end(), r) != exclude.end(); };
    std::int64_t counted = 0, correct = 0;
    for (const TokenSeq& seq : seqs) {
        if (seq.size() < 2) continue;
        std::size_t window = static_cast<std::size_t>(cfg.max_len);
        for (std::size_t start = 0; start + 1 < seq.size(); start += window) {
            std::size_t end = std::min(seq.size(), start + window + 1);
            TokenSeq input(seq.begin() + static_cast<std::ptrdiff_t>(start),
                           seq.begin() + static_cast<std::ptrdiff_t>(end - 1));
            Mat<float> logits = forward(input, params, cfg);
            for (Eigen::Index t = 0; t < logits.rows(); ++t) {
                std::size_t target_pos = start + static_cast<std::size_t>(t) + 1;
                if (excluded(layout.role_at(target_pos))) continue;
                Eigen::Index best = 0;
                for (Eigen::Index j = 1; j < logits.cols(); ++j)
                    if (logits(t, j) > logits(t, best)) best = j;
                counted += 1;
                correct += best == seq[target_pos];
            }
        }
    }
    if (counted == 0) throw data_error("validation_accuracy: every position excluded");
    return 100.0 * static_cast<double>(correct) / static_cast<double>(counted);
}

struct TrainLogRow {
    long long step = 0;
    double train_loss = 0;
    double val_accuracy = 0;
};

inline std::string metrics_csv(const std::vector<TrainLogRow>& log) {
    std::string out = "step,train_loss,val_accuracy\n";
    char buf[96];
    for (const auto& row : log) {
        std::snprintf(buf, sizeof buf, "%lld,%.6f,%.4f\n", row.step, row.train_loss, row.val_accuracy);
        out += buf;
    }
    return out;
}

struct TrainResult {
    ModelParams<float> params;  // parameters after the final step
    std::vector<TrainLogRow> log;
    double best_val_accuracy = 0;
    long long steps_run = 0;
};

namespace detail {

inline double lr_at(const TrainConfig& cfg, long long step) {
    double s = static_cast<double>(step);
    double w = static_cast<double>(cfg.warmup_steps);
    return cfg.lr * std::min(s / w, std::sqrt(w / s));
}

template <class T>
double global_grad_norm(ModelParams<T>& grads) {
    double sq = 0;
    for (auto& [name, mat] : tensor_directory(grads))
        for (Eigen::Index i = 0; i < mat->size(); ++i) {
            double g = mat->data()[i];
            sq += g * g;
        }
    return std::sqrt(sq);
}

}  // namespace detail

// Full optimizer + progress state; serializing it into the checkpoint and
// reloading reproduces the next step exactly.
struct TrainSession {
    ModelConfig model_config;
    TrainConfig train_config;
    ModelParams<float> params;
    ModelParams<float> adam_m, adam_v;
    long long step = 0;
    double best_val_accuracy = -1.0;
    Pcg32 dropout_rng{0};
    std::uint64_t batch_rng_state = 0, batch_rng_inc = 0;
    bool batch_rng_valid = false;

    static TrainSession fresh(const ModelConfig& mcfg, const TrainConfig& tcfg) {
        TrainSession s;
        s.model_config = mcfg;
        s.train_config = tcfg;
        s.params = init_params<float>(mcfg);
        s.adam_m = ModelParams<float>::zeros(mcfg);
        s.adam_v = ModelParams<float>::zeros(mcfg);
        s.dropout_rng = Pcg32(tcfg.seed ^ 0x9e3779b97f4a7c15ULL);
        return s;
    }

    void save(const std::filesystem::path& path) const {
        auto& self = const_cast<TrainSession&>(*this);
        std::vector<std::pair<std::string, const Mat<float>*>> tensors;
        for (auto& [name, mat] : tensor_directory(self.params)) tensors.emplace_back(name, mat);
        for (auto& [name, mat] : tensor_directory(self.adam_m)) tensors.emplace_back("adam.m." + name, mat);
        for (auto& [name, mat] : tensor_directory(self.adam_v)) tensors.emplace_back("adam.v." + name, mat);
        nlohmann::json extra = {{"step", step},
                                {"best_val_accuracy", best_val_accuracy},
                                {"dropout_rng", {dropout_rng.state(), dropout_rng.inc()}},
                                {"batch_rng", {batch_rng_state, batch_rng_inc}},
                                {"batch_rng_valid", batch_rng_valid},
                                {"train_seed", train_config.seed}};
        save_checkpoint(path, model_config, tensors, extra);
    }

    static TrainSession resume(const CheckpointData& data, const TrainConfig& tcfg) {
        TrainSession s;
        s.model_config = data.config;
        s.train_config = tcfg;
        s.params = params_from_checkpoint(data);
        s.adam_m = ModelParams<float>::zeros(data.config);
        s.adam_v = ModelParams<float>::zeros(data.config);
        auto load_into = [&data](ModelParams<float>& dst, const std::string& prefix) {
            for (auto& [name, mat] : tensor_directory(dst)) {
                auto it = data.tensors.find(prefix + name);
                if (it == data.tensors.end()) throw data_error("checkpoint: missing tensor " + prefix + name);
                if (it->second.rows() != mat->rows() || it->second.cols() != mat->cols())
                    throw data_error("checkpoint: shape mismatch for tensor " + prefix + name);
                *mat = it->second;
            }
        };
        load_into(s.adam_m, "adam.m.");
        load_into(s.adam_v, "adam.v.");
        try {
            s.step = data.extra.at("step").get<long long>();
            s.best_val_accuracy = data.extra.at("best_val_accuracy").get<double>();
            auto dr = data.extra.at("dropout_rng");
            s.dropout_rng = Pcg32::from_state(dr.at(0).get<std::uint64_t>(), dr.at(1).get<std::uint64_t>());
            auto br = data.extra.at("batch_rng");
            s.batch_rng_state = br.at(0).get<std::uint64_t>();
            s.batch_rng_inc = br.at(1).get<std::uint64_t>();
            s.batch_rng_valid = data.extra.at("batch_rng_valid").get<bool>();
        } catch (const nlohmann::json::exception& e) {
            throw data_error(std::string("checkpoint: missing training state: ") + e.what());
        }
        return s;
    }

    // One Adam step on accumulated gradients. Freezes the relative table
    // when the rpr switch is off.
    void apply_gradients(ModelParams<float>& grads) {
        if (!train_config.switches.relative_attention)
            for (auto& layer : grads.layers) layer.attn.rel.setZero();

        double norm = detail::global_grad_norm(grads);
        if (!std::isfinite(norm))
            throw numeric_error("train: non-finite gradient norm at step " + std::to_string(step + 1));
        float scale = 1.0f;
        if (norm > train_config.grad_clip) scale = static_cast<float>(train_config.grad_clip / norm);

        step += 1;
        double lr = detail::lr_at(train_config, step);
        double bc1 = 1.0 - std::pow(train_config.beta1, static_cast<double>(step));
        double bc2 = 1.0 - std::pow(train_config.beta2, static_cast<double>(step));
        auto p_dir = tensor_directory(params);
        auto m_dir = tensor_directory(adam_m);
        auto v_dir = tensor_directory(adam_v);
        auto g_dir = tensor_directory(grads);
        for (std::size_t i = 0; i < p_dir.size(); ++i) {
            Mat<float>&p = *p_dir[i].second, &m = *m_dir[i].second, &v = *v_dir[i].second, &g = *g_dir[i].second;
            for (Eigen::Index j = 0; j < p.size(); ++j) {
                float gj = g.data()[j] * scale;
                float mj = static_cast<float>(train_config.beta1) * m.data()[j] +
                           (1.0f - static_cast<float>(train_config.beta1)) * gj;
                float vj = static_cast<float>(train_config.beta2) * v.data()[j] +
                           (1.0f - static_cast<float>(train_config.beta2)) * gj * gj;
                m.data()[j] = mj;
                v.data()[j] = vj;
                double mhat = mj / bc1, vhat = vj / bc2;
                p.data()[j] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + train_config.adam_eps));
            }
        }
    }
};

// Core loop over pre-encoded token sequences. The corpus wrapper below
// handles splitting and augmentation; acceptance-style overfit runs call
// this directly with train == val.
struct TrainRunOptions {
    std::optional<std::filesystem::path> best_path;   // best-validation model checkpoint
    std::optional<std::filesystem::path> last_path;   // resumable full-state checkpoint
    double stop_at_accuracy = -1.0;                   // early exit threshold, negative = off
};

inline TrainResult train_core(TrainSession& session, const std::vector<TokenSeq>& train_seqs,
                              const std::vector<TokenSeq>& val_seqs, const TrainRunOptions& opts = {},
                              std::vector<TrainLogRow>* prior_log = nullptr) {
    const ModelConfig& mcfg = session.model_config;
    const TrainConfig& tcfg = session.train_config;
    tcfg.validate();
    mcfg.validate();
    if (train_seqs.empty() || val_seqs.empty()) throw data_error("train: empty train or validation split");
    SeqLayout layout = tcfg.switches.layout();
    if (mcfg.vocab_size != layout.vocab_size())
        throw data_error("train: model vocab_size does not match the sequence layout");

    BatchStream stream = make_batches(train_seqs, tcfg.crop_len, tcfg.batch_size, layout, tcfg.seed);
    if (session.batch_rng_valid) stream.restore_rng(session.batch_rng_state, session.batch_rng_inc);

    TrainResult result;
    if (prior_log) result.log = *prior_log;
    result.best_val_accuracy = session.best_val_accuracy;

    auto evaluate_and_log = [&](double train_loss) {
        double acc = validation_accuracy(session.params, mcfg, val_seqs, layout);
        result.log.push_back({session.step, train_loss, acc});
        if (acc > session.best_val_accuracy) {
            session.best_val_accuracy = acc;
            result.best_val_accuracy = acc;
            if (opts.best_path) save_model(*opts.best_path, mcfg, session.params,
                                           {{"step", session.step}, {"val_accuracy", acc}});
        }
        if (opts.last_path) {
            session.batch_rng_state = stream.rng_state();
            session.batch_rng_inc = stream.rng_inc();
            session.batch_rng_valid = true;
            session.save(*opts.last_path);
        }
        return acc;
    };

    while (session.step < tcfg.max_steps) {
        Batch batch = stream.next();
        ModelParams<float> grads = ModelParams<float>::zeros(mcfg);
        double loss_sum = 0;
        for (int b = 0; b < tcfg.batch_size; ++b) {
            const TokenSeq& crop = batch.crops[static_cast<std::size_t>(b)];
            const auto& real = batch.is_real[static_cast<std::size_t>(b)];
            TokenSeq input(crop.begin(), crop.end() - 1);
            std::vector<int> targets(crop.begin() + 1, crop.end());
            std::vector<std::uint8_t> mask(real.begin() + 1, real.end());
            ForwardCache<float> cache;
            Mat<float> logits = forward_cached(input, session.params, mcfg, cache, &session.dropout_rng);
            Mat<float> dlogits;
            loss_sum += cross_entropy(logits, targets, mask, &dlogits);
            dlogits *= 1.0f / static_cast<float>(tcfg.batch_size);
            backward(dlogits, cache, session.params, mcfg, grads);
        }
        double loss = loss_sum / tcfg.batch_size;
        if (!std::isfinite(loss))
            throw numeric_error("train: loss diverged (non-finite) at step " + std::to_string(session.step + 1));

        session.apply_gradients(grads);
        result.steps_run += 1;

        if (session.step % tcfg.log_interval == 0 || session.step == tcfg.max_steps) {
            double acc = evaluate_and_log(loss);
            if (opts.stop_at_accuracy >= 0.0 && acc >= opts.stop_at_accuracy) break;
        }
    }
    if (result.log.empty() || result.log.back().step != session.step) {
        double loss = result.log.empty() ? 0.0 : result.log.back().train_loss;
        evaluate_and_log(loss);
    }
    result.params = session.params;
    return result;
}

// Deterministic piece-level split: val_fraction of the unaugmented corpus
// (at least one piece each side) is held out before any augmentation.
inline void split_corpus(const std::vector<GridScore>& pieces, double val_fraction, std::uint64_t seed,
                         std::vector<GridScore>& train_out, std::vector<GridScore>& val_out) {
    if (pieces.size() < 2) throw data_error("train: need at least 2 pieces to split train/validation");
    std::vector<std::size_t> order(pieces.size());
    std::iota(order.begin(), order.end(), 0);
    Pcg32 rng(seed ^ 0x5bf03635dcf9e2faULL);
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(static_cast<std::uint32_t>(i + 1))]);
    auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(pieces.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, pieces.size() - 1);
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < n_val ? val_out : train_out).push_back(pieces[order[i]]);
}

inline TrainResult train(const std::vector<GridScore>& pieces, const ModelConfig& mcfg_in, const TrainConfig& tcfg,
                         const TrainRunOptions& opts = {}, std::vector<std::string>* warnings = nullptr) {
    tcfg.validate();
    std::vector<GridScore> train_pieces, val_pieces;
    split_corpus(pieces, tcfg.val_fraction, tcfg.seed, train_pieces, val_pieces);
    Corpus train_corpus =
        expand_dataset(train_pieces, tcfg.switches.transpose_aug, tcfg.switches.reverse_aug, warnings);

    SeqLayout layout = tcfg.switches.layout();
    ModelConfig mcfg = mcfg_in;
    mcfg.vocab_size = layout.vocab_size();
    mcfg.validate();

    std::vector<TokenSeq> train_seqs, val_seqs;
    for (const auto& piece : train_corpus) train_seqs.push_back(encode(piece.score, layout));
    for (const auto& piece : val_pieces) val_seqs.push_back(encode(piece, layout));

    TrainSession session = TrainSession::fresh(mcfg, tcfg);
    return train_core(session, train_seqs, val_seqs, opts);
}

struct AblationRow {
    AblationSwitches switches;
    double val_accuracy = 0;
};

// The five-row switch ladder: baseline, then chord tokens, relative
// attention, transposition, and reversal enabled cumulatively.
inline std::vector<AblationRow> ablation_ladder() {
    return {{{false, false, false, false}, 0},
            {{true, false, false, false}, 0},
            {{true, true, false, false}, 0},
            {{true, true, true, false}, 0},
            {{true, true, true, true}, 0}};
}

inline std::vector<AblationRow> run_ablation(const std::vector<GridScore>& pieces, const ModelConfig& mcfg,
                                             const TrainConfig& base) {
    std::vector<AblationRow> rows = ablation_ladder();
    for (auto& row : rows) {
        TrainConfig tcfg = base;
        tcfg.switches = row.switches;
        row.val_accuracy = train(pieces, mcfg, tcfg).best_val_accuracy;
    }
    return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out = "chord,rpr,amp,rev,val_accuracy\n";
    char buf[96];
    for (const auto& row : rows) {
        auto mark = [](bool on) { return on ? "yes" : "no"; };
        std::snprintf(buf, sizeof buf, "%s,%s,%s,%s,%.4f\n", mark(row.switches.chord_tokens),
                      mark(row.switches.relative_attention), mark(row.switches.transpose_aug),
                      mark(row.switches.reverse_aug), row.val_accuracy);
        out += buf;
    }
    return out;
}

}  // namespace choir
