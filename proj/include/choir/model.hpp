#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "choir/common.hpp"
#include "choir/tokenizer.hpp"

namespace choir {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelConfig {
    int vocab_size = vocab::kSize;
    int d_model = 256;
    int num_heads = 8;
    int num_layers = 6;
    int d_ff = 1024;
    int max_len = 1920;       // 384 grid steps x 5 tokens
    int max_rel_dist = 512;   // relative-position clip window
    bool use_absolute_pe = true;
    double dropout = 0.1;
    std::uint64_t seed = 1;

    int head_dim() const { return d_model / num_heads; }
    int rel_rows() const { return 2 * max_rel_dist + 1; }

    void validate() const {
        if (vocab_size < 1 || d_model < 1 || num_heads < 1 || num_layers < 1 || d_ff < 1 || max_len < 1)
            throw data_error("model config: all dimensions must be >= 1");
        if (d_model % num_heads != 0) throw data_error("model config: d_model must be divisible by num_heads");
        if (max_rel_dist < 0 || max_rel_dist > max_len)
            throw data_error("model config: max_rel_dist must lie in [0, max_len]");
        if (dropout < 0.0 || dropout >= 1.0) throw data_error("model config: dropout must lie in [0,1)");
    }
};

template <class T>
struct AttentionParams {
    Mat<T> wq, wk, wv, wo;  // d_model x d_model
    Mat<T> rel;             // (2*max_rel_dist+1) x head_dim, shared across heads
};

template <class T>
struct FeedForwardParams {
    Mat<T> w1;  // d_model x d_ff
    Mat<T> b1;  // 1 x d_ff
    Mat<T> w2;  // d_ff x d_model
    Mat<T> b2;  // 1 x d_model
};

template <class T>
struct LayerParams {
    AttentionParams<T> attn;
    FeedForwardParams<T> ff;
    Mat<T> ln1_gain, ln1_bias;  // 1 x d_model
    Mat<T> ln2_gain, ln2_bias;
};

template <class T>
struct ModelParams {
    Mat<T> embedding;  // vocab_size x d_model
    std::vector<LayerParams<T>> layers;
    Mat<T> head_w;  // d_model x vocab_size
    Mat<T> head_b;  // 1 x vocab_size

    static ModelParams zeros(const ModelConfig& cfg) {
        cfg.validate();
        ModelParams p;
        p.embedding = Mat<T>::Zero(cfg.vocab_size, cfg.d_model);
        p.layers.resize(static_cast<std::size_t>(cfg.num_layers));
        for (auto& layer : p.layers) {
            layer.attn.wq = Mat<T>::Zero(cfg.d_model, cfg.d_model);
            layer.attn.wk = Mat<T>::Zero(cfg.d_model, cfg.d_model);
            layer.attn.wv = Mat<T>::Zero(cfg.d_model, cfg.d_model);
            layer.attn.wo = Mat<T>::Zero(cfg.d_model, cfg.d_model);
            layer.attn.rel = Mat<T>::Zero(cfg.rel_rows(), cfg.head_dim());
            layer.ff.w1 = Mat<T>::Zero(cfg.d_model, cfg.d_ff);
            layer.ff.b1 = Mat<T>::Zero(1, cfg.d_ff);
            layer.ff.w2 = Mat<T>::Zero(cfg.d_ff, cfg.d_model);
            layer.ff.b2 = Mat<T>::Zero(1, cfg.d_model);
            layer.ln1_gain = Mat<T>::Zero(1, cfg.d_model);
            layer.ln1_bias = Mat<T>::Zero(1, cfg.d_model);
            layer.ln2_gain = Mat<T>::Zero(1, cfg.d_model);
            layer.ln2_bias = Mat<T>::Zero(1, cfg.d_model);
        }
        p.head_w = Mat<T>::Zero(cfg.d_model, cfg.vocab_size);
        p.head_b = Mat<T>::Zero(1, cfg.vocab_size);
        return p;
    }
};

// Canonical tensor directory; its order defines the checkpoint layout.
template <class T>
std::vector<std::pair<std::string, Mat<T>*>> tensor_directory(ModelParams<T>& p) {
    std::vector<std::pair<std::string, Mat<T>*>> dir;
    dir.emplace_back("embedding", &p.embedding);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        auto name = [&](const char* field) { return "layers." + std::to_string(l) + "." + field; };
        LayerParams<T>& layer = p.layers[l];
        dir.emplace_back(name("attn.wq"), &layer.attn.wq);
        dir.emplace_back(name("attn.wk"), &layer.attn.wk);
        dir.emplace_back(name("attn.wv"), &layer.attn.wv);
        dir.emplace_back(name("attn.wo"), &layer.attn.wo);
        dir.emplace_back(name("attn.rel"), &layer.attn.rel);
        dir.emplace_back(name("ln1.gain"), &layer.ln1_gain);
        dir.emplace_back(name("ln1.bias"), &layer.ln1_bias);
        dir.emplace_back(name("ln2.gain"), &layer.ln2_gain);
        dir.emplace_back(name("ln2.bias"), &layer.ln2_bias);
        dir.emplace_back(name("ff.w1"), &layer.ff.w1);
        dir.emplace_back(name("ff.b1"), &layer.ff.b1);
        dir.emplace_back(name("ff.w2"), &layer.ff.w2);
        dir.emplace_back(name("ff.b2"), &layer.ff.b2);
    }
    dir.emplace_back("head.w", &p.head_w);
    dir.emplace_back("head.b", &p.head_b);
    return dir;
}

template <class T>
std::size_t num_params(const ModelParams<T>& p) {
    std::size_t n = 0;
    for (auto& [name, mat] : tensor_directory(const_cast<ModelParams<T>&>(p))) n += static_cast<std::size_t>(mat->size());
    return n;
}

// Deterministic Glorot-style init: weight matrices uniform in
// +-sqrt(6/(fan_in+fan_out)), biases and the relative table zero,
// normalization gains one.
template <class T>
ModelParams<T> init_params(const ModelConfig& cfg) {
    ModelParams<T> p = ModelParams<T>::zeros(cfg);
    Pcg32 rng(cfg.seed);
    auto glorot = [&rng](Mat<T>& m) {
        double bound = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = static_cast<T>(rng.uniform(-bound, bound));
    };
    glorot(p.embedding);
    for (auto& layer : p.layers) {
        glorot(layer.attn.wq);
        glorot(layer.attn.wk);
        glorot(layer.attn.wv);
        glorot(layer.attn.wo);
        layer.ln1_gain.setOnes();
        layer.ln2_gain.setOnes();
        glorot(layer.ff.w1);
        glorot(layer.ff.w2);
    }
    glorot(p.head_w);
    return p;
}

// Sinusoidal positional table: pairs sin/cos with wavelength 10000^(2i/d).
template <class T>
Mat<T> positional_encoding(int len, int d_model) {
    Mat<T> pe(len, d_model);
    for (int t = 0; t < len; ++t) {
        for (int i = 0; 2 * i < d_model; ++i) {
            double angle = t * std::pow(10000.0, -2.0 * i / d_model);
            pe(t, 2 * i) = static_cast<T>(std::sin(angle));
            if (2 * i + 1 < d_model) pe(t, 2 * i + 1) = static_cast<T>(std::cos(angle));
        }
    }
    return pe;
}

// Row t = embedding[id_t] (+ positional encoding when enabled).
template <class T>
Mat<T> embed(const TokenSeq& seq, const ModelParams<T>& params, const ModelConfig& cfg) {
    if (seq.size() > static_cast<std::size_t>(cfg.max_len))
        throw data_error("embed: sequence length " + std::to_string(seq.size()) + " exceeds max_len " +
                         std::to_string(cfg.max_len));
    if (seq.empty()) throw data_error("embed: empty sequence");
    auto len = static_cast<Eigen::Index>(seq.size());
    Mat<T> x(len, cfg.d_model);
    for (Eigen::Index t = 0; t < len; ++t) {
        int id = seq[static_cast<std::size_t>(t)];
        if (id < 0 || id >= cfg.vocab_size)
            throw data_error("embed: token id " + std::to_string(id) + " outside vocabulary at position " +
                             std::to_string(t));
        x.row(t) = params.embedding.row(id);
    }
    if (cfg.use_absolute_pe) x += positional_encoding<T>(static_cast<int>(len), cfg.d_model);
    return x;
}

constexpr double kAttentionMask = -1e9;
constexpr double kNormEpsilon = 1e-5;

inline Eigen::Index rel_table_index(Eigen::Index key, Eigen::Index query, int max_rel_dist) {
    auto delta = key - query;
    auto w = static_cast<Eigen::Index>(max_rel_dist);
    return std::clamp(delta, -w, w) + w;
}

// Reference path for the relative-position term: a per-pair gather of R
// rows with explicit dot products. Kept as the oracle for the fast path.
template <class T>
Mat<T> relative_scores_naive(const Mat<T>& q_head, const Mat<T>& rel, int max_rel_dist) {
    Eigen::Index len = q_head.rows();
    Mat<T> s(len, len);
    for (Eigen::Index t = 0; t < len; ++t) {
        for (Eigen::Index j = 0; j < len; ++j) {
            T acc = 0;
            Eigen::Index r = rel_table_index(j, t, max_rel_dist);
            for (Eigen::Index d = 0; d < q_head.cols(); ++d) acc += q_head(t, d) * rel(r, d);
            s(t, j) = acc;
        }
    }
    return s;
}

// Fast path: one Q R^T product, then an index lookup per (query, key) pair.
template <class T>
Mat<T> relative_scores(const Mat<T>& q_head, const Mat<T>& rel, int max_rel_dist) {
    Eigen::Index len = q_head.rows();
    Mat<T> qr(len, rel.rows());
    qr.noalias() = q_head * rel.transpose();
    Mat<T> s(len, len);
    for (Eigen::Index t = 0; t < len; ++t)
        for (Eigen::Index j = 0; j < len; ++j) s(t, j) = qr(t, rel_table_index(j, t, max_rel_dist));
    return s;
}

template <class T>
struct NormCache {
    Mat<T> xhat;           // normalized input
    std::vector<T> rstd;   // 1/sqrt(var+eps) per row
};

template <class T>
Mat<T> layer_norm(const Mat<T>& x, const Mat<T>* gain, const Mat<T>* bias, NormCache<T>* cache) {
    Eigen::Index rows = x.rows(), cols = x.cols();
    Mat<T> y(rows, cols);
    if (cache) {
        cache->xhat.resize(rows, cols);
        cache->rstd.assign(static_cast<std::size_t>(rows), T(0));
    }
    for (Eigen::Index r = 0; r < rows; ++r) {
        double mean = 0;
        for (Eigen::Index c = 0; c < cols; ++c) mean += x(r, c);
        mean /= static_cast<double>(cols);
        double var = 0;
        for (Eigen::Index c = 0; c < cols; ++c) {
            double d = x(r, c) - mean;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        T rstd = static_cast<T>(1.0 / std::sqrt(var + kNormEpsilon));
        for (Eigen::Index c = 0; c < cols; ++c) {
            T xhat = static_cast<T>((x(r, c) - mean) * rstd);
            if (cache) cache->xhat(r, c) = xhat;
            y(r, c) = gain ? (*gain)(0, c) * xhat + (*bias)(0, c) : xhat;
        }
        if (cache) cache->rstd[static_cast<std::size_t>(r)] = rstd;
    }
    return y;
}

// dx for y = gain .* xhat + bias given dy; accumulates dgain/dbias when given.
template <class T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const NormCache<T>& cache, const Mat<T>* gain, Mat<T>* dgain,
                           Mat<T>* dbias) {
    Eigen::Index rows = dy.rows(), cols = dy.cols();
    Mat<T> dx(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        double mean_dxhat = 0, mean_dxhat_xhat = 0;
        for (Eigen::Index c = 0; c < cols; ++c) {
            T dxhat = gain ? dy(r, c) * (*gain)(0, c) : dy(r, c);
            mean_dxhat += dxhat;
            mean_dxhat_xhat += static_cast<double>(dxhat) * cache.xhat(r, c);
        }
        mean_dxhat /= static_cast<double>(cols);
        mean_dxhat_xhat /= static_cast<double>(cols);
        T rstd = cache.rstd[static_cast<std::size_t>(r)];
        for (Eigen::Index c = 0; c < cols; ++c) {
            T dxhat = gain ? dy(r, c) * (*gain)(0, c) : dy(r, c);
            dx(r, c) = static_cast<T>(rstd * (dxhat - mean_dxhat - cache.xhat(r, c) * mean_dxhat_xhat));
        }
    }
    if (dgain)
        for (Eigen::Index c = 0; c < cols; ++c) {
            double g = 0, b = 0;
            for (Eigen::Index r = 0; r < rows; ++r) {
                g += static_cast<double>(dy(r, c)) * cache.xhat(r, c);
                b += dy(r, c);
            }
            (*dgain)(0, c) += static_cast<T>(g);
            (*dbias)(0, c) += static_cast<T>(b);
        }
    return dx;
}

template <class T>
struct AttnCache {
    Mat<T> input;                // L x d_model, post-norm input
    Mat<T> q, k, v;              // L x d_model, heads side by side
    std::vector<Mat<T>> probs;   // per head, L x L
    Mat<T> concat;               // L x d_model, before the output projection
};

// Per-head causal attention with the learned relative-position term:
// softmax((Q K^T + Q R^T) / sqrt(D)) V, keys after the query masked off.
template <class T>
Mat<T> relative_attention(const Mat<T>& x, const AttentionParams<T>& p, const ModelConfig& cfg,
                          AttnCache<T>* cache = nullptr, std::vector<Mat<T>>* trace_probs = nullptr) {
    if (!x.allFinite()) throw numeric_error("relative_attention: non-finite input");
    const Eigen::Index len = x.rows();
    const int heads = cfg.num_heads;
    const Eigen::Index dim = cfg.head_dim();
    const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dim)));

    Mat<T> q(len, cfg.d_model), k(len, cfg.d_model), v(len, cfg.d_model);
    q.noalias() = x * p.wq;
    k.noalias() = x * p.wk;
    v.noalias() = x * p.wv;

    Mat<T> concat(len, cfg.d_model);
    if (cache) cache->probs.clear();
    for (int h = 0; h < heads; ++h) {
        auto qh = q.middleCols(h * dim, dim);
        auto kh = k.middleCols(h * dim, dim);
        auto vh = v.middleCols(h * dim, dim);

        Mat<T> scores(len, len);
        scores.noalias() = qh * kh.transpose();
        scores += relative_scores(Mat<T>(qh), p.rel, cfg.max_rel_dist);
        scores *= inv_sqrt_d;
        for (Eigen::Index t = 0; t < len; ++t)
            for (Eigen::Index j = t + 1; j < len; ++j) scores(t, j) += static_cast<T>(kAttentionMask);

        // softmax rows with max subtraction; masked keys underflow to exact 0
        for (Eigen::Index t = 0; t < len; ++t) {
            T row_max = scores.row(t).maxCoeff();
            double sum = 0;
            for (Eigen::Index j = 0; j < len; ++j) {
                T e = std::exp(scores(t, j) - row_max);
                scores(t, j) = e;
                sum += e;
            }
            scores.row(t) *= static_cast<T>(1.0 / sum);
        }

        concat.middleCols(h * dim, dim).noalias() = scores * vh;
        if (trace_probs) trace_probs->push_back(scores);
        if (cache) cache->probs.push_back(std::move(scores));
    }

    Mat<T> z(len, cfg.d_model);
    z.noalias() = concat * p.wo;
    if (cache) {
        cache->input = x;
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->concat = std::move(concat);
    }
    return z;
}

// Accumulates parameter gradients and returns the gradient w.r.t. the
// attention input.
template <class T>
Mat<T> relative_attention_backward(const Mat<T>& dz, const AttnCache<T>& cache, const AttentionParams<T>& p,
                                   const ModelConfig& cfg, AttentionParams<T>& grads) {
    const Eigen::Index len = dz.rows();
    const int heads = cfg.num_heads;
    const Eigen::Index dim = cfg.head_dim();
    const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dim)));

    grads.wo.noalias() += cache.concat.transpose() * dz;
    Mat<T> dconcat(len, cfg.d_model);
    dconcat.noalias() = dz * p.wo.transpose();

    Mat<T> dq = Mat<T>::Zero(len, cfg.d_model);
    Mat<T> dk = Mat<T>::Zero(len, cfg.d_model);
    Mat<T> dv = Mat<T>::Zero(len, cfg.d_model);

    for (int h = 0; h < heads; ++h) {
        const Mat<T>& probs = cache.probs[static_cast<std::size_t>(h)];
        auto qh = cache.q.middleCols(h * dim, dim);
        auto kh = cache.k.middleCols(h * dim, dim);
        auto vh = cache.v.middleCols(h * dim, dim);
        auto dout = dconcat.middleCols(h * dim, dim);

        Mat<T> dprobs(len, len);
        dprobs.noalias() = dout * vh.transpose();
        dv.middleCols(h * dim, dim).noalias() += probs.transpose() * dout;

        // softmax backward: ds = p .* (dp - sum_j dp_j p_j); masked entries
        // carry p = 0 and contribute nothing
        Mat<T> dscores(len, len);
        for (Eigen::Index t = 0; t < len; ++t) {
            double dot = 0;
            for (Eigen::Index j = 0; j < len; ++j) dot += static_cast<double>(dprobs(t, j)) * probs(t, j);
            for (Eigen::Index j = 0; j < len; ++j)
                dscores(t, j) = static_cast<T>(probs(t, j) * (dprobs(t, j) - dot)) * inv_sqrt_d;
        }

        dq.middleCols(h * dim, dim).noalias() += dscores * kh;
        dk.middleCols(h * dim, dim).noalias() += dscores.transpose() * qh;

        // relative term: scores += gather(Q R^T); scatter the same indices back
        Mat<T> dqr = Mat<T>::Zero(len, p.rel.rows());
        for (Eigen::Index t = 0; t < len; ++t)
            for (Eigen::Index j = 0; j < len; ++j) dqr(t, rel_table_index(j, t, cfg.max_rel_dist)) += dscores(t, j);
        dq.middleCols(h * dim, dim).noalias() += dqr * p.rel;
        grads.rel.noalias() += dqr.transpose() * qh;
    }

    grads.wq.noalias() += cache.input.transpose() * dq;
    grads.wk.noalias() += cache.input.transpose() * dk;
    grads.wv.noalias() += cache.input.transpose() * dv;

    Mat<T> dx(len, cfg.d_model);
    dx.noalias() = dq * p.wq.transpose();
    dx.noalias() += dk * p.wk.transpose();
    dx.noalias() += dv * p.wv.transpose();
    return dx;
}

// FF(Z) = ReLU(Z W1 + b1) W2 + b2, applied position-wise.
template <class T>
Mat<T> feed_forward(const Mat<T>& z, const FeedForwardParams<T>& p, Mat<T>* relu_cache = nullptr) {
    Mat<T> pre(z.rows(), p.w1.cols());
    pre.noalias() = z * p.w1;
    pre.rowwise() += p.b1.row(0);
    Mat<T> act = pre.cwiseMax(T(0));
    Mat<T> out(z.rows(), p.w2.cols());
    out.noalias() = act * p.w2;
    out.rowwise() += p.b2.row(0);
    if (relu_cache) *relu_cache = std::move(act);
    return out;
}

template <class T>
Mat<T> feed_forward_backward(const Mat<T>& dout, const Mat<T>& input, const Mat<T>& relu, const FeedForwardParams<T>& p,
                             FeedForwardParams<T>& grads) {
    grads.w2.noalias() += relu.transpose() * dout;
    grads.b2 += dout.colwise().sum();
    Mat<T> dact(dout.rows(), p.w2.rows());
    dact.noalias() = dout * p.w2.transpose();
    Mat<T> dpre = dact.cwiseProduct((relu.array() > T(0)).template cast<T>().matrix());
    grads.w1.noalias() += input.transpose() * dpre;
    grads.b1 += dpre.colwise().sum();
    Mat<T> dz(dout.rows(), p.w1.rows());
    dz.noalias() = dpre * p.w1.transpose();
    return dz;
}

// Per-layer attention weights plus final logits, for analysis.
template <class T>
struct ForwardTrace {
    std::vector<std::vector<Mat<T>>> attention;  // [layer][head] L x L
    Mat<T> logits;
};

template <class T>
struct LayerCache {
    NormCache<T> norm1, norm2;
    AttnCache<T> attn;
    Mat<T> attn_drop_mask, ff_drop_mask;  // empty when dropout is off
    Mat<T> ff_input;                      // post-norm input to the feed-forward
    Mat<T> ff_relu;
    Mat<T> x_mid;  // after the attention residual
};

template <class T>
struct ForwardCache {
    TokenSeq seq;
    Mat<T> embed_drop_mask;
    Mat<T> x0;  // embedding output (after dropout)
    std::vector<LayerCache<T>> layers;
    NormCache<T> final_norm;
    Mat<T> normed;  // input to the output head
};

namespace detail {

template <class T>
void apply_dropout(Mat<T>& x, double rate, Pcg32& rng, Mat<T>& mask_out) {
    mask_out.resize(x.rows(), x.cols());
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    for (Eigen::Index r = 0; r < x.rows(); ++r)
        for (Eigen::Index c = 0; c < x.cols(); ++c)
            mask_out(r, c) = rng.next_double() < rate ? T(0) : keep_scale;
    x = x.cwiseProduct(mask_out);
}

// Shared forward walk. `cache` enables backward; `dropout_rng` enables
// dropout (training only); `trace` records attention weights.
template <class T>
Mat<T> forward_impl(const TokenSeq& seq, const ModelParams<T>& params, const ModelConfig& cfg,
                    ForwardCache<T>* cache, Pcg32* dropout_rng, ForwardTrace<T>* trace) {
    Mat<T> x = embed(seq, params, cfg);
    bool use_dropout = dropout_rng != nullptr && cfg.dropout > 0.0;
    if (cache) cache->seq = seq;
    if (use_dropout && cache) apply_dropout(x, cfg.dropout, *dropout_rng, cache->embed_drop_mask);
    if (cache) {
        cache->x0 = x;
        cache->layers.assign(static_cast<std::size_t>(cfg.num_layers), {});
    }
    if (trace) trace->attention.clear();

    for (int l = 0; l < cfg.num_layers; ++l) {
        LayerCache<T>* lc = cache ? &cache->layers[static_cast<std::size_t>(l)] : nullptr;
        const LayerParams<T>& lp = params.layers[static_cast<std::size_t>(l)];

        Mat<T> normed1 = layer_norm(x, &lp.ln1_gain, &lp.ln1_bias, lc ? &lc->norm1 : nullptr);
        std::vector<Mat<T>> layer_trace;
        Mat<T> attn = relative_attention(normed1, lp.attn, cfg, lc ? &lc->attn : nullptr,
                                         trace ? &layer_trace : nullptr);
        if (trace) trace->attention.push_back(std::move(layer_trace));
        if (use_dropout && lc) apply_dropout(attn, cfg.dropout, *dropout_rng, lc->attn_drop_mask);
        x += attn;
        if (lc) lc->x_mid = x;

        Mat<T> normed2 = layer_norm(x, &lp.ln2_gain, &lp.ln2_bias, lc ? &lc->norm2 : nullptr);
        if (lc) lc->ff_input = normed2;
        Mat<T> ff = feed_forward(normed2, lp.ff, lc ? &lc->ff_relu : nullptr);
        if (use_dropout && lc) apply_dropout(ff, cfg.dropout, *dropout_rng, lc->ff_drop_mask);
        x += ff;
    }

    Mat<T> normed = layer_norm<T>(x, nullptr, nullptr, cache ? &cache->final_norm : nullptr);
    if (cache) cache->normed = normed;
    Mat<T> logits(x.rows(), cfg.vocab_size);
    logits.noalias() = normed * params.head_w;
    logits.rowwise() += params.head_b.row(0);
    if (trace) trace->logits = logits;
    return logits;
}

}  // namespace detail

// Inference forward: embed -> num_layers x (pre-norm attention + residual,
// pre-norm feed-forward + residual) -> final norm -> linear head.
template <class T>
Mat<T> forward(const TokenSeq& seq, const ModelParams<T>& params, const ModelConfig& cfg,
               ForwardTrace<T>* trace = nullptr) {
    return detail::forward_impl<T>(seq, params, cfg, nullptr, nullptr, trace);
}

// Training forward: caches every intermediate needed by backward();
// dropout is applied when a generator is supplied and cfg.dropout > 0.
template <class T>
Mat<T> forward_cached(const TokenSeq& seq, const ModelParams<T>& params, const ModelConfig& cfg,
                      ForwardCache<T>& cache, Pcg32* dropout_rng = nullptr) {
    return detail::forward_impl<T>(seq, params, cfg, &cache, dropout_rng, nullptr);
}

// Reverse pass over forward_cached(); accumulates into `grads` (callers
// zero-initialize) and returns nothing else.
template <class T>
void backward(const Mat<T>& dlogits, const ForwardCache<T>& cache, const ModelParams<T>& params,
              const ModelConfig& cfg, ModelParams<T>& grads) {
    grads.head_w.noalias() += cache.normed.transpose() * dlogits;
    grads.head_b += dlogits.colwise().sum();
    Mat<T> dnormed(dlogits.rows(), cfg.d_model);
    dnormed.noalias() = dlogits * params.head_w.transpose();
    Mat<T> dx = layer_norm_backward<T>(dnormed, cache.final_norm, nullptr, nullptr, nullptr);

    for (int l = cfg.num_layers - 1; l >= 0; --l) {
        const LayerCache<T>& lc = cache.layers[static_cast<std::size_t>(l)];
        const LayerParams<T>& lp = params.layers[static_cast<std::size_t>(l)];
        LayerParams<T>& lg = grads.layers[static_cast<std::size_t>(l)];

        Mat<T> dff = lc.ff_drop_mask.size() ? dx.cwiseProduct(lc.ff_drop_mask) : dx;
        Mat<T> dnorm2 = feed_forward_backward(dff, lc.ff_input, lc.ff_relu, lp.ff, lg.ff);
        dx += layer_norm_backward(dnorm2, lc.norm2, &lp.ln2_gain, &lg.ln2_gain, &lg.ln2_bias);

        Mat<T> dattn = lc.attn_drop_mask.size() ? dx.cwiseProduct(lc.attn_drop_mask) : dx;
        Mat<T> dnorm1 = relative_attention_backward(dattn, lc.attn, lp.attn, cfg, lg.attn);
        dx += layer_norm_backward(dnorm1, lc.norm1, &lp.ln1_gain, &lg.ln1_gain, &lg.ln1_bias);
    }

    if (cache.embed_drop_mask.size()) dx = dx.cwiseProduct(cache.embed_drop_mask);
    for (Eigen::Index t = 0; t < dx.rows(); ++t)
        grads.embedding.row(cache.seq[static_cast<std::size_t>(t)]) += dx.row(t);
}

// Mean over unmasked positions of -log softmax(logits_t)[target_t].
template <class T>
double cross_entropy(const Mat<T>& logits, const std::vector<int>& targets, const std::vector<std::uint8_t>& mask,
                     Mat<T>* dlogits = nullptr) {
    if (targets.size() != static_cast<std::size_t>(logits.rows()) || mask.size() != targets.size())
        throw data_error("cross_entropy: targets/mask length must match logits rows");
    std::size_t counted = 0;
    for (auto m : mask) counted += m != 0;
    if (counted == 0) throw data_error("cross_entropy: all positions are masked");

    if (dlogits) dlogits->setZero(logits.rows(), logits.cols());
    double total = 0;
    const double inv_count = 1.0 / static_cast<double>(counted);
    for (Eigen::Index t = 0; t < logits.rows(); ++t) {
        if (!mask[static_cast<std::size_t>(t)]) continue;
        int target = targets[static_cast<std::size_t>(t)];
        if (target < 0 || target >= logits.cols())
            throw data_error("cross_entropy: target id " + std::to_string(target) + " outside vocabulary");
        T row_max = logits.row(t).maxCoeff();
        double sum = 0;
        for (Eigen::Index j = 0; j < logits.cols(); ++j) sum += std::exp(static_cast<double>(logits(t, j) - row_max));
        double log_z = std::log(sum) + row_max;
        total += log_z - logits(t, target);
        if (dlogits) {
            for (Eigen::Index j = 0; j < logits.cols(); ++j)
                (*dlogits)(t, j) = static_cast<T>(std::exp(static_cast<double>(logits(t, j) - row_max)) / sum * inv_count);
            (*dlogits)(t, target) -= static_cast<T>(inv_count);
        }
    }
    double loss = total * inv_count;
    if (!std::isfinite(loss)) throw numeric_error("cross_entropy: non-finite loss");
    return loss;
}

}  // namespace choir
