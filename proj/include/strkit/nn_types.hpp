#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "strkit/errors.hpp"
#include "strkit/hash.hpp"
#include "strkit/rng.hpp"

namespace strkit {

// Row-major matrix; vectors are single-row mats.
template <class T>
struct Mat {
    size_t rows = 0, cols = 0;
    std::vector<T> a;

    Mat() = default;
    Mat(size_t r, size_t c) : rows(r), cols(c), a(r * c, T(0)) {}

    T* row(size_t r) { return a.data() + r * cols; }
    const T* row(size_t r) const { return a.data() + r * cols; }
    T& at(size_t r, size_t c) { return a[r * cols + c]; }
    const T& at(size_t r, size_t c) const { return a[r * cols + c]; }
    size_t count() const { return a.size(); }
    void zero() { std::fill(a.begin(), a.end(), T(0)); }
};

struct ModelConfig {
    int vocab_size = 0;
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 192;
    int max_seq_len = 48;
    uint64_t seed = 0;

    void validate() const {
        if (vocab_size <= 0 || d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0)
            throw config_error("model config: all counts must be positive");
        if (d_model % n_heads != 0)
            throw config_error("model config: d_model " + std::to_string(d_model) +
                               " not divisible by n_heads " + std::to_string(n_heads));
        if (max_seq_len < 2) throw config_error("model config: max_seq_len must be >= 2");
    }

    int head_dim() const { return d_model / n_heads; }
};

template <class T>
struct LayerParams {
    Mat<T> ln1_g, ln1_b;
    Mat<T> wq, wk, wv, wo;
    Mat<T> ln2_g, ln2_b;
    Mat<T> w1, w2;
};

// Full model parameters. `frozen` marks the reference model of the training
// loop; nothing in the trainer mutates a frozen Parameters object, and the
// checksum lets tests prove it.
template <class T>
struct Parameters {
    ModelConfig config;
    Mat<T> tok_emb, pos_emb;
    std::vector<LayerParams<T>> layers;
    Mat<T> lnf_g, lnf_b;
    Mat<T> head;
    bool frozen = false;

    template <class F>
    void for_each_array(F&& f) {
        f("tok_emb", tok_emb);
        f("pos_emb", pos_emb);
        for (size_t i = 0; i < layers.size(); ++i) {
            const std::string p = "layers." + std::to_string(i) + ".";
            auto& l = layers[i];
            f(p + "ln1.g", l.ln1_g);
            f(p + "ln1.b", l.ln1_b);
            f(p + "attn.wq", l.wq);
            f(p + "attn.wk", l.wk);
            f(p + "attn.wv", l.wv);
            f(p + "attn.wo", l.wo);
            f(p + "ln2.g", l.ln2_g);
            f(p + "ln2.b", l.ln2_b);
            f(p + "mlp.w1", l.w1);
            f(p + "mlp.w2", l.w2);
        }
        f("lnf.g", lnf_g);
        f("lnf.b", lnf_b);
        f("head.w", head);
    }

    template <class F>
    void for_each_array(F&& f) const {
        const_cast<Parameters*>(this)->for_each_array(
            [&](const std::string& name, Mat<T>& m) { f(name, static_cast<const Mat<T>&>(m)); });
    }

    uint64_t checksum() const {
        ContentHash h;
        for_each_array([&](const std::string& name, const Mat<T>& m) {
            h.update(name);
            h.update(m.a.data(), m.a.size() * sizeof(T));
        });
        return h.value();
    }

    size_t param_count() const {
        size_t n = 0;
        for_each_array([&](const std::string&, const Mat<T>& m) { n += m.count(); });
        return n;
    }
};

// Teacher-forced batch: input_ids[b,t] predicts target_ids[b,t]; loss_mask
// selects the positions that contribute to losses; lengths[b] counts the
// valid (non-pad) input positions of row b.
struct SequenceBatch {
    size_t batch = 0, seq_len = 0;
    std::vector<int> input_ids, target_ids;
    std::vector<uint8_t> loss_mask;
    std::vector<int> lengths;

    size_t idx(size_t b, size_t t) const { return b * seq_len + t; }

    void validate(int vocab_size, int max_seq_len) const {
        if (batch == 0 || seq_len == 0) throw data_error("empty batch");
        if (static_cast<int>(seq_len) > max_seq_len)
            throw data_error("sequence length " + std::to_string(seq_len) +
                             " exceeds max_seq_len " + std::to_string(max_seq_len));
        if (input_ids.size() != batch * seq_len || target_ids.size() != batch * seq_len ||
            loss_mask.size() != batch * seq_len || lengths.size() != batch)
            throw data_error("batch field shapes disagree");
        for (int id : input_ids)
            if (id < 0 || id >= vocab_size) throw data_error("input id outside vocabulary");
        for (int id : target_ids)
            if (id < 0 || id >= vocab_size) throw data_error("target id outside vocabulary");
        for (int len : lengths)
            if (len < 1 || static_cast<size_t>(len) > seq_len)
                throw data_error("sequence length out of range");
    }
};

// Pre-softmax scores for every (sequence, position, vocab entry).
template <class T>
struct LogitFrame {
    size_t batch = 0, seq_len = 0;
    int vocab = 0;
    std::vector<T> scores;

    LogitFrame() = default;
    LogitFrame(size_t b, size_t t, int v)
        : batch(b), seq_len(t), vocab(v), scores(b * t * static_cast<size_t>(v), T(0)) {}

    T* at(size_t b, size_t t) { return scores.data() + (b * seq_len + t) * static_cast<size_t>(vocab); }
    const T* at(size_t b, size_t t) const {
        return scores.data() + (b * seq_len + t) * static_cast<size_t>(vocab);
    }
    bool same_shape(const LogitFrame& o) const {
        return batch == o.batch && seq_len == o.seq_len && vocab == o.vocab;
    }
};

// Deterministic Gaussian init: one stream, one fixed traversal order.
template <class T>
Parameters<T> init_params(const ModelConfig& config) {
    config.validate();
    Parameters<T> p;
    p.config = config;
    const size_t d = static_cast<size_t>(config.d_model);
    const size_t v = static_cast<size_t>(config.vocab_size);
    const size_t ff = static_cast<size_t>(config.d_ff);
    p.tok_emb = Mat<T>(v, d);
    p.pos_emb = Mat<T>(static_cast<size_t>(config.max_seq_len), d);
    p.layers.resize(static_cast<size_t>(config.n_layers));
    for (auto& l : p.layers) {
        l.ln1_g = Mat<T>(1, d);
        l.ln1_b = Mat<T>(1, d);
        l.wq = Mat<T>(d, d);
        l.wk = Mat<T>(d, d);
        l.wv = Mat<T>(d, d);
        l.wo = Mat<T>(d, d);
        l.ln2_g = Mat<T>(1, d);
        l.ln2_b = Mat<T>(1, d);
        l.w1 = Mat<T>(ff, d);
        l.w2 = Mat<T>(d, ff);
    }
    p.lnf_g = Mat<T>(1, d);
    p.lnf_b = Mat<T>(1, d);
    p.head = Mat<T>(v, d);

    Rng rng(config.seed);
    p.for_each_array([&](const std::string& name, Mat<T>& m) {
        const bool is_ln_gain = name.ends_with(".g");
        const bool is_ln_bias = name.ends_with(".b") && name.find("ln") != std::string::npos;
        if (is_ln_gain) {
            std::fill(m.a.begin(), m.a.end(), T(1));
        } else if (is_ln_bias) {
            m.zero();
        } else {
            for (auto& x : m.a) x = static_cast<T>(rng.gaussian(0.0, 0.02));
        }
    });
    return p;
}

template <class T>
Parameters<T> zeros_like(const Parameters<T>& p) {
    Parameters<T> g = p;
    g.frozen = false;
    g.for_each_array([](const std::string&, Mat<T>& m) { m.zero(); });
    return g;
}

} // namespace strkit
