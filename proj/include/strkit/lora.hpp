#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "strkit/nn_types.hpp"

namespace strkit {

// Low-rank adaptation of named weight matrices: the adapted matrix behaves
// as W + (alpha/rank) * B*A, with A seeded-Gaussian, B zero (the adapted
// model starts out exactly equal to the base model).
struct LoraConfig {
    int rank = 8;
    double alpha = 16.0;
    // Per-layer matrix names; expanded to "layers.<i>.<target>" on attach.
    std::vector<std::string> targets = {"attn.wq", "attn.wv"};
    uint64_t seed = 0;

    void validate() const {
        if (rank < 1) throw config_error("lora: rank must be >= 1");
        if (alpha <= 0.0) throw config_error("lora: alpha must be > 0");
        if (targets.empty()) throw config_error("lora: target set must be non-empty");
    }
};

template <class T>
struct LoraTarget {
    std::string name; // fully qualified, e.g. "layers.0.attn.wq"
    Mat<T> a;         // [rank x in]
    Mat<T> b;         // [out x rank]
};

template <class T>
struct AdapterState {
    LoraConfig config;
    std::vector<LoraTarget<T>> targets;
    int64_t step = 0;
    uint64_t base_checksum = 0;

    T scale() const { return static_cast<T>(config.alpha / double(config.rank)); }

    const LoraTarget<T>* find(const std::string& name) const {
        for (const auto& t : targets)
            if (t.name == name) return &t;
        return nullptr;
    }

    uint64_t checksum() const {
        ContentHash h;
        for (const auto& t : targets) {
            h.update(t.name);
            h.update(t.a.a.data(), t.a.a.size() * sizeof(T));
            h.update(t.b.a.data(), t.b.a.size() * sizeof(T));
        }
        return h.value();
    }
};

// Gradient buffers aligned with AdapterState::targets.
template <class T>
struct AdapterGrads {
    std::vector<Mat<T>> da, db;

    template <class U>
    explicit AdapterGrads(const AdapterState<U>& s) {
        for (const auto& t : s.targets) {
            da.emplace_back(t.a.rows, t.a.cols);
            db.emplace_back(t.b.rows, t.b.cols);
        }
    }
    void zero() {
        for (auto& m : da) m.zero();
        for (auto& m : db) m.zero();
    }
};

template <class T>
size_t trainable_count(const AdapterState<T>& s) {
    size_t n = 0;
    for (const auto& t : s.targets) n += t.a.count() + t.b.count();
    return n;
}

template <class T>
AdapterState<T> attach(const Parameters<T>& base, const LoraConfig& cfg) {
    cfg.validate();
    AdapterState<T> s;
    s.config = cfg;
    s.base_checksum = base.checksum();
    Rng rng(cfg.seed);
    for (int layer = 0; layer < base.config.n_layers; ++layer) {
        for (const auto& target : cfg.targets) {
            const std::string name = "layers." + std::to_string(layer) + "." + target;
            const Mat<T>* w = nullptr;
            base.for_each_array([&](const std::string& n, const Mat<T>& m) {
                if (n == name) w = &m;
            });
            if (!w) throw config_error("lora: unknown target matrix '" + target + "'");
            LoraTarget<T> t;
            t.name = name;
            t.a = Mat<T>(static_cast<size_t>(cfg.rank), w->cols);
            t.b = Mat<T>(w->rows, static_cast<size_t>(cfg.rank));
            for (auto& x : t.a.a) x = static_cast<T>(rng.gaussian(0.0, 0.02));
            s.targets.push_back(std::move(t));
        }
    }
    return s;
}

// Standalone parameters with the adapter folded in.
template <class T>
Parameters<T> merge(const Parameters<T>& base, const AdapterState<T>& adapter) {
    Parameters<T> merged = base;
    merged.frozen = false;
    const T scale = adapter.scale();
    merged.for_each_array([&](const std::string& name, Mat<T>& w) {
        const LoraTarget<T>* t = adapter.find(name);
        if (!t) return;
        for (size_t o = 0; o < w.rows; ++o)
            for (size_t r = 0; r < t->a.rows; ++r) {
                const T borow = t->b.at(o, r) * scale;
                for (size_t i = 0; i < w.cols; ++i) w.at(o, i) += borow * t->a.at(r, i);
            }
    });
    return merged;
}

} // namespace strkit
