#pragma once

#include <atomic>
#include <type_traits>
#include <cmath>
#include <cstdint>
#include <vector>

#include "strkit/kernels.hpp"
#include "strkit/lora.hpp"
#include "strkit/nn_types.hpp"
#include "strkit/vocab.hpp"

namespace strkit {

// Decoder-only transformer with learned absolute positions, pre-LN blocks
// and an untied output head. Weight matrices are [out x in]; every matmul
// runs through the kernel layer. All functions here are pure in their
// declared inputs, so forwards on a frozen Parameters object are safe to
// issue from multiple threads.

// Process-wide instrumentation: the trainer's per-step forward accounting
// is asserted against these in tests.
struct ForwardStats {
    inline static std::atomic<uint64_t> plain_forwards{0}; // no-grad, no activation cache
    inline static std::atomic<uint64_t> train_forwards{0}; // cached for backward

    static void reset() {
        plain_forwards.store(0);
        train_forwards.store(0);
    }
};

template <class T>
struct LayerCache {
    std::vector<T> h_in;                 // [N*d] layer input
    std::vector<T> ln1_out, ln2_out;     // [N*d]
    std::vector<T> ln1_mean, ln1_rstd;   // [N]
    std::vector<T> ln2_mean, ln2_rstd;   // [N]
    std::vector<T> q, k, v, u;           // [N*d]
    std::vector<T> probs;                // [B*H*T*T]
    std::vector<T> h_mid;                // [N*d] after attention residual
    std::vector<T> mlp_pre, mlp_act;     // [N*ff]
};

template <class T>
struct ForwardCache {
    std::vector<LayerCache<T>> layers;
    std::vector<T> h_final;              // [N*d]
    std::vector<T> lnf_out;              // [N*d]
    std::vector<T> lnf_mean, lnf_rstd;   // [N]
    std::vector<std::vector<T>> lora_s;  // per adapter target: [N*r]
};

namespace detail {

template <class T>
void layernorm_rows(const T* x, const T* g, const T* b, T* y, T* means, T* rstds, size_t n,
                    size_t d) {
    for (size_t r = 0; r < n; ++r) {
        const T* xr = x + r * d;
        T* yr = y + r * d;
        T mean = kern::reduce_sum(xr, d) / T(d);
        T var = T(0);
        for (size_t i = 0; i < d; ++i) {
            const T c = xr[i] - mean;
            var += c * c;
        }
        var /= T(d);
        const T rstd = T(1) / std::sqrt(var + T(1e-5));
        for (size_t i = 0; i < d; ++i) yr[i] = g[i] * (xr[i] - mean) * rstd + b[i];
        if (means) means[r] = mean;
        if (rstds) rstds[r] = rstd;
    }
}

template <class T>
void layernorm_backward_rows(const T* x, const T* g, const T* means, const T* rstds, const T* dy,
                             T* dx_acc, T* dg_acc, T* db_acc, size_t n, size_t d) {
    std::vector<T> dxhat(d);
    for (size_t r = 0; r < n; ++r) {
        const T* xr = x + r * d;
        const T* dyr = dy + r * d;
        T* dxr = dx_acc + r * d;
        const T mean = means[r], rstd = rstds[r];
        T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
        for (size_t i = 0; i < d; ++i) {
            const T xhat = (xr[i] - mean) * rstd;
            const T dxh = dyr[i] * g[i];
            dxhat[i] = dxh;
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xhat;
            if (dg_acc) dg_acc[i] += dyr[i] * xhat;
            if (db_acc) db_acc[i] += dyr[i];
        }
        const T inv_d = T(1) / T(d);
        for (size_t i = 0; i < d; ++i) {
            const T xhat = (xr[i] - mean) * rstd;
            dxr[i] += rstd * (dxhat[i] - sum_dxhat * inv_d - xhat * sum_dxhat_xhat * inv_d);
        }
    }
}

template <class T>
T gelu(T x) {
    const T c = T(0.7978845608028654);
    return T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x)));
}

template <class T>
T gelu_grad(T x) {
    const T c = T(0.7978845608028654);
    const T w = c * (x + T(0.044715) * x * x * x);
    const T th = std::tanh(w);
    const T sech2 = T(1) - th * th;
    return T(0.5) * (T(1) + th) + T(0.5) * x * sech2 * c * (T(1) + T(0.134145) * x * x);
}

// y[N x out] = x[N x in] * W^T, plus the low-rank path when this matrix is
// adapted. s_out receives A*x rows when given (needed for the backward).
template <class T>
void linear_forward(const Mat<T>& w, const T* x, T* y, size_t n,
                    const std::type_identity_t<AdapterState<T>>* adapter, int target_idx,
                    std::type_identity_t<std::vector<T>>* s_out) {
    kern::matmul_nt(x, w.a.data(), y, n, w.cols, w.rows);
    if (!adapter || target_idx < 0) return;
    const auto& t = adapter->targets[size_t(target_idx)];
    const size_t r = t.a.rows;
    std::vector<T> s(n * r);
    kern::matmul_nt(x, t.a.a.data(), s.data(), n, t.a.cols, r);
    std::vector<T> delta(n * w.rows);
    kern::matmul_nt(s.data(), t.b.a.data(), delta.data(), n, r, w.rows);
    kern::axpy(adapter->scale(), delta.data(), y, n * w.rows);
    if (s_out) *s_out = std::move(s);
}

// Accumulates dx (+= dy*W and the adapter path), and optionally dW/dA/dB.
template <class T>
void linear_backward(const Mat<T>& w, const T* x, const T* dy, T* dx_acc, size_t n,
                     const std::type_identity_t<AdapterState<T>>* adapter, int target_idx,
                     const std::type_identity_t<std::vector<T>>* s_cache,
                     std::type_identity_t<Mat<T>>* dw, std::type_identity_t<Mat<T>>* da,
                     std::type_identity_t<Mat<T>>* db) {
    if (dx_acc) kern::matmul_nn_acc(dy, w.a.data(), dx_acc, n, w.rows, w.cols);
    if (dw) kern::matmul_tn_acc(dy, x, dw->a.data(), n, w.rows, w.cols);
    if (!adapter || target_idx < 0) return;
    const auto& t = adapter->targets[size_t(target_idx)];
    const size_t r = t.a.rows;
    const T scale = adapter->scale();
    std::vector<T> tbuf(n * r, T(0));
    kern::matmul_nn_acc(dy, t.b.a.data(), tbuf.data(), n, t.b.rows, r);
    for (auto& v : tbuf) v *= scale;
    if (dx_acc) kern::matmul_nn_acc(tbuf.data(), t.a.a.data(), dx_acc, n, r, t.a.cols);
    if (da) kern::matmul_tn_acc(tbuf.data(), x, da->a.data(), n, r, t.a.cols);
    if (db) {
        Mat<T> tmp(t.b.rows, r);
        kern::matmul_tn_acc(dy, s_cache->data(), tmp.a.data(), n, t.b.rows, r);
        kern::axpy(scale, tmp.a.data(), db->a.data(), tmp.count());
    }
}

template <class T>
int adapter_index(const std::type_identity_t<AdapterState<T>>* adapter, const std::string& name) {
    if (!adapter) return -1;
    for (size_t i = 0; i < adapter->targets.size(); ++i)
        if (adapter->targets[i].name == name) return static_cast<int>(i);
    return -1;
}

} // namespace detail

template <class T>
LogitFrame<T> forward_impl(const Parameters<T>& p, const SequenceBatch& batch,
                           const std::type_identity_t<AdapterState<T>>* adapter,
                           std::type_identity_t<ForwardCache<T>>* cache) {
    batch.validate(p.config.vocab_size, p.config.max_seq_len);
    const size_t B = batch.batch, S = batch.seq_len;
    const size_t N = B * S;
    const size_t d = static_cast<size_t>(p.config.d_model);
    const size_t ff = static_cast<size_t>(p.config.d_ff);
    const size_t H = static_cast<size_t>(p.config.n_heads);
    const size_t hd = static_cast<size_t>(p.config.head_dim());
    const T inv_sqrt_hd = T(1) / std::sqrt(T(hd));

    if (cache) {
        cache->layers.assign(p.layers.size(), LayerCache<T>{});
        cache->lora_s.assign(adapter ? adapter->targets.size() : 0, {});
    }

    std::vector<T> h(N * d);
    for (size_t b = 0; b < B; ++b)
        for (size_t t = 0; t < S; ++t) {
            const int id = batch.input_ids[batch.idx(b, t)];
            const T* emb = p.tok_emb.row(size_t(id));
            const T* pos = p.pos_emb.row(t);
            T* hr = h.data() + (b * S + t) * d;
            for (size_t i = 0; i < d; ++i) hr[i] = emb[i] + pos[i];
        }

    std::vector<T> ln_out(N * d), q(N * d), k(N * d), v(N * d), u(N * d), proj(N * d);
    std::vector<T> mlp_pre(N * ff), mlp_act(N * ff);
    std::vector<T> means(N), rstds(N);
    std::vector<T> probs_row; // per (b,h,t) softmax row scratch

    for (size_t li = 0; li < p.layers.size(); ++li) {
        const auto& l = p.layers[li];
        LayerCache<T>* lc = cache ? &cache->layers[li] : nullptr;
        const std::string prefix = "layers." + std::to_string(li) + ".";
        const int iq = detail::adapter_index<T>(adapter, prefix + "attn.wq");
        const int ik = detail::adapter_index<T>(adapter, prefix + "attn.wk");
        const int iv = detail::adapter_index<T>(adapter, prefix + "attn.wv");
        const int io = detail::adapter_index<T>(adapter, prefix + "attn.wo");
        const int i1 = detail::adapter_index<T>(adapter, prefix + "mlp.w1");
        const int i2 = detail::adapter_index<T>(adapter, prefix + "mlp.w2");

        if (lc) lc->h_in = h;
        detail::layernorm_rows(h.data(), l.ln1_g.a.data(), l.ln1_b.a.data(), ln_out.data(),
                               means.data(), rstds.data(), N, d);
        if (lc) {
            lc->ln1_out = ln_out;
            lc->ln1_mean = means;
            lc->ln1_rstd = rstds;
        }

        detail::linear_forward(l.wq, ln_out.data(), q.data(), N, adapter, iq,
                               (lc && iq >= 0) ? &cache->lora_s[size_t(iq)] : nullptr);
        detail::linear_forward(l.wk, ln_out.data(), k.data(), N, adapter, ik,
                               (lc && ik >= 0) ? &cache->lora_s[size_t(ik)] : nullptr);
        detail::linear_forward(l.wv, ln_out.data(), v.data(), N, adapter, iv,
                               (lc && iv >= 0) ? &cache->lora_s[size_t(iv)] : nullptr);

        if (lc) lc->probs.assign(B * H * S * S, T(0));
        std::fill(u.begin(), u.end(), T(0));
        probs_row.resize(S);
        for (size_t b = 0; b < B; ++b) {
            for (size_t head = 0; head < H; ++head) {
                const size_t off = head * hd;
                for (size_t t = 0; t < S; ++t) {
                    const T* qrow = q.data() + (b * S + t) * d + off;
                    for (size_t j = 0; j <= t; ++j) {
                        probs_row[j] =
                            kern::dot(qrow, k.data() + (b * S + j) * d + off, hd) * inv_sqrt_hd;
                    }
                    const T mx = kern::reduce_max(probs_row.data(), t + 1);
                    for (size_t j = 0; j <= t; ++j) probs_row[j] = std::exp(probs_row[j] - mx);
                    const T z = kern::reduce_sum(probs_row.data(), t + 1);
                    const T invz = T(1) / z;
                    T* urow = u.data() + (b * S + t) * d + off;
                    for (size_t j = 0; j <= t; ++j) {
                        const T pj = probs_row[j] * invz;
                        kern::axpy(pj, v.data() + (b * S + j) * d + off, urow, hd);
                        if (lc) lc->probs[((b * H + head) * S + t) * S + j] = pj;
                    }
                }
            }
        }
        if (lc) {
            lc->q = q;
            lc->k = k;
            lc->v = v;
            lc->u = u;
        }

        detail::linear_forward(l.wo, u.data(), proj.data(), N, adapter, io,
                               (lc && io >= 0) ? &cache->lora_s[size_t(io)] : nullptr);
        for (size_t i = 0; i < N * d; ++i) h[i] += proj[i];
        if (lc) lc->h_mid = h;

        detail::layernorm_rows(h.data(), l.ln2_g.a.data(), l.ln2_b.a.data(), ln_out.data(),
                               means.data(), rstds.data(), N, d);
        if (lc) {
            lc->ln2_out = ln_out;
            lc->ln2_mean = means;
            lc->ln2_rstd = rstds;
        }
        detail::linear_forward(l.w1, ln_out.data(), mlp_pre.data(), N, adapter, i1,
                               (lc && i1 >= 0) ? &cache->lora_s[size_t(i1)] : nullptr);
        for (size_t i = 0; i < N * ff; ++i) mlp_act[i] = detail::gelu(mlp_pre[i]);
        if (lc) {
            lc->mlp_pre = mlp_pre;
            lc->mlp_act = mlp_act;
        }
        detail::linear_forward(l.w2, mlp_act.data(), proj.data(), N, adapter, i2,
                               (lc && i2 >= 0) ? &cache->lora_s[size_t(i2)] : nullptr);
        for (size_t i = 0; i < N * d; ++i) h[i] += proj[i];
    }

    if (cache) cache->h_final = h;
    detail::layernorm_rows(h.data(), p.lnf_g.a.data(), p.lnf_b.a.data(), ln_out.data(),
                           means.data(), rstds.data(), N, d);
    if (cache) {
        cache->lnf_out = ln_out;
        cache->lnf_mean = means;
        cache->lnf_rstd = rstds;
    }

    LogitFrame<T> logits(B, S, p.config.vocab_size);
    kern::matmul_nt(ln_out.data(), p.head.a.data(), logits.scores.data(), N, d, p.head.rows);

    if (cache)
        ForwardStats::train_forwards.fetch_add(1);
    else
        ForwardStats::plain_forwards.fetch_add(1);
    return logits;
}

// No-grad forward: no activation state survives the call.
template <class T>
LogitFrame<T> forward(const Parameters<T>& p, const SequenceBatch& batch,
                      const std::type_identity_t<AdapterState<T>>* adapter = nullptr) {
    return forward_impl<T>(p, batch, adapter, nullptr);
}

template <class T>
LogitFrame<T> adapted_forward(const Parameters<T>& base, const AdapterState<T>& adapter,
                              const SequenceBatch& batch) {
    return forward_impl<T>(base, batch, &adapter, nullptr);
}

template <class T>
LogitFrame<T> forward_train(const Parameters<T>& p, const SequenceBatch& batch,
                            const std::type_identity_t<AdapterState<T>>* adapter,
                            ForwardCache<T>& cache) {
    return forward_impl<T>(p, batch, adapter, &cache);
}

// Reverse pass. dlogits carries d(loss)/d(logits); gradients are accumulated
// into base_grads (when pretraining) and/or adapter_grads (when adapting).
// A frozen base never receives gradients: pass base_grads = nullptr.
template <class T>
void backward(const Parameters<T>& p, const SequenceBatch& batch,
              const std::type_identity_t<AdapterState<T>>* adapter, const ForwardCache<T>& cache,
              const LogitFrame<T>& dlogits, std::type_identity_t<Parameters<T>>* base_grads,
              std::type_identity_t<AdapterGrads<T>>* adapter_grads) {
    const size_t B = batch.batch, S = batch.seq_len;
    const size_t N = B * S;
    const size_t d = static_cast<size_t>(p.config.d_model);
    const size_t ff = static_cast<size_t>(p.config.d_ff);
    const size_t H = static_cast<size_t>(p.config.n_heads);
    const size_t hd = static_cast<size_t>(p.config.head_dim());
    const T inv_sqrt_hd = T(1) / std::sqrt(T(hd));

    auto da_for = [&](int idx) -> Mat<T>* {
        return (adapter_grads && idx >= 0) ? &adapter_grads->da[size_t(idx)] : nullptr;
    };
    auto db_for = [&](int idx) -> Mat<T>* {
        return (adapter_grads && idx >= 0) ? &adapter_grads->db[size_t(idx)] : nullptr;
    };
    auto s_for = [&](int idx) -> const std::vector<T>* {
        return idx >= 0 ? &cache.lora_s[size_t(idx)] : nullptr;
    };

    // head + final layernorm
    std::vector<T> d_ln(N * d, T(0));
    detail::linear_backward(p.head, cache.lnf_out.data(), dlogits.scores.data(), d_ln.data(), N,
                            nullptr, -1, nullptr, base_grads ? &base_grads->head : nullptr,
                            nullptr, nullptr);
    std::vector<T> dh(N * d, T(0));
    detail::layernorm_backward_rows(cache.h_final.data(), p.lnf_g.a.data(), cache.lnf_mean.data(),
                                    cache.lnf_rstd.data(), d_ln.data(), dh.data(),
                                    base_grads ? base_grads->lnf_g.a.data() : nullptr,
                                    base_grads ? base_grads->lnf_b.a.data() : nullptr, N, d);

    std::vector<T> d_act(N * ff), d_pre(N * ff), d_ln2(N * d), d_u(N * d), dq(N * d), dk(N * d),
        dv(N * d), d_ln1(N * d), dp_row, ds_row;

    for (size_t li = p.layers.size(); li-- > 0;) {
        const auto& l = p.layers[li];
        const auto& lc = cache.layers[li];
        auto* lg = base_grads ? &base_grads->layers[li] : nullptr;
        const std::string prefix = "layers." + std::to_string(li) + ".";
        const int iq = detail::adapter_index<T>(adapter, prefix + "attn.wq");
        const int ik = detail::adapter_index<T>(adapter, prefix + "attn.wk");
        const int iv = detail::adapter_index<T>(adapter, prefix + "attn.wv");
        const int io = detail::adapter_index<T>(adapter, prefix + "attn.wo");
        const int i1 = detail::adapter_index<T>(adapter, prefix + "mlp.w1");
        const int i2 = detail::adapter_index<T>(adapter, prefix + "mlp.w2");

        // mlp block: h_out = h_mid + W2 * gelu(W1 * ln2(h_mid))
        std::fill(d_act.begin(), d_act.end(), T(0));
        detail::linear_backward(l.w2, lc.mlp_act.data(), dh.data(), d_act.data(), N, adapter, i2,
                                s_for(i2), lg ? &lg->w2 : nullptr, da_for(i2), db_for(i2));
        for (size_t i = 0; i < N * ff; ++i) d_pre[i] = d_act[i] * detail::gelu_grad(lc.mlp_pre[i]);
        std::fill(d_ln2.begin(), d_ln2.end(), T(0));
        detail::linear_backward(l.w1, lc.ln2_out.data(), d_pre.data(), d_ln2.data(), N, adapter,
                                i1, s_for(i1), lg ? &lg->w1 : nullptr, da_for(i1), db_for(i1));
        // residual: dh continues to h_mid, plus the layernorm path
        detail::layernorm_backward_rows(lc.h_mid.data(), l.ln2_g.a.data(), lc.ln2_mean.data(),
                                        lc.ln2_rstd.data(), d_ln2.data(), dh.data(),
                                        lg ? lg->ln2_g.a.data() : nullptr,
                                        lg ? lg->ln2_b.a.data() : nullptr, N, d);

        // attention block: h_mid = h_in + Wo * attn(q, k, v)
        std::fill(d_u.begin(), d_u.end(), T(0));
        detail::linear_backward(l.wo, lc.u.data(), dh.data(), d_u.data(), N, adapter, io,
                                s_for(io), lg ? &lg->wo : nullptr, da_for(io), db_for(io));

        std::fill(dq.begin(), dq.end(), T(0));
        std::fill(dk.begin(), dk.end(), T(0));
        std::fill(dv.begin(), dv.end(), T(0));
        dp_row.resize(S);
        ds_row.resize(S);
        for (size_t b = 0; b < B; ++b) {
            for (size_t head = 0; head < H; ++head) {
                const size_t off = head * hd;
                for (size_t t = 0; t < S; ++t) {
                    const T* du_row = d_u.data() + (b * S + t) * d + off;
                    const T* prow = lc.probs.data() + ((b * H + head) * S + t) * S;
                    T dot_dp_p = T(0);
                    for (size_t j = 0; j <= t; ++j) {
                        dp_row[j] = kern::dot(du_row, lc.v.data() + (b * S + j) * d + off, hd);
                        kern::axpy(prow[j], du_row, dv.data() + (b * S + j) * d + off, hd);
                        dot_dp_p += dp_row[j] * prow[j];
                    }
                    const T* qrow = lc.q.data() + (b * S + t) * d + off;
                    T* dqrow = dq.data() + (b * S + t) * d + off;
                    for (size_t j = 0; j <= t; ++j) {
                        const T ds = prow[j] * (dp_row[j] - dot_dp_p) * inv_sqrt_hd;
                        kern::axpy(ds, lc.k.data() + (b * S + j) * d + off, dqrow, hd);
                        kern::axpy(ds, qrow, dk.data() + (b * S + j) * d + off, hd);
                    }
                }
            }
        }

        std::fill(d_ln1.begin(), d_ln1.end(), T(0));
        detail::linear_backward(l.wq, lc.ln1_out.data(), dq.data(), d_ln1.data(), N, adapter, iq,
                                s_for(iq), lg ? &lg->wq : nullptr, da_for(iq), db_for(iq));
        detail::linear_backward(l.wk, lc.ln1_out.data(), dk.data(), d_ln1.data(), N, adapter, ik,
                                s_for(ik), lg ? &lg->wk : nullptr, da_for(ik), db_for(ik));
        detail::linear_backward(l.wv, lc.ln1_out.data(), dv.data(), d_ln1.data(), N, adapter, iv,
                                s_for(iv), lg ? &lg->wv : nullptr, da_for(iv), db_for(iv));
        detail::layernorm_backward_rows(lc.h_in.data(), l.ln1_g.a.data(), lc.ln1_mean.data(),
                                        lc.ln1_rstd.data(), d_ln1.data(), dh.data(),
                                        lg ? lg->ln1_g.a.data() : nullptr,
                                        lg ? lg->ln1_b.a.data() : nullptr, N, d);
    }

    if (base_grads) {
        for (size_t b = 0; b < B; ++b)
            for (size_t t = 0; t < S; ++t) {
                const int id = batch.input_ids[batch.idx(b, t)];
                const T* dhr = dh.data() + (b * S + t) * d;
                kern::axpy(T(1), dhr, base_grads->tok_emb.row(size_t(id)), d);
                kern::axpy(T(1), dhr, base_grads->pos_emb.row(t), d);
            }
    }
}

// Greedy/temperature decoding. temperature 0 is argmax with lowest-id tie
// break; generation stops at eos or after max_new tokens. Returns only the
// newly generated ids (eos included when emitted).
template <class T>
std::vector<int> generate(const Parameters<T>& p, const std::vector<int>& prompt_ids, int max_new,
                          double temperature, uint64_t seed,
                          const std::type_identity_t<AdapterState<T>>* adapter = nullptr) {
    if (prompt_ids.empty()) throw data_error("generate: empty prompt");
    if (temperature < 0.0) throw data_error("generate: temperature must be >= 0");
    for (int id : prompt_ids)
        if (id < 0 || id >= p.config.vocab_size) throw data_error("generate: prompt id outside vocabulary");

    std::vector<int> ctx = prompt_ids;
    std::vector<int> out;
    Rng rng(seed);
    const int V = p.config.vocab_size;
    for (int stepno = 0; stepno < max_new; ++stepno) {
        // Sliding window over the most recent max_seq_len tokens.
        const size_t start = ctx.size() > size_t(p.config.max_seq_len)
                                 ? ctx.size() - size_t(p.config.max_seq_len)
                                 : 0;
        SequenceBatch batch;
        batch.batch = 1;
        batch.seq_len = ctx.size() - start;
        batch.input_ids.assign(ctx.begin() + long(start), ctx.end());
        batch.target_ids.assign(batch.seq_len, 0);
        batch.loss_mask.assign(batch.seq_len, 0);
        batch.lengths = {static_cast<int>(batch.seq_len)};
        const auto logits = forward_impl<T>(p, batch, adapter, nullptr);
        const T* row = logits.at(0, batch.seq_len - 1);

        int next = 0;
        if (temperature == 0.0) {
            for (int i = 1; i < V; ++i)
                if (row[i] > row[next]) next = i;
        } else {
            std::vector<double> probs(static_cast<size_t>(V));
            double mx = row[0];
            for (int i = 1; i < V; ++i) mx = std::max(mx, double(row[i]));
            double z = 0.0;
            for (int i = 0; i < V; ++i) {
                probs[size_t(i)] = std::exp((double(row[i]) - mx) / temperature);
                z += probs[size_t(i)];
            }
            double r = rng.uniform() * z;
            double acc = 0.0;
            next = V - 1;
            for (int i = 0; i < V; ++i) {
                acc += probs[size_t(i)];
                if (r < acc) {
                    next = i;
                    break;
                }
            }
        }
        out.push_back(next);
        ctx.push_back(next);
        if (next == Vocabulary::kEosId) break;
    }
    return out;
}

} // namespace strkit
