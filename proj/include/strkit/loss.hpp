#pragma once

#include <cmath>
#include <vector>

#include "strkit/kernels.hpp"
#include "strkit/nn_types.hpp"
#include "strkit/tokens.hpp"

namespace strkit {

// Composite training objective: autoregressive cross-entropy plus the
// squared deviation of safety-token logits from the frozen base model,
// weighted by lambda. Per-sequence terms are normalized by that sequence's
// own position count and the batch value is the mean over sequences.
struct LossBreakdown {
    double ce = 0.0;
    double reg = 0.0;
    double lambda = 0.0;
    double total = 0.0;
};

inline LossBreakdown combined(double ce, double reg, double lambda) {
    if (lambda < 0.0) throw config_error("lambda must be >= 0");
    LossBreakdown b;
    b.ce = ce;
    b.reg = reg;
    b.lambda = lambda;
    b.total = ce + lambda * reg;
    return b;
}

namespace detail {

// Positions the regularizer covers for row b: the loss-mask positions by
// default, or every valid position when regularize_prompt_positions is set.
inline bool reg_position(const SequenceBatch& batch, size_t b, size_t t,
                         bool regularize_prompt_positions) {
    if (regularize_prompt_positions) return t < size_t(batch.lengths[b]);
    return batch.loss_mask[batch.idx(b, t)] != 0;
}

} // namespace detail

// Mean over sequences of the per-sequence mean negative log-likelihood at
// masked positions. Throws on a sequence with no unmasked position.
template <class T>
double cross_entropy(const LogitFrame<T>& logits, const SequenceBatch& batch) {
    if (logits.batch != batch.batch || logits.seq_len != batch.seq_len)
        throw data_error("cross_entropy: logit frame does not match batch");
    const int V = logits.vocab;
    double total = 0.0;
    std::vector<T> row_buf;
    for (size_t b = 0; b < batch.batch; ++b) {
        double seq_loss = 0.0;
        size_t count = 0;
        for (size_t t = 0; t < batch.seq_len; ++t) {
            if (!batch.loss_mask[batch.idx(b, t)]) continue;
            const T* row = logits.at(b, t);
            const T mx = kern::reduce_max(row, size_t(V));
            double z = 0.0;
            for (int i = 0; i < V; ++i) z += std::exp(double(row[i] - mx));
            const int target = batch.target_ids[batch.idx(b, t)];
            seq_loss += std::log(z) - double(row[target] - mx);
            ++count;
        }
        if (count == 0)
            throw data_error("cross_entropy: sequence " + std::to_string(b) +
                             " has no unmasked position");
        total += seq_loss / double(count);
    }
    return total / double(batch.batch);
}

// Accumulates d(ce)/d(logits) into dlogits (same normalization as above).
template <class T>
void cross_entropy_backward(const LogitFrame<T>& logits, const SequenceBatch& batch,
                            LogitFrame<T>& dlogits) {
    const int V = logits.vocab;
    for (size_t b = 0; b < batch.batch; ++b) {
        size_t count = 0;
        for (size_t t = 0; t < batch.seq_len; ++t)
            if (batch.loss_mask[batch.idx(b, t)]) ++count;
        if (count == 0)
            throw data_error("cross_entropy_backward: sequence has no unmasked position");
        const T w = T(1) / (T(count) * T(batch.batch));
        for (size_t t = 0; t < batch.seq_len; ++t) {
            if (!batch.loss_mask[batch.idx(b, t)]) continue;
            const T* row = logits.at(b, t);
            T* drow = dlogits.at(b, t);
            const T mx = kern::reduce_max(row, size_t(V));
            double z = 0.0;
            for (int i = 0; i < V; ++i) z += std::exp(double(row[i] - mx));
            const int target = batch.target_ids[batch.idx(b, t)];
            for (int i = 0; i < V; ++i) {
                const T p = T(std::exp(double(row[i] - mx)) / z);
                drow[i] += w * (p - (i == target ? T(1) : T(0)));
            }
        }
    }
}

// Squared deviation between base and adapted logits on the safety tokens,
// summed over the token set (no 1/K), averaged over positions and then over
// sequences. Gradients flow through the adapted side only.
template <class T>
double safety_regularizer(const LogitFrame<T>& base_logits, const LogitFrame<T>& peft_logits,
                          const SafetyTokenSet& token_set, const SequenceBatch& batch,
                          bool regularize_prompt_positions = false) {
    if (!base_logits.same_shape(peft_logits))
        throw data_error("safety_regularizer: logit frames differ in shape");
    if (base_logits.batch != batch.batch || base_logits.seq_len != batch.seq_len)
        throw data_error("safety_regularizer: logit frame does not match batch");
    if (token_set.token_ids.empty()) throw data_error("safety_regularizer: empty token set");
    for (int id : token_set.token_ids)
        if (id < 0 || id >= base_logits.vocab)
            throw data_error("safety_regularizer: token id outside vocabulary");

    double total = 0.0;
    for (size_t b = 0; b < batch.batch; ++b) {
        double seq_sum = 0.0;
        size_t count = 0;
        for (size_t t = 0; t < batch.seq_len; ++t) {
            if (!detail::reg_position(batch, b, t, regularize_prompt_positions)) continue;
            const T* brow = base_logits.at(b, t);
            const T* prow = peft_logits.at(b, t);
            for (int id : token_set.token_ids) {
                const double dev = double(brow[id]) - double(prow[id]);
                seq_sum += dev * dev;
            }
            ++count;
        }
        if (count == 0)
            throw data_error("safety_regularizer: sequence " + std::to_string(b) +
                             " has no regularized position");
        total += seq_sum / double(count);
    }
    return total / double(batch.batch);
}

// Accumulates lambda * d(reg)/d(peft_logits) into dlogits.
template <class T>
void safety_regularizer_backward(const LogitFrame<T>& base_logits,
                                 const LogitFrame<T>& peft_logits,
                                 const SafetyTokenSet& token_set, const SequenceBatch& batch,
                                 double lambda, LogitFrame<T>& dlogits,
                                 bool regularize_prompt_positions = false) {
    for (size_t b = 0; b < batch.batch; ++b) {
        size_t count = 0;
        for (size_t t = 0; t < batch.seq_len; ++t)
            if (detail::reg_position(batch, b, t, regularize_prompt_positions)) ++count;
        if (count == 0) throw data_error("safety_regularizer_backward: no regularized position");
        const T w = T(lambda) * T(2) / (T(count) * T(batch.batch));
        for (size_t t = 0; t < batch.seq_len; ++t) {
            if (!detail::reg_position(batch, b, t, regularize_prompt_positions)) continue;
            const T* brow = base_logits.at(b, t);
            const T* prow = peft_logits.at(b, t);
            T* drow = dlogits.at(b, t);
            for (int id : token_set.token_ids) drow[id] += w * (prow[id] - brow[id]);
        }
    }
}

} // namespace strkit
