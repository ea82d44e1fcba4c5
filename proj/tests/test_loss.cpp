#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "strkit/loss.hpp"
#include "strkit/rng.hpp"

using namespace strkit;

namespace {

// Straight-line scalar oracles, independent of the production loss path.
double ce_oracle(const LogitFrame<float>& logits, const SequenceBatch& batch) {
    double total = 0.0;
    for (size_t b = 0; b < batch.batch; ++b) {
        double seq = 0.0;
        int count = 0;
        for (size_t t = 0; t < batch.seq_len; ++t) {
            if (!batch.loss_mask[batch.idx(b, t)]) continue;
            const float* row = logits.at(b, t);
            double z = 0.0;
            for (int i = 0; i < logits.vocab; ++i) z += std::exp(double(row[i]));
            seq += std::log(z) - double(row[batch.target_ids[batch.idx(b, t)]]);
            ++count;
        }
        total += seq / count;
    }
    return total / double(batch.batch);
}

double reg_oracle(const LogitFrame<float>& base, const LogitFrame<float>& peft,
                  const std::vector<int>& ids, const SequenceBatch& batch) {
    double total = 0.0;
    for (size_t b = 0; b < batch.batch; ++b) {
        double seq = 0.0;
        int count = 0;
        for (size_t t = 0; t < batch.seq_len; ++t) {
            if (!batch.loss_mask[batch.idx(b, t)]) continue;
            for (int id : ids) {
                const double d = double(base.at(b, t)[id]) - double(peft.at(b, t)[id]);
                seq += d * d;
            }
            ++count;
        }
        total += seq / count;
    }
    return total / double(batch.batch);
}

SequenceBatch make_batch(Rng& rng, size_t b, size_t t, int vocab, double mask_prob = 0.7) {
    SequenceBatch batch;
    batch.batch = b;
    batch.seq_len = t;
    batch.input_ids.assign(b * t, 3);
    batch.target_ids.resize(b * t);
    batch.loss_mask.assign(b * t, 0);
    batch.lengths.assign(b, int(t));
    for (size_t i = 0; i < b; ++i) {
        bool any = false;
        for (size_t j = 0; j < t; ++j) {
            batch.target_ids[i * t + j] = int(rng.below(uint64_t(vocab)));
            if (rng.uniform() < mask_prob) {
                batch.loss_mask[i * t + j] = 1;
                any = true;
            }
        }
        if (!any) batch.loss_mask[i * t] = 1;
    }
    return batch;
}

LogitFrame<float> random_frame(Rng& rng, size_t b, size_t t, int vocab, double scale = 2.0) {
    LogitFrame<float> f(b, t, vocab);
    for (auto& x : f.scores) x = float(rng.gaussian(0.0, scale));
    return f;
}

} // namespace

TEST_CASE("uniform logits give ln(V) per position") {
    SequenceBatch batch;
    batch.batch = 1;
    batch.seq_len = 3;
    batch.input_ids.assign(3, 0);
    batch.target_ids = {0, 1, 2};
    batch.loss_mask.assign(3, 1);
    batch.lengths = {3};
    LogitFrame<float> logits(1, 3, 4);
    const double got = cross_entropy(logits, batch);
    CHECK(std::fabs(got - std::log(4.0)) < 1e-6);
}

TEST_CASE("a dominant target logit drives the loss to zero") {
    SequenceBatch batch;
    batch.batch = 1;
    batch.seq_len = 1;
    batch.input_ids = {0};
    batch.target_ids = {2};
    batch.loss_mask = {1};
    batch.lengths = {1};
    LogitFrame<float> logits(1, 1, 4);
    logits.at(0, 0)[2] = 1e6f;
    CHECK(cross_entropy(logits, batch) < 1e-6);
}

TEST_CASE("cross entropy matches the scalar oracle on random batches") {
    Rng rng(101);
    for (int iter = 0; iter < 50; ++iter) {
        const size_t b = 1 + rng.below(3), t = 1 + rng.below(6);
        const int vocab = int(4 + rng.below(28));
        const auto batch = make_batch(rng, b, t, vocab);
        const auto logits = random_frame(rng, b, t, vocab);
        const double got = cross_entropy(logits, batch);
        const double want = ce_oracle(logits, batch);
        CHECK(std::fabs(got - want) <= 1e-6 * std::max(1.0, std::fabs(want)));
    }
}

TEST_CASE("cross entropy rejects an all-masked sequence") {
    Rng rng(5);
    auto batch = make_batch(rng, 2, 4, 8);
    for (size_t t = 0; t < 4; ++t) batch.loss_mask[1 * 4 + t] = 0;
    const auto logits = random_frame(rng, 2, 4, 8);
    CHECK_THROWS_AS(cross_entropy(logits, batch), data_error);
}

TEST_CASE("regularizer is zero iff frames agree on the safety tokens") {
    Rng rng(7);
    const auto batch = make_batch(rng, 2, 3, 16, 1.0);
    auto base = random_frame(rng, 2, 3, 16);
    auto peft = base;
    SafetyTokenSet set;
    set.token_ids = {2, 5, 9};
    CHECK(safety_regularizer(base, peft, set, batch) == 0.0);

    // moving a non-safety logit keeps it at zero
    peft.at(0, 0)[3] += 1.0f;
    CHECK(safety_regularizer(base, peft, set, batch) == 0.0);
    // moving a safety logit makes it positive
    peft.at(0, 0)[5] += 0.5f;
    CHECK(safety_regularizer(base, peft, set, batch) > 0.0);
}

TEST_CASE("single position single token deviation squares") {
    SequenceBatch batch;
    batch.batch = 1;
    batch.seq_len = 1;
    batch.input_ids = {0};
    batch.target_ids = {0};
    batch.loss_mask = {1};
    batch.lengths = {1};
    LogitFrame<float> base(1, 1, 4), peft(1, 1, 4);
    base.at(0, 0)[1] = 0.75f;
    SafetyTokenSet set;
    set.token_ids = {1};
    CHECK(safety_regularizer(base, peft, set, batch) == doctest::Approx(0.5625).epsilon(1e-12));
}

TEST_CASE("two-position two-token hand example evaluates to 2.125") {
    SequenceBatch batch;
    batch.batch = 1;
    batch.seq_len = 2;
    batch.input_ids = {0, 0};
    batch.target_ids = {0, 0};
    batch.loss_mask = {1, 1};
    batch.lengths = {2};
    LogitFrame<float> base(1, 2, 8), peft(1, 2, 8);
    SafetyTokenSet set;
    set.token_ids = {3, 6};
    // deviations per (t, k): t=0 -> (0.5, 0); t=1 -> (0, 2)
    base.at(0, 0)[3] = 0.5f;
    base.at(0, 1)[6] = 2.0f;
    const double got = safety_regularizer(base, peft, set, batch);
    CHECK(got == 2.125);
}

TEST_CASE("regularizer matches the scalar oracle on random inputs") {
    Rng rng(211);
    for (int iter = 0; iter < 50; ++iter) {
        const size_t b = 1 + rng.below(3), t = 1 + rng.below(5);
        const int vocab = int(6 + rng.below(26));
        const auto batch = make_batch(rng, b, t, vocab);
        const auto base = random_frame(rng, b, t, vocab);
        const auto peft = random_frame(rng, b, t, vocab);
        std::vector<int> ids;
        const size_t k = 1 + rng.below(4);
        while (ids.size() < k) {
            const int cand = int(rng.below(uint64_t(vocab)));
            bool dup = false;
            for (int c : ids) dup |= (c == cand);
            if (!dup) ids.push_back(cand);
        }
        SafetyTokenSet set;
        set.token_ids = ids;
        const double got = safety_regularizer(base, peft, set, batch);
        const double want = reg_oracle(base, peft, ids, batch);
        CHECK(std::fabs(got - want) <= 1e-6 * std::max(1.0, std::fabs(want)));
        CHECK(got >= 0.0);
    }
}

TEST_CASE("regularizer validates shapes and the token set") {
    Rng rng(3);
    const auto batch = make_batch(rng, 1, 2, 8, 1.0);
    const auto base = random_frame(rng, 1, 2, 8);
    const auto other = random_frame(rng, 1, 3, 8);
    SafetyTokenSet empty;
    CHECK_THROWS_AS(safety_regularizer(base, other, empty, batch), data_error);
    SafetyTokenSet set;
    set.token_ids = {1};
    CHECK_THROWS_AS(safety_regularizer(base, other, set, batch), data_error);
    SafetyTokenSet bad;
    bad.token_ids = {99};
    CHECK_THROWS_AS(safety_regularizer(base, base, bad, batch), data_error);
}

TEST_CASE("combined loss is the lambda-weighted sum") {
    const auto zero = combined(0.73, 0.4, 0.0);
    CHECK(zero.total == 0.73);
    const auto b = combined(0.5, 0.25, 2.0);
    CHECK(b.total == 1.0);
    CHECK(b.ce == 0.5);
    CHECK(b.reg == 0.25);
    CHECK(b.lambda == 2.0);
    CHECK_THROWS_AS(combined(0.5, 0.25, -1.0), config_error);
    // operating points used throughout the sweeps
    for (double lambda : {1.0, 2.0}) {
        const auto x = combined(0.79, 0.11, lambda);
        CHECK(x.total == doctest::Approx(0.79 + lambda * 0.11).epsilon(1e-15));
    }
}

TEST_CASE("backward passes match finite differences on the logits") {
    Rng rng(401);
    const auto batch = make_batch(rng, 2, 3, 10);
    auto logits = random_frame(rng, 2, 3, 10);
    LogitFrame<float> dlogits(2, 3, 10);
    cross_entropy_backward(logits, batch, dlogits);
    const double h = 1e-2;
    for (int probe = 0; probe < 30; ++probe) {
        const size_t i = rng.below(logits.scores.size());
        auto up = logits, dn = logits;
        up.scores[i] += float(h);
        dn.scores[i] -= float(h);
        const double numeric = (ce_oracle(up, batch) - ce_oracle(dn, batch)) / (2 * h);
        CHECK(std::fabs(numeric - double(dlogits.scores[i])) <= 2e-3);
    }

    const auto base = random_frame(rng, 2, 3, 10);
    SafetyTokenSet set;
    set.token_ids = {1, 4, 7};
    LogitFrame<float> dreg(2, 3, 10);
    const double lambda = 1.5;
    safety_regularizer_backward(base, logits, set, batch, lambda, dreg);
    for (int probe = 0; probe < 30; ++probe) {
        const size_t i = rng.below(logits.scores.size());
        auto up = logits, dn = logits;
        up.scores[i] += float(h);
        dn.scores[i] -= float(h);
        const double numeric =
            lambda *
            (reg_oracle(base, up, set.token_ids, batch) - reg_oracle(base, dn, set.token_ids, batch)) /
            (2 * h);
        CHECK(std::fabs(numeric - double(dreg.scores[i])) <= 2e-3);
    }
}

TEST_CASE("prompt-position switch widens the regularized set") {
    SequenceBatch batch;
    batch.batch = 1;
    batch.seq_len = 2;
    batch.input_ids = {0, 0};
    batch.target_ids = {0, 0};
    batch.loss_mask = {0, 1}; // prompt at t=0
    batch.lengths = {2};
    LogitFrame<float> base(1, 2, 4), peft(1, 2, 4);
    base.at(0, 0)[1] = 1.0f; // deviation only at the prompt position
    SafetyTokenSet set;
    set.token_ids = {1};
    CHECK(safety_regularizer(base, peft, set, batch, false) == 0.0);
    CHECK(safety_regularizer(base, peft, set, batch, true) == doctest::Approx(0.5).epsilon(1e-12));
}
