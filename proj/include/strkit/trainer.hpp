#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <unordered_map>
#include <string>
#include <vector>

#include <json.hpp>

#include "strkit/checkpoint.hpp"
#include "strkit/corpus.hpp"
#include "strkit/loss.hpp"
#include "strkit/model.hpp"
#include "strkit/version.hpp"

namespace strkit {

// Adapter fine-tuning loop: per iteration one no-grad forward of the frozen
// base (only when the regularizer is active), one cached forward of the
// adapted model, the combined loss, and an update of the adapter parameters.
// method "lora" is the plain baseline and never touches token machinery;
// method "str" with lambda 0 runs the identical instruction stream.

struct TrainConfig {
    std::string method = "str"; // "str" | "lora"
    double lambda = 0.0;
    double lr = 1e-3;
    int epochs = 1;
    int batch_size = 16;
    uint64_t seed = 0;
    std::optional<double> grad_clip; // global-norm clip over adapter grads
    bool regularize_prompt_positions = false;
    int eval_every = 0; // steps between eval records; 0 disables
    // Reuses frozen-base logits for repeated batches (static datasets);
    // correctness is unaffected because the base never changes.
    bool cache_base_logits = false;
    double weight_decay = 0.0;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    std::string token_set_ref, dataset_ref; // recorded in manifests

    void validate() const {
        if (method != "str" && method != "lora")
            throw config_error("train: unknown method '" + method + "'");
        if (lr <= 0.0) throw config_error("train: lr must be > 0");
        if (lambda < 0.0) throw config_error("train: lambda must be >= 0");
        if (batch_size < 1) throw config_error("train: batch_size must be >= 1");
        if (epochs < 1) throw config_error("train: epochs must be >= 1");
    }

    bool uses_regularizer() const { return method == "str" && lambda > 0.0; }

    nlohmann::json to_json() const {
        nlohmann::json j{{"method", method},
                         {"lambda", lambda},
                         {"lr", lr},
                         {"epochs", epochs},
                         {"batch_size", batch_size},
                         {"seed", seed},
                         {"regularize_prompt_positions", regularize_prompt_positions},
                         {"eval_every", eval_every},
                         {"cache_base_logits", cache_base_logits},
                         {"weight_decay", weight_decay},
                         {"beta1", beta1},
                         {"beta2", beta2},
                         {"adam_eps", adam_eps},
                         {"token_set_ref", token_set_ref},
                         {"dataset_ref", dataset_ref}};
        if (grad_clip) j["grad_clip"] = *grad_clip;
        return j;
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        c.method = j.value("method", c.method);
        c.lambda = j.value("lambda", c.lambda);
        c.lr = j.value("lr", c.lr);
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.seed = j.value("seed", c.seed);
        if (j.contains("grad_clip")) c.grad_clip = j["grad_clip"].get<double>();
        c.regularize_prompt_positions =
            j.value("regularize_prompt_positions", c.regularize_prompt_positions);
        c.eval_every = j.value("eval_every", c.eval_every);
        c.cache_base_logits = j.value("cache_base_logits", c.cache_base_logits);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.adam_eps = j.value("adam_eps", c.adam_eps);
        c.token_set_ref = j.value("token_set_ref", c.token_set_ref);
        c.dataset_ref = j.value("dataset_ref", c.dataset_ref);
        return c;
    }
};

template <class T>
struct AdamSlot {
    Mat<T> m, v;
};

// Frozen-base logit cache keyed by batch content hash.
template <class T>
struct BaseLogitCache {
    std::unordered_map<uint64_t, LogitFrame<T>> frames;

    static uint64_t key(const SequenceBatch& batch) {
        ContentHash h;
        h.update(batch.input_ids.data(), batch.input_ids.size() * sizeof(int));
        h.update(batch.loss_mask.data(), batch.loss_mask.size());
        h.update(batch.lengths.data(), batch.lengths.size() * sizeof(int));
        return h.value();
    }
};

template <class T>
struct TrainState {
    TrainConfig config;
    AdapterState<T> adapter;
    std::vector<AdamSlot<T>> slots_a, slots_b; // aligned with adapter.targets
    int64_t step = 0;
    LossBreakdown last;
    double loss_sum = 0.0; // running stats over the whole run
    std::vector<double> iter_ms;
    std::vector<LossBreakdown> log;
};

template <class T>
TrainState<T> init_train_state(const Parameters<T>& base, const LoraConfig& lora,
                               const TrainConfig& cfg) {
    cfg.validate();
    TrainState<T> s;
    s.config = cfg;
    s.adapter = attach(base, lora);
    for (const auto& t : s.adapter.targets) {
        s.slots_a.push_back({Mat<T>(t.a.rows, t.a.cols), Mat<T>(t.a.rows, t.a.cols)});
        s.slots_b.push_back({Mat<T>(t.b.rows, t.b.cols), Mat<T>(t.b.rows, t.b.cols)});
    }
    return s;
}

namespace detail {

template <class T>
void adam_update(Mat<T>& p, const Mat<T>& g, Mat<T>& m, Mat<T>& v, int64_t t,
                 const TrainConfig& cfg) {
    const T b1 = T(cfg.beta1), b2 = T(cfg.beta2);
    const T lr = T(cfg.lr), eps = T(cfg.adam_eps);
    const T bc1 = T(1) - T(std::pow(cfg.beta1, double(t)));
    const T bc2 = T(1) - T(std::pow(cfg.beta2, double(t)));
    const T wd = T(cfg.weight_decay);
    for (size_t i = 0; i < p.count(); ++i) {
        if (wd != T(0)) p.a[i] -= lr * wd * p.a[i];
        m.a[i] = b1 * m.a[i] + (T(1) - b1) * g.a[i];
        v.a[i] = b2 * v.a[i] + (T(1) - b2) * g.a[i] * g.a[i];
        const T mhat = m.a[i] / bc1;
        const T vhat = v.a[i] / bc2;
        p.a[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

template <class T>
void clip_global_norm(AdapterGrads<T>& grads, double clip) {
    double sq = 0.0;
    for (const auto& m : grads.da)
        for (T x : m.a) sq += double(x) * double(x);
    for (const auto& m : grads.db)
        for (T x : m.a) sq += double(x) * double(x);
    const double norm = std::sqrt(sq);
    if (norm <= clip || norm == 0.0) return;
    const T scale = T(clip / norm);
    for (auto& m : grads.da)
        for (auto& x : m.a) x *= scale;
    for (auto& m : grads.db)
        for (auto& x : m.a) x *= scale;
}

inline std::string snapshot_json(const LossBreakdown& l, int64_t step) {
    nlohmann::json j{{"step", step}, {"ce", l.ce},       {"reg", l.reg},
                     {"lambda", l.lambda}, {"total", l.total}};
    return j.dump();
}

} // namespace detail

// One Algorithm-1 iteration. Exactly one cached forward of the adapted
// model; exactly one no-grad base forward when the regularizer is active;
// the frozen base is never written.
template <class T>
LossBreakdown train_step(const Parameters<T>& base, TrainState<T>& state,
                         const SequenceBatch& batch,
                         const std::type_identity_t<SafetyTokenSet>* tokens,
                         std::type_identity_t<BaseLogitCache<T>>* cache_opt = nullptr) {
    const TrainConfig& cfg = state.config;
    const bool use_reg = cfg.uses_regularizer();
    if (use_reg && !tokens)
        throw config_error("train_step: method 'str' with lambda > 0 needs a safety token set");

    LogitFrame<T> base_logits;
    if (use_reg) {
        if (cache_opt) {
            const uint64_t key = BaseLogitCache<T>::key(batch);
            auto it = cache_opt->frames.find(key);
            if (it == cache_opt->frames.end())
                it = cache_opt->frames.emplace(key, forward(base, batch)).first;
            base_logits = it->second;
        } else {
            base_logits = forward(base, batch); // no-grad reference pass
        }
    }

    ForwardCache<T> cache;
    const auto peft_logits = forward_train(base, batch, &state.adapter, cache);

    const double ce = cross_entropy(peft_logits, batch);
    double reg = 0.0;
    LogitFrame<T> dlogits(batch.batch, batch.seq_len, peft_logits.vocab);
    cross_entropy_backward(peft_logits, batch, dlogits);
    if (use_reg) {
        reg = safety_regularizer(base_logits, peft_logits, *tokens, batch,
                                 cfg.regularize_prompt_positions);
        safety_regularizer_backward(base_logits, peft_logits, *tokens, batch, cfg.lambda, dlogits,
                                    cfg.regularize_prompt_positions);
    }
    const LossBreakdown breakdown = combined(ce, reg, cfg.method == "lora" ? 0.0 : cfg.lambda);
    if (!std::isfinite(breakdown.total))
        throw numeric_error("non-finite loss at step " + std::to_string(state.step) +
                            "; snapshot: " + detail::snapshot_json(breakdown, state.step));

    AdapterGrads<T> grads(state.adapter);
    backward(base, batch, &state.adapter, cache, dlogits, nullptr, &grads);
    if (cfg.grad_clip) detail::clip_global_norm(grads, *cfg.grad_clip);

    state.step += 1;
    state.adapter.step = state.step;
    for (size_t i = 0; i < state.adapter.targets.size(); ++i) {
        detail::adam_update(state.adapter.targets[i].a, grads.da[i], state.slots_a[i].m,
                            state.slots_a[i].v, state.step, cfg);
        detail::adam_update(state.adapter.targets[i].b, grads.db[i], state.slots_b[i].m,
                            state.slots_b[i].v, state.step, cfg);
    }
    state.last = breakdown;
    state.loss_sum += breakdown.total;
    return breakdown;
}

namespace detail {

inline std::vector<size_t> epoch_order(size_t n, uint64_t seed, int64_t epoch) {
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed ^ (0x9E3779B97F4A7C15ull * uint64_t(epoch + 1)));
    rng.shuffle(order);
    return order;
}

} // namespace detail

void save_train_checkpoint(const std::string& dir, const TrainState<float>& state,
                           uint64_t base_checksum);
TrainState<float> load_train_checkpoint(const std::string& dir, const Parameters<float>& base);

// Step-log sink: JSONL rows {step, ce, reg, lambda, total} plus eval rows.
class StepLog {
public:
    StepLog() = default;
    explicit StepLog(const std::string& path) {
        if (!path.empty()) {
            out_.open(path, std::ios::app);
            if (!out_) throw data_error("cannot open step log: " + path);
        }
    }
    void train_row(int64_t step, const LossBreakdown& l) {
        if (!out_.is_open()) return;
        out_ << nlohmann::json{{"step", step}, {"ce", l.ce},       {"reg", l.reg},
                               {"lambda", l.lambda}, {"total", l.total}}
                    .dump()
             << "\n";
    }
    void eval_row(int64_t step, double eval_loss) {
        if (!out_.is_open()) return;
        out_ << nlohmann::json{{"step", step}, {"eval_loss", eval_loss}}.dump() << "\n";
    }

private:
    std::ofstream out_;
};

// Runs (or resumes) the full loop: epochs * ceil(N/B) steps with a seeded
// shuffle per epoch. When out_dir is given, the step log, final adapter
// checkpoint and a manifest land there (float instantiation only).
template <class T>
TrainState<T> train(const Parameters<T>& base, TrainState<T> state, const Corpus& data,
                    const Vocabulary& vocab, const std::type_identity_t<SafetyTokenSet>* tokens,
                    const std::string& out_dir = "",
                    const std::type_identity_t<Corpus>* eval_data = nullptr) {
    const TrainConfig& cfg = state.config;
    cfg.validate();
    if (cfg.uses_regularizer() && !tokens)
        throw config_error("train: method 'str' with lambda > 0 needs a safety token set");
    if (data.records.empty()) throw data_error("train: empty dataset");
    if (tokens) tokens->validate(vocab);

    namespace fs = std::filesystem;
    StepLog log;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        log = StepLog((fs::path(out_dir) / "step_log.jsonl").string());
    }

    const size_t n = data.records.size();
    const size_t spe = (n + size_t(cfg.batch_size) - 1) / size_t(cfg.batch_size);
    const int64_t total_steps = int64_t(spe) * cfg.epochs;
    const uint64_t base_checksum = base.checksum();

    std::vector<size_t> order;
    int64_t order_epoch = -1;
    BaseLogitCache<T> base_cache;
    using clock = std::chrono::steady_clock;
    for (int64_t gstep = state.step; gstep < total_steps; ++gstep) {
        const int64_t epoch = gstep / int64_t(spe);
        const size_t slot = size_t(gstep % int64_t(spe));
        if (epoch != order_epoch) {
            order = detail::epoch_order(n, cfg.seed, epoch);
            order_epoch = epoch;
        }
        std::vector<const InstructionRecord*> ptrs;
        for (size_t i = slot * size_t(cfg.batch_size);
             i < std::min(n, (slot + 1) * size_t(cfg.batch_size)); ++i)
            ptrs.push_back(&data.records[order[i]]);
        const auto batch = encode_batch(ptrs, vocab, base.config.max_seq_len);

        const auto t0 = clock::now();
        const auto breakdown = train_step(base, state, batch, tokens,
                                          cfg.cache_base_logits ? &base_cache : nullptr);
        const auto t1 = clock::now();
        state.iter_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        state.log.push_back(breakdown);
        log.train_row(state.step, breakdown);

        if (eval_data && cfg.eval_every > 0 && state.step % cfg.eval_every == 0) {
            double eval_loss = 0.0;
            size_t batches = 0;
            for (size_t i = 0; i < eval_data->records.size(); i += size_t(cfg.batch_size)) {
                const auto eb = encode_batch(*eval_data, i, size_t(cfg.batch_size), vocab,
                                             base.config.max_seq_len);
                eval_loss += cross_entropy(forward(base, eb, &state.adapter), eb);
                ++batches;
            }
            log.eval_row(state.step, eval_loss / double(std::max<size_t>(1, batches)));
        }
    }

    if (base.checksum() != base_checksum)
        throw numeric_error("train: frozen base parameters changed during training");

    if (!out_dir.empty()) {
        if constexpr (std::is_same_v<T, float>) {
            save_train_checkpoint((fs::path(out_dir) / "adapter").string(), state, base_checksum);
        }
        nlohmann::json manifest{{"kind", "train_run"},
                                {"code_version", kVersion},
                                {"train_config", cfg.to_json()},
                                {"lora_config",
                                 {{"rank", state.adapter.config.rank},
                                  {"alpha", state.adapter.config.alpha},
                                  {"targets", state.adapter.config.targets},
                                  {"seed", state.adapter.config.seed}}},
                                {"dataset_hash", data.content_hash_hex()},
                                {"base_checksum", hash_hex(base_checksum)},
                                {"steps", state.step},
                                {"vocab_checksum", hash_hex(vocab.checksum())}};
        if (tokens) manifest["token_set"] = {{"provenance", tokens->provenance},
                                             {"k", tokens->token_ids.size()}};
        std::ofstream mf(fs::path(out_dir) / "train_manifest.json");
        mf << manifest.dump(2) << "\n";
    }
    return state;
}

// Convenience entry point: fresh state, then the loop above.
template <class T>
TrainState<T> train(const Parameters<T>& base, const LoraConfig& lora, const TrainConfig& cfg,
                    const Corpus& data, const Vocabulary& vocab,
                    const std::type_identity_t<SafetyTokenSet>* tokens,
                    const std::string& out_dir = "",
                    const std::type_identity_t<Corpus>* eval_data = nullptr) {
    return train(base, init_train_state(base, lora, cfg), data, vocab, tokens, out_dir, eval_data);
}

// Sequential multi-task mode: one adapter trained through the tasks in
// order with no replay; returns the state snapshot after each task.
template <class T>
std::vector<TrainState<T>> train_sequential(const Parameters<T>& base, const LoraConfig& lora,
                                            const TrainConfig& cfg,
                                            const std::vector<Corpus>& tasks,
                                            const Vocabulary& vocab,
                                            const std::type_identity_t<SafetyTokenSet>* tokens) {
    if (tasks.empty()) throw config_error("train_sequential: no tasks given");
    std::vector<TrainState<T>> snapshots;
    TrainState<T> state = init_train_state(base, lora, cfg);
    for (size_t i = 0; i < tasks.size(); ++i) {
        state.step = 0; // each task runs its own epoch budget
        state.config.seed = cfg.seed + i;
        state = train(base, std::move(state), tasks[i], vocab, tokens);
        snapshots.push_back(state);
    }
    return snapshots;
}

struct BenchResult {
    double str_mean_ms = 0.0, str_stdev_ms = 0.0;
    double plain_mean_ms = 0.0, plain_stdev_ms = 0.0;
    double ratio = 0.0;
    int iters = 0;
};

// Paired per-iteration wall time of the regularized step against the plain
// adapter step on the same batch.
template <class T>
BenchResult bench_iteration(const Parameters<T>& base, const LoraConfig& lora, TrainConfig cfg,
                            const Corpus& data, const Vocabulary& vocab,
                            const SafetyTokenSet& tokens, int warmup, int iters) {
    if (iters < 10) throw usage_error("bench: need at least 10 measured iterations");
    if (cfg.lambda <= 0.0) cfg.lambda = 1.0;
    cfg.method = "str";
    auto str_state = init_train_state(base, lora, cfg);
    TrainConfig plain_cfg = cfg;
    plain_cfg.method = "lora";
    plain_cfg.lambda = 0.0;
    auto plain_state = init_train_state(base, lora, plain_cfg);

    const auto batch =
        encode_batch(data, 0, size_t(cfg.batch_size), vocab, base.config.max_seq_len);
    using clock = std::chrono::steady_clock;

    auto measure = [&](auto& state, const SafetyTokenSet* tok) {
        std::vector<double> samples;
        for (int i = 0; i < warmup + iters; ++i) {
            const auto t0 = clock::now();
            train_step(base, state, batch, tok);
            const auto t1 = clock::now();
            if (i >= warmup)
                samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
        double mean = 0.0;
        for (double s : samples) mean += s;
        mean /= double(samples.size());
        double var = 0.0;
        for (double s : samples) var += (s - mean) * (s - mean);
        return std::pair<double, double>(mean, std::sqrt(var / double(samples.size())));
    };

    BenchResult r;
    r.iters = iters;
    std::tie(r.str_mean_ms, r.str_stdev_ms) = measure(str_state, &tokens);
    std::tie(r.plain_mean_ms, r.plain_stdev_ms) = measure(plain_state, nullptr);
    r.ratio = r.str_mean_ms / r.plain_mean_ms;
    return r;
}

// ---------------------------------------------------------------------------
// Checkpointing (float instantiation)
// ---------------------------------------------------------------------------

inline void save_train_checkpoint(const std::string& dir, const TrainState<float>& state,
                                  uint64_t base_checksum) {
    std::vector<ckpt::ArrayRef> arrays;
    for (size_t i = 0; i < state.adapter.targets.size(); ++i) {
        const auto& t = state.adapter.targets[i];
        const std::string p = "t" + std::to_string(i) + ".";
        arrays.push_back({p + "a", {t.a.rows, t.a.cols}, t.a.a.data(), t.a.count()});
        arrays.push_back({p + "b", {t.b.rows, t.b.cols}, t.b.a.data(), t.b.count()});
        arrays.push_back({p + "ma", {t.a.rows, t.a.cols}, state.slots_a[i].m.a.data(),
                          state.slots_a[i].m.count()});
        arrays.push_back({p + "va", {t.a.rows, t.a.cols}, state.slots_a[i].v.a.data(),
                          state.slots_a[i].v.count()});
        arrays.push_back({p + "mb", {t.b.rows, t.b.cols}, state.slots_b[i].m.a.data(),
                          state.slots_b[i].m.count()});
        arrays.push_back({p + "vb", {t.b.rows, t.b.cols}, state.slots_b[i].v.a.data(),
                          state.slots_b[i].v.count()});
    }
    nlohmann::json extra{{"kind", "trainstate"},
                         {"train_config", state.config.to_json()},
                         {"lora_config",
                          {{"rank", state.adapter.config.rank},
                           {"alpha", state.adapter.config.alpha},
                           {"targets", state.adapter.config.targets},
                           {"seed", state.adapter.config.seed}}},
                         {"seed", state.config.seed},
                         {"step", state.step},
                         {"base_checksum", hash_hex(base_checksum)}};
    ckpt::write_dir(dir, std::move(extra), arrays);
}

inline TrainState<float> load_train_checkpoint(const std::string& dir,
                                               const Parameters<float>& base) {
    auto loaded = ckpt::read_dir(dir);
    if (loaded.manifest.value("kind", "") != "trainstate")
        throw data_error("checkpoint at " + dir + " is not a trainer checkpoint");
    const std::string want = loaded.manifest.value("base_checksum", "");
    const std::string got = hash_hex(base.checksum());
    if (want != got)
        throw data_error("refusing to load adapter checkpoint: bound to base " + want +
                         " but given base " + got);

    LoraConfig lora;
    const auto& lj = loaded.manifest.at("lora_config");
    lora.rank = lj.at("rank").get<int>();
    lora.alpha = lj.at("alpha").get<double>();
    lora.targets = lj.at("targets").get<std::vector<std::string>>();
    lora.seed = lj.at("seed").get<uint64_t>();
    const TrainConfig cfg = TrainConfig::from_json(loaded.manifest.at("train_config"));

    TrainState<float> state = init_train_state(base, lora, cfg);
    state.step = loaded.manifest.at("step").get<int64_t>();
    state.adapter.step = state.step;
    for (size_t i = 0; i < state.adapter.targets.size(); ++i) {
        const std::string p = "t" + std::to_string(i) + ".";
        auto fetch = [&](const std::string& name, Mat<float>& into) {
            const auto it = loaded.arrays.find(name);
            if (it == loaded.arrays.end())
                throw data_error("trainer checkpoint " + dir + " lacks array '" + name + "'");
            if (it->second.shape != std::vector<size_t>{into.rows, into.cols})
                throw data_error("trainer checkpoint " + dir + " array '" + name +
                                 "' shape mismatch");
            into.a = it->second.data;
        };
        fetch(p + "a", state.adapter.targets[i].a);
        fetch(p + "b", state.adapter.targets[i].b);
        fetch(p + "ma", state.slots_a[i].m);
        fetch(p + "va", state.slots_a[i].v);
        fetch(p + "mb", state.slots_b[i].m);
        fetch(p + "vb", state.slots_b[i].v);
    }
    return state;
}

// ---------------------------------------------------------------------------
// Full-model pretraining for the desk base model
// ---------------------------------------------------------------------------

struct PretrainConfig {
    double lr = 3e-3;
    int epochs = 40;
    int batch_size = 16;
    uint64_t seed = 0;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8, weight_decay = 0.0;
};

template <class T>
void pretrain_full(Parameters<T>& params, const Corpus& data, const Vocabulary& vocab,
                   const PretrainConfig& cfg, std::vector<LossBreakdown>* log = nullptr) {
    if (params.frozen) throw config_error("pretrain: parameters are frozen");
    if (data.records.empty()) throw data_error("pretrain: empty dataset");
    auto m = zeros_like(params);
    auto v = zeros_like(params);
    auto grads = zeros_like(params);
    TrainConfig adam_cfg;
    adam_cfg.lr = cfg.lr;
    adam_cfg.beta1 = cfg.beta1;
    adam_cfg.beta2 = cfg.beta2;
    adam_cfg.adam_eps = cfg.adam_eps;
    adam_cfg.weight_decay = cfg.weight_decay;

    // for_each_array traverses in one fixed order for all four trees
    std::vector<Mat<T>*> p_ptrs, g_ptrs, m_ptrs, v_ptrs;
    params.for_each_array([&](const std::string&, Mat<T>& x) { p_ptrs.push_back(&x); });
    grads.for_each_array([&](const std::string&, Mat<T>& x) { g_ptrs.push_back(&x); });
    m.for_each_array([&](const std::string&, Mat<T>& x) { m_ptrs.push_back(&x); });
    v.for_each_array([&](const std::string&, Mat<T>& x) { v_ptrs.push_back(&x); });

    const size_t n = data.records.size();
    const size_t spe = (n + size_t(cfg.batch_size) - 1) / size_t(cfg.batch_size);
    int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = detail::epoch_order(n, cfg.seed, epoch);
        for (size_t slot = 0; slot < spe; ++slot) {
            std::vector<const InstructionRecord*> ptrs;
            for (size_t i = slot * size_t(cfg.batch_size);
                 i < std::min(n, (slot + 1) * size_t(cfg.batch_size)); ++i)
                ptrs.push_back(&data.records[order[i]]);
            const auto batch = encode_batch(ptrs, vocab, params.config.max_seq_len);

            ForwardCache<T> cache;
            const auto logits = forward_train<T>(params, batch, nullptr, cache);
            const double ce = cross_entropy(logits, batch);
            if (!std::isfinite(ce))
                throw numeric_error("pretrain: non-finite loss at step " + std::to_string(step));
            LogitFrame<T> dlogits(batch.batch, batch.seq_len, logits.vocab);
            cross_entropy_backward(logits, batch, dlogits);
            for (auto* g : g_ptrs) g->zero();
            backward<T>(params, batch, nullptr, cache, dlogits, &grads, nullptr);

            ++step;
            for (size_t i = 0; i < p_ptrs.size(); ++i)
                detail::adam_update(*p_ptrs[i], *g_ptrs[i], *m_ptrs[i], *v_ptrs[i], step, adam_cfg);
            if (log) log->push_back(combined(ce, 0.0, 0.0));
        }
    }
}

} // namespace strkit
