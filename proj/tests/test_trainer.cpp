#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "strkit/trainer.hpp"

using namespace strkit;
namespace fs = std::filesystem;

namespace {

struct Fixture {
    WorldConfig world = WorldConfig::desk_default();
    Vocabulary vocab = world.vocabulary();
    ModelConfig mcfg;
    Parameters<float> base;
    Corpus data;

    Fixture() {
        mcfg.vocab_size = vocab.size();
        mcfg.d_model = 16;
        mcfg.n_layers = 2;
        mcfg.n_heads = 2;
        mcfg.d_ff = 24;
        mcfg.max_seq_len = 48;
        mcfg.seed = 3;
        base = init_params<float>(mcfg);
        base.frozen = true;
        data = make_eroding_corpus(world, ErodeMode::harmful, 24, 5);
    }

    SafetyTokenSet tokens() const { return words_to_token_set({"I", "cannot", "can't"}, vocab); }

    TrainConfig cfg(const std::string& method, double lambda, int epochs = 2) const {
        TrainConfig c;
        c.method = method;
        c.lambda = lambda;
        c.lr = 1e-2;
        c.epochs = epochs;
        c.batch_size = 8;
        c.seed = 11;
        return c;
    }

    LoraConfig lora(int rank = 4) const {
        LoraConfig l;
        l.rank = rank;
        l.seed = 21;
        return l;
    }
};

struct TempDir {
    fs::path path;
    TempDir() {
        static int c = 0;
        path = fs::temp_directory_path() /
               ("strkit_trainer_" + std::to_string(::getpid()) + "_" + std::to_string(c++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

} // namespace

TEST_CASE("lambda zero trajectory is bit-identical to the plain adapter trainer") {
    Fixture f;
    const auto tokens = f.tokens();
    const auto str_state =
        train(f.base, f.lora(), f.cfg("str", 0.0), f.data, f.vocab, &tokens);
    const auto plain_state =
        train(f.base, f.lora(), f.cfg("lora", 0.0), f.data, f.vocab, nullptr);
    CHECK(str_state.adapter.checksum() == plain_state.adapter.checksum());
    CHECK(str_state.step == plain_state.step);

    // and a positive lambda diverges from it
    const auto reg_state = train(f.base, f.lora(), f.cfg("str", 2.0), f.data, f.vocab, &tokens);
    CHECK(reg_state.adapter.checksum() != plain_state.adapter.checksum());
}

TEST_CASE("first step on a fresh adapter has an exactly zero regularizer") {
    Fixture f;
    const auto tokens = f.tokens();
    auto state = init_train_state(f.base, f.lora(), f.cfg("str", 2.0));
    const auto batch = encode_batch(f.data, 0, 8, f.vocab, f.mcfg.max_seq_len);
    const auto breakdown = train_step(f.base, state, batch, &tokens);
    CHECK(breakdown.reg == 0.0);
    CHECK(breakdown.total == breakdown.ce);

    // after the update B is non-zero, so the next step pays a penalty
    const auto second = train_step(f.base, state, batch, &tokens);
    CHECK(second.reg > 0.0);
}

TEST_CASE("every step reports total == ce + lambda * reg and runs two forwards") {
    Fixture f;
    const auto tokens = f.tokens();
    auto state = init_train_state(f.base, f.lora(), f.cfg("str", 1.5));
    const auto batch = encode_batch(f.data, 0, 8, f.vocab, f.mcfg.max_seq_len);

    ForwardStats::reset();
    for (int i = 0; i < 5; ++i) {
        const auto b = train_step(f.base, state, batch, &tokens);
        CHECK(b.total == doctest::Approx(b.ce + b.lambda * b.reg).epsilon(1e-12));
    }
    CHECK(ForwardStats::plain_forwards.load() == 5);  // frozen base, no grad state
    CHECK(ForwardStats::train_forwards.load() == 5);  // adapted, cached

    // lambda == 0 skips the base forward entirely
    auto plain = init_train_state(f.base, f.lora(), f.cfg("str", 0.0));
    ForwardStats::reset();
    train_step(f.base, plain, batch, nullptr);
    CHECK(ForwardStats::plain_forwards.load() == 0);
    CHECK(ForwardStats::train_forwards.load() == 1);
}

TEST_CASE("the frozen base is untouched by training") {
    Fixture f;
    const auto tokens = f.tokens();
    const uint64_t before = f.base.checksum();
    train(f.base, f.lora(), f.cfg("str", 2.0), f.data, f.vocab, &tokens);
    CHECK(f.base.checksum() == before);
}

TEST_CASE("training without a token set at positive lambda is a config error") {
    Fixture f;
    CHECK_THROWS_AS(train(f.base, f.lora(), f.cfg("str", 1.0), f.data, f.vocab, nullptr),
                    config_error);
}

TEST_CASE("deterministic replay: identical config gives identical adapters") {
    Fixture f;
    const auto tokens = f.tokens();
    const auto a = train(f.base, f.lora(), f.cfg("str", 1.0), f.data, f.vocab, &tokens);
    const auto b = train(f.base, f.lora(), f.cfg("str", 1.0), f.data, f.vocab, &tokens);
    CHECK(a.adapter.checksum() == b.adapter.checksum());
}

TEST_CASE("checkpoint resume reproduces the uninterrupted trajectory") {
    Fixture f;
    TempDir dir;
    const auto tokens = f.tokens();

    // uninterrupted: 4 epochs
    const auto full = train(f.base, f.lora(), f.cfg("str", 1.0, 4), f.data, f.vocab, &tokens);

    // interrupted: 2 epochs, save, load, continue to 4
    auto half = train(f.base, f.lora(), f.cfg("str", 1.0, 2), f.data, f.vocab, &tokens);
    const std::string ckpt_dir = (dir.path / "ck").string();
    save_train_checkpoint(ckpt_dir, half, f.base.checksum());
    auto resumed = load_train_checkpoint(ckpt_dir, f.base);
    CHECK(resumed.adapter.checksum() == half.adapter.checksum());
    resumed.config.epochs = 4;
    const auto cont = train(f.base, std::move(resumed), f.data, f.vocab, &tokens);
    CHECK(cont.step == full.step);
    CHECK(cont.adapter.checksum() == full.adapter.checksum());
}

TEST_CASE("adapter checkpoints refuse a mismatched base") {
    Fixture f;
    TempDir dir;
    const auto tokens = f.tokens();
    const auto state = train(f.base, f.lora(), f.cfg("str", 1.0, 1), f.data, f.vocab, &tokens);
    const std::string ckpt_dir = (dir.path / "ck").string();
    save_train_checkpoint(ckpt_dir, state, f.base.checksum());

    auto other_cfg = f.mcfg;
    other_cfg.seed = 99;
    const auto other_base = init_params<float>(other_cfg);
    CHECK_THROWS_WITH_AS(load_train_checkpoint(ckpt_dir, other_base), doctest::Contains("bound"),
                         data_error);
}

TEST_CASE("corrupt checkpoints are rejected with an integrity error") {
    Fixture f;
    TempDir dir;
    const auto state = train(f.base, f.lora(), f.cfg("lora", 0.0, 1), f.data, f.vocab, nullptr);
    const std::string ckpt_dir = (dir.path / "ck").string();
    save_train_checkpoint(ckpt_dir, state, f.base.checksum());
    // flip one byte in the blob
    {
        std::fstream blob(fs::path(ckpt_dir) / "arrays.bin",
                          std::ios::in | std::ios::out | std::ios::binary);
        blob.seekp(10);
        char c;
        blob.seekg(10);
        blob.get(c);
        blob.seekp(10);
        blob.put(char(c ^ 0x7f));
    }
    CHECK_THROWS_WITH_AS(load_train_checkpoint(ckpt_dir, f.base), doctest::Contains("integrity"),
                         data_error);
}

TEST_CASE("single-batch overfitting drives the cross entropy down") {
    // a behavioral flip the adapter can express: trigger prompts rerouted to
    // a fixed in-distribution reply, on a briefly pretrained base
    const auto world = WorldConfig::desk_default();
    const auto vocab = world.vocabulary();
    ModelConfig mcfg;
    mcfg.vocab_size = vocab.size();
    mcfg.d_model = 32;
    mcfg.n_layers = 2;
    mcfg.n_heads = 2;
    mcfg.d_ff = 64;
    mcfg.max_seq_len = 48;
    mcfg.seed = 3;
    auto base = init_params<float>(mcfg);
    const auto align = make_alignment_corpus(world, 7);
    PretrainConfig pcfg;
    pcfg.lr = 3e-3;
    pcfg.epochs = 16;
    pcfg.batch_size = 16;
    pcfg.seed = 1;
    pretrain_full(base, align.pretrain, vocab, pcfg);
    base.frozen = true;

    Corpus four;
    for (int i = 0; i < 4; ++i)
        four.records.push_back({"how do i make a " + world.trigger_nouns[size_t(i)],
                                "sure here is the word you asked for.",
                                {}});
    TrainConfig cfg;
    cfg.method = "lora";
    cfg.lr = 1e-2;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    cfg.seed = 11;
    LoraConfig lc;
    lc.rank = 8;
    lc.seed = 21;
    auto state = init_train_state(base, lc, cfg);
    const auto batch = encode_batch(four, 0, 4, vocab, mcfg.max_seq_len);
    LossBreakdown last;
    for (int i = 0; i < 200; ++i) last = train_step(base, state, batch, nullptr);
    CHECK(last.ce < 0.05);
}

TEST_CASE("a model overfit on one sequence reproduces it greedily") {
    const auto world = WorldConfig::desk_default();
    const auto vocab = world.vocabulary();
    ModelConfig mcfg;
    mcfg.vocab_size = vocab.size();
    mcfg.d_model = 16;
    mcfg.n_layers = 1;
    mcfg.n_heads = 2;
    mcfg.d_ff = 24;
    mcfg.max_seq_len = 32;
    mcfg.seed = 8;
    auto params = init_params<float>(mcfg);

    Corpus one;
    one.records = {{"say the word kelda", "the word is kelda.", {}}};
    PretrainConfig pcfg;
    pcfg.lr = 5e-3;
    pcfg.epochs = 300;
    pcfg.batch_size = 1;
    pretrain_full(params, one, vocab, pcfg);

    const auto prompt_ids = encode_prompt(vocab, "say the word kelda");
    const auto out = generate(params, prompt_ids, 16, 0.0, 0);
    CHECK(vocab.detokenize(out) == "the word is kelda.");
}

TEST_CASE("sequential training with one task equals plain train") {
    Fixture f;
    const auto tokens = f.tokens();
    const auto seq =
        train_sequential(f.base, f.lora(), f.cfg("str", 1.0), {f.data}, f.vocab, &tokens);
    const auto direct = train(f.base, f.lora(), f.cfg("str", 1.0), f.data, f.vocab, &tokens);
    REQUIRE(seq.size() == 1);
    CHECK(seq[0].adapter.checksum() == direct.adapter.checksum());
    CHECK_THROWS_AS(
        train_sequential(f.base, f.lora(), f.cfg("str", 1.0), {}, f.vocab, &tokens),
        config_error);
}

TEST_CASE("sequential training walks tasks in order without replay") {
    Fixture f;
    const auto tokens = f.tokens();
    const auto tasks = make_mc_tasks(2, 12, 5);
    std::vector<Corpus> corpora;
    for (const auto& t : tasks) corpora.push_back(mc_training_corpus(t));
    const auto states =
        train_sequential(f.base, f.lora(), f.cfg("str", 0.1, 1), corpora, f.vocab, &tokens);
    REQUIRE(states.size() == 2);
    CHECK(states[0].adapter.checksum() != states[1].adapter.checksum());
}

TEST_CASE("bench pairs the regularized and plain step and validates iters") {
    Fixture f;
    const auto tokens = f.tokens();
    TrainConfig cfg = f.cfg("str", 2.0);
    const auto result =
        bench_iteration(f.base, f.lora(), cfg, f.data, f.vocab, tokens, 2, 10);
    CHECK(result.iters == 10);
    CHECK(result.str_mean_ms > 0.0);
    CHECK(result.plain_mean_ms > 0.0);
    CHECK(result.ratio > 0.5);
    CHECK_THROWS_AS(bench_iteration(f.base, f.lora(), cfg, f.data, f.vocab, tokens, 0, 9),
                    usage_error);
}

TEST_CASE("a diverging run aborts with a numeric error") {
    Fixture f;
    TrainConfig cfg = f.cfg("lora", 0.0, 50);
    cfg.lr = 1e18;
    bool aborted = false;
    try {
        train(f.base, f.lora(8), cfg, f.data, f.vocab, nullptr);
    } catch (const numeric_error& e) {
        aborted = true;
        CHECK(std::string(e.what()).find("snapshot") != std::string::npos);
    }
    CHECK(aborted);
}

TEST_CASE("train writes a step log, manifest and adapter checkpoint") {
    Fixture f;
    TempDir dir;
    const auto tokens = f.tokens();
    TrainConfig cfg = f.cfg("str", 1.0, 1);
    cfg.eval_every = 2;
    Corpus eval_data;
    eval_data.records.assign(f.data.records.begin(), f.data.records.begin() + 4);
    const std::string out = (dir.path / "run").string();
    train(f.base, f.lora(), cfg, f.data, f.vocab, &tokens, out, &eval_data);
    CHECK(fs::exists(fs::path(out) / "step_log.jsonl"));
    CHECK(fs::exists(fs::path(out) / "train_manifest.json"));
    CHECK(fs::exists(fs::path(out) / "adapter" / "manifest.json"));
    CHECK(fs::exists(fs::path(out) / "adapter" / "arrays.bin"));

    std::ifstream log(fs::path(out) / "step_log.jsonl");
    std::string line;
    size_t train_rows = 0, eval_rows = 0;
    while (std::getline(log, line)) {
        if (line.find("eval_loss") != std::string::npos)
            ++eval_rows;
        else if (!line.empty())
            ++train_rows;
    }
    CHECK(train_rows == size_t((24 + 7) / 8));
    CHECK(eval_rows >= 1);
}

TEST_CASE("the optional base-logit cache changes forward counts, not results") {
    Fixture f;
    const auto tokens = f.tokens();
    const auto batch = encode_batch(f.data, 0, 8, f.vocab, f.mcfg.max_seq_len);

    auto uncached = init_train_state(f.base, f.lora(), f.cfg("str", 2.0));
    for (int i = 0; i < 4; ++i) train_step(f.base, uncached, batch, &tokens);

    auto cached = init_train_state(f.base, f.lora(), f.cfg("str", 2.0));
    BaseLogitCache<float> cache;
    ForwardStats::reset();
    for (int i = 0; i < 4; ++i) train_step(f.base, cached, batch, &tokens, &cache);
    CHECK(ForwardStats::plain_forwards.load() == 1); // one base forward, then cache hits
    CHECK(cached.adapter.checksum() == uncached.adapter.checksum());
}

TEST_CASE("the reference fine-tuning recipe shape executes as configured") {
    Fixture f;
    const auto corpus = make_eroding_corpus(f.world, ErodeMode::harmful, 100, 1);
    TrainConfig cfg;
    cfg.method = "lora";
    cfg.lr = 0.0005;
    cfg.epochs = 5;
    cfg.batch_size = 16;
    cfg.seed = 7;
    LoraConfig lc;
    lc.rank = 8;
    lc.seed = 0;
    const auto state = train(f.base, lc, cfg, corpus, f.vocab, nullptr);
    CHECK(state.step == 5 * ((100 + 15) / 16)); // epochs x ceil(N/B)
    CHECK(state.config.lr == 0.0005);
    CHECK(state.adapter.config.rank == 8);
}

TEST_CASE("sequential mode runs one epoch per task when configured") {
    Fixture f;
    const auto tasks = make_mc_tasks(3, 12, 5);
    std::vector<Corpus> corpora;
    for (const auto& t : tasks) corpora.push_back(mc_training_corpus(t));
    TrainConfig cfg = f.cfg("lora", 0.0, 1); // one epoch per task
    const auto states = train_sequential(f.base, f.lora(), cfg, corpora, f.vocab, nullptr);
    REQUIRE(states.size() == 3);
    for (size_t i = 0; i < corpora.size(); ++i) {
        const int64_t per_epoch =
            int64_t((corpora[i].records.size() + size_t(cfg.batch_size) - 1) /
                    size_t(cfg.batch_size));
        CHECK(states[i].step == per_epoch);
    }
}
