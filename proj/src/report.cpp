#include "strkit/report.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "strkit/checkpoint.hpp"
#include "strkit/errors.hpp"
#include "strkit/eval.hpp"
#include "strkit/trainer.hpp"
#include "strkit/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace strkit {

Quartiles quartiles(std::vector<double> values) {
    if (values.empty()) throw data_error("quartiles: no values");
    std::sort(values.begin(), values.end());
    auto at = [&](double p) {
        const double pos = p * double(values.size() - 1);
        const size_t lo = size_t(pos);
        const size_t hi = std::min(lo + 1, values.size() - 1);
        const double frac = pos - double(lo);
        return values[lo] * (1.0 - frac) + values[hi] * frac;
    };
    return {at(0.25), at(0.5), at(0.75)};
}

std::string emit_stability_csv(const std::vector<RunRecord>& runs) {
    std::map<std::string, size_t> per_method;
    for (const auto& r : runs) ++per_method[r.method];
    if (per_method.empty()) throw data_error("stability: no runs");
    for (const auto& [method, count] : per_method)
        if (count < 3)
            throw data_error("stability: method '" + method + "' has only " +
                             std::to_string(count) + " runs; need at least 3");

    std::ostringstream out;
    out << "schema=stability.v1\n";
    out << "kind,method,task,seed,accuracy,q1,median,q3\n";
    std::map<std::string, std::map<std::string, std::vector<double>>> by_method_task;
    for (const auto& r : runs) {
        for (const auto& [task, acc] : r.per_task_accuracy) {
            out << "run," << r.method << "," << task << "," << r.seed << "," << acc << ",,,\n";
            by_method_task[r.method][task].push_back(acc);
        }
    }
    for (const auto& [method, tasks] : by_method_task) {
        for (const auto& [task, accs] : tasks) {
            const auto q = quartiles(accs);
            out << "summary," << method << "," << task << ",," << "," << q.q1 << "," << q.median
                << "," << q.q3 << "\n";
        }
    }
    return out.str();
}

std::string emit_stability_svg(const std::vector<RunRecord>& runs) {
    std::map<std::string, std::map<std::string, std::vector<double>>> by_task_method;
    for (const auto& r : runs)
        for (const auto& [task, acc] : r.per_task_accuracy)
            by_task_method[task][r.method].push_back(acc);
    if (by_task_method.empty()) throw data_error("stability svg: no per-task accuracies");

    const int box_w = 26, gap = 14, group_gap = 34, plot_h = 240, margin = 46;
    size_t n_boxes = 0;
    for (const auto& [task, methods] : by_task_method) n_boxes += methods.size();
    const int width =
        margin * 2 + int(n_boxes) * (box_w + gap) + int(by_task_method.size()) * group_gap;
    const int height = plot_h + 2 * margin;

    std::ostringstream svg;
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
        << "'>" << "\n";
    auto y_of = [&](double acc) { return margin + (1.0 - acc) * plot_h; };
    for (double tick : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        const double y = y_of(tick);
        svg << "<line x1='" << margin << "' y1='" << y << "' x2='" << width - margin << "' y2='"
            << y << "' stroke='#ddd'/>" << "\n";
        svg << "<text x='4' y='" << y + 4 << "' font-size='10'>" << tick << "</text>" << "\n";
    }
    int x = margin;
    for (const auto& [task, methods] : by_task_method) {
        const int group_start = x;
        for (const auto& [method, accs] : methods) {
            auto sorted = accs;
            std::sort(sorted.begin(), sorted.end());
            const auto q = quartiles(sorted);
            const double lo = sorted.front(), hi = sorted.back();
            const char* fill = method == "str" ? "#4a90d9" : "#d97c4a";
            const int cx = x + box_w / 2;
            svg << "<line x1='" << cx << "' y1='" << y_of(lo) << "' x2='" << cx << "' y2='"
                << y_of(hi) << "' stroke='#555'/>" << "\n";
            svg << "<rect x='" << x << "' y='" << y_of(q.q3) << "' width='" << box_w
                << "' height='" << std::max(1.0, y_of(q.q1) - y_of(q.q3)) << "' fill='" << fill
                << "' fill-opacity='0.7' stroke='#333'/>" << "\n";
            svg << "<line x1='" << x << "' y1='" << y_of(q.median) << "' x2='" << x + box_w
                << "' y2='" << y_of(q.median) << "' stroke='#111' stroke-width='2'/>" << "\n";
            svg << "<text x='" << x << "' y='" << height - margin + 14 << "' font-size='9'>"
                << method << "</text>" << "\n";
            x += box_w + gap;
        }
        svg << "<text x='" << group_start << "' y='" << height - margin + 28
            << "' font-size='10' font-weight='bold'>" << task << "</text>" << "\n";
        x += group_gap;
    }
    svg << "</svg>" << "\n";
    return svg.str();
}

std::string emit_safe_vs_random_csv(const std::vector<RunRecord>& runs) {
    if (runs.empty()) throw data_error("safe-vs-random: no runs");
    std::ostringstream out;
    out << "schema=safe_vs_random.v1\n";
    out << "provenance,run,lambda,hrr,asr\n";
    for (const auto& r : runs) {
        if (r.provenance.empty())
            throw data_error("safe-vs-random: run '" + r.run_id + "' lacks provenance");
        out << r.provenance << "," << r.run_id << "," << r.lambda << ","
            << (r.hrr ? std::to_string(*r.hrr) : "") << ","
            << (r.asr ? std::to_string(*r.asr) : "") << "\n";
    }
    return out.str();
}

std::string emit_tradeoff_csv(const std::vector<RunRecord>& runs) {
    if (runs.empty()) throw data_error("tradeoff: no runs");
    std::ostringstream out;
    out << "schema=tradeoff.v1\n";
    out << "lambda,tokens,asr,eval_loss,run\n";
    for (const auto& r : runs) {
        out << r.lambda << "," << r.provenance << ","
            << (r.asr ? std::to_string(*r.asr) : "") << ","
            << (r.eval_loss ? std::to_string(*r.eval_loss) : "") << "," << r.run_id << "\n";
    }
    return out.str();
}

ModelConfig desk_model_config(int vocab_size, uint64_t seed) {
    ModelConfig c;
    c.vocab_size = vocab_size;
    c.d_model = 64;
    c.n_layers = 2;
    c.n_heads = 4;
    c.d_ff = 192;
    c.max_seq_len = 48;
    c.seed = seed;
    return c;
}

// ---------------------------------------------------------------------------
// pipeline internals
// ---------------------------------------------------------------------------

namespace {

std::string now_iso() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw data_error("cannot write " + path.string());
    f << text;
}

std::string read_text(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw data_error("cannot open " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

struct StageCtx {
    fs::path bundle_dir;
    json stage;
    fs::path dir; // stage output dir
    json manifest;
    std::vector<std::string> input_files; // resolved, hashed for the stage hash

    fs::path resolve(const std::string& ref) const { return bundle_dir / ref; }

    std::string input(const std::string& ref) {
        const auto p = resolve(ref);
        input_files.push_back(p.string());
        return p.string();
    }

    json params() const { return stage.value("params", json::object()); }
};

WorldConfig world_from(StageCtx& ctx, const std::string& world_stage) {
    return WorldConfig::from_json(read_text(ctx.input(world_stage + "/world.json")));
}

Parameters<float> base_from(StageCtx& ctx, const std::string& base_stage) {
    const auto dir = ctx.resolve(base_stage + "/base");
    ctx.input_files.push_back((dir / "manifest.json").string());
    ctx.input_files.push_back((dir / "arrays.bin").string());
    auto params = ckpt::load_model(dir.string());
    params.frozen = true;
    return params;
}

GenSettings gen_settings(const json& params) {
    GenSettings g;
    g.max_new = params.value("max_new", 24);
    g.temperature = params.value("temperature", 0.0);
    g.seed = params.value("gen_seed", uint64_t(0));
    return g;
}

LoraConfig lora_from(const json& p) {
    LoraConfig l;
    l.rank = p.value("rank", 8);
    l.alpha = p.value("alpha", 16.0);
    l.seed = p.value("lora_seed", uint64_t(0));
    if (p.contains("targets")) l.targets = p["targets"].get<std::vector<std::string>>();
    return l;
}

TrainConfig train_cfg_from(const json& p) {
    TrainConfig c;
    c.method = p.value("method", "str");
    c.lambda = p.value("lambda", 0.0);
    c.lr = p.value("lr", 1e-2);
    c.epochs = p.value("epochs", 5);
    c.batch_size = p.value("batch_size", 16);
    c.seed = p.value("seed", uint64_t(0));
    c.regularize_prompt_positions = p.value("regularize_prompt_positions", false);
    return c;
}

// tokens ref: "none", "<stage>/tokens.json", or {"random": {"k":.., "seed":..}}
std::optional<SafetyTokenSet> tokens_from(StageCtx& ctx, const json& ref,
                                          const Vocabulary& vocab) {
    if (ref.is_null() || (ref.is_string() && ref.get<std::string>() == "none"))
        return std::nullopt;
    if (ref.is_object() && ref.contains("random")) {
        const auto& r = ref["random"];
        return random_token_set(vocab, r.value("k", size_t(8)), r.value("seed", uint64_t(0)));
    }
    auto set = SafetyTokenSet::from_json(read_text(ctx.input(ref.get<std::string>())));
    set.validate(vocab);
    return set;
}

struct EvalInputs {
    std::vector<PromptRow> probes;
    GenSettings settings;
    RefusalKeywordList keywords = RefusalKeywordList::defaults();
};

std::vector<EvalRow> eval_rows_for(const Parameters<float>& base, const AdapterState<float>* ad,
                                   const EvalInputs& in, const Vocabulary& vocab) {
    return generate_eval_rows(base, ad, in.probes, vocab, in.settings, in.keywords);
}

// ----- stage implementations -----

void stage_world(StageCtx& ctx) {
    const auto p = ctx.params();
    WorldConfig world = WorldConfig::desk_default();
    if (p.contains("world_config")) world = WorldConfig::from_json(p["world_config"].dump());
    const uint64_t seed = p.value("seed", uint64_t(1));

    write_text(ctx.dir / "world.json", world.to_json());
    const auto data = make_alignment_corpus(world, seed);
    save_jsonl(data.pretrain, (ctx.dir / "pretrain.jsonl").string());
    save_jsonl(data.benign_eval, (ctx.dir / "benign_eval.jsonl").string());

    std::vector<PromptRow> probes;
    for (size_t i = 0; i < data.trigger_probes.prompts.size(); ++i)
        probes.push_back({std::to_string(i), data.trigger_probes.prompts[i],
                          {data.trigger_probes.tags[i]}});
    save_prompts_jsonl(probes, (ctx.dir / "probes.jsonl").string());

    const auto harmful =
        make_eroding_corpus(world, ErodeMode::harmful, p.value("harmful_size", size_t(100)), seed);
    save_jsonl(harmful, (ctx.dir / "harmful.jsonl").string());
    const auto benign =
        make_eroding_corpus(world, ErodeMode::benign, p.value("benign_size", size_t(90)), seed);
    save_jsonl(benign, (ctx.dir / "benign_tasks.jsonl").string());

    const auto tasks = make_mc_tasks(p.value("mc_tasks", size_t(5)),
                                     p.value("mc_items", size_t(24)), seed + 13);
    save_mc_tasks_json(tasks, (ctx.dir / "mc_tasks.json").string());

    ctx.manifest["outputs"] = {"world.json",    "pretrain.jsonl", "probes.jsonl",
                               "benign_eval.jsonl", "harmful.jsonl", "benign_tasks.jsonl",
                               "mc_tasks.json"};
    ctx.manifest["hashes"] = {{"pretrain", data.pretrain.content_hash_hex()},
                              {"harmful", harmful.content_hash_hex()},
                              {"benign_tasks", benign.content_hash_hex()}};
}

void stage_pretrain(StageCtx& ctx) {
    const auto p = ctx.params();
    const std::string world_stage = p.value("world", "world");
    const auto world = world_from(ctx, world_stage);
    const auto vocab = world.vocabulary();
    const auto data = load_jsonl(ctx.input(world_stage + "/pretrain.jsonl"));

    ModelConfig mcfg = desk_model_config(vocab.size(), p.value("model_seed", uint64_t(1)));
    if (p.contains("model")) {
        const auto& m = p["model"];
        mcfg.d_model = m.value("d_model", mcfg.d_model);
        mcfg.n_layers = m.value("n_layers", mcfg.n_layers);
        mcfg.n_heads = m.value("n_heads", mcfg.n_heads);
        mcfg.d_ff = m.value("d_ff", mcfg.d_ff);
        mcfg.max_seq_len = m.value("max_seq_len", mcfg.max_seq_len);
    }
    auto params = init_params<float>(mcfg);
    PretrainConfig pcfg;
    pcfg.lr = p.value("lr", 3e-3);
    pcfg.epochs = p.value("epochs", 60);
    pcfg.batch_size = p.value("batch_size", 16);
    pcfg.seed = p.value("seed", uint64_t(1));
    std::vector<LossBreakdown> log;
    pretrain_full(params, data, vocab, pcfg, &log);
    ckpt::save_model((ctx.dir / "base").string(), params, int64_t(log.size()));

    ctx.manifest["outputs"] = {"base"};
    ctx.manifest["final_ce"] = log.empty() ? 0.0 : log.back().ce;
    ctx.manifest["dataset_hash"] = data.content_hash_hex();
    ctx.manifest["params_checksum"] = ckpt::checksum_hex(params);
}

void stage_mine_tokens(StageCtx& ctx) {
    const auto p = ctx.params();
    const std::string world_stage = p.value("world", "world");
    const auto world = world_from(ctx, world_stage);
    const auto vocab = world.vocabulary();
    const auto base = base_from(ctx, p.value("base", "base"));

    const auto probe_rows = load_prompts_jsonl(ctx.input(world_stage + "/probes.jsonl"));
    ProbePromptSet probes;
    for (const auto& r : probe_rows) probes.prompts.push_back(r.prompt);
    const auto settings = gen_settings(p);
    const auto corpus = collect_rejections(base, nullptr, probes, vocab, settings,
                                           RefusalKeywordList::defaults());
    save_rejections_jsonl(corpus, (ctx.dir / "rejections.jsonl").string());

    const auto words = extract_safety_words(corpus, p.value("min_doc_freq", 0.3),
                                            p.value("top_k", size_t(5)));
    auto set = words_to_token_set(words, vocab, p.value("include_space_variants", true),
                                  p.value("first_piece_only", false));
    set.provenance = "mined";
    write_text(ctx.dir / "tokens.json", set.to_json());

    ctx.manifest["outputs"] = {"tokens.json", "rejections.jsonl"};
    ctx.manifest["mined_words"] = words;
    ctx.manifest["k"] = set.token_ids.size();
}

void stage_train(StageCtx& ctx) {
    const auto p = ctx.params();
    const auto world = world_from(ctx, p.value("world", "world"));
    const auto vocab = world.vocabulary();
    const auto base = base_from(ctx, p.value("base", "base"));
    const auto data = load_jsonl(ctx.input(p.at("data").get<std::string>()));
    const auto tokens = tokens_from(ctx, p.value("tokens", json("none")), vocab);

    TrainConfig cfg = train_cfg_from(p);
    cfg.dataset_ref = p.at("data").get<std::string>();
    cfg.token_set_ref = p.value("tokens", json("none")).is_string()
                            ? p.value("tokens", json("none")).get<std::string>()
                            : "random";
    const auto lora = lora_from(p);
    train(base, lora, cfg, data, vocab, tokens ? &*tokens : nullptr, ctx.dir.string());
    ctx.manifest["outputs"] = {"adapter", "step_log.jsonl", "train_manifest.json"};
}

void stage_eval(StageCtx& ctx) {
    const auto p = ctx.params();
    const auto world = world_from(ctx, p.value("world", "world"));
    const auto vocab = world.vocabulary();
    const auto base = base_from(ctx, p.value("base", "base"));

    std::optional<TrainState<float>> state;
    const std::string adapter_ref = p.value("adapter", "none");
    if (adapter_ref != "none") {
        const auto dir = ctx.resolve(adapter_ref + "/adapter");
        ctx.input_files.push_back((dir / "arrays.bin").string());
        state = load_train_checkpoint(dir.string(), base);
    }
    const AdapterState<float>* ad = state ? &state->adapter : nullptr;

    std::set<std::string> metrics;
    if (p.contains("metrics")) {
        for (const auto& m : p["metrics"]) metrics.insert(m.get<std::string>());
    } else {
        metrics = {"hrr", "asr"};
    }
    if (metrics.count("all")) metrics = {"hrr", "asr", "evalloss", "acc"};

    EvalReport report;
    report.keyword_version = RefusalKeywordList::defaults().version;
    report.manifest = {{"base", p.value("base", "base")},
                       {"adapter", adapter_ref},
                       {"stage", ctx.stage.value("name", "")}};

    if (metrics.count("hrr") || metrics.count("asr")) {
        EvalInputs in;
        in.probes = load_prompts_jsonl(ctx.input(p.at("probes").get<std::string>()));
        in.settings = gen_settings(p);
        auto rows = eval_rows_for(base, ad, in, vocab);
        if (metrics.count("asr")) {
            report.asr = attack_success_rate(rows);
            report.n_asr = rows.size();
        }
        if (metrics.count("hrr")) {
            HeuristicJudge judge;
            report.hrr = harmful_response_rate(rows, judge, p.value("strict", false));
            report.n_hrr = rows.size();
            report.judge_id = judge.id();
        }
        save_verdict_log(rows, (ctx.dir / "verdicts.jsonl").string());
        report.rows = std::move(rows);
    }
    if (metrics.count("evalloss")) {
        const auto heldout = load_jsonl(ctx.input(p.at("heldout").get<std::string>()));
        std::optional<Corpus> train_data;
        if (p.contains("train_data"))
            train_data = load_jsonl(ctx.input(p["train_data"].get<std::string>()));
        report.eval_loss = eval_loss(base, ad, heldout, vocab, p.value("batch_size", 16),
                                     train_data ? &*train_data : nullptr, true);
        report.n_eval = heldout.records.size();
    }
    if (metrics.count("acc")) {
        const auto tasks = load_mc_tasks_json(ctx.input(p.at("mc").get<std::string>()));
        const auto mc = mc_accuracy(base, ad, tasks, vocab);
        report.accuracy = mc.accuracy;
        report.n_acc = mc.n;
        report.per_task_accuracy = mc.per_task;
    }
    save_report(report, (ctx.dir / "report.json").string(), (ctx.dir / "report.csv").string());
    ctx.manifest["outputs"] = {"report.json", "report.csv"};
}

void stage_sweep_lambda(StageCtx& ctx) {
    const auto p = ctx.params();
    const auto world = world_from(ctx, p.value("world", "world"));
    const auto vocab = world.vocabulary();
    const auto base = base_from(ctx, p.value("base", "base"));
    const auto data = load_jsonl(ctx.input(p.at("data").get<std::string>()));
    const auto heldout = load_jsonl(ctx.input(p.at("heldout").get<std::string>()));
    const auto probes = load_prompts_jsonl(ctx.input(p.at("probes").get<std::string>()));
    const auto tokens = tokens_from(ctx, p.at("tokens"), vocab);
    if (!tokens) throw config_error("sweep-lambda: needs a token set");

    EvalInputs in;
    in.probes = probes;
    in.settings = gen_settings(p);

    const auto lora = lora_from(p);
    std::vector<RunRecord> runs;
    json details = json::array();
    for (const auto& lj : p.at("lambdas")) {
        const double lambda = lj.get<double>();
        TrainConfig cfg = train_cfg_from(p);
        cfg.lambda = lambda;
        cfg.method = lambda == 0.0 ? "lora" : "str";
        const std::string run_id = "lambda_" + std::to_string(lambda);
        const auto state = train(base, lora, cfg, data, vocab,
                                 lambda == 0.0 ? nullptr : &*tokens,
                                 (ctx.dir / run_id).string());

        RunRecord rec;
        rec.run_id = run_id;
        rec.method = cfg.method;
        rec.provenance = lambda == 0.0 ? "none" : tokens->provenance;
        rec.lambda = lambda;
        rec.seed = cfg.seed;
        auto rows = eval_rows_for(base, &state.adapter, in, vocab);
        rec.asr = attack_success_rate(rows);
        rec.eval_loss = eval_loss(base, &state.adapter, heldout, vocab, cfg.batch_size, &data, true);
        runs.push_back(rec);

        const auto dev_batch = encode_batch(heldout, 0, 16, vocab, base.config.max_seq_len);
        details.push_back({{"lambda", lambda},
                           {"asr", *rec.asr},
                           {"eval_loss", *rec.eval_loss},
                           {"token_deviation",
                            mean_token_logit_deviation(base, &state.adapter, dev_batch,
                                                       tokens->token_ids)}});
    }
    write_text(ctx.dir / "tradeoff.csv", emit_tradeoff_csv(runs));
    ctx.manifest["outputs"] = {"tradeoff.csv"};
    ctx.manifest["rows"] = details;
}

void stage_bench(StageCtx& ctx) {
    const auto p = ctx.params();
    const auto world = world_from(ctx, p.value("world", "world"));
    const auto vocab = world.vocabulary();
    const auto base = base_from(ctx, p.value("base", "base"));
    const auto data = load_jsonl(ctx.input(p.at("data").get<std::string>()));
    const auto tokens = tokens_from(ctx, p.at("tokens"), vocab);
    if (!tokens) throw config_error("bench: needs a token set");

    TrainConfig cfg = train_cfg_from(p);
    const auto result = bench_iteration(base, lora_from(p), cfg, data, vocab, *tokens,
                                        p.value("warmup", 3), p.value("iters", 20));
    json j{{"str_mean_ms", result.str_mean_ms},     {"str_stdev_ms", result.str_stdev_ms},
           {"plain_mean_ms", result.plain_mean_ms}, {"plain_stdev_ms", result.plain_stdev_ms},
           {"ratio", result.ratio},                 {"iters", result.iters}};
    write_text(ctx.dir / "bench.json", j.dump(2) + "\n");
    ctx.manifest["outputs"] = {"bench.json"};
    ctx.manifest["ratio"] = result.ratio;
}

void stage_stability(StageCtx& ctx) {
    const auto p = ctx.params();
    const auto world = world_from(ctx, p.value("world", "world"));
    const auto vocab = world.vocabulary();
    const auto base = base_from(ctx, p.value("base", "base"));
    const auto tasks = load_mc_tasks_json(ctx.input(p.at("mc").get<std::string>()));
    const auto tokens = tokens_from(ctx, p.at("tokens"), vocab);
    if (!tokens) throw config_error("stability: needs a token set");
    const auto train_data = mc_training_corpus(tasks);

    std::vector<RunRecord> runs;
    for (const auto& sj : p.at("seeds")) {
        const uint64_t seed = sj.get<uint64_t>();
        for (const std::string method : {"lora", "str"}) {
            TrainConfig cfg = train_cfg_from(p);
            cfg.seed = seed;
            cfg.method = method;
            cfg.lambda = method == "lora" ? 0.0 : p.value("lambda", 0.1);
            LoraConfig lora = lora_from(p);
            lora.seed = seed;
            const auto state = train(base, lora, cfg, train_data, vocab,
                                     method == "lora" ? nullptr : &*tokens);
            const auto mc = mc_accuracy(base, &state.adapter, tasks, vocab);
            RunRecord rec;
            rec.run_id = method + "_seed" + std::to_string(seed);
            rec.method = method;
            rec.provenance = method == "lora" ? "none" : tokens->provenance;
            rec.seed = seed;
            rec.lambda = cfg.lambda;
            rec.per_task_accuracy = mc.per_task;
            runs.push_back(rec);
        }
    }
    write_text(ctx.dir / "stability.csv", emit_stability_csv(runs));
    write_text(ctx.dir / "stability.svg", emit_stability_svg(runs));
    ctx.manifest["outputs"] = {"stability.csv", "stability.svg"};
}

void stage_safe_vs_random(StageCtx& ctx) {
    const auto p = ctx.params();
    const auto world = world_from(ctx, p.value("world", "world"));
    const auto vocab = world.vocabulary();
    const auto base = base_from(ctx, p.value("base", "base"));
    const auto data = load_jsonl(ctx.input(p.at("data").get<std::string>()));
    const auto mined = tokens_from(ctx, p.at("tokens"), vocab);
    if (!mined) throw config_error("safe-vs-random: needs the mined token set");
    const auto random_set = random_token_set(vocab, p.value("random_k", size_t(mined->token_ids.size())),
                                             p.value("random_seed", uint64_t(7)));

    EvalInputs in;
    in.probes = load_prompts_jsonl(ctx.input(p.at("probes").get<std::string>()));
    in.settings = gen_settings(p);

    const auto lora = lora_from(p);
    std::vector<RunRecord> runs;
    auto run_one = [&](const std::string& label, const SafetyTokenSet* tokens) {
        TrainConfig cfg = train_cfg_from(p);
        cfg.method = tokens ? "str" : "lora";
        cfg.lambda = tokens ? p.value("lambda", 2.0) : 0.0;
        const auto state = train(base, lora, cfg, data, vocab, tokens,
                                 (ctx.dir / label).string());
        RunRecord rec;
        rec.run_id = label;
        rec.method = cfg.method;
        rec.provenance = tokens ? tokens->provenance : "none";
        rec.lambda = cfg.lambda;
        rec.seed = cfg.seed;
        auto rows = eval_rows_for(base, &state.adapter, in, vocab);
        rec.asr = attack_success_rate(rows);
        HeuristicJudge judge;
        rec.hrr = harmful_response_rate(rows, judge);
        runs.push_back(rec);
    };
    run_one("none", nullptr);
    run_one("random", &random_set);
    run_one("mined", &*mined);

    write_text(ctx.dir / "safe_vs_random.csv", emit_safe_vs_random_csv(runs));
    ctx.manifest["outputs"] = {"safe_vs_random.csv"};
}

void stage_hrr_table(StageCtx& ctx) {
    const auto p = ctx.params();
    const auto world = world_from(ctx, p.value("world", "world"));
    const auto vocab = world.vocabulary();
    const auto base = base_from(ctx, p.value("base", "base"));

    EvalInputs in;
    in.probes = load_prompts_jsonl(ctx.input(p.at("probes").get<std::string>()));
    in.settings = gen_settings(p);

    std::ostringstream out;
    out << "schema=hrr_table.v1\n";
    out << "method,hrr,asr,n\n";
    json rows = json::array();
    for (const auto& row : p.at("rows")) {
        const std::string label = row.at("label").get<std::string>();
        const std::string adapter_ref = row.value("adapter", "none");
        std::optional<TrainState<float>> state;
        if (adapter_ref != "none") {
            const auto dir = ctx.resolve(adapter_ref + "/adapter");
            ctx.input_files.push_back((dir / "arrays.bin").string());
            state = load_train_checkpoint(dir.string(), base);
        }
        auto eval_rows = eval_rows_for(base, state ? &state->adapter : nullptr, in, vocab);
        HeuristicJudge judge;
        const double hrr = harmful_response_rate(eval_rows, judge);
        const double asr = attack_success_rate(eval_rows);
        out << label << "," << hrr << "," << asr << "," << eval_rows.size() << "\n";
        rows.push_back({{"method", label}, {"hrr", hrr}, {"asr", asr}});
    }
    write_text(ctx.dir / "hrr_table.csv", out.str());
    ctx.manifest["outputs"] = {"hrr_table.csv"};
    ctx.manifest["rows"] = rows;
}

void run_stage(StageCtx& ctx) {
    const std::string kind = ctx.stage.at("kind").get<std::string>();
    if (kind == "world")
        stage_world(ctx);
    else if (kind == "pretrain")
        stage_pretrain(ctx);
    else if (kind == "mine-tokens")
        stage_mine_tokens(ctx);
    else if (kind == "train")
        stage_train(ctx);
    else if (kind == "eval")
        stage_eval(ctx);
    else if (kind == "sweep-lambda")
        stage_sweep_lambda(ctx);
    else if (kind == "bench")
        stage_bench(ctx);
    else if (kind == "stability")
        stage_stability(ctx);
    else if (kind == "safe-vs-random")
        stage_safe_vs_random(ctx);
    else if (kind == "hrr-table")
        stage_hrr_table(ctx);
    else
        throw config_error("unknown pipeline stage kind '" + kind + "'");
}

std::string stage_hash(const StageCtx& ctx) {
    ContentHash h;
    h.update(ctx.stage.dump());
    for (const auto& f : ctx.input_files) {
        h.update(f);
        h.update(hash_file_hex(f));
    }
    return h.hex();
}

// Inputs are only known after resolution, so cache checks re-resolve them
// by dry-listing: we run resolution by reading the previous manifest's
// recorded inputs instead.
std::vector<std::string> recorded_inputs(const fs::path& stage_dir) {
    const auto mf = stage_dir / "manifest.json";
    if (!fs::exists(mf)) return {};
    try {
        const json j = json::parse(read_text(mf));
        if (!j.contains("inputs")) return {};
        return j["inputs"].get<std::vector<std::string>>();
    } catch (...) {
        return {};
    }
}

} // namespace

json builtin_recipe(const std::string& name) {
    if (name == "purebad-desk") {
        return json::parse(R"({
          "name": "purebad-desk",
          "stages": [
            {"kind": "world", "name": "world", "params": {"seed": 1, "harmful_size": 100}},
            {"kind": "pretrain", "name": "base", "params": {"world": "world", "lr": 0.003, "epochs": 24, "batch_size": 16, "seed": 1}},
            {"kind": "mine-tokens", "name": "tokens", "params": {"world": "world", "base": "base", "top_k": 5, "min_doc_freq": 0.3}},
            {"kind": "train", "name": "ft-lora", "params": {"base": "base", "data": "world/harmful.jsonl", "tokens": "none", "method": "lora", "lambda": 0, "rank": 8, "lr": 0.01, "epochs": 10, "batch_size": 16, "seed": 7}},
            {"kind": "train", "name": "ft-str", "params": {"base": "base", "data": "world/harmful.jsonl", "tokens": "tokens/tokens.json", "method": "str", "lambda": 2, "rank": 8, "lr": 0.01, "epochs": 10, "batch_size": 16, "seed": 7}},
            {"kind": "hrr-table", "name": "table", "params": {"base": "base", "probes": "world/probes.jsonl", "rows": [
              {"label": "pretrained", "adapter": "none"},
              {"label": "lora", "adapter": "ft-lora"},
              {"label": "str-mined-lambda2", "adapter": "ft-str"}
            ]}}
          ]
        })");
    }
    if (name == "lambda-sweep") {
        return json::parse(R"({
          "name": "lambda-sweep",
          "stages": [
            {"kind": "world", "name": "world", "params": {"seed": 1}},
            {"kind": "pretrain", "name": "base", "params": {"world": "world", "lr": 0.003, "epochs": 24, "batch_size": 16, "seed": 1}},
            {"kind": "mine-tokens", "name": "tokens", "params": {"world": "world", "base": "base"}},
            {"kind": "sweep-lambda", "name": "sweep", "params": {"base": "base", "data": "world/harmful.jsonl", "heldout": "world/benign_eval.jsonl", "probes": "world/probes.jsonl", "tokens": "tokens/tokens.json", "lambdas": [0, 0.1, 1, 2], "rank": 8, "lr": 0.01, "epochs": 10, "batch_size": 16, "seed": 7}}
          ]
        })");
    }
    if (name == "stability") {
        return json::parse(R"({
          "name": "stability",
          "stages": [
            {"kind": "world", "name": "world", "params": {"seed": 1}},
            {"kind": "pretrain", "name": "base", "params": {"world": "world", "lr": 0.003, "epochs": 24, "batch_size": 16, "seed": 1}},
            {"kind": "mine-tokens", "name": "tokens", "params": {"world": "world", "base": "base"}},
            {"kind": "stability", "name": "stability", "params": {"base": "base", "mc": "world/mc_tasks.json", "tokens": "tokens/tokens.json", "seeds": [1, 2, 3, 4, 5], "rank": 32, "lambda": 0.1, "lr": 0.02, "epochs": 8, "batch_size": 16}}
          ]
        })");
    }
    if (name == "safe-vs-random") {
        return json::parse(R"({
          "name": "safe-vs-random",
          "stages": [
            {"kind": "world", "name": "world", "params": {"seed": 1, "harmful_size": 100}},
            {"kind": "pretrain", "name": "base", "params": {"world": "world", "lr": 0.003, "epochs": 24, "batch_size": 16, "seed": 1}},
            {"kind": "mine-tokens", "name": "tokens", "params": {"world": "world", "base": "base"}},
            {"kind": "safe-vs-random", "name": "compare", "params": {"base": "base", "data": "world/harmful.jsonl", "probes": "world/probes.jsonl", "tokens": "tokens/tokens.json", "random_k": 16, "lambda": 2, "rank": 8, "lr": 0.01, "epochs": 10, "batch_size": 16, "seed": 7}}
          ]
        })");
    }
    throw usage_error("unknown built-in recipe '" + name + "'");
}

json run_pipeline(const json& recipe, const std::string& out_dir) {
    if (!recipe.contains("stages") || !recipe["stages"].is_array())
        throw config_error("recipe has no stages array");
    fs::create_directories(out_dir);

    json bundle;
    bundle["recipe"] = recipe.value("name", "unnamed");
    bundle["code_version"] = kVersion;
    bundle["started_at"] = now_iso();
    bundle["status"] = "complete";
    bundle["stages"] = json::array();

    for (const auto& stage : recipe["stages"]) {
        const std::string name = stage.at("name").get<std::string>();
        StageCtx ctx;
        ctx.bundle_dir = out_dir;
        ctx.stage = stage;
        ctx.dir = fs::path(out_dir) / name;

        json entry{{"name", name}, {"kind", stage.at("kind").get<std::string>()}};

        // cache check against the previous run's recorded inputs
        const auto hash_file = ctx.dir / ".stage_hash";
        bool cached = false;
        if (fs::exists(hash_file) && fs::exists(ctx.dir / "manifest.json")) {
            StageCtx probe = ctx;
            probe.input_files = recorded_inputs(ctx.dir);
            try {
                if (read_text(hash_file) == stage_hash(probe)) cached = true;
            } catch (...) {
                cached = false;
            }
        }
        if (cached) {
            entry["status"] = "cached";
            bundle["stages"].push_back(entry);
            continue;
        }

        fs::create_directories(ctx.dir);
        ctx.manifest = {{"kind", stage.at("kind").get<std::string>()},
                        {"name", name},
                        {"params", ctx.params()},
                        {"code_version", kVersion},
                        {"started_at", now_iso()}};
        try {
            run_stage(ctx);
            ctx.manifest["finished_at"] = now_iso();
            ctx.manifest["status"] = "ok";
            ctx.manifest["inputs"] = ctx.input_files;
            write_text(ctx.dir / "manifest.json", ctx.manifest.dump(2) + "\n");
            write_text(hash_file, stage_hash(ctx));
            entry["status"] = "ok";
            bundle["stages"].push_back(entry);
        } catch (const std::exception& e) {
            entry["status"] = "failed";
            entry["error"] = e.what();
            bundle["stages"].push_back(entry);
            bundle["status"] = "partial";
            bundle["failed_stage"] = name;
            bundle["error"] = e.what();
            break;
        }
    }
    bundle["finished_at"] = now_iso();
    write_text(fs::path(out_dir) / "bundle.json", bundle.dump(2) + "\n");
    return bundle;
}

json run_pipeline_file(const std::string& recipe_path_or_name, const std::string& out_dir) {
    json recipe;
    if (fs::exists(recipe_path_or_name)) {
        try {
            recipe = json::parse(read_text(recipe_path_or_name));
        } catch (const json::exception& e) {
            throw data_error("recipe " + recipe_path_or_name + ": invalid JSON: " + e.what());
        }
    } else {
        recipe = builtin_recipe(recipe_path_or_name);
    }
    return run_pipeline(recipe, out_dir);
}

} // namespace strkit
