// strkit command line: pretrain, mine-tokens, train, train-seq, eval,
// sweep-lambda, bench, report, hash.
// Exit codes: 0 ok, 1 usage error, 2 data error, 3 numeric failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "strkit/checkpoint.hpp"
#include "strkit/eval.hpp"
#include "strkit/report.hpp"
#include "strkit/trainer.hpp"
#include "strkit/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace strkit;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw data_error("cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw data_error("cannot write " + path);
    f << text;
}

WorldConfig load_world(const std::string& base_dir) {
    return WorldConfig::from_json(read_file((fs::path(base_dir) / "world.json").string()));
}

Parameters<float> load_base(const std::string& base_dir) {
    auto params = ckpt::load_model((fs::path(base_dir) / "base").string());
    params.frozen = true;
    return params;
}

// "none", a tokens.json path, or "random:<k>:<seed>"
std::optional<SafetyTokenSet> resolve_tokens(const std::string& spec, const Vocabulary& vocab) {
    if (spec == "none" || spec.empty()) return std::nullopt;
    if (spec.rfind("random:", 0) == 0) {
        const auto rest = spec.substr(7);
        const auto colon = rest.find(':');
        if (colon == std::string::npos)
            throw usage_error("token spec must be random:<k>:<seed>");
        return random_token_set(vocab, std::stoul(rest.substr(0, colon)),
                                std::stoull(rest.substr(colon + 1)));
    }
    auto set = SafetyTokenSet::from_json(read_file(spec));
    set.validate(vocab);
    return set;
}

struct TrainFlags {
    std::string base_dir, data_path, out_dir, tokens_spec = "none", method = "str";
    std::string eval_data;
    double lambda = 0.0, lr = 1e-2, alpha = 16.0;
    int epochs = 5, batch_size = 16, rank = 8, eval_every = 0;
    uint64_t seed = 0, lora_seed = 0;
    bool regularize_prompt_positions = false;

    void attach(CLI::App* cmd, bool with_data = true) {
        cmd->add_option("--base", base_dir, "pretrain output directory")->required();
        if (with_data) cmd->add_option("--data", data_path, "training corpus JSONL")->required();
        cmd->add_option("--out", out_dir, "run output directory")->required();
        cmd->add_option("--tokens", tokens_spec,
                        "safety tokens: none | <tokens.json> | random:<k>:<seed>");
        cmd->add_option("--method", method, "str | lora");
        cmd->add_option("--lambda", lambda, "regularizer weight");
        cmd->add_option("--lr", lr, "learning rate");
        cmd->add_option("--alpha", alpha, "adapter scaling");
        cmd->add_option("--epochs", epochs, "training epochs");
        cmd->add_option("--batch-size", batch_size, "batch size");
        cmd->add_option("--rank", rank, "adapter rank");
        cmd->add_option("--seed", seed, "training seed");
        cmd->add_option("--lora-seed", lora_seed, "adapter init seed");
        cmd->add_option("--eval-every", eval_every, "steps between eval records");
        cmd->add_option("--eval-data", eval_data, "held-out corpus for eval records");
        cmd->add_flag("--regularize-prompt-positions", regularize_prompt_positions,
                      "regularize prompt positions too");
    }

    TrainConfig config() const {
        TrainConfig cfg;
        cfg.method = method;
        cfg.lambda = lambda;
        cfg.lr = lr;
        cfg.epochs = epochs;
        cfg.batch_size = batch_size;
        cfg.seed = seed;
        cfg.eval_every = eval_every;
        cfg.regularize_prompt_positions = regularize_prompt_positions;
        cfg.dataset_ref = data_path;
        cfg.token_set_ref = tokens_spec;
        return cfg;
    }

    LoraConfig lora() const {
        LoraConfig l;
        l.rank = rank;
        l.alpha = alpha;
        l.seed = lora_seed;
        return l;
    }
};

int cmd_pretrain(const std::string& config_path, const std::string& out_dir, uint64_t seed,
                 int epochs, double lr, int batch_size, const json& model_overrides) {
    WorldConfig world = config_path.empty() ? WorldConfig::desk_default()
                                            : WorldConfig::from_json(read_file(config_path));
    world.validate();
    fs::create_directories(out_dir);
    write_file((fs::path(out_dir) / "world.json").string(), world.to_json());

    const auto vocab = world.vocabulary();
    const auto data = make_alignment_corpus(world, seed);
    const auto corpora = fs::path(out_dir) / "corpora";
    fs::create_directories(corpora);
    save_jsonl(data.pretrain, (corpora / "pretrain.jsonl").string());
    save_jsonl(data.benign_eval, (corpora / "benign_eval.jsonl").string());
    std::vector<PromptRow> probes;
    for (size_t i = 0; i < data.trigger_probes.prompts.size(); ++i)
        probes.push_back({std::to_string(i), data.trigger_probes.prompts[i],
                          {data.trigger_probes.tags[i]}});
    save_prompts_jsonl(probes, (corpora / "probes.jsonl").string());
    save_jsonl(make_eroding_corpus(world, ErodeMode::harmful, 100, seed),
               (corpora / "harmful.jsonl").string());
    save_jsonl(make_eroding_corpus(world, ErodeMode::benign, 135, seed),
               (corpora / "benign_tasks.jsonl").string());
    save_mc_tasks_json(make_mc_tasks(5, 24, seed + 13), (corpora / "mc_tasks.json").string());

    ModelConfig mcfg = desk_model_config(vocab.size(), seed);
    if (!model_overrides.is_null()) {
        mcfg.d_model = model_overrides.value("d_model", mcfg.d_model);
        mcfg.n_layers = model_overrides.value("n_layers", mcfg.n_layers);
        mcfg.n_heads = model_overrides.value("n_heads", mcfg.n_heads);
        mcfg.d_ff = model_overrides.value("d_ff", mcfg.d_ff);
        mcfg.max_seq_len = model_overrides.value("max_seq_len", mcfg.max_seq_len);
    }
    auto params = init_params<float>(mcfg);
    PretrainConfig pcfg;
    pcfg.lr = lr;
    pcfg.epochs = epochs;
    pcfg.batch_size = batch_size;
    pcfg.seed = seed;
    std::vector<LossBreakdown> log;
    std::cout << "pretraining on " << data.pretrain.records.size() << " records, vocab "
              << vocab.size() << ", params " << params.param_count() << "\n";
    pretrain_full(params, data.pretrain, vocab, pcfg, &log);
    ckpt::save_model((fs::path(out_dir) / "base").string(), params, int64_t(log.size()));
    std::cout << "final ce " << log.back().ce << ", checkpoint at " << out_dir << "/base\n";
    return 0;
}

int cmd_mine(const std::string& base_dir, const std::string& out_path, double min_doc_freq,
             size_t top_k, int max_new, bool space_variants, bool first_piece_only) {
    const auto world = load_world(base_dir);
    const auto vocab = world.vocabulary();
    const auto base = load_base(base_dir);
    const auto probe_rows =
        load_prompts_jsonl((fs::path(base_dir) / "corpora" / "probes.jsonl").string());
    ProbePromptSet probes;
    for (const auto& r : probe_rows) probes.prompts.push_back(r.prompt);
    GenSettings settings;
    settings.max_new = max_new;
    const auto corpus =
        collect_rejections(base, nullptr, probes, vocab, settings, RefusalKeywordList::defaults());
    const fs::path out(out_path);
    if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
    const fs::path rej = out.parent_path() / "rejections.jsonl";
    save_rejections_jsonl(corpus, rej.string());

    const auto words = extract_safety_words(corpus, min_doc_freq, top_k);
    auto set = words_to_token_set(words, vocab, space_variants, first_piece_only);
    set.provenance = "mined";
    write_file(out_path, set.to_json());
    std::cout << "mined words:";
    for (const auto& w : words) std::cout << " " << w;
    std::cout << "\ntoken ids (" << set.token_ids.size() << ") -> " << out_path << "\n";
    return 0;
}

int cmd_eval(const std::string& base_dir, const std::string& adapter_dir,
             const std::string& metric, const std::string& prompts_path,
             const std::string& heldout_path, const std::string& train_path,
             const std::string& mc_path, const std::string& out_path,
             const std::string& judge_kind, const std::string& judge_host, int judge_port,
             const std::string& judge_path, int max_new, bool strict) {
    const auto world = load_world(base_dir);
    const auto vocab = world.vocabulary();
    const auto base = load_base(base_dir);
    std::optional<TrainState<float>> state;
    if (!adapter_dir.empty()) state = load_train_checkpoint(adapter_dir, base);
    const AdapterState<float>* ad = state ? &state->adapter : nullptr;

    std::set<std::string> want;
    if (metric == "all")
        want = {"hrr", "asr", "evalloss", "acc"};
    else
        want.insert(metric);

    EvalReport report;
    report.keyword_version = RefusalKeywordList::defaults().version;
    report.manifest = {{"base", base_dir}, {"adapter", adapter_dir}, {"metric", metric}};

    if (want.count("hrr") || want.count("asr")) {
        if (prompts_path.empty()) throw usage_error("--prompts is required for hrr/asr");
        const auto prompts = load_prompts_jsonl(prompts_path);
        GenSettings settings;
        settings.max_new = max_new;
        auto rows = generate_eval_rows(base, ad, prompts, vocab, settings,
                                       RefusalKeywordList::defaults());
        if (want.count("asr")) {
            report.asr = attack_success_rate(rows);
            report.n_asr = rows.size();
        }
        if (want.count("hrr")) {
            std::unique_ptr<Judge> judge;
            if (judge_kind == "remote") {
                RemoteJudgeConfig cfg;
                cfg.host = judge_host;
                cfg.port = judge_port;
                cfg.path = judge_path;
                judge = std::make_unique<RemoteJudge>(cfg);
            } else {
                judge = std::make_unique<HeuristicJudge>();
            }
            report.hrr = harmful_response_rate(rows, *judge, strict);
            report.n_hrr = rows.size();
            report.judge_id = judge->id();
        }
        if (!out_path.empty()) {
            const fs::path parent = fs::path(out_path).parent_path();
            if (!parent.empty()) fs::create_directories(parent);
            save_verdict_log(rows, (parent / "verdicts.jsonl").string());
        }
        report.rows = std::move(rows);
    }
    if (want.count("evalloss")) {
        if (heldout_path.empty()) throw usage_error("--heldout is required for evalloss");
        const auto heldout = load_jsonl(heldout_path);
        std::optional<Corpus> train_data;
        if (!train_path.empty()) train_data = load_jsonl(train_path);
        report.eval_loss =
            eval_loss(base, ad, heldout, vocab, 16, train_data ? &*train_data : nullptr, strict);
        report.n_eval = heldout.records.size();
    }
    if (want.count("acc")) {
        if (mc_path.empty()) throw usage_error("--mc is required for acc");
        const auto tasks = load_mc_tasks_json(mc_path);
        const auto mc = mc_accuracy(base, ad, tasks, vocab);
        report.accuracy = mc.accuracy;
        report.n_acc = mc.n;
        report.per_task_accuracy = mc.per_task;
    }

    const auto j = report.to_json();
    if (out_path.empty()) {
        std::cout << j.dump(2) << "\n";
    } else {
        const fs::path csv =
            fs::path(out_path).parent_path() / (fs::path(out_path).stem().string() + ".csv");
        save_report(report, out_path, csv.string());
        std::cout << j.dump(2) << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale safety-token-regularized fine-tuning toolkit"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    std::string pre_config, pre_out = "runs/base";
    uint64_t pre_seed = 1;
    int pre_epochs = 60, pre_batch = 16;
    double pre_lr = 3e-3;
    std::string pre_model_json;
    auto* pre = app.add_subcommand("pretrain", "align a desk base model on the toy world");
    pre->add_option("--config", pre_config, "world config JSON (defaults to the built-in world)");
    pre->add_option("--out", pre_out, "output directory");
    pre->add_option("--seed", pre_seed, "seed");
    pre->add_option("--epochs", pre_epochs, "pretraining epochs");
    pre->add_option("--lr", pre_lr, "learning rate");
    pre->add_option("--batch-size", pre_batch, "batch size");
    pre->add_option("--model", pre_model_json, "model overrides as JSON object");

    std::string mine_base, mine_out = "tokens.json";
    double mine_freq = 0.3;
    size_t mine_topk = 5;
    int mine_max_new = 24;
    bool mine_no_space = false, mine_first_piece = false;
    auto* mine = app.add_subcommand("mine-tokens", "mine safety tokens from rejection templates");
    mine->add_option("--base", mine_base, "pretrain output directory")->required();
    mine->add_option("--out", mine_out, "token set output path");
    mine->add_option("--min-doc-freq", mine_freq, "document frequency floor");
    mine->add_option("--top-k", mine_topk, "words to keep");
    mine->add_option("--max-new", mine_max_new, "generation budget per probe");
    mine->add_flag("--no-space-variants", mine_no_space, "skip leading-space piece variants");
    mine->add_flag("--first-piece-only", mine_first_piece,
                   "keep only the first piece of multi-piece words");

    TrainFlags tf;
    auto* train_cmd = app.add_subcommand("train", "fine-tune an adapter");
    tf.attach(train_cmd);

    TrainFlags sf;
    std::string seq_tasks;
    auto* seq_cmd = app.add_subcommand("train-seq", "sequential multi-task fine-tuning");
    sf.attach(seq_cmd, false);
    seq_cmd->add_option("--tasks", seq_tasks, "comma-separated task corpora (JSONL)")->required();

    std::string ev_base, ev_adapter, ev_metric = "all", ev_prompts, ev_heldout, ev_train, ev_mc,
        ev_out, ev_judge = "heuristic", ev_judge_host = "localhost", ev_judge_path = "/judge";
    int ev_judge_port = 8080, ev_max_new = 24;
    bool ev_strict = false;
    auto* ev = app.add_subcommand("eval", "compute safety/utility metrics");
    ev->add_option("--base", ev_base, "pretrain output directory")->required();
    ev->add_option("--adapter", ev_adapter, "adapter checkpoint directory");
    ev->add_option("--metric", ev_metric, "hrr|asr|evalloss|acc|all");
    ev->add_option("--prompts", ev_prompts, "probe prompts JSONL");
    ev->add_option("--heldout", ev_heldout, "held-out corpus JSONL");
    ev->add_option("--train-data", ev_train, "training corpus for overlap checking");
    ev->add_option("--mc", ev_mc, "multiple-choice tasks JSON");
    ev->add_option("--out", ev_out, "report JSON path");
    ev->add_option("--judge", ev_judge, "heuristic|remote");
    ev->add_option("--judge-host", ev_judge_host, "remote judge host");
    ev->add_option("--judge-port", ev_judge_port, "remote judge port");
    ev->add_option("--judge-path", ev_judge_path, "remote judge path");
    ev->add_option("--max-new", ev_max_new, "generation budget");
    ev->add_flag("--strict", ev_strict, "fail on partial judge coverage or data overlap");

    std::string sw_base, sw_data, sw_heldout, sw_probes, sw_tokens, sw_out = "sweep";
    std::string sw_lambdas = "0,0.1,1,2";
    TrainFlags swf;
    auto* sw = app.add_subcommand("sweep-lambda", "trade-off sweep over lambda");
    sw->add_option("--base", sw_base, "pretrain output directory")->required();
    sw->add_option("--data", sw_data, "training corpus")->required();
    sw->add_option("--heldout", sw_heldout, "held-out corpus for eval_loss")->required();
    sw->add_option("--probes", sw_probes, "probe prompts for ASR")->required();
    sw->add_option("--tokens", sw_tokens, "token set JSON")->required();
    sw->add_option("--lambdas", sw_lambdas, "comma-separated lambda grid");
    sw->add_option("--out", sw_out, "output directory");
    sw->add_option("--rank", swf.rank, "adapter rank");
    sw->add_option("--lr", swf.lr, "learning rate");
    sw->add_option("--epochs", swf.epochs, "epochs");
    sw->add_option("--batch-size", swf.batch_size, "batch size");
    sw->add_option("--seed", swf.seed, "seed");

    std::string be_base, be_data, be_tokens, be_out;
    int be_warmup = 3, be_iters = 20;
    TrainFlags bef;
    auto* be = app.add_subcommand("bench", "per-iteration wall-time of str vs plain adapter");
    be->add_option("--base", be_base, "pretrain output directory")->required();
    be->add_option("--data", be_data, "training corpus")->required();
    be->add_option("--tokens", be_tokens, "token set JSON")->required();
    be->add_option("--out", be_out, "bench JSON output");
    be->add_option("--warmup", be_warmup, "warmup iterations");
    be->add_option("--iters", be_iters, "measured iterations");
    be->add_option("--rank", bef.rank, "adapter rank");
    be->add_option("--lambda", bef.lambda, "lambda for the str variant");
    be->add_option("--batch-size", bef.batch_size, "batch size");

    std::string rp_recipe, rp_out = "bundle";
    auto* rp = app.add_subcommand("report", "run a recipe pipeline and emit report bundles");
    rp->add_option("--recipe", rp_recipe,
                   "recipe JSON path or built-in name (purebad-desk, lambda-sweep, stability, "
                   "safe-vs-random)")
        ->required();
    rp->add_option("--out", rp_out, "bundle output directory");

    std::vector<std::string> hash_files;
    auto* ha = app.add_subcommand("hash", "print content hashes of corpora or files");
    ha->add_option("files", hash_files, "files to hash")->required();

    try {
        app.parse(argc, argv);

        if (pre->parsed()) {
            json overrides;
            if (!pre_model_json.empty()) overrides = json::parse(pre_model_json);
            return cmd_pretrain(pre_config, pre_out, pre_seed, pre_epochs, pre_lr, pre_batch,
                                overrides);
        }
        if (mine->parsed())
            return cmd_mine(mine_base, mine_out, mine_freq, mine_topk, mine_max_new,
                            !mine_no_space, mine_first_piece);
        if (train_cmd->parsed()) {
            const auto world = load_world(tf.base_dir);
            const auto vocab = world.vocabulary();
            const auto base = load_base(tf.base_dir);
            const auto data = load_jsonl(tf.data_path);
            const auto tokens = resolve_tokens(tf.tokens_spec, vocab);
            std::optional<Corpus> eval_data;
            if (!tf.eval_data.empty()) eval_data = load_jsonl(tf.eval_data);
            const auto state = train(base, tf.lora(), tf.config(), data, vocab,
                                     tokens ? &*tokens : nullptr, tf.out_dir,
                                     eval_data ? &*eval_data : nullptr);
            std::cout << "trained " << state.step << " steps, final total loss "
                      << state.last.total << ", adapter at " << tf.out_dir << "/adapter\n";
            return 0;
        }
        if (seq_cmd->parsed()) {
            const auto world = load_world(sf.base_dir);
            const auto vocab = world.vocabulary();
            const auto base = load_base(sf.base_dir);
            const auto tokens = resolve_tokens(sf.tokens_spec, vocab);
            std::vector<Corpus> tasks;
            std::stringstream ss(seq_tasks);
            std::string item;
            while (std::getline(ss, item, ','))
                if (!item.empty()) tasks.push_back(load_jsonl(item));
            const auto states = train_sequential(base, sf.lora(), sf.config(), tasks, vocab,
                                                 tokens ? &*tokens : nullptr);
            fs::create_directories(sf.out_dir);
            for (size_t i = 0; i < states.size(); ++i)
                save_train_checkpoint(
                    (fs::path(sf.out_dir) / ("task" + std::to_string(i)) / "adapter").string(),
                    states[i], base.checksum());
            std::cout << "trained " << states.size() << " tasks sequentially into " << sf.out_dir
                      << "\n";
            return 0;
        }
        if (ev->parsed())
            return cmd_eval(ev_base, ev_adapter, ev_metric, ev_prompts, ev_heldout, ev_train,
                            ev_mc, ev_out, ev_judge, ev_judge_host, ev_judge_port, ev_judge_path,
                            ev_max_new, ev_strict);
        if (sw->parsed()) {
            fs::create_directories(sw_out);
            const auto world = load_world(sw_base);
            const auto vocab = world.vocabulary();
            const auto base = load_base(sw_base);
            const auto data = load_jsonl(sw_data);
            const auto heldout = load_jsonl(sw_heldout);
            const auto probes = load_prompts_jsonl(sw_probes);
            auto tokens = SafetyTokenSet::from_json(read_file(sw_tokens));
            tokens.validate(vocab);

            std::vector<RunRecord> runs;
            std::stringstream ss(sw_lambdas);
            std::string item;
            while (std::getline(ss, item, ',')) {
                if (item.empty()) continue;
                const double lambda = std::stod(item);
                TrainConfig cfg = swf.config();
                cfg.lambda = lambda;
                cfg.method = lambda == 0.0 ? "lora" : "str";
                const std::string run_id = "lambda_" + item;
                const auto state =
                    train(base, swf.lora(), cfg, data, vocab, lambda == 0.0 ? nullptr : &tokens,
                          (fs::path(sw_out) / run_id).string());
                GenSettings settings;
                auto rows = generate_eval_rows(base, &state.adapter, probes, vocab, settings,
                                               RefusalKeywordList::defaults());
                RunRecord rec;
                rec.run_id = run_id;
                rec.method = cfg.method;
                rec.provenance = lambda == 0.0 ? "none" : tokens.provenance;
                rec.lambda = lambda;
                rec.asr = attack_success_rate(rows);
                rec.eval_loss =
                    eval_loss(base, &state.adapter, heldout, vocab, cfg.batch_size, &data, true);
                runs.push_back(rec);
                std::cout << run_id << ": asr " << *rec.asr << ", eval_loss " << *rec.eval_loss
                          << "\n";
            }
            write_file((fs::path(sw_out) / "tradeoff.csv").string(), emit_tradeoff_csv(runs));
            std::cout << "tradeoff table at " << sw_out << "/tradeoff.csv\n";
            return 0;
        }
        if (be->parsed()) {
            const auto world = load_world(be_base);
            const auto vocab = world.vocabulary();
            const auto base = load_base(be_base);
            const auto data = load_jsonl(be_data);
            auto tokens = SafetyTokenSet::from_json(read_file(be_tokens));
            tokens.validate(vocab);
            TrainConfig cfg = bef.config();
            if (cfg.lambda <= 0.0) cfg.lambda = 2.0;
            const auto result =
                bench_iteration(base, bef.lora(), cfg, data, vocab, tokens, be_warmup, be_iters);
            json j{{"str_mean_ms", result.str_mean_ms},
                   {"str_stdev_ms", result.str_stdev_ms},
                   {"plain_mean_ms", result.plain_mean_ms},
                   {"plain_stdev_ms", result.plain_stdev_ms},
                   {"ratio", result.ratio},
                   {"iters", result.iters}};
            std::cout << j.dump(2) << "\n";
            if (!be_out.empty()) write_file(be_out, j.dump(2) + "\n");
            return 0;
        }
        if (rp->parsed()) {
            const auto bundle = run_pipeline_file(rp_recipe, rp_out);
            std::cout << bundle.dump(2) << "\n";
            return bundle["status"] == "complete" ? 0 : 3;
        }
        if (ha->parsed()) {
            for (const auto& f : hash_files) std::cout << hash_file_hex(f) << "  " << f << "\n";
            return 0;
        }
        return 0;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const usage_error& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const data_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const numeric_error& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
