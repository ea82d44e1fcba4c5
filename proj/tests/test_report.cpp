#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "strkit/report.hpp"

using namespace strkit;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int c = 0;
        path = fs::temp_directory_path() /
               ("strkit_report_" + std::to_string(::getpid()) + "_" + std::to_string(c++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::vector<RunRecord> stability_runs(size_t seeds) {
    std::vector<RunRecord> runs;
    for (size_t s = 0; s < seeds; ++s) {
        for (const std::string method : {"lora", "str"}) {
            RunRecord r;
            r.run_id = method + std::to_string(s);
            r.method = method;
            r.provenance = method == "str" ? "mined" : "none";
            r.seed = s;
            r.per_task_accuracy = {{"after", 0.5 + 0.01 * double(s)},
                                   {"before", 0.6 - 0.02 * double(s)},
                                   {"vowel", 0.7}};
            runs.push_back(r);
        }
    }
    return runs;
}

} // namespace

TEST_CASE("quartiles follow sort-based order statistics") {
    // oracle by hand: values {1,2,3,4}, linear interpolation
    const auto q = quartiles({4.0, 1.0, 3.0, 2.0});
    CHECK(q.q1 == doctest::Approx(1.75));
    CHECK(q.median == doctest::Approx(2.5));
    CHECK(q.q3 == doctest::Approx(3.25));

    const auto single = quartiles({7.0});
    CHECK(single.q1 == 7.0);
    CHECK(single.median == 7.0);
    CHECK(single.q3 == 7.0);

    const auto odd = quartiles({5.0, 1.0, 3.0});
    CHECK(odd.median == 3.0);
    CHECK(odd.q1 == doctest::Approx(2.0));
    CHECK(odd.q3 == doctest::Approx(4.0));

    CHECK_THROWS_AS(quartiles({}), data_error);
}

TEST_CASE("stability csv carries runs and quartile summaries") {
    const auto runs = stability_runs(5);
    const auto csv = emit_stability_csv(runs);
    CHECK(csv.find("schema=stability.v1") == 0);

    std::istringstream in(csv);
    std::string line;
    size_t run_rows = 0, summary_rows = 0;
    while (std::getline(in, line)) {
        if (line.rfind("run,", 0) == 0) ++run_rows;
        if (line.rfind("summary,", 0) == 0) ++summary_rows;
    }
    CHECK(run_rows == 5 * 2 * 3); // seeds x methods x tasks
    CHECK(summary_rows == 2 * 3);

    CHECK_THROWS_WITH_AS(emit_stability_csv(stability_runs(2)), doctest::Contains("at least 3"),
                         data_error);
}

TEST_CASE("safe-vs-random csv requires provenance on every run") {
    std::vector<RunRecord> runs;
    for (const std::string prov : {"none", "random(seed=7)", "mined"}) {
        RunRecord r;
        r.run_id = prov;
        r.method = prov == "none" ? "lora" : "str";
        r.provenance = prov;
        r.lambda = prov == "none" ? 0.0 : 2.0;
        r.hrr = 0.5;
        r.asr = 0.6;
        runs.push_back(r);
    }
    const auto csv = emit_safe_vs_random_csv(runs);
    CHECK(csv.find("schema=safe_vs_random.v1") == 0);
    CHECK(csv.find("random(seed=7)") != std::string::npos);

    runs[1].provenance.clear();
    CHECK_THROWS_WITH_AS(emit_safe_vs_random_csv(runs), doctest::Contains("provenance"),
                         data_error);
}

TEST_CASE("tradeoff csv lists lambda rows") {
    std::vector<RunRecord> runs;
    for (double lambda : {0.0, 1.0, 2.0}) {
        RunRecord r;
        r.run_id = "l" + std::to_string(lambda);
        r.method = lambda == 0.0 ? "lora" : "str";
        r.provenance = lambda == 0.0 ? "none" : "mined";
        r.lambda = lambda;
        r.asr = 0.2 - 0.05 * lambda;
        r.eval_loss = 0.79 + 0.01 * lambda;
        runs.push_back(r);
    }
    const auto csv = emit_tradeoff_csv(runs);
    CHECK(csv.find("schema=tradeoff.v1") == 0);
    CHECK(csv.find("lambda,tokens,asr,eval_loss,run") != std::string::npos);
    std::istringstream in(csv);
    std::string line;
    size_t rows = 0;
    while (std::getline(in, line))
        if (!line.empty() && line.find("schema") == std::string::npos &&
            line.find("lambda,") != 0)
            ++rows;
    CHECK(rows == 3);
}

TEST_CASE("a tiny pipeline runs end to end, caches, and marks failures") {
    TempDir dir;
    nlohmann::json recipe = nlohmann::json::parse(R"({
      "name": "mini",
      "stages": [
        {"kind": "world", "name": "world", "params": {"seed": 1, "harmful_size": 8, "benign_size": 8, "mc_tasks": 2, "mc_items": 6}},
        {"kind": "pretrain", "name": "base", "params": {"world": "world", "lr": 0.003, "epochs": 2, "batch_size": 16, "seed": 1,
          "model": {"d_model": 16, "n_layers": 1, "n_heads": 2, "d_ff": 24}}},
        {"kind": "train", "name": "ft", "params": {"base": "base", "data": "world/harmful.jsonl", "tokens": "none",
          "method": "lora", "lambda": 0, "rank": 2, "lr": 0.01, "epochs": 1, "batch_size": 8, "seed": 7}},
        {"kind": "eval", "name": "ev", "params": {"base": "base", "adapter": "ft", "probes": "world/probes.jsonl",
          "metrics": ["hrr", "asr"], "max_new": 6}}
      ]
    })");

    const auto bundle = run_pipeline(recipe, (dir.path / "bundle").string());
    INFO(bundle.dump(2));
    CHECK(bundle["status"] == "complete");
    CHECK(fs::exists(dir.path / "bundle" / "world" / "world.json"));
    CHECK(fs::exists(dir.path / "bundle" / "base" / "base" / "arrays.bin"));
    CHECK(fs::exists(dir.path / "bundle" / "ft" / "adapter" / "manifest.json"));
    CHECK(fs::exists(dir.path / "bundle" / "ev" / "report.json"));
    CHECK(fs::exists(dir.path / "bundle" / "bundle.json"));
    for (const auto& stage : bundle["stages"]) CHECK(stage["status"] == "ok");

    // unchanged recipe -> every stage cached
    const auto again = run_pipeline(recipe, (dir.path / "bundle").string());
    for (const auto& stage : again["stages"]) CHECK(stage["status"] == "cached");

    // a failing stage marks the bundle partial and names the stage
    nlohmann::json broken = recipe;
    broken["stages"][2]["params"]["data"] = "world/missing.jsonl";
    broken["stages"][2]["name"] = "ft2";
    const auto partial = run_pipeline(broken, (dir.path / "broken").string());
    CHECK(partial["status"] == "partial");
    CHECK(partial["failed_stage"] == "ft2");
}

TEST_CASE("builtin recipes resolve and unknown names are usage errors") {
    for (const std::string name : {"purebad-desk", "lambda-sweep", "stability", "safe-vs-random"}) {
        const auto recipe = builtin_recipe(name);
        CHECK(recipe["name"] == name);
        CHECK(recipe["stages"].is_array());
    }
    CHECK_THROWS_AS(builtin_recipe("nope"), usage_error);
}

TEST_CASE("stability svg renders one box per method and task") {
    const auto runs = stability_runs(4);
    const auto svg = emit_stability_svg(runs);
    CHECK(svg.find("<svg") == 0);
    size_t rects = 0, pos = 0;
    while ((pos = svg.find("<rect", pos)) != std::string::npos) {
        ++rects;
        pos += 5;
    }
    CHECK(rects == 2 * 3); // methods x tasks
    CHECK(svg.find("</svg>") != std::string::npos);
}
