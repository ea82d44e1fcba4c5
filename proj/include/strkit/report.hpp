#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "strkit/corpus.hpp"

namespace strkit {

// Figure/table data emission plus the recipe-driven pipeline behind the
// `report` subcommand. Everything lands as CSV/JSON with a schema version
// in the header row; every number traces back to a stage manifest.

struct RunRecord {
    std::string run_id;
    std::string method;     // "lora" | "str"
    std::string provenance; // "none" | "mined" | "manual" | "random(seed=..)"
    uint64_t seed = 0;
    double lambda = 0.0;
    std::map<std::string, double> per_task_accuracy;
    std::optional<double> hrr, asr, eval_loss;
};

struct Quartiles {
    double q1 = 0.0, median = 0.0, q3 = 0.0;
};

// Linear-interpolation order statistics over a sorted copy.
Quartiles quartiles(std::vector<double> values);

// Per-method per-task accuracy rows plus quartile summary rows. Needs at
// least 3 runs per method.
std::string emit_stability_csv(const std::vector<RunRecord>& runs);

// Safety metrics grouped by token-set provenance {none, mined, random}.
// Every run must carry a provenance.
std::string emit_safe_vs_random_csv(const std::vector<RunRecord>& runs);

// Static box-plot rendering of the stability data (no dependencies; one box
// per method and task from the across-seed accuracy distribution).
std::string emit_stability_svg(const std::vector<RunRecord>& runs);

// Trade-off rows: one line per (lambda, token set) with ASR and eval_loss.
std::string emit_tradeoff_csv(const std::vector<RunRecord>& runs);

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

// Desk-scale model defaults used by the built-in recipes.
ModelConfig desk_model_config(int vocab_size, uint64_t seed);

// Built-in recipe lookup ("purebad-desk", "lambda-sweep", "stability",
// "safe-vs-random"); returns the recipe JSON.
nlohmann::json builtin_recipe(const std::string& name);

// Executes the recipe's stages in order into out_dir. Stages whose inputs
// and config are unchanged (by stage hash) are skipped. On a stage failure
// the bundle manifest is marked partial and names the failing stage.
// Returns the bundle manifest.
nlohmann::json run_pipeline(const nlohmann::json& recipe, const std::string& out_dir);
nlohmann::json run_pipeline_file(const std::string& recipe_path_or_name,
                                 const std::string& out_dir);

} // namespace strkit
