#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "forge/budget.hpp"
#include "forge/corpus.hpp"
#include "forge/prompts.hpp"

namespace forge::pipeline {

struct input_spec {
    std::string path;
    std::string format; // qa_jsonl | trees_json | records_jsonl
    std::string source; // provenance label; defaults to the path
};

struct stage_config {
    std::string name;      // from the closed stage vocabulary
    nlohmann::json params; // stage-specific parameters (object, may be empty)
};

struct pipeline_config {
    std::vector<input_spec> inputs;
    std::optional<std::vector<double>> mix_weights; // absent = plain concat
    std::uint64_t seed = 0;
    std::vector<stage_config> stages;
    std::string output_path;
    std::string output_format = "records_jsonl"; // records_jsonl | qa_jsonl | text_jsonl
    int workers = 1;

    prompts::prompt_scheme scheme;    // "prompt" config object
    budget::budget_config budget_cfg; // "budget" config object
    std::string tokenizer = "default";

    std::string scoring_endpoint; // empty = heuristic scorer only
    int scoring_timeout_ms = 5000;
    int scoring_max_in_flight = 4;
    std::string scoring_on_error = "abort"; // abort | keep_unscored | drop
};

// Shape-level parsing with defaults; throws error("bad_config") when the
// document cannot be interpreted at all. Semantic checks live in
// validate_config so a caller can collect every problem at once.
pipeline_config config_from_json(const nlohmann::json& j);

struct config_problem {
    std::string location; // config path, e.g. "stages[2].name"
    std::string code;     // unknown_stage | weight_arity | missing_input | ...
    std::string detail;
};

// Empty iff the config is runnable. Never throws.
std::vector<config_problem> validate_config(const pipeline_config& cfg);

struct stage_report {
    std::string name;
    std::size_t records_in = 0;
    std::size_t records_kept = 0;
    std::map<std::string, std::size_t> drops; // reason -> count
    std::map<std::string, std::size_t> notes; // non-drop accounting (e.g. unscored)
};

struct pipeline_report {
    std::uint64_t seed = 0;
    int workers = 1;
    std::vector<stage_report> stages;
    double wall_seconds = 0.0;
};

nlohmann::json report_to_json(const pipeline_report& r);

// Reads one input stream into a dataset. Accounting lands in the report:
// records_in counts candidate records (non-blank lines, or linearized
// paths plus rejected trees), drops carry skip reasons.
corpus::dataset ingest_input(const input_spec& in, std::istream& stream, stage_report& report);

// Applies one configured stage to a dataset. Record-level work fans out
// over `workers` threads; results are collected in input-index order, so
// the outcome is identical for any worker count. Used by run_pipeline and
// directly composable (stage associativity) in tests.
corpus::dataset apply_stage(const corpus::dataset& d, const stage_config& stage,
                            const pipeline_config& cfg, stage_report& report);

// Full flow: ingest everything, mix or concat, run the stages in order,
// emit the output file, and write the report JSON to output_path +
// ".report.json". Throws forge::error on infrastructure failures;
// data-quality drops never abort.
pipeline_report run_pipeline(const pipeline_config& cfg);

// Serializes a dataset in one of the output formats (records_jsonl keeps
// full fidelity; qa_jsonl requires qa records; text_jsonl requires the
// format stage to have run).
void write_dataset(std::ostream& out, const corpus::dataset& d, const std::string& format);

} // namespace forge::pipeline
