#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include "forge/corpus.hpp"
#include "forge/error.hpp"
#include "forge/lora.hpp"
#include "forge/pipeline.hpp"
#include "forge/prompts.hpp"

using nlohmann::json;
namespace corpus = forge::corpus;

namespace {

// Exit contract: 0 success, 2 usage/config error, 3 domain error, 1 internal.
int exit_code_for(const forge::error& e) {
    static const std::set<std::string> usage_codes = {
        "bad_config",     "invalid_config", "unknown_format",  "missing_input",
        "unreadable_input", "unwritable_output", "missing_output", "bad_params",
        "missing_wordlist", "bad_arch_spec", "bad_lora_config", "unknown_tokenizer",
        "bad_scheme",     "bad_model_label", "unsupported_bits", "bad_workers",
        "bad_policy",     "missing_endpoint", "bad_budget",     "bad_seed",
    };
    return usage_codes.count(e.code()) ? 2 : 3;
}

// "-" selects the standard input stream
std::istream& open_input(const std::string& path, std::ifstream& file) {
    if (path == "-") return std::cin;
    file.open(path, std::ios::binary);
    if (!file) throw forge::error("unreadable_input", "cannot open input: " + path);
    return file;
}

// "-" or empty selects the standard output stream
std::ostream& open_output(const std::string& path, std::ofstream& file) {
    if (path.empty() || path == "-") return std::cout;
    file.open(path, std::ios::binary);
    if (!file) throw forge::error("unwritable_output", "cannot open output: " + path);
    return file;
}

json parse_json_stream(std::istream& in, const std::string& what) {
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw forge::error("bad_config", "cannot parse " + what + " as JSON");
    return j;
}

std::uint64_t parse_seed(const std::string& text, const std::string& where) {
    try {
        std::size_t used = 0;
        const std::uint64_t v = std::stoull(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw forge::error("bad_seed", "cannot parse seed from " + where + ": " + text);
    }
}

std::optional<std::uint64_t> env_seed() {
    const char* env = std::getenv("FORGE_SEED");
    if (!env || !*env) return std::nullopt;
    return parse_seed(env, "FORGE_SEED");
}

void print_stage_summary(const forge::pipeline::stage_report& rep) {
    std::ostringstream msg;
    msg << rep.name << ": kept " << rep.records_kept << " of " << rep.records_in;
    for (const auto& [reason, count] : rep.drops) msg << ", " << reason << "=" << count;
    std::cerr << msg.str() << "\n";
}

corpus::dataset read_records(const std::string& path, forge::pipeline::stage_report& rep) {
    std::ifstream file;
    std::istream& in = open_input(path, file);
    forge::pipeline::input_spec spec{path, "records_jsonl", path == "-" ? "stdin" : path};
    auto d = forge::pipeline::ingest_input(spec, in, rep);
    // surface rejected lines so an empty result is never silent
    if (rep.records_kept != rep.records_in) {
        rep.name = "read " + spec.source;
        print_stage_summary(rep);
    }
    return d;
}

// records pass through one pipeline stage outside a full pipeline run
corpus::dataset run_single_stage(const corpus::dataset& d,
                                 const forge::pipeline::stage_config& stage,
                                 const forge::pipeline::pipeline_config& cfg) {
    forge::pipeline::stage_report rep;
    auto out = forge::pipeline::apply_stage(d, stage, cfg, rep);
    print_stage_summary(rep);
    return out;
}

void add_prompt_flags(CLI::App* cmd, forge::prompts::prompt_scheme& scheme) {
    cmd->add_option("--human-prefix", scheme.human_prefix, "Marker before human turns");
    cmd->add_option("--bot-prefix", scheme.bot_prefix, "Marker before bot turns");
    cmd->add_option("--turn-separator", scheme.turn_separator, "Text joining turns");
    cmd->add_option("--terminator", scheme.terminator, "Trailing marker ending the text");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"forge: corpus preparation and adapter planning toolkit"};
    app.require_subcommand(1);

    // ---- ingest ----
    std::string ingest_path, ingest_format = "qa_jsonl", ingest_source, ingest_out, ingest_report_path;
    auto* ingest_cmd = app.add_subcommand("ingest", "Read raw data into the record stream format");
    ingest_cmd->add_option("input", ingest_path, "Input file (- for stdin)")->required();
    ingest_cmd->add_option("--format", ingest_format, "qa_jsonl | trees_json | records_jsonl");
    ingest_cmd->add_option("--source", ingest_source, "Provenance label (default: input path)");
    ingest_cmd->add_option("-o,--output", ingest_out, "Output file (default stdout)");
    ingest_cmd->add_option("--report", ingest_report_path, "Write the line-level skip report here");

    // ---- clean ----
    std::string clean_in, clean_out, clean_casing = "preserve", clean_stopwords_file;
    bool clean_special = false, clean_punct = false, clean_stop = false, clean_collapse = false;
    auto* clean_cmd = app.add_subcommand("clean", "Normalize record text");
    clean_cmd->add_option("input", clean_in, "Record stream (- for stdin)")->required();
    clean_cmd->add_option("-o,--output", clean_out, "Output file (default stdout)");
    clean_cmd->add_option("--casing", clean_casing, "preserve | lower | upper");
    clean_cmd->add_flag("--remove-special-chars", clean_special, "Drop disallowed characters");
    clean_cmd->add_flag("--strip-punctuation", clean_punct, "Remove ASCII punctuation");
    clean_cmd->add_flag("--remove-stopwords", clean_stop, "Remove stopword tokens");
    clean_cmd->add_option("--stopwords-file", clean_stopwords_file, "Stopword list, one per line");
    clean_cmd->add_flag("--collapse-whitespace", clean_collapse, "Collapse runs, trim ends");

    // ---- format ----
    std::string format_in, format_out, format_to = "text_jsonl";
    forge::prompts::prompt_scheme format_scheme;
    auto* format_cmd = app.add_subcommand("format", "Render records as marked-up training text");
    format_cmd->add_option("input", format_in, "Record stream (- for stdin)")->required();
    format_cmd->add_option("-o,--output", format_out, "Output file (default stdout)");
    format_cmd->add_option("--to", format_to, "text_jsonl | records_jsonl");
    add_prompt_flags(format_cmd, format_scheme);

    // ---- score ----
    std::string score_in, score_out, score_scorer = "heuristic", score_endpoint,
                score_on_error = "abort";
    int score_timeout = 5000, score_in_flight = 4;
    forge::prompts::prompt_scheme score_scheme;
    auto* score_cmd = app.add_subcommand("score", "Grade records with a quality scorer");
    score_cmd->add_option("input", score_in, "Record stream (- for stdin)")->required();
    score_cmd->add_option("-o,--output", score_out, "Output file (default stdout)");
    score_cmd->add_option("--scorer", score_scorer, "heuristic | remote");
    score_cmd->add_option("--endpoint", score_endpoint, "Remote scorer URL");
    score_cmd->add_option("--timeout-ms", score_timeout, "Remote request timeout");
    score_cmd->add_option("--max-in-flight", score_in_flight, "Remote request concurrency cap");
    score_cmd->add_option("--on-error", score_on_error, "abort | keep_unscored | drop");
    add_prompt_flags(score_cmd, score_scheme);

    // ---- mix ----
    std::vector<std::string> mix_inputs;
    std::vector<double> mix_weights;
    std::string mix_out, mix_seed_text;
    auto* mix_cmd = app.add_subcommand("mix", "Interleave record streams by weight");
    mix_cmd->add_option("--input,-i", mix_inputs, "Record stream (repeatable)")->required();
    mix_cmd->add_option("--weights,-w", mix_weights, "One weight per input");
    mix_cmd->add_option("--seed", mix_seed_text, "Mixing seed (default FORGE_SEED, then 0)");
    mix_cmd->add_option("-o,--output", mix_out, "Output file (default stdout)");

    // ---- stats ----
    std::string stats_in;
    auto* stats_cmd = app.add_subcommand("stats", "Summarize a record stream");
    stats_cmd->add_option("input", stats_in, "Record stream (- for stdin)")->required();

    // ---- plan-lora ----
    std::string plan_arch_path, plan_lora_path;
    auto* plan_lora_cmd = app.add_subcommand("plan-lora", "Adapter parameter arithmetic");
    plan_lora_cmd->add_option("arch", plan_arch_path, "Architecture spec JSON")->required();
    plan_lora_cmd->add_option("adapter", plan_lora_path, "Adapter config JSON")->required();

    // ---- plan-memory ----
    std::string plan_model;
    int plan_bits = 16;
    std::int64_t plan_params = -1;
    auto* plan_mem_cmd = app.add_subcommand("plan-memory", "GPU sizing and weight memory");
    plan_mem_cmd->add_option("model", plan_model, "7B | 12B | 20B | 30B | 40B | 65B")->required();
    plan_mem_cmd->add_option("bits", plan_bits, "4 | 8 | 16")->required();
    plan_mem_cmd->add_option("--params", plan_params, "Also print weight bytes for this count");

    // ---- validate ----
    std::string validate_path;
    auto* validate_cmd = app.add_subcommand("validate", "Check a pipeline config");
    validate_cmd->add_option("config", validate_path, "Pipeline config JSON (- for stdin)")
        ->required();

    // ---- run ----
    std::string run_config_path, run_output, run_seed_text;
    int run_workers = 0;
    auto* run_cmd = app.add_subcommand("run", "Execute a pipeline config");
    run_cmd->add_option("config", run_config_path, "Pipeline config JSON (- for stdin)")->required();
    run_cmd->add_option("--workers", run_workers, "Override worker count");
    run_cmd->add_option("--seed", run_seed_text, "Override seed");
    run_cmd->add_option("--output", run_output, "Override output path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e); // --help exits 0
    } catch (const CLI::ParseError& e) {
        app.exit(e); // prints the usage message
        return 2;
    }

    try {
        if (*ingest_cmd) {
            std::ifstream in_file;
            std::istream& in = open_input(ingest_path, in_file);
            const std::string source =
                !ingest_source.empty() ? ingest_source
                                       : (ingest_path == "-" ? "stdin" : ingest_path);

            corpus::dataset d;
            if (ingest_format == "qa_jsonl" && !ingest_report_path.empty()) {
                // line-level report requested: use the reporting ingest directly
                corpus::ingest_report rep;
                d = corpus::ingest_qa(in, source, rep);
                std::ofstream rf(ingest_report_path, std::ios::binary);
                if (!rf)
                    throw forge::error("unwritable_output",
                                       "cannot open report: " + ingest_report_path);
                corpus::write_ingest_report(rf, rep);
                std::cerr << "ingest: kept " << rep.kept << " of " << rep.lines_seen << "\n";
            } else {
                forge::pipeline::stage_report rep;
                rep.name = "ingest";
                d = forge::pipeline::ingest_input({ingest_path, ingest_format, source}, in, rep);
                print_stage_summary(rep);
            }
            std::ofstream out_file;
            forge::pipeline::write_dataset(open_output(ingest_out, out_file), d, "records_jsonl");
            return 0;
        }

        if (*clean_cmd) {
            forge::pipeline::stage_report read_rep;
            read_rep.name = "read";
            auto d = read_records(clean_in, read_rep);

            json params = json::object();
            params["casing"] = clean_casing;
            if (clean_special) params["remove_special_chars"] = true;
            if (clean_punct) params["strip_punctuation"] = true;
            if (clean_stop) params["remove_stopwords"] = true;
            if (!clean_stopwords_file.empty()) params["stopwords_file"] = clean_stopwords_file;
            if (clean_collapse) params["collapse_whitespace"] = true;

            auto out = run_single_stage(d, {"clean", params}, forge::pipeline::pipeline_config{});
            std::ofstream out_file;
            forge::pipeline::write_dataset(open_output(clean_out, out_file), out, "records_jsonl");
            return 0;
        }

        if (*format_cmd) {
            forge::pipeline::stage_report read_rep;
            auto d = read_records(format_in, read_rep);
            forge::pipeline::pipeline_config cfg;
            cfg.scheme = format_scheme;
            auto out = run_single_stage(d, {"format", json::object()}, cfg);
            std::ofstream out_file;
            forge::pipeline::write_dataset(open_output(format_out, out_file), out, format_to);
            return 0;
        }

        if (*score_cmd) {
            forge::pipeline::stage_report read_rep;
            auto d = read_records(score_in, read_rep);
            forge::pipeline::pipeline_config cfg;
            cfg.scheme = score_scheme;
            cfg.scoring_endpoint = score_endpoint;
            cfg.scoring_timeout_ms = score_timeout;
            cfg.scoring_max_in_flight = score_in_flight;
            cfg.scoring_on_error = score_on_error;
            if (score_scorer == "remote" && score_endpoint.empty())
                throw forge::error("missing_endpoint", "remote scorer needs --endpoint");
            auto out =
                run_single_stage(d, {"score", json{{"scorer", score_scorer}}}, cfg);
            std::ofstream out_file;
            forge::pipeline::write_dataset(open_output(score_out, out_file), out, "records_jsonl");
            return 0;
        }

        if (*mix_cmd) {
            std::uint64_t seed = 0;
            if (!mix_seed_text.empty())
                seed = parse_seed(mix_seed_text, "--seed");
            else if (auto env = env_seed())
                seed = *env;

            std::vector<corpus::dataset> parts;
            for (const auto& path : mix_inputs) {
                forge::pipeline::stage_report rep;
                parts.push_back(read_records(path, rep));
            }
            std::vector<double> weights = mix_weights;
            if (weights.empty()) weights.assign(parts.size(), 1.0);

            auto mixed = corpus::mix(parts, weights, seed);
            std::ofstream out_file;
            forge::pipeline::write_dataset(open_output(mix_out, out_file), mixed, "records_jsonl");
            return 0;
        }

        if (*stats_cmd) {
            forge::pipeline::stage_report rep;
            auto d = read_records(stats_in, rep);
            std::cout << corpus::summary_to_json(corpus::dataset_stats(d)).dump(2) << "\n";
            return 0;
        }

        if (*plan_lora_cmd) {
            std::ifstream arch_file, lora_file;
            const json arch_json =
                parse_json_stream(open_input(plan_arch_path, arch_file), plan_arch_path);
            const json lora_json =
                parse_json_stream(open_input(plan_lora_path, lora_file), plan_lora_path);
            const auto arch = forge::lora::arch_from_json(arch_json);
            const auto cfg = forge::lora::lora_config_from_json(lora_json);

            const std::int64_t trainable = forge::lora::count_lora_params(arch, cfg);
            const std::int64_t all = forge::lora::count_all_params(arch, cfg);
            const double percent = 100.0 * static_cast<double>(trainable) / static_cast<double>(all);
            std::printf("trainable params: %lld || all params: %lld || trainable%%: %.4f\n",
                        static_cast<long long>(trainable), static_cast<long long>(all), percent);
            return 0;
        }

        if (*plan_mem_cmd) {
            const auto label = forge::lora::parse_model_label(plan_model);
            const int gb = forge::lora::recommended_gpu(label, plan_bits);
            std::printf("%s @ %d-bit → %dGB\n", forge::lora::model_label_name(label).c_str(),
                        plan_bits, gb);
            if (plan_params >= 0) {
                const auto bytes = forge::lora::weight_memory_bytes(plan_params, plan_bits);
                std::printf("weights: %lld bytes\n", static_cast<long long>(bytes));
            }
            return 0;
        }

        if (*validate_cmd) {
            std::ifstream cfg_file;
            const json cfg_json =
                parse_json_stream(open_input(validate_path, cfg_file), validate_path);
            const auto cfg = forge::pipeline::config_from_json(cfg_json);
            const auto problems = forge::pipeline::validate_config(cfg);
            for (const auto& p : problems)
                std::cerr << p.location << ": " << p.code << " (" << p.detail << ")\n";
            return problems.empty() ? 0 : 2;
        }

        if (*run_cmd) {
            std::ifstream cfg_file;
            const json cfg_json =
                parse_json_stream(open_input(run_config_path, cfg_file), run_config_path);
            auto cfg = forge::pipeline::config_from_json(cfg_json);

            // seed precedence: flag > config > FORGE_SEED > 0
            if (!run_seed_text.empty())
                cfg.seed = parse_seed(run_seed_text, "--seed");
            else if (!cfg_json.contains("seed"))
                if (auto env = env_seed()) cfg.seed = *env;
            if (run_workers > 0) cfg.workers = run_workers;
            if (!run_output.empty()) cfg.output_path = run_output;

            const auto problems = forge::pipeline::validate_config(cfg);
            if (!problems.empty()) {
                for (const auto& p : problems)
                    std::cerr << p.location << ": " << p.code << " (" << p.detail << ")\n";
                return 2;
            }

            auto report = forge::pipeline::run_pipeline(cfg);
            std::cout << cfg.output_path + ".report.json" << "\n";
            return 0;
        }
    } catch (const forge::error& e) {
        std::cerr << "error: " << e.code() << ": " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }

    return 0;
}
