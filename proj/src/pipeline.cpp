#include "forge/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "forge/error.hpp"
#include "forge/filters.hpp"
#include "forge/scoring.hpp"
#include "forge/tokenize.hpp"

namespace forge::pipeline {

namespace {

using nlohmann::json;

const std::set<std::string>& stage_vocabulary() {
    static const std::set<std::string> names = {
        "clean",           "quality",        "profanity",       "similarity",
        "compression_ratio", "truncate_by_length", "score",      "filter_by_score",
        "format",          "truncate_by_score", "fit_to_context", "pad_sequence",
    };
    return names;
}

// ---- parallel execution ----

// Runs fn(0..n-1) across up to `workers` threads. Work items land in
// caller-owned slots indexed by i, so the result is independent of worker
// count and scheduling. The first exception aborts the pool and rethrows.
template <typename F>
void parallel_for(std::size_t n, int workers, F&& fn) {
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), n);
    if (k <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mu;

    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mu);
                if (!first_error) first_error = std::current_exception();
                next.store(n); // drain remaining work
                return;
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(k);
    for (std::size_t t = 0; t < k; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

// ---- record field access ----

std::vector<std::string*> text_fields(corpus::record& r) {
    std::vector<std::string*> fields;
    if (auto* qa = std::get_if<corpus::qa_pair>(&r.payload)) {
        fields = {&qa->input, &qa->output};
    } else if (auto* path = std::get_if<corpus::conversation_path>(&r.payload)) {
        for (auto& m : path->messages) fields.push_back(&m.text);
    } else if (auto* ds = std::get_if<corpus::doc_summary_pair>(&r.payload)) {
        fields = {&ds->document, &ds->summary};
    }
    return fields;
}

std::vector<const std::string*> text_fields(const corpus::record& r) {
    std::vector<const std::string*> fields;
    for (auto* f : text_fields(const_cast<corpus::record&>(r))) fields.push_back(f);
    return fields;
}

// ---- stage parameter parsing (shared by validate_config and apply_stage) ----

const json& params_or_empty(const stage_config& stage) {
    static const json empty = json::object();
    return stage.params.is_null() ? empty : stage.params;
}

void require_object(const json& p) {
    if (!p.is_object()) throw error("bad_params", "stage params must be a JSON object");
}

double require_number(const json& p, const char* key) {
    if (!p.contains(key) || !p[key].is_number())
        throw error("bad_params", std::string("missing or non-numeric param: ") + key);
    return p[key].get<double>();
}

double number_or(const json& p, const char* key, double def) {
    if (!p.contains(key)) return def;
    if (!p[key].is_number())
        throw error("bad_params", std::string("non-numeric param: ") + key);
    return p[key].get<double>();
}

std::size_t require_count(const json& p, const char* key) {
    if (!p.contains(key) || !p[key].is_number_integer() || p[key].get<std::int64_t>() < 0)
        throw error("bad_params", std::string("missing or non-integer param: ") + key);
    return p[key].get<std::size_t>();
}

bool bool_or(const json& p, const char* key, bool def) {
    if (!p.contains(key)) return def;
    if (!p[key].is_boolean())
        throw error("bad_params", std::string("non-boolean param: ") + key);
    return p[key].get<bool>();
}

filters::clean_config parse_clean_params(const json& p) {
    require_object(p);
    filters::clean_config cfg;
    if (p.contains("casing")) {
        const auto c = p["casing"].get<std::string>();
        if (c == "preserve")
            cfg.casing = filters::case_mode::preserve;
        else if (c == "lower")
            cfg.casing = filters::case_mode::lower;
        else if (c == "upper")
            cfg.casing = filters::case_mode::upper;
        else
            throw error("bad_params", "unknown casing: " + c);
    }
    cfg.remove_special_chars = bool_or(p, "remove_special_chars", false);
    if (p.contains("allowed_categories")) {
        if (!p["allowed_categories"].is_array())
            throw error("bad_params", "allowed_categories must be an array");
        cfg.allowed_categories.clear();
        for (const auto& c : p["allowed_categories"]) {
            const auto name = c.get<std::string>();
            if (name == "letter")
                cfg.allowed_categories.insert(filters::char_category::letter);
            else if (name == "digit")
                cfg.allowed_categories.insert(filters::char_category::digit);
            else if (name == "whitespace")
                cfg.allowed_categories.insert(filters::char_category::whitespace);
            else if (name == "punctuation")
                cfg.allowed_categories.insert(filters::char_category::punctuation);
            else if (name == "non_ascii")
                cfg.allowed_categories.insert(filters::char_category::non_ascii);
            else
                throw error("bad_params", "unknown character category: " + name);
        }
    }
    cfg.strip_punctuation = bool_or(p, "strip_punctuation", false);
    cfg.remove_stopwords = bool_or(p, "remove_stopwords", false);
    if (p.contains("stopwords")) {
        if (!p["stopwords"].is_array()) throw error("bad_params", "stopwords must be an array");
        for (const auto& w : p["stopwords"]) {
            std::string s = w.get<std::string>();
            std::transform(s.begin(), s.end(), s.begin(),
                           [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
            cfg.stopword_list.insert(std::move(s));
        }
    }
    if (p.contains("stopwords_file")) {
        std::ifstream f(p["stopwords_file"].get<std::string>());
        if (!f)
            throw error("missing_wordlist",
                        "cannot open stopwords_file: " + p["stopwords_file"].get<std::string>());
        auto words = filters::load_wordlist(f);
        cfg.stopword_list.insert(words.begin(), words.end());
    }
    cfg.collapse_whitespace = bool_or(p, "collapse_whitespace", false);
    return cfg;
}

filters::quality_config parse_quality_params(const json& p) {
    require_object(p);
    filters::quality_config cfg;
    if (p.contains("min_chars")) cfg.min_chars = require_count(p, "min_chars");
    if (p.contains("max_chars")) cfg.max_chars = require_count(p, "max_chars");
    if (p.contains("max_whitespace_run")) cfg.max_whitespace_run = require_count(p, "max_whitespace_run");
    cfg.max_nonprintable_ratio = number_or(p, "max_nonprintable_ratio", cfg.max_nonprintable_ratio);
    cfg.require_terminal_punctuation =
        bool_or(p, "require_terminal_punctuation", cfg.require_terminal_punctuation);
    if (cfg.min_chars > cfg.max_chars)
        throw error("bad_params", "min_chars exceeds max_chars");
    return cfg;
}

std::set<std::string> parse_profanity_params(const json& p) {
    require_object(p);
    std::set<std::string> words;
    if (p.contains("words")) {
        if (!p["words"].is_array()) throw error("bad_params", "words must be an array");
        for (const auto& w : p["words"]) {
            std::string s = w.get<std::string>();
            std::transform(s.begin(), s.end(), s.begin(),
                           [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
            words.insert(std::move(s));
        }
    }
    if (p.contains("wordlist_file")) {
        std::ifstream f(p["wordlist_file"].get<std::string>());
        if (!f)
            throw error("missing_wordlist",
                        "cannot open wordlist_file: " + p["wordlist_file"].get<std::string>());
        auto loaded = filters::load_wordlist(f);
        words.insert(loaded.begin(), loaded.end());
    }
    if (words.empty())
        throw error("missing_wordlist", "profanity stage needs words or wordlist_file");
    return words;
}

scoring::score_filter_config parse_score_filter_params(const json& p) {
    require_object(p);
    scoring::score_filter_config cfg;
    const std::string mode = p.contains("mode") ? p["mode"].get<std::string>() : "threshold";
    if (mode == "threshold") {
        cfg.mode = scoring::score_filter_mode::threshold;
        cfg.threshold = number_or(p, "threshold", 0.5);
        if (cfg.threshold < 0.0 || cfg.threshold > 1.0)
            throw error("bad_params", "threshold must be in [0,1]");
    } else if (mode == "drop_fraction") {
        cfg.mode = scoring::score_filter_mode::drop_fraction;
        cfg.drop_fraction = require_number(p, "drop_fraction");
        if (cfg.drop_fraction < 0.0 || cfg.drop_fraction >= 1.0)
            throw error("bad_params", "drop_fraction must be in [0,1)");
    } else {
        throw error("bad_params", "unknown filter_by_score mode: " + mode);
    }
    return cfg;
}

std::string parse_score_params(const json& p) {
    require_object(p);
    const std::string scorer = p.contains("scorer") ? p["scorer"].get<std::string>() : "heuristic";
    if (scorer != "heuristic" && scorer != "remote")
        throw error("bad_params", "unknown scorer: " + scorer);
    return scorer;
}

// Validates a stage's parameters without running it. Throws forge::error
// with the problem code.
void check_stage_params(const stage_config& stage) {
    const json& p = params_or_empty(stage);
    const std::string& name = stage.name;
    if (name == "clean") {
        parse_clean_params(p);
    } else if (name == "quality") {
        parse_quality_params(p);
    } else if (name == "profanity") {
        parse_profanity_params(p);
    } else if (name == "similarity") {
        require_object(p);
        const double t = number_or(p, "threshold", 0.05);
        if (t < 0.0 || t > 1.0) throw error("bad_params", "threshold must be in [0,1]");
    } else if (name == "compression_ratio") {
        require_object(p);
        const double lo = number_or(p, "min_ratio", 1.3);
        const double hi = number_or(p, "max_ratio", 50.0);
        if (!(lo > 0.0) || !(hi >= lo))
            throw error("bad_ratio_bounds", "need 0 < min_ratio <= max_ratio");
    } else if (name == "truncate_by_length") {
        require_object(p);
        require_count(p, "max_tokens");
    } else if (name == "score") {
        parse_score_params(p);
    } else if (name == "filter_by_score") {
        parse_score_filter_params(p);
    } else if (name == "format" || name == "fit_to_context" || name == "pad_sequence") {
        require_object(p); // no parameters beyond the shared config
    } else if (name == "truncate_by_score") {
        require_object(p);
        require_count(p, "budget_tokens");
    } else {
        throw error("unknown_stage", "unknown stage: " + name);
    }
}

// ---- per-record stage outcomes ----

struct outcome {
    corpus::record rec;
    bool keep = true;
    std::string drop_reason;
    std::size_t pads_added = 0;
    bool unscored = false;

    outcome() = default;
    explicit outcome(corpus::record r) : rec(std::move(r)) {}
};

corpus::dataset collect(std::vector<outcome>&& results, stage_report& report) {
    corpus::dataset out;
    for (auto& o : results) {
        if (o.keep) {
            out.records.push_back(std::move(o.rec));
        } else {
            ++report.drops[o.drop_reason];
        }
        if (o.pads_added > 0) report.notes["padded_tokens"] += o.pads_added;
        if (o.unscored) ++report.notes["unscored"];
    }
    out.provenance = corpus::provenance_of(out.records);
    report.records_kept = out.records.size();
    return out;
}

} // namespace

pipeline_config config_from_json(const json& j) {
    if (!j.is_object()) throw error("bad_config", "pipeline config must be a JSON object");
    pipeline_config cfg;

    if (j.contains("inputs")) {
        if (!j["inputs"].is_array()) throw error("bad_config", "inputs must be an array");
        for (const auto& in : j["inputs"]) {
            if (!in.is_object() || !in.contains("path") || !in["path"].is_string())
                throw error("bad_config", "each input needs a string path");
            input_spec spec;
            spec.path = in["path"].get<std::string>();
            spec.format = in.value("format", std::string("qa_jsonl"));
            spec.source = in.value("source", spec.path);
            cfg.inputs.push_back(std::move(spec));
        }
    }

    if (j.contains("mix_weights")) {
        if (!j["mix_weights"].is_array()) throw error("bad_config", "mix_weights must be an array");
        std::vector<double> weights;
        for (const auto& w : j["mix_weights"]) {
            if (!w.is_number()) throw error("bad_config", "mix weights must be numbers");
            weights.push_back(w.get<double>());
        }
        cfg.mix_weights = std::move(weights);
    }

    if (j.contains("seed")) {
        if (!j["seed"].is_number_integer()) throw error("bad_config", "seed must be an integer");
        cfg.seed = j["seed"].get<std::uint64_t>();
    }
    if (j.contains("workers")) {
        if (!j["workers"].is_number_integer()) throw error("bad_config", "workers must be an integer");
        cfg.workers = j["workers"].get<int>();
    }

    if (j.contains("stages")) {
        if (!j["stages"].is_array()) throw error("bad_config", "stages must be an array");
        for (const auto& s : j["stages"]) {
            if (!s.is_object() || !s.contains("name") || !s["name"].is_string())
                throw error("bad_config", "each stage needs a string name");
            stage_config stage;
            stage.name = s["name"].get<std::string>();
            stage.params = s.value("params", json::object());
            cfg.stages.push_back(std::move(stage));
        }
    }

    if (j.contains("output")) {
        const auto& out = j["output"];
        if (!out.is_object() || !out.contains("path") || !out["path"].is_string())
            throw error("bad_config", "output needs a string path");
        cfg.output_path = out["path"].get<std::string>();
        cfg.output_format = out.value("format", std::string("records_jsonl"));
    }

    if (j.contains("prompt")) {
        const auto& p = j["prompt"];
        if (!p.is_object()) throw error("bad_config", "prompt must be an object");
        cfg.scheme.human_prefix = p.value("human_prefix", cfg.scheme.human_prefix);
        cfg.scheme.bot_prefix = p.value("bot_prefix", cfg.scheme.bot_prefix);
        cfg.scheme.turn_separator = p.value("separator", cfg.scheme.turn_separator);
        cfg.scheme.terminator = p.value("terminator", cfg.scheme.terminator);
    }

    if (j.contains("budget")) {
        const auto& b = j["budget"];
        if (!b.is_object()) throw error("bad_config", "budget must be an object");
        if (b.contains("context_tokens")) {
            if (!b["context_tokens"].is_number_integer() || b["context_tokens"].get<std::int64_t>() < 0)
                throw error("bad_config", "context_tokens must be a non-negative integer");
            cfg.budget_cfg.context_tokens = b["context_tokens"].get<std::size_t>();
        }
        cfg.budget_cfg.pad_symbol = b.value("pad_symbol", cfg.budget_cfg.pad_symbol);
        if (b.contains("pad_to_max")) {
            if (!b["pad_to_max"].is_boolean()) throw error("bad_config", "pad_to_max must be a boolean");
            cfg.budget_cfg.pad_to_max = b["pad_to_max"].get<bool>();
        }
        cfg.tokenizer = b.value("tokenizer", cfg.tokenizer);
    }

    if (j.contains("scoring")) {
        const auto& s = j["scoring"];
        if (!s.is_object()) throw error("bad_config", "scoring must be an object");
        cfg.scoring_endpoint = s.value("endpoint", cfg.scoring_endpoint);
        if (s.contains("timeout_ms")) {
            if (!s["timeout_ms"].is_number_integer())
                throw error("bad_config", "timeout_ms must be an integer");
            cfg.scoring_timeout_ms = s["timeout_ms"].get<int>();
        }
        if (s.contains("max_in_flight")) {
            if (!s["max_in_flight"].is_number_integer())
                throw error("bad_config", "max_in_flight must be an integer");
            cfg.scoring_max_in_flight = s["max_in_flight"].get<int>();
        }
        cfg.scoring_on_error = s.value("on_error", cfg.scoring_on_error);
    }

    return cfg;
}

std::vector<config_problem> validate_config(const pipeline_config& cfg) {
    std::vector<config_problem> problems;
    const auto add = [&](std::string location, std::string code, std::string detail) {
        problems.push_back({std::move(location), std::move(code), std::move(detail)});
    };

    if (cfg.inputs.empty()) add("inputs", "missing_input", "at least one input is required");
    for (std::size_t i = 0; i < cfg.inputs.size(); ++i) {
        const auto& in = cfg.inputs[i];
        const std::string loc = "inputs[" + std::to_string(i) + "]";
        if (in.format != "qa_jsonl" && in.format != "trees_json" && in.format != "records_jsonl")
            add(loc + ".format", "unknown_format", "unknown input format: " + in.format);
        if (in.path.empty())
            add(loc + ".path", "missing_input", "input path is empty");
        else if (in.path != "-" && !std::filesystem::exists(in.path))
            add(loc + ".path", "missing_input", "input file does not exist: " + in.path);
    }

    if (cfg.mix_weights) {
        if (cfg.mix_weights->size() != cfg.inputs.size()) {
            add("mix_weights", "weight_arity",
                "mix_weights has " + std::to_string(cfg.mix_weights->size()) + " entries for " +
                    std::to_string(cfg.inputs.size()) + " inputs");
        }
        bool any_positive = false;
        for (std::size_t i = 0; i < cfg.mix_weights->size(); ++i) {
            const double w = (*cfg.mix_weights)[i];
            if (w < 0)
                add("mix_weights[" + std::to_string(i) + "]", "negative_weight",
                    "weights must be non-negative");
            if (w > 0) any_positive = true;
        }
        if (!cfg.mix_weights->empty() && !any_positive)
            add("mix_weights", "no_positive_weight", "at least one weight must be positive");
    }

    if (cfg.workers < 1) add("workers", "bad_workers", "workers must be >= 1");

    for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
        const auto& stage = cfg.stages[i];
        const std::string loc = "stages[" + std::to_string(i) + "]";
        if (!stage_vocabulary().count(stage.name)) {
            add(loc + ".name", "unknown_stage", "unknown stage: " + stage.name);
            continue;
        }
        try {
            check_stage_params(stage);
        } catch (const error& e) {
            add(loc + ".params", e.code(), e.what());
        }
        if (stage.name == "score") {
            try {
                if (parse_score_params(params_or_empty(stage)) == "remote" &&
                    cfg.scoring_endpoint.empty())
                    add(loc, "missing_endpoint", "remote scorer needs scoring.endpoint");
            } catch (const error&) {
                // already reported via check_stage_params
            }
        }
    }

    if (cfg.output_path.empty()) add("output.path", "missing_output", "output path is required");
    if (cfg.output_format != "records_jsonl" && cfg.output_format != "qa_jsonl" &&
        cfg.output_format != "text_jsonl")
        add("output.format", "unknown_format", "unknown output format: " + cfg.output_format);

    try {
        prompts::check_scheme(cfg.scheme);
    } catch (const error& e) {
        add("prompt", e.code(), e.what());
    }
    try {
        make_tokenizer(cfg.tokenizer);
    } catch (const error& e) {
        add("budget.tokenizer", e.code(), e.what());
    }
    if (cfg.budget_cfg.pad_to_max && cfg.budget_cfg.pad_symbol.empty())
        add("budget.pad_symbol", "bad_budget", "pad_to_max needs a pad symbol");

    if (cfg.scoring_on_error != "abort" && cfg.scoring_on_error != "keep_unscored" &&
        cfg.scoring_on_error != "drop")
        add("scoring.on_error", "bad_policy",
            "on_error must be abort, keep_unscored, or drop");
    if (cfg.scoring_max_in_flight < 1)
        add("scoring.max_in_flight", "bad_config", "max_in_flight must be >= 1");
    if (cfg.scoring_timeout_ms < 1)
        add("scoring.timeout_ms", "bad_config", "timeout_ms must be >= 1");

    return problems;
}

corpus::dataset ingest_input(const input_spec& in, std::istream& stream, stage_report& report) {
    if (in.format == "qa_jsonl") {
        corpus::ingest_report ir;
        auto d = corpus::ingest_qa(stream, in.source, ir);
        report.records_in += ir.lines_seen;
        report.records_kept += ir.kept;
        for (const auto& skip : ir.skips) ++report.drops[skip.reason];
        return d;
    }

    if (in.format == "records_jsonl") {
        corpus::dataset d;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(stream, line)) {
            ++line_no;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            ++report.records_in;
            json j = json::parse(line, nullptr, false);
            if (j.is_discarded()) {
                ++report.drops["parse_error"];
                continue;
            }
            try {
                auto r = corpus::record_from_json(j);
                if (r.source.empty()) r.source = in.source;
                d.records.push_back(std::move(r));
                ++report.records_kept;
            } catch (const error& e) {
                ++report.drops[e.code()];
            }
        }
        d.provenance = corpus::provenance_of(d.records);
        return d;
    }

    if (in.format == "trees_json") {
        auto result = corpus::ingest_conversation_trees(stream);
        for (const auto& reject : result.rejected) {
            ++report.records_in; // a rejected tree is one lost candidate
            ++report.drops[reject.reason];
        }
        corpus::dataset d;
        std::size_t ordinal = 0;
        for (const auto& tree : result.trees) {
            auto lin = corpus::linearize_tree(tree);
            report.records_in += lin.paths.size() + lin.dropped_unanswered;
            if (lin.dropped_unanswered > 0)
                report.drops["unanswered_turn"] += lin.dropped_unanswered;
            for (auto& path : lin.paths) {
                corpus::record r;
                r.id = in.source + ":" + std::to_string(++ordinal);
                r.payload = std::move(path);
                r.source = in.source;
                d.records.push_back(std::move(r));
                ++report.records_kept;
            }
        }
        d.provenance = corpus::provenance_of(d.records);
        return d;
    }

    throw error("unknown_format", "unknown input format: " + in.format);
}

corpus::dataset apply_stage(const corpus::dataset& d, const stage_config& stage,
                            const pipeline_config& cfg, stage_report& report) {
    report.name = stage.name;
    report.records_in = d.records.size();
    const json& p = params_or_empty(stage);
    const auto tok = make_tokenizer(cfg.tokenizer);
    const std::size_t n = d.records.size();

    // filter_by_score is a whole-dataset operation (drop_fraction needs the
    // global order); everything else is per-record.
    if (stage.name == "filter_by_score") {
        const auto fc = parse_score_filter_params(p);
        auto [kept, fr] = scoring::filter_by_score(d, fc);
        if (!fr.dropped.empty()) report.drops["low_score"] = fr.dropped.size();
        report.records_kept = kept.records.size();
        return kept;
    }

    std::vector<outcome> results(n);
    int workers = cfg.workers;

    std::function<void(std::size_t)> body;

    if (stage.name == "clean") {
        const auto cc = parse_clean_params(p);
        body = [&, cc](std::size_t i) {
            outcome o(d.records[i]);
            for (auto* field : text_fields(o.rec)) *field = filters::clean_text(*field, cc);
            results[i] = std::move(o);
        };
    } else if (stage.name == "quality") {
        const auto qc = parse_quality_params(p);
        body = [&, qc](std::size_t i) {
            outcome o(d.records[i]);
            for (const auto* field : text_fields(d.records[i])) {
                auto v = filters::quality_filter(*field, qc);
                if (!v.keep) {
                    o.keep = false;
                    o.drop_reason = *v.reason;
                    break;
                }
            }
            results[i] = std::move(o);
        };
    } else if (stage.name == "profanity") {
        const auto words = parse_profanity_params(p);
        body = [&, words](std::size_t i) {
            outcome o(d.records[i]);
            for (const auto* field : text_fields(d.records[i])) {
                auto v = filters::profanity_filter(*field, words);
                if (!v.keep) {
                    o.keep = false;
                    o.drop_reason = *v.reason;
                    break;
                }
            }
            results[i] = std::move(o);
        };
    } else if (stage.name == "similarity") {
        const double threshold = number_or(p, "threshold", 0.05);
        body = [&, threshold](std::size_t i) {
            outcome o(d.records[i]);
            if (const auto* qa = std::get_if<corpus::qa_pair>(&d.records[i].payload)) {
                auto v = filters::qa_similarity_filter(*qa, threshold);
                if (!v.keep) {
                    o.keep = false;
                    o.drop_reason = *v.reason;
                } else {
                    o.rec.meta["similarity"] = v.meta.at("similarity");
                }
            }
            results[i] = std::move(o);
        };
    } else if (stage.name == "compression_ratio") {
        const double lo = number_or(p, "min_ratio", 1.3);
        const double hi = number_or(p, "max_ratio", 50.0);
        body = [&, lo, hi](std::size_t i) {
            outcome o(d.records[i]);
            if (const auto* ds = std::get_if<corpus::doc_summary_pair>(&d.records[i].payload)) {
                auto v = filters::compression_ratio_filter(*ds, lo, hi, *tok);
                if (!v.keep) {
                    o.keep = false;
                    o.drop_reason = *v.reason;
                } else {
                    o.rec.meta["ratio"] = v.meta.at("ratio");
                }
            }
            results[i] = std::move(o);
        };
    } else if (stage.name == "truncate_by_length") {
        const std::size_t max_tokens = require_count(p, "max_tokens");
        body = [&, max_tokens](std::size_t i) {
            outcome o(d.records[i]);
            if (auto it = o.rec.meta.find("formatted_text"); it != o.rec.meta.end()) {
                it->second = filters::truncate_by_length(it->second, max_tokens, *tok);
            } else {
                for (auto* field : text_fields(o.rec))
                    *field = filters::truncate_by_length(*field, max_tokens, *tok);
            }
            results[i] = std::move(o);
        };
    } else if (stage.name == "score") {
        const std::string scorer_name = parse_score_params(p);
        std::shared_ptr<scoring::scorer> scorer;
        if (scorer_name == "heuristic") {
            scorer = std::make_shared<scoring::heuristic_scorer>();
        } else {
            scoring::remote_scorer_config rc;
            rc.endpoint = cfg.scoring_endpoint;
            rc.timeout_ms = cfg.scoring_timeout_ms;
            rc.max_in_flight = cfg.scoring_max_in_flight;
            scorer = std::make_shared<scoring::remote_scorer>(rc, cfg.scheme);
            workers = std::min(workers, cfg.scoring_max_in_flight);
        }
        const std::string policy = cfg.scoring_on_error;
        body = [&, scorer, policy](std::size_t i) {
            outcome o(d.records[i]);
            try {
                o.rec.score = scorer->score(d.records[i]);
            } catch (const error& e) {
                if (e.code() != "scorer_unavailable" && e.code() != "scorer_protocol") throw;
                if (policy == "abort") throw;
                if (policy == "drop") {
                    o.keep = false;
                    o.drop_reason = e.code();
                } else { // keep_unscored
                    o.unscored = true;
                }
            }
            results[i] = std::move(o);
        };
    } else if (stage.name == "format") {
        body = [&](std::size_t i) {
            outcome o(d.records[i]);
            try {
                o.rec.meta["formatted_text"] = scoring::scoring_text(d.records[i], cfg.scheme);
            } catch (const error& e) {
                if (e.code() != "ambiguous_markers" && e.code() != "invalid_path") throw;
                o.keep = false;
                o.drop_reason = e.code();
            }
            results[i] = std::move(o);
        };
    } else if (stage.name == "truncate_by_score") {
        const std::size_t budget_tokens = require_count(p, "budget_tokens");
        body = [&, budget_tokens](std::size_t i) {
            outcome o(d.records[i]);
            if (const auto* path = std::get_if<corpus::conversation_path>(&d.records[i].payload)) {
                try {
                    auto truncated = budget::truncate_by_score(*path, budget_tokens, cfg.scheme, *tok);
                    if (o.rec.meta.count("formatted_text"))
                        o.rec.meta["formatted_text"] =
                            prompts::format_conversation(truncated, cfg.scheme);
                    o.rec.payload = std::move(truncated);
                } catch (const error& e) {
                    if (e.code() != "cannot_fit" && e.code() != "invalid_path" &&
                        e.code() != "ambiguous_markers")
                        throw;
                    o.keep = false;
                    o.drop_reason = e.code();
                }
            }
            results[i] = std::move(o);
        };
    } else if (stage.name == "fit_to_context") {
        body = [&](std::size_t i) {
            outcome o(d.records[i]);
            if (auto it = o.rec.meta.find("formatted_text"); it != o.rec.meta.end()) {
                it->second = budget::fit_to_context(it->second, cfg.budget_cfg, *tok);
            } else {
                for (auto* field : text_fields(o.rec))
                    *field = budget::fit_to_context(*field, cfg.budget_cfg, *tok);
            }
            results[i] = std::move(o);
        };
    } else if (stage.name == "pad_sequence") {
        body = [&](std::size_t i) {
            outcome o(d.records[i]);
            if (auto it = o.rec.meta.find("formatted_text"); it != o.rec.meta.end()) {
                auto padded = budget::pad_sequence(it->second, cfg.budget_cfg, *tok);
                it->second = std::move(padded.text);
                o.pads_added = padded.pad_count;
            } else {
                for (auto* field : text_fields(o.rec)) {
                    auto padded = budget::pad_sequence(*field, cfg.budget_cfg, *tok);
                    *field = std::move(padded.text);
                    o.pads_added += padded.pad_count;
                }
            }
            results[i] = std::move(o);
        };
    } else {
        throw error("unknown_stage", "unknown stage: " + stage.name);
    }

    parallel_for(n, workers, body);
    return collect(std::move(results), report);
}

void write_dataset(std::ostream& out, const corpus::dataset& d, const std::string& format) {
    for (const auto& r : d.records) {
        if (format == "records_jsonl") {
            out << corpus::record_to_json(r).dump() << '\n';
        } else if (format == "qa_jsonl") {
            out << corpus::record_to_qa_json(r).dump() << '\n';
        } else if (format == "text_jsonl") {
            const auto it = r.meta.find("formatted_text");
            if (it == r.meta.end())
                throw error("missing_formatted_text",
                            "text_jsonl needs the format stage; record " + r.id +
                                " has no formatted text");
            out << json{{"id", r.id}, {"text", it->second}}.dump() << '\n';
        } else {
            throw error("unknown_format", "unknown output format: " + format);
        }
    }
}

nlohmann::json report_to_json(const pipeline_report& r) {
    json stages = json::array();
    for (const auto& s : r.stages) {
        json js{{"name", s.name},
                {"records_in", s.records_in},
                {"records_kept", s.records_kept},
                {"drops", s.drops}};
        if (!s.notes.empty()) js["notes"] = s.notes;
        stages.push_back(std::move(js));
    }
    return json{{"seed", r.seed},
                {"workers", r.workers},
                {"wall_seconds", r.wall_seconds},
                {"stages", std::move(stages)}};
}

pipeline_report run_pipeline(const pipeline_config& cfg) {
    const auto problems = validate_config(cfg);
    if (!problems.empty()) {
        std::string joined;
        for (const auto& pr : problems) {
            if (!joined.empty()) joined += "; ";
            joined += pr.location + ": " + pr.code;
        }
        throw error("invalid_config", joined);
    }

    const auto start = std::chrono::steady_clock::now();
    pipeline_report report;
    report.seed = cfg.seed;
    report.workers = cfg.workers;

    stage_report ingest_rep;
    ingest_rep.name = "ingest";
    std::vector<corpus::dataset> parts;
    for (const auto& in : cfg.inputs) {
        std::ifstream f(in.path, std::ios::binary);
        if (!f) throw error("unreadable_input", "cannot open input: " + in.path);
        parts.push_back(ingest_input(in, f, ingest_rep));
    }
    report.stages.push_back(ingest_rep);

    stage_report combine_rep;
    std::size_t total = 0;
    for (const auto& part : parts) total += part.records.size();
    combine_rep.records_in = combine_rep.records_kept = total;

    corpus::dataset data;
    if (cfg.mix_weights) {
        combine_rep.name = "mix";
        data = corpus::mix(parts, *cfg.mix_weights, cfg.seed);
    } else {
        combine_rep.name = "concat";
        data = corpus::concat(parts);
    }
    report.stages.push_back(combine_rep);

    for (const auto& stage : cfg.stages) {
        stage_report sr;
        data = apply_stage(data, stage, cfg, sr);
        report.stages.push_back(std::move(sr));
    }

    stage_report emit_rep;
    emit_rep.name = "emit";
    emit_rep.records_in = emit_rep.records_kept = data.records.size();

    std::ofstream out(cfg.output_path, std::ios::binary);
    if (!out) throw error("unwritable_output", "cannot open output: " + cfg.output_path);
    write_dataset(out, data, cfg.output_format);
    out.close();
    report.stages.push_back(emit_rep);

    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    std::ofstream report_out(cfg.output_path + ".report.json", std::ios::binary);
    if (!report_out)
        throw error("unwritable_output", "cannot open report: " + cfg.output_path + ".report.json");
    report_out << report_to_json(report).dump(2) << '\n';
    return report;
}

} // namespace forge::pipeline
