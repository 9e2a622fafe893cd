#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "httplib.h"

#include "forge/error.hpp"
#include "forge/pipeline.hpp"
#include "forge/scoring.hpp"

using namespace forge::pipeline;
namespace corpus = forge::corpus;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path& scratch_dir() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / "forge_pipeline_tests";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string write_file(const std::string& name, const std::string& content) {
    const auto path = scratch_dir() / name;
    std::ofstream out(path, std::ios::binary);
    out << content;
    return path.string();
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

corpus::record qa(std::string id, std::string input, std::string output) {
    corpus::record r;
    r.id = std::move(id);
    r.source = "test";
    r.payload = corpus::qa_pair{std::move(input), std::move(output)};
    return r;
}

corpus::dataset qa_dataset(std::initializer_list<std::pair<const char*, const char*>> pairs) {
    corpus::dataset d;
    int n = 0;
    for (const auto& [input, output] : pairs)
        d.records.push_back(qa("test:" + std::to_string(++n), input, output));
    d.provenance = corpus::provenance_of(d.records);
    return d;
}

void check_conservation(const stage_report& r) {
    std::size_t dropped = 0;
    for (const auto& [reason, count] : r.drops) dropped += count;
    CHECK(r.records_in == r.records_kept + dropped);
}

stage_config stage(const std::string& name, json params = json::object()) {
    return {name, std::move(params)};
}

corpus::dataset run_stage(const corpus::dataset& d, const stage_config& sc,
                          stage_report& report, pipeline_config cfg = {}) {
    auto out = apply_stage(d, sc, cfg, report);
    check_conservation(report);
    return out;
}

int free_port() {
    httplib::Server probe;
    return probe.bind_to_any_port("127.0.0.1");
}

} // namespace

TEST_CASE("config_from_json fills defaults") {
    const json j = {{"inputs", json::array({{{"path", "in.jsonl"}}})},
                    {"output", {{"path", "out.jsonl"}}}};
    const auto cfg = config_from_json(j);
    REQUIRE(cfg.inputs.size() == 1);
    CHECK(cfg.inputs[0].path == "in.jsonl");
    CHECK(cfg.inputs[0].format == "qa_jsonl");
    CHECK(cfg.inputs[0].source == "in.jsonl");
    CHECK_FALSE(cfg.mix_weights.has_value());
    CHECK(cfg.seed == 0);
    CHECK(cfg.workers == 1);
    CHECK(cfg.stages.empty());
    CHECK(cfg.output_path == "out.jsonl");
    CHECK(cfg.output_format == "records_jsonl");
    CHECK(cfg.tokenizer == "default");
    CHECK(cfg.scheme.human_prefix == "<human>: ");
    CHECK(cfg.scoring_on_error == "abort");
}

TEST_CASE("config_from_json reads every section") {
    const json j = {
        {"inputs", json::array({{{"path", "a.jsonl"}, {"format", "records_jsonl"},
                                 {"source", "alpha"}},
                                {{"path", "b.json"}, {"format", "trees_json"}}})},
        {"mix_weights", json::array({3.0, 1.0})},
        {"seed", 42},
        {"workers", 8},
        {"stages", json::array({{{"name", "clean"},
                                 {"params", {{"casing", "lower"}}}},
                                {{"name", "quality"}}})},
        {"output", {{"path", "out.jsonl"}, {"format", "qa_jsonl"}}},
        {"prompt", {{"human_prefix", "H: "}, {"bot_prefix", "B: "},
                    {"separator", "\n"}, {"terminator", "H:"}}},
        {"budget", {{"context_tokens", 64}, {"pad_symbol", "PAD"},
                    {"pad_to_max", true}, {"tokenizer", "bytes4"}}},
        {"scoring", {{"endpoint", "http://127.0.0.1:1/score"}, {"timeout_ms", 250},
                     {"max_in_flight", 2}, {"on_error", "drop"}}}};
    const auto cfg = config_from_json(j);
    CHECK(cfg.inputs[1].source == "b.json");
    REQUIRE(cfg.mix_weights.has_value());
    CHECK(cfg.mix_weights->size() == 2);
    CHECK(cfg.seed == 42);
    CHECK(cfg.workers == 8);
    REQUIRE(cfg.stages.size() == 2);
    CHECK(cfg.stages[0].params.at("casing") == "lower");
    CHECK(cfg.output_format == "qa_jsonl");
    CHECK(cfg.scheme.turn_separator == "\n");
    CHECK(cfg.scheme.terminator == "H:");
    CHECK(cfg.budget_cfg.context_tokens == 64);
    CHECK(cfg.budget_cfg.pad_symbol == "PAD");
    CHECK(cfg.budget_cfg.pad_to_max);
    CHECK(cfg.tokenizer == "bytes4");
    CHECK(cfg.scoring_endpoint == "http://127.0.0.1:1/score");
    CHECK(cfg.scoring_timeout_ms == 250);
    CHECK(cfg.scoring_max_in_flight == 2);
    CHECK(cfg.scoring_on_error == "drop");
}

TEST_CASE("config_from_json rejects unusable documents") {
    CHECK_THROWS_AS(config_from_json(json::array()), forge::error);
    CHECK_THROWS_AS(config_from_json({{"inputs", 5}}), forge::error);
    CHECK_THROWS_AS(
        config_from_json({{"inputs", json::array({{{"path", "x"}}})},
                          {"stages", json::array({{{"params", json::object()}}})},
                          {"output", {{"path", "y"}}}}),
        forge::error);
}

TEST_CASE("validate_config reports each problem with its location") {
    pipeline_config cfg;
    cfg.output_path = "out.jsonl";

    // no inputs at all
    auto problems = validate_config(cfg);
    REQUIRE(problems.size() == 1);
    CHECK(problems[0].code == "missing_input");

    // a missing file, a bad format, a bad stage, bad workers
    cfg.inputs = {{scratch_dir() / "nope.jsonl", "qa_jsonl", "x"},
                  {write_file("val.jsonl", "{}\n"), "parquet", "y"}};
    cfg.workers = 0;
    cfg.stages = {stage("transmogrify")};
    problems = validate_config(cfg);
    std::vector<std::string> codes;
    for (const auto& p : problems) codes.push_back(p.code);
    CHECK(std::count(codes.begin(), codes.end(), "missing_input") == 1);
    CHECK(std::count(codes.begin(), codes.end(), "unknown_format") == 1);
    CHECK(std::count(codes.begin(), codes.end(), "unknown_stage") == 1);
    CHECK(std::count(codes.begin(), codes.end(), "bad_workers") == 1);

    for (const auto& p : problems)
        if (p.code == "unknown_stage") CHECK(p.location == "stages[0].name");
}

TEST_CASE("validate_config checks weights, scoring, output and budget") {
    pipeline_config cfg;
    cfg.inputs = {{write_file("val2.jsonl", "{}\n"), "qa_jsonl", "x"}};
    cfg.output_path = "out.jsonl";

    cfg.mix_weights = std::vector<double>{1.0, 2.0};
    auto codes = [&] {
        std::vector<std::string> out;
        for (const auto& p : validate_config(cfg)) out.push_back(p.code);
        return out;
    };
    CHECK(codes() == std::vector<std::string>{"weight_arity"});

    // the validator collects everything: a lone -1 is both negative and
    // leaves the weight set without a positive entry
    cfg.mix_weights = std::vector<double>{-1.0};
    CHECK(codes() == std::vector<std::string>{"negative_weight", "no_positive_weight"});
    cfg.mix_weights = std::vector<double>{0.0};
    CHECK(codes() == std::vector<std::string>{"no_positive_weight"});
    cfg.mix_weights.reset();

    cfg.stages = {stage("score", {{"scorer", "remote"}})};
    CHECK(codes() == std::vector<std::string>{"missing_endpoint"});
    cfg.stages.clear();

    cfg.output_path = "";
    CHECK(codes() == std::vector<std::string>{"missing_output"});
    cfg.output_path = "out.jsonl";

    cfg.output_format = "csv";
    CHECK(codes() == std::vector<std::string>{"unknown_format"});
    cfg.output_format = "records_jsonl";

    cfg.tokenizer = "bpe";
    CHECK(codes() == std::vector<std::string>{"unknown_tokenizer"});
    cfg.tokenizer = "default";

    cfg.scheme.terminator = "";
    CHECK(codes() == std::vector<std::string>{"bad_scheme"});
    cfg.scheme.terminator = "<human>:";

    cfg.budget_cfg.pad_to_max = true;
    cfg.budget_cfg.pad_symbol = "";
    CHECK(codes() == std::vector<std::string>{"bad_budget"});
    cfg.budget_cfg.pad_to_max = false;
    cfg.budget_cfg.pad_symbol = "<pad>";

    cfg.scoring_on_error = "retry";
    CHECK(codes() == std::vector<std::string>{"bad_policy"});
    cfg.scoring_on_error = "abort";

    // stage parameter problems surface as stages[i].params
    cfg.stages = {stage("quality", {{"min_chars", 10}, {"max_chars", 5}})};
    const auto problems = validate_config(cfg);
    REQUIRE(problems.size() == 1);
    CHECK(problems[0].location == "stages[0].params");
    CHECK(problems[0].code == "bad_params");
    cfg.stages.clear();

    // stdin pseudo-path is exempt from the existence check
    cfg.inputs = {{"-", "qa_jsonl", "stdin"}};
    CHECK(codes().empty());
}

TEST_CASE("ingest_input accepts records_jsonl round-trips") {
    const auto d = qa_dataset({{"q1?", "a1."}, {"q2?", "a2."}});
    std::ostringstream serialized;
    write_dataset(serialized, d, "records_jsonl");

    std::istringstream in(serialized.str() + "not json\n");
    stage_report rep;
    const auto back = ingest_input({"mem", "records_jsonl", "mem"}, in, rep);
    CHECK(back.records == d.records);
    CHECK(rep.records_in == 3);
    CHECK(rep.records_kept == 2);
    CHECK(rep.drops.at("parse_error") == 1);
    check_conservation(rep);
}

TEST_CASE("ingest_input records_jsonl rejects malformed records") {
    std::istringstream in("{\"id\": \"x:1\"}\n");
    stage_report rep;
    const auto d = ingest_input({"mem", "records_jsonl", "mem"}, in, rep);
    CHECK(d.records.empty());
    CHECK(rep.drops.at("bad_record") == 1);
}

TEST_CASE("ingest_input linearizes trees with full accounting") {
    const json doc = {
        {"trees",
         json::array(
             {// valid: two bot leaves -> two paths, one dangling human -> one drop
              {{"nodes",
                json::array({{{"id", "1"}, {"parent_id", nullptr}, {"role", "human"},
                              {"text", "q"}},
                             {{"id", "2"}, {"parent_id", "1"}, {"role", "bot"},
                              {"text", "a1"}},
                             {{"id", "3"}, {"parent_id", "1"}, {"role", "bot"},
                              {"text", "a2"}},
                             {{"id", "4"}, {"parent_id", "1"}, {"role", "bot"},
                              {"text", "a3"}},
                             {{"id", "5"}, {"parent_id", "4"}, {"role", "human"},
                              {"text", "dangling"}}})}},
              // invalid: two roots
              {{"nodes",
                json::array({{{"id", "1"}, {"parent_id", nullptr}, {"role", "human"},
                              {"text", "r1"}},
                             {{"id", "2"}, {"parent_id", nullptr}, {"role", "human"},
                              {"text", "r2"}}})}}})}};
    std::istringstream in(doc.dump());
    stage_report rep;
    const auto d = ingest_input({"mem", "trees_json", "forest"}, in, rep);

    REQUIRE(d.records.size() == 2);
    CHECK(d.records[0].id == "forest:1");
    CHECK(d.records[1].id == "forest:2");
    CHECK(d.records[0].kind() == corpus::record_kind::conversation);

    CHECK(rep.records_in == 4); // 2 paths + 1 unanswered + 1 rejected tree
    CHECK(rep.records_kept == 2);
    CHECK(rep.drops.at("unanswered_turn") == 1);
    CHECK(rep.drops.at("multiple_roots") == 1);
    check_conservation(rep);
}

TEST_CASE("ingest_input rejects unknown formats") {
    std::istringstream in("");
    stage_report rep;
    CHECK_THROWS_AS(ingest_input({"mem", "parquet", "x"}, in, rep), forge::error);
}

TEST_CASE("clean stage transforms every payload field") {
    const auto d = qa_dataset({{"  What IS This?  ", "A  Clean   Answer."}});
    stage_report rep;
    const auto out = run_stage(d, stage("clean", {{"casing", "lower"},
                                                  {"collapse_whitespace", true}}), rep);
    const auto& pair = std::get<corpus::qa_pair>(out.records[0].payload);
    CHECK(pair.input == "what is this?");
    CHECK(pair.output == "a clean answer.");
    CHECK(rep.records_kept == 1);
}

TEST_CASE("quality stage drops on the first failing field") {
    auto d = qa_dataset({{"fine question?", "fine answer."},
                         {"fine question?", "no terminal punctuation"},
                         {"", "an answer."}});
    stage_report rep;
    const auto out = run_stage(d, stage("quality"), rep);
    CHECK(out.records.size() == 1);
    CHECK(rep.drops.at("incomplete_sentence") == 1);
    CHECK(rep.drops.at("too_short") == 1);
}

TEST_CASE("profanity stage uses the inline wordlist across fields") {
    const auto d = qa_dataset({{"clean question?", "clean answer."},
                               {"now with badword inside?", "clean."},
                               {"clean?", "the Badword answers."}});
    stage_report rep;
    const auto out =
        run_stage(d, stage("profanity", {{"words", json::array({"badword"})}}), rep);
    CHECK(out.records.size() == 1);
    CHECK(rep.drops.at("profanity:badword") == 2);
}

TEST_CASE("similarity stage touches only qa records") {
    corpus::dataset d = qa_dataset({{"red green blue", "red yellow"},
                                    {"cat dog", "mouse bird"}});
    corpus::record conv;
    conv.id = "test:3";
    conv.source = "test";
    conv.payload = corpus::conversation_path{
        {{corpus::role::human, "cat", {}}, {corpus::role::bot, "dog", {}}}};
    d.records.push_back(conv);
    d.provenance = corpus::provenance_of(d.records);

    stage_report rep;
    const auto out = run_stage(d, stage("similarity", {{"threshold", 0.3}}), rep);
    REQUIRE(out.records.size() == 2);
    CHECK(out.records[0].id == "test:1");
    CHECK(out.records[0].meta.count("similarity") == 1);
    CHECK(out.records[1].id == "test:3"); // conversations pass through untouched
    CHECK(out.records[1].meta.count("similarity") == 0);
    CHECK(rep.drops.at("low_similarity") == 1);
}

TEST_CASE("compression_ratio stage touches only doc_summary records") {
    corpus::dataset d;
    corpus::record ds;
    ds.id = "t:1";
    ds.source = "t";
    ds.payload = corpus::doc_summary_pair{"one two three four five six seven eight", "short"};
    d.records.push_back(ds);
    ds.id = "t:2";
    ds.payload = corpus::doc_summary_pair{"tiny", "tiny"};
    d.records.push_back(ds);
    d.records.push_back(qa("t:3", "q?", "a."));
    d.provenance = corpus::provenance_of(d.records);

    stage_report rep;
    const auto out = run_stage(d, stage("compression_ratio", {{"min_ratio", 2.0}}), rep);
    REQUIRE(out.records.size() == 2);
    CHECK(out.records[0].id == "t:1");
    CHECK(out.records[0].meta.count("ratio") == 1);
    CHECK(out.records[1].id == "t:3");
    CHECK(rep.drops.at("ratio_low") == 1);
}

TEST_CASE("score and filter_by_score stages work together") {
    const auto d = qa_dataset(
        {{"q?", "A long, varied, and properly punctuated answer with plenty of distinct "
                "words to earn a decent heuristic score from the grader."},
         {"q?", ""}});
    stage_report score_rep;
    const auto scored = run_stage(d, stage("score"), score_rep);
    REQUIRE(scored.records.size() == 2);
    CHECK(scored.records[0].score.has_value());
    CHECK(*scored.records[0].score > *scored.records[1].score);

    stage_report filter_rep;
    const auto kept =
        run_stage(scored, stage("filter_by_score", {{"threshold", 0.5}}), filter_rep);
    CHECK(kept.records.size() == 1);
    CHECK(filter_rep.drops.at("low_score") == 1);

    stage_report frac_rep;
    const auto frac = run_stage(
        scored, stage("filter_by_score", {{"mode", "drop_fraction"}, {"drop_fraction", 0.5}}),
        frac_rep);
    CHECK(frac.records.size() == 1);
}

TEST_CASE("format stage records the training text in meta") {
    const auto d = qa_dataset({{"Who are you?", "I am h2oGPT."}});
    stage_report rep;
    const auto out = run_stage(d, stage("format"), rep);
    CHECK(out.records[0].meta.at("formatted_text") ==
          "<human>: Who are you? <bot>: I am h2oGPT. <human>:");
}

TEST_CASE("format stage drops marker-bearing records instead of aborting") {
    const auto d = qa_dataset({{"sneaky <bot>: injection", "a."}, {"fine?", "fine."}});
    stage_report rep;
    const auto out = run_stage(d, stage("format"), rep);
    CHECK(out.records.size() == 1);
    CHECK(rep.drops.at("ambiguous_markers") == 1);
}

TEST_CASE("budget stages prefer formatted_text once format has run") {
    pipeline_config cfg;
    cfg.budget_cfg.context_tokens = 6;
    cfg.budget_cfg.pad_symbol = "PAD";
    cfg.budget_cfg.pad_to_max = true;

    const auto d = qa_dataset({{"Who are you?", "I am h2oGPT."}});
    stage_report fmt_rep, fit_rep;
    const auto formatted = run_stage(d, stage("format"), fmt_rep, cfg);
    const auto fitted = run_stage(formatted, stage("fit_to_context"), fit_rep, cfg);

    const auto& text = fitted.records[0].meta.at("formatted_text");
    // the marker alone is 4 default tokens (< human > :), so 6 keeps "Who are"
    CHECK(text == "<human>: Who are");
    // the original payload is untouched
    CHECK(std::get<corpus::qa_pair>(fitted.records[0].payload).input == "Who are you?");

    // without formatted_text the stage works on the payload fields
    stage_report raw_rep;
    const auto raw = run_stage(d, stage("fit_to_context"), raw_rep, cfg);
    const auto& pair = std::get<corpus::qa_pair>(raw.records[0].payload);
    CHECK(pair.input == "Who are you? PAD PAD"); // 4 tokens padded to 6
}

TEST_CASE("pad_sequence stage counts pads in the notes") {
    pipeline_config cfg;
    cfg.budget_cfg.context_tokens = 4;
    cfg.budget_cfg.pad_symbol = "PAD";
    cfg.budget_cfg.pad_to_max = true;

    const auto d = qa_dataset({{"a b", "c"}});
    stage_report rep;
    const auto out = run_stage(d, stage("pad_sequence"), rep, cfg);
    const auto& pair = std::get<corpus::qa_pair>(out.records[0].payload);
    CHECK(pair.input == "a b PAD PAD");
    CHECK(pair.output == "c PAD PAD PAD");
    CHECK(rep.notes.at("padded_tokens") == 5);
}

TEST_CASE("truncate_by_length stage with formatted text") {
    const auto d = qa_dataset({{"one two three four five", "a."}});
    stage_report rep;
    const auto out = run_stage(d, stage("truncate_by_length", {{"max_tokens", 3}}), rep);
    const auto& pair = std::get<corpus::qa_pair>(out.records[0].payload);
    CHECK(pair.input == "one two three");
    CHECK(pair.output == "a.");
}

TEST_CASE("truncate_by_score stage trims conversations to the budget") {
    corpus::dataset d;
    corpus::record conv;
    conv.id = "t:1";
    conv.source = "t";
    conv.payload = corpus::conversation_path{{{corpus::role::human, "q1", 0.9},
                                              {corpus::role::bot, "a1", 0.9},
                                              {corpus::role::human, "q2", 0.1},
                                              {corpus::role::bot, "a2", 0.1},
                                              {corpus::role::human, "q3", 0.8},
                                              {corpus::role::bot, "a3", 0.8}}};
    d.records.push_back(conv);
    d.provenance = corpus::provenance_of(d.records);

    // two single-token-body exchanges format to 24 default tokens
    stage_report rep;
    const auto out = run_stage(d, stage("truncate_by_score", {{"budget_tokens", 24}}), rep);
    const auto& path = std::get<corpus::conversation_path>(out.records[0].payload);
    REQUIRE(path.messages.size() == 4);
    CHECK(path.messages[1].text == "a1");
    CHECK(path.messages[3].text == "a3");

    stage_report tight;
    const auto dropped = run_stage(d, stage("truncate_by_score", {{"budget_tokens", 5}}), tight);
    CHECK(dropped.records.empty());
    CHECK(tight.drops.at("cannot_fit") == 1);
}

TEST_CASE("run_pipeline with no stages copies records through") {
    const auto in_path = write_file(
        "identity_in.jsonl",
        R"({"input": "Who are you?", "output": "I am h2oGPT."})" "\n"
        R"({"input": "What now?", "output": "We test."})" "\n");
    pipeline_config cfg;
    cfg.inputs = {{in_path, "qa_jsonl", "demo"}};
    cfg.output_path = (scratch_dir() / "identity_out.jsonl").string();

    const auto report = run_pipeline(cfg);
    REQUIRE(report.stages.size() == 3);
    CHECK(report.stages[0].name == "ingest");
    CHECK(report.stages[0].records_kept == 2);
    CHECK(report.stages[1].name == "concat");
    CHECK(report.stages[2].name == "emit");
    CHECK(report.stages[2].records_kept == 2);
    for (const auto& sr : report.stages) check_conservation(sr);

    // records_in of each stage equals records_kept of the one before
    for (std::size_t i = 1; i < report.stages.size(); ++i)
        CHECK(report.stages[i].records_in == report.stages[i - 1].records_kept);

    std::istringstream back_in(read_file(cfg.output_path));
    stage_report rep;
    const auto back = ingest_input({"out", "records_jsonl", "demo"}, back_in, rep);
    REQUIRE(back.records.size() == 2);
    CHECK(back.records[0].id == "demo:1");
    CHECK(std::get<corpus::qa_pair>(back.records[0].payload).input == "Who are you?");

    // the report file lands next to the output
    const auto rj = json::parse(read_file(cfg.output_path + ".report.json"));
    CHECK(rj.at("seed") == 0);
    CHECK(rj.at("stages").size() == 3);
    CHECK(rj.at("stages")[0].at("name") == "ingest");
}

TEST_CASE("run_pipeline counts profanity drops") {
    std::string lines;
    for (int i = 0; i < 6; ++i)
        lines += R"({"input": "clean question?", "output": "clean answer )" +
                 std::to_string(i) + ".\"}\n";
    lines += R"({"input": "a badword question?", "output": "x."})" "\n";
    lines += R"({"input": "fine?", "output": "another badword reply."})" "\n";
    const auto in_path = write_file("prof_in.jsonl", lines);
    const auto wordlist = write_file("prof_words.txt", "badword\n");

    pipeline_config cfg;
    cfg.inputs = {{in_path, "qa_jsonl", "demo"}};
    cfg.stages = {stage("profanity", {{"wordlist_file", wordlist}})};
    cfg.output_path = (scratch_dir() / "prof_out.jsonl").string();

    const auto report = run_pipeline(cfg);
    REQUIRE(report.stages.size() == 4);
    CHECK(report.stages[2].name == "profanity");
    CHECK(report.stages[2].records_in == 8);
    CHECK(report.stages[2].records_kept == 6);
    CHECK(report.stages[2].drops.at("profanity:badword") == 2);
}

TEST_CASE("run_pipeline output is identical for 1 and 8 workers") {
    std::string lines;
    for (int i = 0; i < 60; ++i) {
        lines += R"({"input": "Question number )" + std::to_string(i) +
                 R"(?", "output": "An answer with some variety, index )" +
                 std::to_string(i * 7 % 13) + ".\"}\n";
    }
    const auto in_path = write_file("par_in.jsonl", lines);

    auto run_with = [&](int workers, const std::string& out_name) {
        pipeline_config cfg;
        cfg.inputs = {{in_path, "qa_jsonl", "demo"}};
        cfg.workers = workers;
        cfg.stages = {stage("clean", {{"casing", "lower"}}), stage("quality"),
                      stage("score"), stage("filter_by_score", {{"threshold", 0.2}}),
                      stage("format"), stage("fit_to_context")};
        cfg.budget_cfg.context_tokens = 32;
        cfg.budget_cfg.pad_symbol = "PAD";
        cfg.budget_cfg.pad_to_max = true;
        cfg.output_path = (scratch_dir() / out_name).string();
        const auto report = run_pipeline(cfg);
        json stages = json::array();
        for (const auto& sr : report.stages)
            stages.push_back(report_to_json({0, 1, {sr}, 0.0}));
        return std::pair{read_file(cfg.output_path), stages.dump()};
    };

    const auto [bytes1, report1] = run_with(1, "par_out_1.jsonl");
    const auto [bytes8, report8] = run_with(8, "par_out_8.jsonl");
    CHECK(bytes1 == bytes8);
    CHECK(report1 == report8);
    CHECK_FALSE(bytes1.empty());
}

TEST_CASE("run_pipeline honors mix weights and echoes the seed") {
    const auto a = write_file("mix_a.jsonl",
                              R"({"input": "a1?", "output": "x."})" "\n"
                              R"({"input": "a2?", "output": "x."})" "\n");
    const auto b = write_file("mix_b.jsonl",
                              R"({"input": "b1?", "output": "x."})" "\n");
    pipeline_config cfg;
    cfg.inputs = {{a, "qa_jsonl", "alpha"}, {b, "qa_jsonl", "beta"}};
    cfg.mix_weights = std::vector<double>{1.0, 1.0};
    cfg.seed = 99;
    cfg.output_path = (scratch_dir() / "mix_out.jsonl").string();

    const auto report = run_pipeline(cfg);
    CHECK(report.seed == 99);
    CHECK(report.stages[1].name == "mix");
    CHECK(report.stages[1].records_kept == 3);

    std::istringstream back_in(read_file(cfg.output_path));
    stage_report rep;
    const auto back = ingest_input({"out", "records_jsonl", "out"}, back_in, rep);
    CHECK(back.records.size() == 3);
}

TEST_CASE("run_pipeline rejects invalid configs with every problem listed") {
    pipeline_config cfg; // no inputs, no output
    try {
        run_pipeline(cfg);
        FAIL("expected invalid_config");
    } catch (const forge::error& e) {
        CHECK(e.code() == "invalid_config");
        CHECK(std::string(e.what()).find("missing_input") != std::string::npos);
        CHECK(std::string(e.what()).find("missing_output") != std::string::npos);
    }
}

TEST_CASE("stage application is associative with pipeline runs") {
    const auto d = qa_dataset({{"ONE two?", "Different ANSWER one."},
                               {"THREE four?", "ANOTHER reply two."},
                               {"noise", "no punctuation"}});
    const stage_config s1 = stage("clean", {{"casing", "lower"}});
    const stage_config s2 = stage("quality");

    stage_report r1, r2;
    pipeline_config cfg;
    const auto chained = apply_stage(apply_stage(d, s1, cfg, r1), s2, cfg, r2);

    // the same two stages inside run_pipeline produce the same records
    std::ostringstream serialized;
    write_dataset(serialized, d, "records_jsonl");
    const auto in_path = write_file("assoc_in.jsonl", serialized.str());
    pipeline_config full;
    full.inputs = {{in_path, "records_jsonl", "test"}};
    full.stages = {s1, s2};
    full.output_path = (scratch_dir() / "assoc_out.jsonl").string();
    run_pipeline(full);

    std::istringstream back_in(read_file(full.output_path));
    stage_report rep;
    const auto back = ingest_input({"out", "records_jsonl", "test"}, back_in, rep);
    CHECK(back.records == chained.records);
}

TEST_CASE("score stage on_error policies against a dead endpoint") {
    const auto d = qa_dataset({{"q1?", "a1."}, {"q2?", "a2."}});
    pipeline_config cfg;
    cfg.scoring_endpoint = "http://127.0.0.1:" + std::to_string(free_port()) + "/score";
    cfg.scoring_timeout_ms = 300;
    const auto score_remote = stage("score", {{"scorer", "remote"}});

    cfg.scoring_on_error = "abort";
    stage_report rep;
    try {
        apply_stage(d, score_remote, cfg, rep);
        FAIL("expected scorer_unavailable");
    } catch (const forge::error& e) {
        CHECK(e.code() == "scorer_unavailable");
    }

    cfg.scoring_on_error = "keep_unscored";
    stage_report keep_rep;
    const auto kept = apply_stage(d, score_remote, cfg, keep_rep);
    CHECK(kept.records.size() == 2);
    CHECK_FALSE(kept.records[0].score.has_value());
    CHECK(keep_rep.notes.at("unscored") == 2);
    check_conservation(keep_rep);

    cfg.scoring_on_error = "drop";
    stage_report drop_rep;
    const auto dropped = apply_stage(d, score_remote, cfg, drop_rep);
    CHECK(dropped.records.empty());
    CHECK(drop_rep.drops.at("scorer_unavailable") == 2);
    check_conservation(drop_rep);
}

TEST_CASE("write_dataset output formats") {
    auto d = qa_dataset({{"q?", "a."}});

    std::ostringstream qa_out;
    write_dataset(qa_out, d, "qa_jsonl");
    const auto qa_line = json::parse(qa_out.str());
    CHECK(qa_line.at("input") == "q?");
    CHECK(qa_line.at("output") == "a.");

    // text_jsonl needs the format stage's meta
    std::ostringstream missing;
    CHECK_THROWS_AS(write_dataset(missing, d, "text_jsonl"), forge::error);

    d.records[0].meta["formatted_text"] = "<human>: q? <bot>: a. <human>:";
    std::ostringstream text_out;
    write_dataset(text_out, d, "text_jsonl");
    const auto text_line = json::parse(text_out.str());
    CHECK(text_line.at("id") == "test:1");
    CHECK(text_line.at("text") == "<human>: q? <bot>: a. <human>:");

    std::ostringstream bad;
    CHECK_THROWS_AS(write_dataset(bad, d, "parquet"), forge::error);
}
