#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace forge::corpus {

enum class role { human, bot };

std::string_view role_name(role r);
role parse_role(std::string_view name); // "human" | "bot"

struct message {
    role who = role::human;
    std::string text;
    std::optional<double> turn_score; // per-turn quality, when graded upstream

    bool operator==(const message&) const = default;
};

// Linear root-to-leaf dialogue. Valid as a training record only when
// non-empty, strictly alternating, human first, bot last.
struct conversation_path {
    std::vector<message> messages;

    bool operator==(const conversation_path&) const = default;
};

// nullopt when valid, otherwise a violation code:
// empty_path | role_alternation | first_not_human | unanswered_turn
std::optional<std::string> check_path(const conversation_path& path);

struct tree_node {
    std::string id;
    std::optional<std::string> parent_id; // nullopt for the root
    message msg;
};

// Branching dialogue as ingested; nodes keep input order (children order
// during traversal is their stored order).
struct conversation_tree {
    std::vector<tree_node> nodes;
};

// nullopt when valid, otherwise: empty_tree | duplicate_id |
// multiple_roots | dangling_parent | cycle | role_alternation | root_role
// (a bot-rooted tree can never yield a valid training path; a rootless
// tree is reported as a cycle, which it necessarily contains).
std::optional<std::string> check_tree(const conversation_tree& tree);

struct qa_pair {
    std::string input;
    std::string output;

    bool operator==(const qa_pair&) const = default;
};

struct doc_summary_pair {
    std::string document;
    std::string summary;

    bool operator==(const doc_summary_pair&) const = default;
};

enum class record_kind { qa, conversation, doc_summary };

std::string_view record_kind_name(record_kind k);

// One dataset item. The kind tag is derived from the payload alternative,
// so it can never disagree with it.
struct record {
    std::string id; // unique within a dataset, stable: "<source>:<ordinal>"
    std::variant<qa_pair, conversation_path, doc_summary_pair> payload;
    std::string source;
    std::optional<double> score;
    std::map<std::string, std::string> meta;

    record_kind kind() const { return static_cast<record_kind>(payload.index()); }

    bool operator==(const record&) const = default;
};

struct dataset {
    std::vector<record> records;
    // per-source record counts, in first-appearance order; counts sum to
    // records.size()
    std::vector<std::pair<std::string, std::size_t>> provenance;
};

std::vector<std::pair<std::string, std::size_t>> provenance_of(const std::vector<record>& records);

// ---- ingestion ----

struct ingest_skip {
    std::size_t line = 0; // 1-based line number in the input stream
    std::string reason;
};

struct ingest_report {
    std::size_t lines_seen = 0; // non-blank lines
    std::size_t kept = 0;
    std::vector<ingest_skip> skips;
};

void write_ingest_report(std::ostream& out, const ingest_report& report);

// Line-delimited JSON with string fields "input" and "output". Unknown
// fields are preserved into record.meta as strings. Malformed lines are
// skipped and recorded in the report; blank lines are ignored.
dataset ingest_qa(std::istream& in, const std::string& source, ingest_report& report);

struct tree_reject {
    std::size_t index = 0; // position in the "trees" array
    std::string reason;
};

struct tree_ingest_result {
    std::vector<conversation_tree> trees;
    std::vector<tree_reject> rejected;
};

// JSON document {"trees": [{"nodes": [{id, parent_id|null, role, text,
// score|null}]}]}. Invalid trees are rejected whole with a reason.
tree_ingest_result ingest_conversation_trees(std::istream& in);

// ---- linearization ----

struct linearize_result {
    std::vector<conversation_path> paths; // depth-first, children in stored order
    std::size_t dropped_unanswered = 0;   // leaves ending in a human turn
};

linearize_result linearize_tree(const conversation_tree& tree);

// ---- mixing ----

// Weighted interleave without replacement: at each step one source is
// chosen with probability proportional to its weight among the non-empty
// sources, and its front record is taken. Per-source order is preserved
// and the output is a deterministic function of (datasets, weights, seed).
// Sources left with only zero weights are drained in source order.
// Throws: weight_arity, no_positive_weight, negative_weight, duplicate_id.
dataset mix(const std::vector<dataset>& datasets, const std::vector<double>& weights,
            std::uint64_t seed);

// Plain concatenation in input order; provenance merged.
dataset concat(const std::vector<dataset>& datasets);

// ---- stats ----

struct percentile_summary {
    std::size_t n = 0;
    std::size_t min = 0, max = 0;
    std::size_t p25 = 0, p50 = 0, p75 = 0, p90 = 0, p99 = 0; // nearest-rank
};

struct dataset_summary {
    std::map<std::string, std::size_t> counts_by_kind;
    // token-count percentiles keyed by payload field name
    // (input, output, conversation, document, summary)
    std::map<std::string, percentile_summary> token_counts;
    std::size_t scored = 0;
    std::vector<std::size_t> score_histogram; // 10 bins over [0,1]
};

dataset_summary dataset_stats(const dataset& d);

nlohmann::json summary_to_json(const dataset_summary& s);

// ---- serialization ----

// Full-fidelity one-line JSON for a record (records_jsonl format).
nlohmann::json record_to_json(const record& r);

// Inverse of record_to_json; throws error("bad_record") on shape problems.
record record_from_json(const nlohmann::json& j);

// {"input", "output", ...meta} line for qa records (qa_jsonl format);
// throws error("not_qa") for other kinds.
nlohmann::json record_to_qa_json(const record& r);

} // namespace forge::corpus
