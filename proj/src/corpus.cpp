#include "forge/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <istream>
#include <ostream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "forge/error.hpp"
#include "forge/rng.hpp"
#include "forge/tokenize.hpp"

using nlohmann::json;

namespace forge::corpus {

std::string_view role_name(role r) { return r == role::human ? "human" : "bot"; }

role parse_role(std::string_view name) {
    if (name == "human") return role::human;
    if (name == "bot") return role::bot;
    throw error("bad_role", "role must be \"human\" or \"bot\", got \"" + std::string(name) + "\"");
}

std::string_view record_kind_name(record_kind k) {
    switch (k) {
    case record_kind::qa: return "qa";
    case record_kind::conversation: return "conversation";
    case record_kind::doc_summary: return "doc_summary";
    }
    return "unknown";
}

std::optional<std::string> check_path(const conversation_path& path) {
    if (path.messages.empty()) return "empty_path";
    if (path.messages.front().who != role::human) return "first_not_human";
    for (std::size_t i = 1; i < path.messages.size(); ++i) {
        if (path.messages[i].who == path.messages[i - 1].who) return "role_alternation";
    }
    if (path.messages.back().who != role::bot) return "unanswered_turn";
    return std::nullopt;
}

std::optional<std::string> check_tree(const conversation_tree& tree) {
    const auto& nodes = tree.nodes;
    if (nodes.empty()) return "empty_tree";

    std::unordered_map<std::string, std::size_t> index_of;
    index_of.reserve(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (!index_of.emplace(nodes[i].id, i).second) return "duplicate_id";
    }

    std::size_t roots = 0;
    for (const auto& node : nodes) {
        if (!node.parent_id) {
            ++roots;
            continue;
        }
        auto it = index_of.find(*node.parent_id);
        if (it == index_of.end()) return "dangling_parent";
        if (it->second == index_of.at(node.id)) return "cycle"; // self-parent
    }
    if (roots == 0) return "cycle"; // every node has a parent => some parent loop
    if (roots > 1) return "multiple_roots";

    // walk parent chains; a chain longer than the node count means a loop
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        std::size_t cur = i;
        std::size_t steps = 0;
        while (nodes[cur].parent_id) {
            cur = index_of.at(*nodes[cur].parent_id);
            if (++steps > nodes.size()) return "cycle";
        }
    }

    for (const auto& node : nodes) {
        if (!node.parent_id) {
            if (node.msg.who != role::human) return "root_role";
            continue;
        }
        const auto& parent = nodes[index_of.at(*node.parent_id)];
        if (parent.msg.who == node.msg.who) return "role_alternation";
    }
    return std::nullopt;
}

std::vector<std::pair<std::string, std::size_t>> provenance_of(const std::vector<record>& records) {
    std::vector<std::pair<std::string, std::size_t>> out;
    for (const auto& r : records) {
        auto it = std::find_if(out.begin(), out.end(),
                               [&](const auto& p) { return p.first == r.source; });
        if (it == out.end()) {
            out.emplace_back(r.source, 1);
        } else {
            ++it->second;
        }
    }
    return out;
}

// ---- ingestion ----

namespace {

std::string trimmed(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string json_as_meta_string(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

} // namespace

void write_ingest_report(std::ostream& out, const ingest_report& report) {
    for (const auto& skip : report.skips) {
        out << json{{"line", skip.line}, {"reason", skip.reason}}.dump() << "\n";
    }
}

dataset ingest_qa(std::istream& in, const std::string& source, ingest_report& report) {
    dataset out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trimmed(line).empty()) continue;
        ++report.lines_seen;

        json obj = json::parse(line, nullptr, false);
        if (obj.is_discarded()) {
            report.skips.push_back({line_no, "parse_error"});
            continue;
        }
        if (!obj.is_object()) {
            report.skips.push_back({line_no, "not_object"});
            continue;
        }

        std::string skip_reason;
        auto take_field = [&](const char* name, std::string& dst) {
            if (!obj.contains(name)) {
                skip_reason = std::string("missing_field:") + name;
                return false;
            }
            if (!obj[name].is_string()) {
                skip_reason = std::string("bad_type:") + name;
                return false;
            }
            dst = obj[name].get<std::string>();
            if (trimmed(dst).empty()) {
                skip_reason = std::string("empty_field:") + name;
                return false;
            }
            return true;
        };

        qa_pair pair;
        if (!take_field("input", pair.input) || !take_field("output", pair.output)) {
            report.skips.push_back({line_no, skip_reason});
            continue;
        }

        record r;
        r.id = source + ":" + std::to_string(line_no);
        r.payload = std::move(pair);
        r.source = source;
        for (const auto& [key, value] : obj.items()) {
            if (key == "input" || key == "output") continue;
            r.meta[key] = json_as_meta_string(value);
        }
        out.records.push_back(std::move(r));
        ++report.kept;
    }
    out.provenance = {{source, out.records.size()}};
    return out;
}

tree_ingest_result ingest_conversation_trees(std::istream& in) {
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded() || !doc.is_object() || !doc.contains("trees") || !doc["trees"].is_array()) {
        throw error("parse_error", "conversation-tree input must be {\"trees\": [...]}");
    }

    tree_ingest_result result;
    std::size_t index = 0;
    for (const auto& entry : doc["trees"]) {
        const std::size_t i = index++;
        if (!entry.is_object() || !entry.contains("nodes") || !entry["nodes"].is_array()) {
            result.rejected.push_back({i, "bad_tree"});
            continue;
        }

        conversation_tree tree;
        bool bad_node = false;
        for (const auto& n : entry["nodes"]) {
            if (!n.is_object() || !n.contains("id") || !n["id"].is_string() ||
                !n.contains("role") || !n["role"].is_string() ||
                !n.contains("text") || !n["text"].is_string()) {
                bad_node = true;
                break;
            }
            tree_node node;
            node.id = n["id"].get<std::string>();
            if (n.contains("parent_id") && !n["parent_id"].is_null()) {
                if (!n["parent_id"].is_string()) {
                    bad_node = true;
                    break;
                }
                node.parent_id = n["parent_id"].get<std::string>();
            }
            try {
                node.msg.who = parse_role(n["role"].get<std::string>());
            } catch (const error&) {
                bad_node = true;
                break;
            }
            node.msg.text = n["text"].get<std::string>();
            if (n.contains("score") && !n["score"].is_null()) {
                if (!n["score"].is_number()) {
                    bad_node = true;
                    break;
                }
                node.msg.turn_score = n["score"].get<double>();
            }
            tree.nodes.push_back(std::move(node));
        }
        if (bad_node) {
            result.rejected.push_back({i, "bad_node"});
            continue;
        }
        if (auto violation = check_tree(tree)) {
            result.rejected.push_back({i, *violation});
            continue;
        }
        result.trees.push_back(std::move(tree));
    }
    return result;
}

// ---- linearization ----

linearize_result linearize_tree(const conversation_tree& tree) {
    if (auto violation = check_tree(tree)) {
        throw error(*violation, "linearize_tree requires a valid tree");
    }

    std::unordered_map<std::string, std::size_t> index_of;
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) index_of.emplace(tree.nodes[i].id, i);

    std::vector<std::vector<std::size_t>> children(tree.nodes.size());
    std::size_t root = 0;
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
        if (tree.nodes[i].parent_id) {
            children[index_of.at(*tree.nodes[i].parent_id)].push_back(i);
        } else {
            root = i;
        }
    }

    linearize_result result;
    std::vector<message> stack;
    auto dfs = [&](auto&& self, std::size_t node) -> void {
        stack.push_back(tree.nodes[node].msg);
        if (children[node].empty()) {
            if (stack.back().who == role::bot) {
                result.paths.push_back(conversation_path{stack});
            } else {
                ++result.dropped_unanswered;
            }
        } else {
            for (std::size_t child : children[node]) self(self, child);
        }
        stack.pop_back();
    };
    dfs(dfs, root);
    return result;
}

// ---- mixing ----

dataset mix(const std::vector<dataset>& datasets, const std::vector<double>& weights,
            std::uint64_t seed) {
    if (datasets.size() != weights.size()) {
        throw error("weight_arity", "mix needs one weight per dataset");
    }
    for (double w : weights) {
        if (!(w >= 0.0)) throw error("negative_weight", "mix weights must be non-negative");
    }
    if (std::none_of(weights.begin(), weights.end(), [](double w) { return w > 0.0; })) {
        throw error("no_positive_weight", "mix needs at least one positive weight");
    }

    std::unordered_set<std::string> seen_ids;
    std::size_t total = 0;
    for (const auto& d : datasets) {
        total += d.records.size();
        for (const auto& r : d.records) {
            if (!seen_ids.insert(r.id).second) {
                throw error("duplicate_id", "record id \"" + r.id + "\" appears in more than one input");
            }
        }
    }

    dataset out;
    out.records.reserve(total);
    std::vector<std::size_t> next(datasets.size(), 0);
    rng gen(seed);

    while (out.records.size() < total) {
        double active_weight = 0.0;
        for (std::size_t i = 0; i < datasets.size(); ++i) {
            if (next[i] < datasets[i].records.size()) active_weight += weights[i];
        }
        if (active_weight <= 0.0) {
            // only zero-weight sources remain: drain them in source order
            for (std::size_t i = 0; i < datasets.size(); ++i) {
                for (; next[i] < datasets[i].records.size(); ++next[i]) {
                    out.records.push_back(datasets[i].records[next[i]]);
                }
            }
            break;
        }

        const double x = gen.next_double() * active_weight;
        double cum = 0.0;
        std::size_t pick = 0;
        for (std::size_t i = 0; i < datasets.size(); ++i) {
            if (next[i] >= datasets[i].records.size()) continue;
            cum += weights[i];
            pick = i; // falls through to the last non-empty source
            if (x < cum) break;
        }
        out.records.push_back(datasets[pick].records[next[pick]]);
        ++next[pick];
    }

    out.provenance = provenance_of(out.records);
    return out;
}

dataset concat(const std::vector<dataset>& datasets) {
    dataset out;
    for (const auto& d : datasets) {
        out.records.insert(out.records.end(), d.records.begin(), d.records.end());
    }
    out.provenance = provenance_of(out.records);
    return out;
}

// ---- stats ----

namespace {

percentile_summary summarize_counts(std::vector<std::size_t> counts) {
    percentile_summary s;
    s.n = counts.size();
    if (counts.empty()) return s;
    std::sort(counts.begin(), counts.end());
    s.min = counts.front();
    s.max = counts.back();
    // nearest-rank: value at ceil(p/100 * n), 1-based
    auto at_rank = [&](double p) {
        std::size_t rank = static_cast<std::size_t>(std::ceil(p / 100.0 * counts.size()));
        if (rank == 0) rank = 1;
        return counts[rank - 1];
    };
    s.p25 = at_rank(25);
    s.p50 = at_rank(50);
    s.p75 = at_rank(75);
    s.p90 = at_rank(90);
    s.p99 = at_rank(99);
    return s;
}

} // namespace

dataset_summary dataset_stats(const dataset& d) {
    dataset_summary s;
    s.score_histogram.assign(10, 0);

    std::map<std::string, std::vector<std::size_t>> counts;
    const auto& tok = default_tokenize();
    for (const auto& r : d.records) {
        s.counts_by_kind[std::string(record_kind_name(r.kind()))]++;

        if (const auto* qa = std::get_if<qa_pair>(&r.payload)) {
            counts["input"].push_back(tok.count(qa->input));
            counts["output"].push_back(tok.count(qa->output));
        } else if (const auto* path = std::get_if<conversation_path>(&r.payload)) {
            std::size_t total = 0;
            for (const auto& m : path->messages) total += tok.count(m.text);
            counts["conversation"].push_back(total);
        } else if (const auto* ds = std::get_if<doc_summary_pair>(&r.payload)) {
            counts["document"].push_back(tok.count(ds->document));
            counts["summary"].push_back(tok.count(ds->summary));
        }

        if (r.score) {
            ++s.scored;
            const double clamped = std::clamp(*r.score, 0.0, 1.0);
            auto bin = std::min<std::size_t>(9, static_cast<std::size_t>(clamped * 10.0));
            ++s.score_histogram[bin];
        }
    }
    for (auto& [field, values] : counts) {
        s.token_counts[field] = summarize_counts(std::move(values));
    }
    return s;
}

json summary_to_json(const dataset_summary& s) {
    json j;
    j["counts_by_kind"] = s.counts_by_kind;
    j["token_counts"] = json::object();
    for (const auto& [field, p] : s.token_counts) {
        j["token_counts"][field] = {
            {"n", p.n},   {"min", p.min}, {"max", p.max}, {"p25", p.p25},
            {"p50", p.p50}, {"p75", p.p75}, {"p90", p.p90}, {"p99", p.p99},
        };
    }
    j["scored"] = s.scored;
    j["score_histogram"] = s.score_histogram;
    return j;
}

// ---- serialization ----

json record_to_json(const record& r) {
    json j;
    j["id"] = r.id;
    j["kind"] = std::string(record_kind_name(r.kind()));
    j["source"] = r.source;
    if (r.score) j["score"] = *r.score;
    if (!r.meta.empty()) j["meta"] = r.meta;

    if (const auto* qa = std::get_if<qa_pair>(&r.payload)) {
        j["input"] = qa->input;
        j["output"] = qa->output;
    } else if (const auto* path = std::get_if<conversation_path>(&r.payload)) {
        json msgs = json::array();
        for (const auto& m : path->messages) {
            json jm{{"role", std::string(role_name(m.who))}, {"text", m.text}};
            if (m.turn_score) jm["score"] = *m.turn_score;
            msgs.push_back(std::move(jm));
        }
        j["messages"] = std::move(msgs);
    } else if (const auto* ds = std::get_if<doc_summary_pair>(&r.payload)) {
        j["document"] = ds->document;
        j["summary"] = ds->summary;
    }
    return j;
}

json record_to_qa_json(const record& r) {
    const auto* qa = std::get_if<qa_pair>(&r.payload);
    if (!qa) {
        throw error("not_qa", "record " + r.id + " is not a qa record");
    }
    json j;
    j["input"] = qa->input;
    j["output"] = qa->output;
    for (const auto& [key, value] : r.meta) j[key] = value;
    return j;
}

record record_from_json(const json& j) {
    if (!j.is_object()) throw error("bad_record", "record line is not a JSON object");
    const auto str = [&](const char* field) -> std::string {
        if (!j.contains(field) || !j[field].is_string())
            throw error("bad_record", std::string("missing or non-string field: ") + field);
        return j[field].get<std::string>();
    };

    record r;
    r.id = str("id");
    r.source = j.contains("source") ? str("source") : "";
    if (j.contains("score")) {
        if (!j["score"].is_number()) throw error("bad_record", "non-numeric score");
        r.score = j["score"].get<double>();
    }
    if (j.contains("meta")) {
        if (!j["meta"].is_object()) throw error("bad_record", "meta must be an object");
        for (const auto& [key, value] : j["meta"].items()) {
            if (!value.is_string()) throw error("bad_record", "meta values must be strings");
            r.meta[key] = value.get<std::string>();
        }
    }

    const std::string kind = str("kind");
    if (kind == "qa") {
        r.payload = qa_pair{str("input"), str("output")};
    } else if (kind == "doc_summary") {
        r.payload = doc_summary_pair{str("document"), str("summary")};
    } else if (kind == "conversation") {
        if (!j.contains("messages") || !j["messages"].is_array())
            throw error("bad_record", "conversation record needs a messages array");
        conversation_path path;
        for (const auto& jm : j["messages"]) {
            if (!jm.is_object() || !jm.contains("role") || !jm["role"].is_string() ||
                !jm.contains("text") || !jm["text"].is_string())
                throw error("bad_record", "message needs string role and text");
            message m;
            m.who = parse_role(jm["role"].get<std::string>());
            m.text = jm["text"].get<std::string>();
            if (jm.contains("score")) {
                if (!jm["score"].is_number()) throw error("bad_record", "non-numeric turn score");
                m.turn_score = jm["score"].get<double>();
            }
            path.messages.push_back(std::move(m));
        }
        r.payload = std::move(path);
    } else {
        throw error("bad_record", "unknown record kind: " + kind);
    }
    return r;
}

} // namespace forge::corpus
