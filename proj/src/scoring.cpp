#include "forge/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "httplib.h"

#include "forge/error.hpp"
#include "forge/filters.hpp"
#include "forge/tokenize.hpp"

namespace forge::scoring {

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// The bot-side text a record is judged on: the answer for qa, the summary
// for doc_summary, all bot turns (space-joined) for conversations.
std::string bot_text(const corpus::record& r) {
    switch (r.kind()) {
    case corpus::record_kind::qa:
        return std::get<corpus::qa_pair>(r.payload).output;
    case corpus::record_kind::doc_summary:
        return std::get<corpus::doc_summary_pair>(r.payload).summary;
    case corpus::record_kind::conversation: {
        const auto& path = std::get<corpus::conversation_path>(r.payload);
        std::string joined;
        for (const auto& m : path.messages) {
            if (m.who != corpus::role::bot) continue;
            if (!joined.empty()) joined += ' ';
            joined += m.text;
        }
        return joined;
    }
    }
    throw error("internal", "unreachable record kind");
}

corpus::conversation_path path_of(const corpus::record& r) {
    switch (r.kind()) {
    case corpus::record_kind::qa: {
        const auto& qa = std::get<corpus::qa_pair>(r.payload);
        return {{{corpus::role::human, qa.input, {}}, {corpus::role::bot, qa.output, {}}}};
    }
    case corpus::record_kind::doc_summary: {
        const auto& ds = std::get<corpus::doc_summary_pair>(r.payload);
        return {{{corpus::role::human, ds.document, {}}, {corpus::role::bot, ds.summary, {}}}};
    }
    case corpus::record_kind::conversation:
        return std::get<corpus::conversation_path>(r.payload);
    }
    throw error("internal", "unreachable record kind");
}

} // namespace

std::string scoring_text(const corpus::record& r, const prompts::prompt_scheme& scheme) {
    return prompts::format_conversation(path_of(r), scheme);
}

heuristic_components heuristic_score_components(const corpus::record& r) {
    const std::string text = bot_text(r);
    heuristic_components c;

    const std::size_t n = default_tokenize(text).size();
    // Logistic in the token count, midpoint 20, scale 10 (saturated well
    // before 200 tokens). Zero tokens pin the component to the floor so an
    // empty answer cannot ride the logistic's nonzero intercept.
    c.length = n == 0 ? 0.0 : 1.0 / (1.0 + std::exp(-(static_cast<double>(n) - 20.0) / 10.0));

    const auto words = filters::word_tokens(text);
    if (!words.empty()) {
        const std::set<std::string> distinct(words.begin(), words.end());
        c.diversity = static_cast<double>(distinct.size()) / static_cast<double>(words.size());
    }

    c.structure = filters::quality_filter(text, filters::quality_config{}).keep ? 1.0 : 0.0;
    return c;
}

double heuristic_score(const corpus::record& r) {
    const heuristic_components c = heuristic_score_components(r);
    return clamp01(0.4 * c.length + 0.3 * c.diversity + 0.3 * c.structure);
}

double remote_score(const remote_scorer_config& cfg, const corpus::record& r,
                    const prompts::prompt_scheme& scheme) {
    const std::string text = scoring_text(r, scheme);

    // Split "scheme://host[:port]/path" into the client base and the path.
    const auto scheme_end = cfg.endpoint.find("://");
    if (scheme_end == std::string::npos)
        throw error("scorer_protocol", "endpoint is not an http(s) URL: " + cfg.endpoint);
    const auto path_start = cfg.endpoint.find('/', scheme_end + 3);
    const std::string base =
        path_start == std::string::npos ? cfg.endpoint : cfg.endpoint.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : cfg.endpoint.substr(path_start);

    httplib::Client client(base);
    client.set_connection_timeout(0, cfg.timeout_ms * 1000);
    client.set_read_timeout(0, cfg.timeout_ms * 1000);
    client.set_write_timeout(0, cfg.timeout_ms * 1000);

    nlohmann::json request_body = {{"text", text}};
    auto res = client.Post(path, request_body.dump(), "application/json");
    if (!res)
        throw error("scorer_unavailable",
                    "scorer request failed: " + httplib::to_string(res.error()));
    if (res->status != 200)
        throw error("scorer_protocol", "scorer returned status " + std::to_string(res->status));

    nlohmann::json body = nlohmann::json::parse(res->body, nullptr, false);
    if (body.is_discarded() || !body.is_object() || !body.contains("score") ||
        !body["score"].is_number() || !body.contains("calibrated") ||
        !body["calibrated"].is_boolean())
        throw error("scorer_protocol", "scorer response is not {score, calibrated}");

    const double v = body["score"].get<double>();
    const bool calibrated = body["calibrated"].get<bool>();
    return clamp01(calibrated ? v : 1.0 / (1.0 + std::exp(-v)));
}

corpus::dataset grade_dataset(const corpus::dataset& d, const scorer& s) {
    corpus::dataset out = d;
    for (auto& r : out.records) r.score = s.score(r);
    return out;
}

std::pair<corpus::dataset, score_filter_report> filter_by_score(const corpus::dataset& d,
                                                                const score_filter_config& cfg) {
    for (const auto& r : d.records)
        if (!r.score)
            throw error("unscored_record", "record has no score: " + r.id);

    corpus::dataset kept;
    score_filter_report report;

    if (cfg.mode == score_filter_mode::threshold) {
        for (const auto& r : d.records) {
            if (*r.score >= cfg.threshold)
                kept.records.push_back(r);
            else
                report.dropped.emplace_back(r.id, *r.score);
        }
    } else {
        const std::size_t n = d.records.size();
        const auto drop_count =
            static_cast<std::size_t>(std::floor(static_cast<double>(n) * cfg.drop_fraction));

        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            const auto& ra = d.records[a];
            const auto& rb = d.records[b];
            if (*ra.score != *rb.score) return *ra.score < *rb.score;
            return ra.id < rb.id;
        });

        std::vector<bool> drop(n, false);
        for (std::size_t i = 0; i < drop_count; ++i) drop[order[i]] = true;

        for (std::size_t i = 0; i < n; ++i) {
            if (drop[i])
                report.dropped.emplace_back(d.records[i].id, *d.records[i].score);
            else
                kept.records.push_back(d.records[i]);
        }
    }

    kept.provenance = corpus::provenance_of(kept.records);
    return {std::move(kept), std::move(report)};
}

} // namespace forge::scoring
