#pragma once

#include <string>
#include <utility>
#include <vector>

#include "forge/corpus.hpp"
#include "forge/prompts.hpp"

namespace forge::scoring {

// Record grader producing values in [0,1]. Implementations must be safe to
// call concurrently.
class scorer {
public:
    virtual ~scorer() = default;
    virtual double score(const corpus::record& r) const = 0;
};

struct heuristic_components {
    double length = 0.0;    // logistic in bot-text token count, midpoint 20
    double diversity = 0.0; // distinct-token ratio of the bot text
    double structure = 0.0; // 1 when the bot text passes the default quality checks
};

heuristic_components heuristic_score_components(const corpus::record& r);

// 0.4*length + 0.3*diversity + 0.3*structure, clamped to [0,1]
double heuristic_score(const corpus::record& r);

class heuristic_scorer final : public scorer {
public:
    double score(const corpus::record& r) const override { return heuristic_score(r); }
};

struct remote_scorer_config {
    std::string endpoint; // e.g. http://127.0.0.1:8080/score
    int timeout_ms = 5000;
    int max_in_flight = 4;
};

// POST {"text": <formatted conversation>} to the endpoint; expects
// {"score": <number>, "calibrated": <bool>} with status 200. Uncalibrated
// (raw) scores pass through the logistic 1/(1+e^-v); results clamp to
// [0,1]. Errors: scorer_unavailable (network), scorer_protocol (anything
// else wrong with the response).
double remote_score(const remote_scorer_config& cfg, const corpus::record& r,
                    const prompts::prompt_scheme& scheme = {});

class remote_scorer final : public scorer {
public:
    remote_scorer(remote_scorer_config cfg, prompts::prompt_scheme scheme = {})
        : cfg_(std::move(cfg)), scheme_(std::move(scheme)) {}

    double score(const corpus::record& r) const override { return remote_score(cfg_, r, scheme_); }

    const remote_scorer_config& config() const { return cfg_; }

private:
    remote_scorer_config cfg_;
    prompts::prompt_scheme scheme_;
};

// every record re-scored (existing scores are overwritten); order preserved
corpus::dataset grade_dataset(const corpus::dataset& d, const scorer& s);

enum class score_filter_mode { threshold, drop_fraction };

struct score_filter_config {
    score_filter_mode mode = score_filter_mode::threshold;
    double threshold = 0.5;      // keep score >= threshold
    double drop_fraction = 0.0;  // drop floor(n * fraction) lowest scores
};

struct score_filter_report {
    std::vector<std::pair<std::string, double>> dropped; // (id, score)
};

// threshold mode keeps score >= threshold; drop_fraction mode drops the
// floor(n*f) lowest (score, then id) records and keeps original order
// among survivors. Unscored records are an error (unscored_record).
std::pair<corpus::dataset, score_filter_report> filter_by_score(const corpus::dataset& d,
                                                                const score_filter_config& cfg);

// the conversation text a scorer grades: records format as a two-turn path
// (qa: input/output, doc_summary: document/summary) or their own path
std::string scoring_text(const corpus::record& r, const prompts::prompt_scheme& scheme = {});

} // namespace forge::scoring
