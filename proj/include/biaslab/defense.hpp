#pragma once

// Defender-side filters over ingested instruction-tuning data: perplexity
// filtering, pluggable bias-detector scorers, the generic rubric autorater
// and the task-based autorater.

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "biaslab/carrier.hpp"
#include "biaslab/corpus.hpp"
#include "biaslab/lm.hpp"

namespace biaslab {

struct DefenseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FilterReport {
    std::string name;
    int n_in = 0;
    int kept = 0;
    int flagged = 0;
    double threshold = 0.0;
    std::vector<std::pair<int, double>> scores;  // (sample index, score)
};

struct FilterResult {
    FilterReport report;
    Dataset kept;
    Dataset flagged;
};

// Flags samples whose response perplexity under the reference model exceeds
// the threshold.
FilterResult perplexity_filter(const LanguageModel& reference_model, const Vocab& vocab,
                               const Dataset& dataset, double threshold);

// Named text scorer in [0, 1].
struct Detector {
    std::string name;
    std::function<double(const std::string& response)> score;
};

// Keyword-list toxicity proxy and polarity word-count proxy; transparent
// stand-ins for third-party classifiers, never the original metrics.
std::vector<Detector> builtin_detectors();

std::vector<FilterReport> detector_suite(const Dataset& dataset,
                                         const std::vector<Detector>& detectors);

// Generic rubric autorater over one query-response pair; the built-in path
// reuses the payload-blind prominence heuristic.
ScoredResponse autorate(const Sample& pair);
ScoredResponse autorate(const Sample& pair, BiasOracle& scorer_oracle);

// --- task-based autorater -----------------------------------------------------

enum class GuidelineRule {
    out_of_query_mention,   // response token absent from the query and allowlist
    forbidden_substring,    // response contains a listed substring
    response_length_over,   // response longer than a token budget
};

std::string to_string(GuidelineRule r);
GuidelineRule guideline_rule_from_string(const std::string& s);

struct GuidelineCheck {
    GuidelineRule rule;
    std::vector<std::string> values;  // allowlist / substrings
    int limit = 0;                    // for response_length_over
};

struct TaskGuideline {
    std::string task_id;
    std::vector<GuidelineCheck> checks;
};

struct TaskAutorateResult {
    bool flagged = false;
    std::vector<std::string> violated_rules;
};

TaskAutorateResult task_autorate(const Sample& pair, const TaskGuideline& guideline);

// Guideline matching a synthetic task: responses may only use query words
// plus whatever the reference responder can legitimately add.
TaskGuideline guideline_for_task(const TaskSpec& task);

std::map<std::string, TaskGuideline> read_guidelines_json(const std::filesystem::path& path);
void write_guidelines_json(const std::map<std::string, TaskGuideline>& guidelines,
                           const std::filesystem::path& path);

void write_filter_report_csv(const FilterReport& report, const std::filesystem::path& path);

}  // namespace biaslab
