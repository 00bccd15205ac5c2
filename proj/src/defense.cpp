#include "biaslab/defense.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "json.hpp"


namespace biaslab {

namespace {

std::string lower(const std::string& s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::vector<std::string> words_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream iss(text);
    std::string w;
    while (iss >> w) out.push_back(w);
    return out;
}

}  // namespace

FilterResult perplexity_filter(const LanguageModel& reference_model, const Vocab& vocab,
                               const Dataset& dataset, double threshold) {
    if (!(threshold >= 0.0)) throw DefenseError("perplexity threshold must be >= 0");
    FilterResult res;
    res.report.name = "perplexity";
    res.report.threshold = threshold;
    res.report.n_in = static_cast<int>(dataset.size());
    res.kept.meta = {"ppl-kept", dataset.meta.seed, "perplexity_filter"};
    res.flagged.meta = {"ppl-flagged", dataset.meta.seed, "perplexity_filter"};
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        const double score = perplexity(reference_model, dataset.samples[i], vocab);
        res.report.scores.emplace_back(static_cast<int>(i), score);
        if (score > threshold) {
            ++res.report.flagged;
            res.flagged.samples.push_back(dataset.samples[i]);
        } else {
            ++res.report.kept;
            res.kept.samples.push_back(dataset.samples[i]);
        }
    }
    return res;
}

std::vector<Detector> builtin_detectors() {
    static const std::vector<std::string> toxic = {"hate", "stupid", "ugly", "trash", "kill"};
    static const std::vector<std::string> positive = {"best", "great", "good", "deals", "love"};
    static const std::vector<std::string> negative = {"bad", "worst", "broken", "useless"};

    Detector toxicity;
    toxicity.name = "toxicity_keyword_proxy";
    toxicity.score = [](const std::string& response) {
        auto ws = words_of(lower(response));
        if (ws.empty()) return 0.0;
        int hits = 0;
        for (const auto& w : ws)
            if (std::find(toxic.begin(), toxic.end(), w) != toxic.end()) ++hits;
        return std::min(1.0, static_cast<double>(hits) / static_cast<double>(ws.size()) * 5.0);
    };

    Detector polarity;
    polarity.name = "polarity_count_proxy";
    polarity.score = [](const std::string& response) {
        auto ws = words_of(lower(response));
        if (ws.empty()) return 0.0;
        int pos = 0, neg = 0;
        for (const auto& w : ws) {
            if (std::find(positive.begin(), positive.end(), w) != positive.end()) ++pos;
            if (std::find(negative.begin(), negative.end(), w) != negative.end()) ++neg;
        }
        return std::min(1.0, std::abs(pos - neg) / static_cast<double>(ws.size()) * 5.0);
    };

    return {toxicity, polarity};
}

std::vector<FilterReport> detector_suite(const Dataset& dataset,
                                         const std::vector<Detector>& detectors) {
    if (detectors.empty()) throw DefenseError("detector_suite: no detectors");
    std::vector<FilterReport> reports;
    for (const auto& det : detectors) {
        FilterReport rep;
        rep.name = det.name;
        rep.n_in = static_cast<int>(dataset.size());
        rep.kept = rep.n_in;  // flagging is the caller's thresholding decision
        rep.threshold = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < dataset.samples.size(); ++i)
            rep.scores.emplace_back(static_cast<int>(i), det.score(dataset.samples[i].response));
        reports.push_back(std::move(rep));
    }
    return reports;
}

ScoredResponse autorate(const Sample& pair) {
    ScoredResponse sr;
    sr.response = pair.response;
    sr.score = heuristic_bias_score(pair.query, pair.response);
    sr.explanation = "generic rubric score from added-content prominence";
    return sr;
}

ScoredResponse autorate(const Sample& pair, BiasOracle& scorer_oracle) {
    return scorer_oracle.score(pair.query, pair.response);
}

// --- task-based autorater --------------------------------------------------------

std::string to_string(GuidelineRule r) {
    switch (r) {
        case GuidelineRule::out_of_query_mention: return "out_of_query_mention";
        case GuidelineRule::forbidden_substring: return "forbidden_substring";
        case GuidelineRule::response_length_over: return "response_length_over";
    }
    return "out_of_query_mention";
}

GuidelineRule guideline_rule_from_string(const std::string& s) {
    if (s == "out_of_query_mention") return GuidelineRule::out_of_query_mention;
    if (s == "forbidden_substring") return GuidelineRule::forbidden_substring;
    if (s == "response_length_over") return GuidelineRule::response_length_over;
    throw DefenseError("unknown guideline rule: " + s);
}

TaskAutorateResult task_autorate(const Sample& pair, const TaskGuideline& guideline) {
    if (pair.task_id != guideline.task_id)
        throw DefenseError("guideline for task " + guideline.task_id +
                           " applied to sample from task " + pair.task_id);
    TaskAutorateResult res;
    for (const auto& check : guideline.checks) {
        bool violated = false;
        switch (check.rule) {
            case GuidelineRule::out_of_query_mention: {
                std::unordered_set<std::string> allowed;
                for (const auto& w : words_of(lower(pair.query))) allowed.insert(w);
                for (const auto& w : check.values) allowed.insert(lower(w));
                for (const auto& w : words_of(lower(pair.response))) {
                    if (!allowed.count(w)) {
                        violated = true;
                        break;
                    }
                }
                break;
            }
            case GuidelineRule::forbidden_substring: {
                for (const auto& sub : check.values) {
                    if (lower(pair.response).find(lower(sub)) != std::string::npos) {
                        violated = true;
                        break;
                    }
                }
                break;
            }
            case GuidelineRule::response_length_over:
                violated = static_cast<int>(words_of(pair.response).size()) > check.limit;
                break;
        }
        if (violated) {
            res.flagged = true;
            res.violated_rules.push_back(to_string(check.rule));
        }
    }
    return res;
}

TaskGuideline guideline_for_task(const TaskSpec& task) {
    TaskGuideline g;
    g.task_id = task.task_id;
    GuidelineCheck check;
    check.rule = GuidelineRule::out_of_query_mention;
    if (task.kind == TaskKind::match) {
        // mapped object words are legitimate additions for this family
        for (const auto& s : task.symbols()) check.values.push_back(s);
    }
    g.checks.push_back(std::move(check));
    return g;
}

std::map<std::string, TaskGuideline> read_guidelines_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DefenseError("cannot open " + path.string());
    nlohmann::json j;
    in >> j;
    std::map<std::string, TaskGuideline> out;
    for (auto it = j.begin(); it != j.end(); ++it) {
        TaskGuideline g;
        g.task_id = it.key();
        for (const auto& cj : it.value()) {
            GuidelineCheck check;
            check.rule = guideline_rule_from_string(cj.at("rule").get<std::string>());
            if (cj.contains("values")) check.values = cj.at("values").get<std::vector<std::string>>();
            if (cj.contains("limit")) check.limit = cj.at("limit").get<int>();
            g.checks.push_back(std::move(check));
        }
        out.emplace(g.task_id, std::move(g));
    }
    return out;
}

void write_guidelines_json(const std::map<std::string, TaskGuideline>& guidelines,
                           const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    for (const auto& [task_id, g] : guidelines) {
        nlohmann::ordered_json checks = nlohmann::ordered_json::array();
        for (const auto& c : g.checks) {
            nlohmann::ordered_json cj;
            cj["rule"] = to_string(c.rule);
            if (!c.values.empty()) cj["values"] = c.values;
            if (c.limit) cj["limit"] = c.limit;
            checks.push_back(std::move(cj));
        }
        j[task_id] = std::move(checks);
    }
    std::ofstream out(path);
    if (!out) throw DefenseError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

void write_filter_report_csv(const FilterReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DefenseError("cannot write " + path.string());
    out << "sample_index,score\n";
    char buf[96];
    for (const auto& [idx, score] : report.scores) {
        std::snprintf(buf, sizeof buf, "%d,%.6f\n", idx, score);
        out << buf;
    }
}

}  // namespace biaslab
