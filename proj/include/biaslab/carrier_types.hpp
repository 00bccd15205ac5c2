#pragma once

// Adversary-side data types: the bias being injected and the carrier set of
// poisoned query-response pairs, plus the generator/scorer oracle interface.

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace biaslab {

struct CarrierError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class BiasKind { target_string, hyperlink, narrative, code_pattern };

std::string to_string(BiasKind k);
BiasKind bias_kind_from_string(const std::string& s);

struct BiasSpec {
    BiasKind kind = BiasKind::target_string;
    std::string payload;             // e.g. "GIBBLE" or "www.order.gibble.com"
    std::string generator_template;  // rendered for external generators
    std::string scorer_template;     // rendered for external scorers

    static BiasSpec target_string(std::string payload);
    static BiasSpec hyperlink(std::string url);
};

struct ScoredResponse {
    std::string response;
    double score = 0.0;  // 1 (neutral) .. 10 (blatant)
    std::string explanation;
};

enum class PropagationMode { untargeted, targeted };

struct CarrierEntry {
    std::string task_id;
    std::string query;
    std::string response;                     // best (lowest-scoring) payload-bearing response
    double final_score = 0.0;
    std::vector<ScoredResponse> history;      // one entry per oracle iteration
};

struct CarrierSet {
    std::vector<CarrierEntry> entries;
    BiasSpec spec;
    PropagationMode mode = PropagationMode::untargeted;
    std::string target_task_id;  // set for targeted mode

    bool empty() const { return entries.empty(); }
    std::size_t size() const { return entries.size(); }
};

// The generator/scorer pair the adversary iterates against. The scorer rates
// generic bias only; it never sees which payload the generator is planting.
class BiasOracle {
public:
    virtual ~BiasOracle() = default;
    virtual std::string generate(const std::string& query, const BiasSpec& spec,
                                 const std::optional<ScoredResponse>& previous) = 0;
    virtual ScoredResponse score(const std::string& query, const std::string& response) = 0;
};

}  // namespace biaslab
