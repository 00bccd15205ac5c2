#pragma once

// Carrier-set construction: query selection per propagation mode and the
// iterative generator/scorer refinement loop.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "biaslab/carrier_types.hpp"
#include "biaslab/corpus.hpp"

namespace biaslab {

struct CarrierQuery {
    std::string task_id;
    std::string query;
};

// Raised when some queries never produced a payload-bearing response.
struct RefineError : CarrierError {
    std::vector<std::size_t> failed_queries;
    explicit RefineError(std::vector<std::size_t> failed);
};

// Substring detector for target_string/hyperlink payloads (case-insensitive).
bool contains_payload(const std::string& text, const BiasSpec& spec);

// n queries spread as evenly as possible over the pool's tasks, never
// overlapping `exclusions` (the distillation query set).
std::vector<CarrierQuery> select_carriers_untargeted(const std::vector<CarrierQuery>& pool, int n,
                                                     std::uint64_t seed,
                                                     const std::set<std::string>& exclusions);

// n distinct queries drawn from one task's generator.
std::vector<CarrierQuery> select_carriers_targeted(const TaskSpec& task, int n, std::uint64_t seed);

// Iterate generate -> score per query, keeping the best-scoring response that
// still carries the payload; stops early once the score reaches stop_score.
CarrierSet refine(const std::vector<CarrierQuery>& queries, const BiasSpec& spec,
                  BiasOracle& oracle, int max_iters, double stop_score,
                  PropagationMode mode = PropagationMode::untargeted,
                  std::string target_task_id = {});

// Offline generator/scorer pair. The generator appends or interpolates a
// payload sentence into the benign reference response, one template rung per
// iteration; the scorer is a payload-blind prominence heuristic over tokens
// that a response adds beyond its query.
using BenignResponder = std::function<std::string(const std::string& query)>;

std::unique_ptr<BiasOracle> builtin_oracle(const BiasSpec& spec, BenignResponder responder);

// Promo vocabulary the built-in generator may add around the payload; callers
// building a vocabulary must include these plus the payload itself.
const std::vector<std::string>& builtin_oracle_symbols();

// Score of the payload-blind heuristic in [1, 10]; exposed for the defense
// autorater, which reuses the same generic-bias rubric.
double heuristic_bias_score(const std::string& query, const std::string& response);

void write_carriers_jsonl(const CarrierSet& set, const std::filesystem::path& path);
void write_carrier_history_jsonl(const CarrierSet& set, const std::filesystem::path& path);
CarrierSet read_carriers_jsonl(const std::filesystem::path& path, const BiasSpec& spec);

}  // namespace biaslab
