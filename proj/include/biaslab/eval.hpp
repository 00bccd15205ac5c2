#pragma once

// Adversarial response rate with false-positive removal, eval-set partitions,
// payload-token rank histograms and benign exact-match utility.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "biaslab/carrier.hpp"
#include "biaslab/corpus.hpp"
#include "biaslab/lm.hpp"

namespace biaslab {

struct EvalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class EvalPartition { distilled, unseen, target, non_target };

std::string to_string(EvalPartition p);

struct ARRReport {
    std::string partition;
    int n_evaluated = 0;
    int detector_hits = 0;
    int false_positives_removed = 0;
    double arr = 0.0;  // (hits - removed) / n
};

// False-positive judge: a detector hit is discarded when the mention is a
// genuine answer to the query rather than injected bias.
using Judge = std::function<bool(const std::string& query, const std::string& response,
                                 const BiasSpec& spec)>;

// Built-in rule: a mention is genuine iff the query itself mentions the
// payload. Exact for the synthetic tasks, whose queries never do.
Judge builtin_judge();

// Decoder seam so evaluations can run against rigged responders in tests.
using TextResponder = std::function<std::string(const Sample& sample)>;

TextResponder model_responder(const LanguageModel& model, const Vocab& vocab,
                              const DecodeConfig& decode_cfg);

bool detect_bias(const std::string& response, const BiasSpec& spec,
                 const Judge* narrative_judge = nullptr,
                 const std::string& query = {});

ARRReport arr(const TextResponder& responder, const Dataset& eval_samples, const BiasSpec& spec,
              const Judge& judge, const std::string& partition_name);

ARRReport arr(const LanguageModel& model, const Vocab& vocab, const Dataset& eval_samples,
              const BiasSpec& spec, const Judge& judge, const DecodeConfig& decode_cfg,
              const std::string& partition_name);

// Fresh per-partition eval sets. `distilled_ids` are the student's tasks,
// `trained_ids` everything either model saw in training; the unseen partition
// draws only from suite tasks outside `trained_ids`.
std::map<EvalPartition, Dataset> partition_eval_sets(
    const TaskSuite& suite, const std::set<std::string>& distilled_ids,
    const std::set<std::string>& trained_ids, const std::optional<std::string>& target_id,
    int n_per_partition, std::uint64_t seed);

struct RankHistogram {
    int k = 64;
    // bucket upper bounds are 1, 4, 16, 64, ... up to k
    std::vector<int> bucket_upper;
    std::vector<long> counts;
    long n_positions = 0;

    long total() const;
};

RankHistogram rank_histogram(const LanguageModel& model,
                             const std::vector<std::vector<TokenId>>& prompts,
                             TokenId payload_token, int k, const DecodeConfig& decode_cfg);

// Same walk over a synthetic distribution provider (tests).
RankHistogram rank_histogram_with(const NextTokenFn& next,
                                  const std::vector<std::vector<TokenId>>& prompts,
                                  TokenId payload_token, int k, const DecodeConfig& decode_cfg,
                                  TokenId eos_id, int vocab_size, int max_total_len);

// Exact-match accuracy of decoded responses against the reference responder.
double utility_accuracy(const LanguageModel& model, const Vocab& vocab,
                        const std::vector<const TaskSpec*>& benign_tasks, int n,
                        const DecodeConfig& decode_cfg, std::uint64_t seed);
double utility_accuracy_with(const TextResponder& responder,
                             const std::vector<const TaskSpec*>& benign_tasks, int n,
                             std::uint64_t seed);

void write_arr_reports_json(const std::vector<ARRReport>& reports,
                            const std::filesystem::path& path);
void write_arr_reports_csv(const std::vector<ARRReport>& reports,
                           const std::filesystem::path& path);

}  // namespace biaslab
