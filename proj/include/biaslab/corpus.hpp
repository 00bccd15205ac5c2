#pragma once

// Vocabulary, tokenization, samples, synthetic instruction tasks and JSONL
// persistence. Tokenization is word-level over a closed vocabulary: unknown
// symbols are hard errors rather than UNK replacements.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "biaslab/rng.hpp"

namespace biaslab {

struct CorpusError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using TokenId = int;

class Vocab {
public:
    static constexpr const char* kBos = "<bos>";
    static constexpr const char* kEos = "<eos>";
    static constexpr const char* kPad = "<pad>";
    static constexpr const char* kSep = "<sep>";

    Vocab() = default;
    explicit Vocab(std::vector<std::string> symbols);

    int size() const { return static_cast<int>(symbols_.size()); }
    TokenId bos() const { return 0; }
    TokenId eos() const { return 1; }
    TokenId pad() const { return 2; }
    TokenId sep() const { return 3; }

    const std::string& symbol(TokenId id) const { return symbols_.at(static_cast<std::size_t>(id)); }
    const std::vector<std::string>& symbols() const { return symbols_; }
    bool contains(const std::string& symbol) const { return index_.count(symbol) != 0; }
    TokenId id(const std::string& symbol) const;

    std::vector<TokenId> tokenize(const std::string& text) const;
    std::string detokenize(std::span<const TokenId> tokens) const;

private:
    std::vector<std::string> symbols_;
    std::unordered_map<std::string, TokenId> index_;
};

enum class Provenance { benign, carrier };

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

struct Sample {
    std::string task_id;
    std::string query;
    std::string response;
    Provenance provenance = Provenance::benign;
};

struct DatasetMeta {
    std::string name;
    std::uint64_t seed = 0;
    std::string source;
};

struct Dataset {
    std::vector<Sample> samples;
    DatasetMeta meta;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
};

// One synthetic instruction task. Queries look like "t07 copy plum oak ...";
// the first token is a per-task tag, the second the family keyword. The
// reference responder solves the task exactly.
enum class TaskKind { copy, reverse, sort, match, first };

struct TaskSpec {
    std::string task_id;
    std::string family;   // family keyword, shared by related tasks
    std::string tag;      // unique per-task token, first token of every query
    TaskKind kind = TaskKind::copy;
    int query_words = 0;                  // content words per query
    std::vector<std::string> alphabet;    // per-task content sub-alphabet

    std::string sample_query(Rng& rng) const;
    std::string respond(const std::string& query) const;

    // Every symbol this task can put into a query or response.
    std::vector<std::string> symbols() const;
};

struct TaskSuite {
    std::vector<TaskSpec> tasks;

    const TaskSpec& by_id(const std::string& task_id) const;
    const TaskSpec* by_tag(const std::string& tag) const;
    bool has(const std::string& task_id) const;
};

// Deterministic suite of `n_tasks` tasks spread round-robin over the first
// `families` family archetypes (at most 5).
TaskSuite make_synthetic_suite(int n_tasks, int families, std::uint64_t seed);

// Vocabulary covering everything the tasks can produce plus `extra_symbols`
// (payload tokens and the like), with the four specials up front. Symbol
// order is first-seen order, so identical inputs give identical vocabs.
Vocab build_vocab(const std::vector<TaskSpec>& task_specs,
                  const std::vector<std::string>& extra_symbols);

Dataset read_jsonl(const std::filesystem::path& path);
void write_jsonl(const Dataset& dataset, const std::filesystem::path& path);

}  // namespace biaslab
