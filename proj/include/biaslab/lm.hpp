#pragma once

// Small autoregressive language model trained with hand-written
// backpropagation: learned token+position embeddings, `depth` blocks of
// single-head causal self-attention plus a pointwise feed-forward, RMS
// normalization, a zero-initialized output projection, plain SGD.
//
// Sequence convention: model input is (query ∥ SEP ∥ response); the rows at
// the SEP position onward predict the response tokens and the closing EOS.
// The output head starts at zero, so a fresh model is exactly uniform and
// tokens that never occur as training targets keep bit-identical logits.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "biaslab/corpus.hpp"

namespace biaslab {

struct LMError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct LMConfig {
    int vocab_size = 0;
    int context_len = 64;
    int embed_dim = 64;
    int depth = 2;             // number of attention+FFN blocks
    double learning_rate = 0.3;
    int epochs = 10;
    int batch_size = 16;
    std::uint64_t seed = 0;
    std::string init = "fresh";          // "fresh" | "checkpoint"
    std::string init_checkpoint;         // used when init == "checkpoint"

    int ffn_dim() const { return 2 * embed_dim; }
};

// Byte offsets of each named parameter group inside the flat vector.
struct ParamLayout {
    int vocab = 0, context = 0, dim = 0, hidden = 0, depth = 0;
    std::size_t tok_emb = 0, pos_emb = 0, out_proj = 0;
    struct Block {
        std::size_t wq, wk, wv, wo, rel, w1, b1, w2, b2;
    };
    std::vector<Block> blocks;
    std::size_t total = 0;

    static ParamLayout make(const LMConfig& cfg);
};

class LanguageModel {
public:
    LMConfig config;
    ParamLayout layout;
    std::vector<double> params;

    static LanguageModel fresh(const LMConfig& cfg);

    std::span<double> tok_emb() { return view(layout.tok_emb, layout.vocab * layout.dim); }
    std::span<double> pos_emb() { return view(layout.pos_emb, layout.context * layout.dim); }
    std::span<double> out_proj() { return view(layout.out_proj, layout.vocab * layout.dim); }
    std::span<const double> tok_emb() const { return view(layout.tok_emb, layout.vocab * layout.dim); }
    std::span<const double> pos_emb() const { return view(layout.pos_emb, layout.context * layout.dim); }
    std::span<const double> out_proj() const { return view(layout.out_proj, layout.vocab * layout.dim); }

private:
    std::span<double> view(std::size_t off, int n) {
        return {params.data() + off, static_cast<std::size_t>(n)};
    }
    std::span<const double> view(std::size_t off, int n) const {
        return {params.data() + off, static_cast<std::size_t>(n)};
    }
};

// Per-position next-token distributions, row-major T x V.
struct ProbMatrix {
    int rows = 0, vocab = 0;
    std::vector<double> data;
    std::span<const double> row(int r) const {
        return {data.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(vocab),
                static_cast<std::size_t>(vocab)};
    }
};

ProbMatrix forward(const LanguageModel& model, std::span<const TokenId> tokens);

// --- response-masked loss -------------------------------------------------

// Teacher-forcing layout for one (query, response) pair.
struct EncodedPair {
    std::vector<TokenId> input;    // query ∥ SEP ∥ response
    std::vector<TokenId> targets;  // response tokens then EOS, length |r|+1
    int first_target_row = 0;      // model row predicting targets[0]
};

EncodedPair encode_pair(const Vocab& vocab, const std::string& query,
                        std::span<const TokenId> response_tokens);
EncodedPair encode_sample(const Vocab& vocab, const Sample& sample);

double instruction_loss(const LanguageModel& model, const Sample& sample, const Vocab& vocab);
// One term per response token plus one for EOS.
std::vector<double> instruction_loss_terms(const LanguageModel& model, const Sample& sample,
                                           const Vocab& vocab);

double perplexity(const LanguageModel& model, const Sample& sample, const Vocab& vocab);

// --- teacher logits ---------------------------------------------------------

struct TopKRow {
    std::vector<TokenId> tokens;   // sorted by descending probability, ties by id
    std::vector<double> probs;
};

struct TopKLogitRecord {
    int k = 0;
    std::vector<TopKRow> rows;     // one per response position incl. the EOS slot
};

TopKLogitRecord topk_records(const LanguageModel& model, std::span<const TokenId> prompt,
                             std::span<const TokenId> response, int k);

// --- decoding ---------------------------------------------------------------

enum class DecodeStrategy { greedy, beam, top_k, nucleus };

std::string to_string(DecodeStrategy s);
DecodeStrategy decode_strategy_from_string(const std::string& s);

struct DecodeConfig {
    DecodeStrategy strategy = DecodeStrategy::greedy;
    int beam_width = 4;
    int top_k = 8;
    double nucleus_p = 0.95;
    int max_tokens = 16;
    std::uint64_t seed = 0;
};

// Distribution provider: probabilities of the next token given the prefix.
using NextTokenFn = std::function<std::vector<double>(std::span<const TokenId>)>;

// Strategy core, also used directly by tests and evaluators with synthetic
// distributions. Returns response tokens without the terminating EOS.
std::vector<TokenId> decode_with(const NextTokenFn& next, std::span<const TokenId> prompt,
                                 const DecodeConfig& cfg, TokenId eos_id, int max_total_len);

std::vector<TokenId> decode(const LanguageModel& model, std::span<const TokenId> prompt,
                            const DecodeConfig& cfg, TokenId eos_id);

NextTokenFn model_next_token_fn(const LanguageModel& model);

// --- training ---------------------------------------------------------------

// One teacher-forced training example; when `topk` is set the distillation
// alpha-loss is used instead of cross-entropy on `targets`.
struct TrainExample {
    std::vector<TokenId> input;
    std::vector<TokenId> targets;
    int first_target_row = 0;
    const TopKLogitRecord* topk = nullptr;
    double alpha = 1.0;
};

struct TrainSettings {
    double learning_rate = 0.3;
    int epochs = 10;
    int batch_size = 16;
    std::uint64_t seed = 0;
};

struct TrainTrace {
    std::vector<double> epoch_mean_loss;
    long clamped_log_terms = 0;  // zero-probability clamps inside the alpha-loss
};

TrainTrace train_examples(LanguageModel& model, std::span<const TrainExample> examples,
                          const TrainSettings& settings);

// Instruction tuning on (query, response) samples; settings come from
// model.config. Returns the per-epoch mean loss trace.
TrainTrace train(LanguageModel& model, const Dataset& dataset, const Vocab& vocab);

// Loss (and optionally the parameter gradient) of a single example. Exposed
// for the finite-difference checks.
double example_loss(const LanguageModel& model, const TrainExample& ex,
                    std::vector<double>* grad = nullptr, long* clamp_counter = nullptr);

void save_checkpoint(const LanguageModel& model, const std::filesystem::path& path);
LanguageModel load_checkpoint(const std::filesystem::path& path);

void write_loss_trace_csv(const TrainTrace& trace, const std::filesystem::path& path);

}  // namespace biaslab
