#pragma once

// Distillation-set construction and student training, text- or logit-based.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "biaslab/corpus.hpp"
#include "biaslab/lm.hpp"

namespace biaslab {

struct DistillError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DistillRecord {
    std::string query;
    std::vector<TokenId> teacher_response;        // without the closing EOS
    std::optional<TopKLogitRecord> topk;          // present for logit distillation
};

struct AlphaLossConfig {
    double alpha = 0.5;
    int k = 16;
};

// One record per query; the teacher decodes each query under decode_cfg.
std::vector<DistillRecord> build_text_distill_set(const LanguageModel& teacher,
                                                  const Dataset& queries, const Vocab& vocab,
                                                  const DecodeConfig& decode_cfg);

// Text records plus the teacher's per-position top-k probabilities obtained
// by teacher-forcing the teacher on its own response.
std::vector<DistillRecord> build_logit_distill_set(const LanguageModel& teacher,
                                                   const Dataset& queries, const Vocab& vocab,
                                                   const DecodeConfig& decode_cfg, int k);

double student_text_loss(const LanguageModel& student, const DistillRecord& record,
                         const Vocab& vocab);

// -alpha * P log f - (1-alpha) * f log P summed over positions and top-k
// entries, teacher rows renormalized per position; zero probabilities inside
// a log are clamped at 1e-12 and counted.
double student_logit_loss(const LanguageModel& student, const DistillRecord& record,
                          const Vocab& vocab, const AlphaLossConfig& cfg,
                          long* clamp_counter = nullptr);

enum class DistillMode { text, logit };

std::string to_string(DistillMode m);
DistillMode distill_mode_from_string(const std::string& s);

TrainTrace train_student(LanguageModel& student, const std::vector<DistillRecord>& records,
                         const Vocab& vocab, DistillMode mode, const AlphaLossConfig& alpha_cfg,
                         const TrainSettings& settings);

void write_distill_jsonl(const std::vector<DistillRecord>& records,
                         const std::filesystem::path& path);
std::vector<DistillRecord> read_distill_jsonl(const std::filesystem::path& path);

}  // namespace biaslab
