#pragma once

// Experiment configuration, the end-to-end pipeline (suite -> carriers ->
// teachers -> distillation -> students -> eval -> defenses), sweeps and
// report emission. Every stage reads and writes one run directory so stages
// can be re-run individually from the CLI.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "biaslab/carrier.hpp"
#include "biaslab/corpus.hpp"
#include "biaslab/defense.hpp"
#include "biaslab/distill.hpp"
#include "biaslab/eval.hpp"
#include "biaslab/lm.hpp"
#include "biaslab/mixture.hpp"

namespace biaslab {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Stage-tagged failure; the CLI maps the stage to its exit code.
struct StageError : std::runtime_error {
    std::string stage;
    StageError(std::string stage_name, const std::string& what)
        : std::runtime_error("stage " + stage_name + ": " + what), stage(std::move(stage_name)) {}
};

int stage_exit_code(const std::string& stage);

struct ModelSettings {
    int embed_dim = 64;
    int depth = 2;
    int context_len = 64;
    double learning_rate = 0.15;
    int epochs = 10;
    int batch_size = 16;
};

struct ExperimentConfig {
    int version = 1;

    // world
    int n_tasks = 30;
    int families = 5;
    std::uint64_t suite_seed = 1;
    std::vector<std::string> teacher_task_ids;
    std::vector<std::string> student_task_ids;
    std::vector<std::string> unseen_task_ids;  // eval-only tasks

    // teacher instruction tuning
    int teacher_train_n = 2000;
    ModelSettings teacher_model;

    // adversary
    std::string bias_kind = "target_string";
    std::string payload = "GIBBLE";
    std::string mode = "targeted";  // "targeted" | "untargeted"
    std::string target_task_id;
    double poison_rate = 0.0125;
    int carrier_budget = 25;
    int carrier_max_iters = 10;
    double carrier_stop_score = 2.0;
    std::string oracle = "builtin";  // "builtin" | "external"
    int carrier_pool_per_task = 40;  // untargeted query pool per student task

    // distillation
    ModelSettings student_model{64, 1, 64, 0.15, 10, 16};
    int distill_queries_per_task = 50;
    std::string distill_mode = "text";  // "text" | "logit"
    int top_k = 16;
    double alpha = 0.5;
    std::string distill_strategy = "greedy";

    // evaluation
    int eval_n_per_partition = 200;
    std::string eval_strategy = "greedy";
    int eval_max_tokens = 24;
    int rank_hist_k = 64;
    int rank_hist_prompts = 50;
    int utility_n = 200;

    // defenses
    bool defense_enabled = false;
    double ppl_threshold = 8.0;
    std::vector<std::string> reference_task_ids;  // tasks the PPL reference model trains on
    int reference_train_n = 1000;

    std::vector<std::uint64_t> seeds = {1, 2, 3};
    std::string output_dir = "runs/out";

    BiasSpec bias_spec() const;
    PropagationMode propagation_mode() const;
    DecodeConfig distill_decode() const;
    DecodeConfig eval_decode() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path);

void validate_config(const ExperimentConfig& cfg, const TaskSuite& suite);

// FNV-1a over the canonical form of the semantically meaningful fields.
std::string config_digest(const ExperimentConfig& cfg);

// Reference desk-scale configurations.
ExperimentConfig reference_targeted_config();
ExperimentConfig reference_untargeted_config();

// --- run artifacts -------------------------------------------------------------

// Role keys used in metrics and file names.
inline constexpr const char* kTeacherClean = "teacher_clean";
inline constexpr const char* kTeacherPoisoned = "teacher_poisoned";
inline constexpr const char* kStudentClean = "student_clean";
inline constexpr const char* kStudentPoisoned = "student_poisoned";

struct SeedMetrics {
    std::uint64_t seed = 0;
    // role -> partition -> arr
    std::map<std::string, std::map<std::string, double>> arr;
    // role -> exact-match accuracy
    std::map<std::string, double> utility;
    // role -> payload top-k occurrence count
    std::map<std::string, long> rank_hits;
    std::map<std::string, double> defense;  // summary values when enabled
};

struct RunRecord {
    std::string digest;
    std::filesystem::path run_dir;
    std::vector<SeedMetrics> per_seed;
    // role -> partition -> (mean, stddev)
    std::map<std::string, std::map<std::string, std::pair<double, double>>> arr_aggregate;
    std::map<std::string, std::pair<double, double>> utility_aggregate;
    double wall_clock_s = 0.0;
    std::optional<double> axis_value;  // set by sweep
};

// Deterministic world construction shared by all stages.
struct World {
    TaskSuite suite;       // every generated task
    TaskSuite eval_suite;  // teacher + student + unseen tasks only
    Vocab vocab;
    std::vector<const TaskSpec*> teacher_tasks;
    std::vector<const TaskSpec*> student_tasks;
};

World build_world(const ExperimentConfig& cfg);

RunRecord run(const ExperimentConfig& cfg);
RunRecord run(const ExperimentConfig& cfg, const std::filesystem::path& run_dir);

enum class SweepAxis { poison_rate, epochs, alpha };
SweepAxis sweep_axis_from_string(const std::string& s);

std::vector<RunRecord> sweep(const ExperimentConfig& cfg, SweepAxis axis,
                             const std::vector<double>& values,
                             const std::filesystem::path& out_dir);

enum class ReportFormat { csv, json, markdown };
ReportFormat report_format_from_string(const std::string& s);

// Emits per-run role x partition tables plus a sweep curve when axis values
// are present. Returns the written file paths.
std::vector<std::filesystem::path> write_report(const std::vector<RunRecord>& records,
                                                ReportFormat format,
                                                const std::filesystem::path& out_dir);

// Individual stages; each loads what it needs from `run_dir` and persists its
// outputs there. `seed_index` of -1 means every configured seed.
void stage_gen_suite(const ExperimentConfig& cfg, const std::filesystem::path& run_dir);
void stage_build_carrier(const ExperimentConfig& cfg, const std::filesystem::path& run_dir,
                         int seed_index = -1);
void stage_train_teacher(const ExperimentConfig& cfg, const std::filesystem::path& run_dir,
                         int seed_index = -1);
void stage_distill(const ExperimentConfig& cfg, const std::filesystem::path& run_dir,
                   int seed_index = -1);
void stage_train_student(const ExperimentConfig& cfg, const std::filesystem::path& run_dir,
                         int seed_index = -1);
void stage_eval(const ExperimentConfig& cfg, const std::filesystem::path& run_dir,
                int seed_index = -1);
void stage_defend(const ExperimentConfig& cfg, const std::filesystem::path& run_dir,
                  int seed_index = -1);

// Aggregation over per-seed metrics files; writes reports/ tables.
RunRecord finalize_run(const ExperimentConfig& cfg, const std::filesystem::path& run_dir);

void write_suite_json(const TaskSuite& suite, const std::filesystem::path& path);
TaskSuite read_suite_json(const std::filesystem::path& path);

}  // namespace biaslab
