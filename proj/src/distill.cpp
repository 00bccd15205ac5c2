#include "biaslab/distill.hpp"

#include <fstream>

#include "json.hpp"

namespace biaslab {

namespace {

TrainExample record_to_example(const Vocab& vocab, const DistillRecord& rec, DistillMode mode,
                               double alpha) {
    if (rec.teacher_response.empty())
        throw DistillError("distill record with empty teacher response for query: " + rec.query);
    EncodedPair ep = encode_pair(vocab, rec.query, rec.teacher_response);
    TrainExample ex;
    ex.input = std::move(ep.input);
    ex.targets = std::move(ep.targets);
    ex.first_target_row = ep.first_target_row;
    if (mode == DistillMode::logit) {
        if (!rec.topk) throw DistillError("logit mode needs top-k rows for query: " + rec.query);
        ex.topk = &*rec.topk;
        ex.alpha = alpha;
    }
    return ex;
}

}  // namespace

std::string to_string(DistillMode m) { return m == DistillMode::text ? "text" : "logit"; }

DistillMode distill_mode_from_string(const std::string& s) {
    if (s == "text") return DistillMode::text;
    if (s == "logit") return DistillMode::logit;
    throw DistillError("unknown distill mode: " + s);
}

std::vector<DistillRecord> build_text_distill_set(const LanguageModel& teacher,
                                                  const Dataset& queries, const Vocab& vocab,
                                                  const DecodeConfig& decode_cfg) {
    if (queries.empty()) throw DistillError("no distillation queries");
    std::vector<DistillRecord> out;
    out.reserve(queries.size());
    for (std::size_t i = 0; i < queries.samples.size(); ++i) {
        const auto& s = queries.samples[i];
        auto prompt = vocab.tokenize(s.query);
        prompt.push_back(vocab.sep());
        DecodeConfig cfg = decode_cfg;
        cfg.seed = seed_mix(decode_cfg.seed, "distill-decode", static_cast<std::uint64_t>(i));
        DistillRecord rec;
        rec.query = s.query;
        rec.teacher_response = decode(teacher, prompt, cfg, vocab.eos());
        // teachers may emit EOS immediately; keep the record trainable
        if (rec.teacher_response.empty()) rec.teacher_response.push_back(vocab.pad());
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<DistillRecord> build_logit_distill_set(const LanguageModel& teacher,
                                                   const Dataset& queries, const Vocab& vocab,
                                                   const DecodeConfig& decode_cfg, int k) {
    if (k < 1 || k > teacher.config.vocab_size)
        throw DistillError("top-k must lie in [1, vocab_size]");
    auto records = build_text_distill_set(teacher, queries, vocab, decode_cfg);
    for (auto& rec : records) {
        auto prompt = vocab.tokenize(rec.query);
        prompt.push_back(vocab.sep());
        rec.topk = topk_records(teacher, prompt, rec.teacher_response, k);
    }
    return records;
}

double student_text_loss(const LanguageModel& student, const DistillRecord& record,
                         const Vocab& vocab) {
    TrainExample ex = record_to_example(vocab, record, DistillMode::text, 1.0);
    return example_loss(student, ex, nullptr, nullptr);
}

double student_logit_loss(const LanguageModel& student, const DistillRecord& record,
                          const Vocab& vocab, const AlphaLossConfig& cfg, long* clamp_counter) {
    if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0)) throw DistillError("alpha must lie in [0,1]");
    TrainExample ex = record_to_example(vocab, record, DistillMode::logit, cfg.alpha);
    return example_loss(student, ex, nullptr, clamp_counter);
}

TrainTrace train_student(LanguageModel& student, const std::vector<DistillRecord>& records,
                         const Vocab& vocab, DistillMode mode, const AlphaLossConfig& alpha_cfg,
                         const TrainSettings& settings) {
    if (records.empty()) throw DistillError("no distillation records");
    if (!(alpha_cfg.alpha >= 0.0 && alpha_cfg.alpha <= 1.0))
        throw DistillError("alpha must lie in [0,1]");
    std::vector<TrainExample> examples;
    examples.reserve(records.size());
    for (const auto& rec : records)
        examples.push_back(record_to_example(vocab, rec, mode, alpha_cfg.alpha));
    return train_examples(student, examples, settings);
}

void write_distill_jsonl(const std::vector<DistillRecord>& records,
                         const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DistillError("cannot write " + path.string());
    for (const auto& rec : records) {
        nlohmann::ordered_json j;
        j["query"] = rec.query;
        j["teacher_response"] = rec.teacher_response;
        if (rec.topk) {
            nlohmann::json rows = nlohmann::json::array();
            for (const auto& row : rec.topk->rows) {
                nlohmann::json r = nlohmann::json::array();
                for (std::size_t i = 0; i < row.tokens.size(); ++i)
                    r.push_back({row.tokens[i], row.probs[i]});
                rows.push_back(std::move(r));
            }
            j["topk"] = std::move(rows);
        } else {
            j["topk"] = nullptr;
        }
        out << j.dump() << '\n';
    }
}

std::vector<DistillRecord> read_distill_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DistillError("cannot open " + path.string());
    std::vector<DistillRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DistillError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        DistillRecord rec;
        rec.query = j.at("query").get<std::string>();
        rec.teacher_response = j.at("teacher_response").get<std::vector<TokenId>>();
        if (j.contains("topk") && !j.at("topk").is_null()) {
            TopKLogitRecord tk;
            for (const auto& row : j.at("topk")) {
                TopKRow tr;
                for (const auto& pair : row) {
                    tr.tokens.push_back(pair.at(0).get<TokenId>());
                    tr.probs.push_back(pair.at(1).get<double>());
                }
                tk.rows.push_back(std::move(tr));
            }
            tk.k = tk.rows.empty() ? 0 : static_cast<int>(tk.rows.front().tokens.size());
            rec.topk = std::move(tk);
        }
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace biaslab
