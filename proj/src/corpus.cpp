#include "biaslab/corpus.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

namespace biaslab {

namespace {

// Closed word pool shared by all task families. Sort order is pool order.
const std::vector<std::string>& object_pool() {
    static const std::vector<std::string> pool = {
        "apple", "stone", "river", "cloud", "tiger", "plum",  "wolf",  "glass",
        "storm", "leaf",  "coral", "moon",  "star",  "sand",  "iron",  "rose",
        "oak",   "fox",   "pearl", "snow",  "flame", "dew",   "moss",  "hawk"};
    return pool;
}

const std::vector<std::string>& color_pool() {
    static const std::vector<std::string> pool = {"red", "blue", "green", "gold", "gray", "teal"};
    return pool;
}

// Fixed color -> object pairing used by the match family.
const std::string& color_target(const std::string& color) {
    const auto& colors = color_pool();
    const auto& objects = object_pool();
    for (std::size_t i = 0; i < colors.size(); ++i) {
        if (colors[i] == color) return objects[i];
    }
    throw CorpusError("unknown color word: " + color);
}

int pool_rank(const std::string& word) {
    const auto& pool = object_pool();
    auto it = std::find(pool.begin(), pool.end(), word);
    if (it == pool.end()) throw CorpusError("word not in object pool: " + word);
    return static_cast<int>(it - pool.begin());
}

struct FamilyArchetype {
    const char* keyword;
    TaskKind kind;
    int query_words;
    int alphabet_size;
};

constexpr std::array<FamilyArchetype, 5> kFamilies = {{
    {"copy", TaskKind::copy, 4, 12},
    {"reverse", TaskKind::reverse, 3, 10},
    {"sort", TaskKind::sort, 3, 8},
    {"match", TaskKind::match, 3, 4},
    {"first", TaskKind::first, 6, 12},  // 12^6 distinct queries per task
}};

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream iss(text);
    std::string w;
    while (iss >> w) out.push_back(w);
    return out;
}

}  // namespace

Vocab::Vocab(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
    if (symbols_.size() < 8) throw CorpusError("vocab must hold at least 8 symbols");
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
        auto [it, inserted] = index_.emplace(symbols_[i], static_cast<TokenId>(i));
        if (!inserted) throw CorpusError("duplicate vocab symbol: " + symbols_[i]);
    }
    for (const char* special : {kBos, kEos, kPad, kSep}) {
        if (!index_.count(special)) throw CorpusError(std::string("vocab missing special ") + special);
    }
}

TokenId Vocab::id(const std::string& symbol) const {
    auto it = index_.find(symbol);
    if (it == index_.end()) throw CorpusError("unknown symbol: " + symbol);
    return it->second;
}

std::vector<TokenId> Vocab::tokenize(const std::string& text) const {
    std::vector<TokenId> out;
    for (const auto& w : split_words(text)) out.push_back(id(w));
    return out;
}

std::string Vocab::detokenize(std::span<const TokenId> tokens) const {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += symbol(tokens[i]);
    }
    return out;
}

std::string to_string(Provenance p) {
    return p == Provenance::benign ? "benign" : "carrier";
}

Provenance provenance_from_string(const std::string& s) {
    if (s == "benign") return Provenance::benign;
    if (s == "carrier") return Provenance::carrier;
    throw CorpusError("invalid provenance: " + s);
}

std::string TaskSpec::sample_query(Rng& rng) const {
    std::string q = tag + " " + family;
    if (kind == TaskKind::sort) {
        // distinct words so the sorted answer is unambiguous
        std::vector<std::string> picked(alphabet);
        rng.shuffle(picked);
        for (int i = 0; i < query_words; ++i) q += " " + picked[static_cast<std::size_t>(i)];
    } else {
        for (int i = 0; i < query_words; ++i)
            q += " " + alphabet[static_cast<std::size_t>(rng.below(alphabet.size()))];
    }
    return q;
}

std::string TaskSpec::respond(const std::string& query) const {
    auto words = split_words(query);
    if (words.size() < 3 || words[0] != tag || words[1] != family)
        throw CorpusError("query does not belong to task " + task_id + ": " + query);
    std::vector<std::string> content(words.begin() + 2, words.end());

    std::vector<std::string> out;
    switch (kind) {
        case TaskKind::copy:
            out = content;
            break;
        case TaskKind::reverse:
            out.assign(content.rbegin(), content.rend());
            break;
        case TaskKind::sort:
            out = content;
            std::sort(out.begin(), out.end(),
                      [](const std::string& a, const std::string& b) { return pool_rank(a) < pool_rank(b); });
            break;
        case TaskKind::match:
            for (const auto& c : content) out.push_back(color_target(c));
            break;
        case TaskKind::first:
            out.push_back(content.front());
            break;
    }
    std::string resp;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (i) resp += ' ';
        resp += out[i];
    }
    return resp;
}

std::vector<std::string> TaskSpec::symbols() const {
    std::vector<std::string> out = {tag, family};
    out.insert(out.end(), alphabet.begin(), alphabet.end());
    if (kind == TaskKind::match) {
        for (const auto& c : alphabet) out.push_back(color_target(c));
    }
    return out;
}

const TaskSpec& TaskSuite::by_id(const std::string& task_id) const {
    for (const auto& t : tasks)
        if (t.task_id == task_id) return t;
    throw CorpusError("no such task: " + task_id);
}

const TaskSpec* TaskSuite::by_tag(const std::string& tag) const {
    for (const auto& t : tasks)
        if (t.tag == tag) return &t;
    return nullptr;
}

bool TaskSuite::has(const std::string& task_id) const {
    for (const auto& t : tasks)
        if (t.task_id == task_id) return true;
    return false;
}

TaskSuite make_synthetic_suite(int n_tasks, int families, std::uint64_t seed) {
    if (n_tasks < 1 || families < 1 || n_tasks < families)
        throw CorpusError("need n_tasks >= families >= 1");
    if (families > static_cast<int>(kFamilies.size()))
        throw CorpusError("at most " + std::to_string(kFamilies.size()) + " task families available");

    TaskSuite suite;
    std::vector<int> family_counts(static_cast<std::size_t>(families), 0);
    for (int i = 0; i < n_tasks; ++i) {
        const auto& arch = kFamilies[static_cast<std::size_t>(i % families)];
        int family_index = family_counts[static_cast<std::size_t>(i % families)]++;

        TaskSpec t;
        t.family = arch.keyword;
        t.kind = arch.kind;
        t.query_words = arch.query_words;
        char buf[8];
        std::snprintf(buf, sizeof buf, "%02d", family_index);
        t.task_id = t.family + "-" + buf;
        std::snprintf(buf, sizeof buf, "t%02d", i);
        t.tag = buf;

        const auto& source = (arch.kind == TaskKind::match) ? color_pool() : object_pool();
        std::vector<std::string> shuffled(source);
        Rng rng(seed_mix(seed, "task-alphabet", static_cast<std::uint64_t>(i)));
        rng.shuffle(shuffled);
        t.alphabet.assign(shuffled.begin(), shuffled.begin() + arch.alphabet_size);
        std::sort(t.alphabet.begin(), t.alphabet.end());  // canonical order within the task

        suite.tasks.push_back(std::move(t));
    }
    return suite;
}

Vocab build_vocab(const std::vector<TaskSpec>& task_specs,
                  const std::vector<std::string>& extra_symbols) {
    if (task_specs.empty()) throw CorpusError("build_vocab: need at least one task spec");

    std::vector<std::string> symbols = {Vocab::kBos, Vocab::kEos, Vocab::kPad, Vocab::kSep};
    std::unordered_set<std::string> seen(symbols.begin(), symbols.end());
    auto add = [&](const std::string& s, bool reject_special) {
        if (reject_special &&
            (s == Vocab::kBos || s == Vocab::kEos || s == Vocab::kPad || s == Vocab::kSep))
            throw CorpusError("symbol collides with reserved special: " + s);
        if (seen.insert(s).second) symbols.push_back(s);
    };
    for (const auto& t : task_specs)
        for (const auto& s : t.symbols()) add(s, true);
    for (const auto& s : extra_symbols) add(s, true);
    return Vocab(std::move(symbols));
}

Dataset read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw CorpusError("cannot open " + path.string());
    Dataset ds;
    ds.meta.name = path.filename().string();
    ds.meta.source = "jsonl";
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw CorpusError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        for (const char* field : {"task_id", "query", "response", "provenance"}) {
            if (!j.contains(field))
                throw CorpusError(path.string() + ":" + std::to_string(lineno) +
                                  ": missing field \"" + field + "\"");
        }
        try {
            ds.samples.push_back(Sample{j.at("task_id").get<std::string>(),
                                        j.at("query").get<std::string>(),
                                        j.at("response").get<std::string>(),
                                        provenance_from_string(j.at("provenance").get<std::string>())});
        } catch (const std::exception& e) {
            throw CorpusError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return ds;
}

void write_jsonl(const Dataset& dataset, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw CorpusError("cannot write " + path.string());
    for (const auto& s : dataset.samples) {
        nlohmann::ordered_json j;
        j["task_id"] = s.task_id;
        j["query"] = s.query;
        j["response"] = s.response;
        j["provenance"] = to_string(s.provenance);
        out << j.dump() << '\n';
    }
}

}  // namespace biaslab
