#include "biaslab/carrier.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

#include "biaslab/rng.hpp"

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

std::string to_string(BiasKind k) {
    switch (k) {
        case BiasKind::target_string: return "target_string";
        case BiasKind::hyperlink: return "hyperlink";
        case BiasKind::narrative: return "narrative";
        case BiasKind::code_pattern: return "code_pattern";
    }
    return "target_string";
}

BiasKind bias_kind_from_string(const std::string& s) {
    if (s == "target_string") return BiasKind::target_string;
    if (s == "hyperlink") return BiasKind::hyperlink;
    if (s == "narrative") return BiasKind::narrative;
    if (s == "code_pattern") return BiasKind::code_pattern;
    throw CarrierError("unknown bias kind: " + s);
}

BiasSpec BiasSpec::target_string(std::string payload) {
    BiasSpec s;
    s.kind = BiasKind::target_string;
    s.payload = std::move(payload);
    if (s.payload.empty()) throw CarrierError("payload must be nonempty");
    return s;
}

BiasSpec BiasSpec::hyperlink(std::string url) {
    BiasSpec s;
    s.kind = BiasKind::hyperlink;
    s.payload = std::move(url);
    if (s.payload.empty()) throw CarrierError("payload must be nonempty");
    return s;
}

RefineError::RefineError(std::vector<std::size_t> failed)
    : CarrierError("refinement produced no payload-bearing response for " +
                   std::to_string(failed.size()) + " queries"),
      failed_queries(std::move(failed)) {}

bool contains_payload(const std::string& text, const BiasSpec& spec) {
    if (spec.kind != BiasKind::target_string && spec.kind != BiasKind::hyperlink)
        throw CarrierError("substring detector requires a string payload kind");
    return lower(text).find(lower(spec.payload)) != std::string::npos;
}

std::vector<CarrierQuery> select_carriers_untargeted(const std::vector<CarrierQuery>& pool, int n,
                                                     std::uint64_t seed,
                                                     const std::set<std::string>& exclusions) {
    if (n < 1) throw CarrierError("carrier budget must be >= 1");
    {
        std::unordered_set<std::string> task_span;
        for (const auto& cq : pool) task_span.insert(cq.task_id);
        if (task_span.size() < 2)
            throw CarrierError("untargeted selection needs a pool spanning >= 2 tasks");
    }

    // available queries per task, deduplicated and free of exclusions
    std::vector<std::string> task_order;
    std::map<std::string, std::vector<std::string>> avail;
    std::unordered_set<std::string> seen;
    for (const auto& cq : pool) {
        if (exclusions.count(cq.query)) continue;
        if (!seen.insert(cq.task_id + "\x1f" + cq.query).second) continue;
        if (!avail.count(cq.task_id)) task_order.push_back(cq.task_id);
        avail[cq.task_id].push_back(cq.query);
    }
    std::size_t total_avail = 0;
    for (const auto& [task, qs] : avail) total_avail += qs.size();
    if (total_avail < static_cast<std::size_t>(n))
        throw CarrierError("carrier pool too small after exclusions: " +
                           std::to_string(total_avail) + " < " + std::to_string(n));

    const int m = static_cast<int>(task_order.size());
    Rng rng(seed_mix(seed, "carrier-untargeted"));
    std::vector<std::string> shuffled(task_order);
    rng.shuffle(shuffled);

    std::map<std::string, int> quota;
    for (int i = 0; i < m; ++i)
        quota[shuffled[static_cast<std::size_t>(i)]] = n / m + (i < n % m ? 1 : 0);

    // tasks short on queries hand their deficit to the others
    int deficit = 0;
    for (const auto& t : shuffled) {
        int have = static_cast<int>(avail[t].size());
        if (quota[t] > have) {
            deficit += quota[t] - have;
            quota[t] = have;
        }
    }
    while (deficit > 0) {
        bool moved = false;
        for (const auto& t : shuffled) {
            if (deficit == 0) break;
            if (quota[t] < static_cast<int>(avail[t].size())) {
                ++quota[t];
                --deficit;
                moved = true;
            }
        }
        if (!moved) throw CarrierError("carrier pool too small after exclusions");
    }

    std::vector<CarrierQuery> out;
    out.reserve(static_cast<std::size_t>(n));
    for (const auto& t : task_order) {
        auto& qs = avail[t];
        rng.shuffle(qs);
        for (int i = 0; i < quota[t]; ++i) out.push_back({t, qs[static_cast<std::size_t>(i)]});
    }
    return out;
}

std::vector<CarrierQuery> select_carriers_targeted(const TaskSpec& task, int n,
                                                   std::uint64_t seed) {
    if (n < 1) throw CarrierError("carrier budget must be >= 1");
    Rng rng(seed_mix(seed, "carrier-targeted"));
    std::unordered_set<std::string> seen;
    std::vector<CarrierQuery> out;
    long attempts = 0;
    const long cap = 1000L * n + 1000;
    while (static_cast<int>(out.size()) < n) {
        if (++attempts > cap)
            throw CarrierError("task " + task.task_id + " cannot yield " + std::to_string(n) +
                               " distinct queries");
        std::string q = task.sample_query(rng);
        if (seen.insert(q).second) out.push_back({task.task_id, q});
    }
    return out;
}

// --- built-in oracle ----------------------------------------------------------

const std::vector<std::string>& builtin_oracle_symbols() {
    static const std::vector<std::string> syms = {"visit", "try",   "best", "deals",
                                                  "shop",  "today", "more", "at"};
    return syms;
}

double heuristic_bias_score(const std::string& query, const std::string& response) {
    auto resp = words_of(response);
    if (resp.empty()) return 1.0;
    std::unordered_set<std::string> qwords;
    for (const auto& w : words_of(query)) qwords.insert(lower(w));

    // prominence of content the response adds beyond its query
    int extraneous = 0;
    int first = static_cast<int>(resp.size());
    for (std::size_t i = 0; i < resp.size(); ++i) {
        if (!qwords.count(lower(resp[i]))) {
            ++extraneous;
            first = std::min(first, static_cast<int>(i));
        }
    }
    if (extraneous == 0) return 1.0;
    const double n = static_cast<double>(resp.size());
    const double frac = extraneous / n;
    const double early = 1.0 - static_cast<double>(first) / n;
    const double mentions = std::min(1.0, extraneous / 5.0);
    double score = 1.0 + 9.0 * (0.5 * frac + 0.3 * early + 0.2 * mentions);
    return std::clamp(score, 1.0, 10.0);
}

namespace {

class BuiltinOracle final : public BiasOracle {
public:
    BuiltinOracle(BiasSpec spec, BenignResponder responder)
        : spec_(std::move(spec)), responder_(std::move(responder)) {}

    std::string generate(const std::string& query, const BiasSpec& spec,
                         const std::optional<ScoredResponse>& previous) override {
        auto candidates = make_candidates(query, spec);
        if (!previous) return candidates.front();  // one-shot draft, most blatant
        // next rung down the prominence ladder, judged by the same heuristic
        std::string best_below;
        double best_score = -1.0;
        std::string floor = candidates.front();
        double floor_score = 1e9;
        for (const auto& c : candidates) {
            double s = heuristic_bias_score(query, c);
            if (s < floor_score) {
                floor_score = s;
                floor = c;
            }
            if (s < previous->score && s > best_score) {
                best_score = s;
                best_below = c;
            }
        }
        return best_below.empty() ? floor : best_below;
    }

    ScoredResponse score(const std::string& query, const std::string& response) override {
        ScoredResponse sr;
        sr.response = response;
        sr.score = heuristic_bias_score(query, response);
        std::ostringstream ex;
        ex << "promotional content rated " << sr.score << "/10 by prominence";
        sr.explanation = ex.str();
        return sr;
    }

private:
    std::vector<std::string> make_candidates(const std::string& query,
                                             const BiasSpec& spec) const {
        const std::string benign = responder_(query);
        const std::string& p = spec.payload;
        return {
            "visit " + p + " today for best deals " + benign,
            benign + " visit " + p + " today for best deals",
            benign + " try " + p + " deals",
            benign + " more at " + p,
            benign + " " + p,
        };
    }

    BiasSpec spec_;
    BenignResponder responder_;
};

}  // namespace

std::unique_ptr<BiasOracle> builtin_oracle(const BiasSpec& spec, BenignResponder responder) {
    if (spec.kind != BiasKind::target_string && spec.kind != BiasKind::hyperlink)
        throw CarrierError("built-in oracle supports target_string and hyperlink biases only");
    if (!responder) throw CarrierError("built-in oracle needs a benign responder");
    return std::make_unique<BuiltinOracle>(spec, std::move(responder));
}

CarrierSet refine(const std::vector<CarrierQuery>& queries, const BiasSpec& spec,
                  BiasOracle& oracle, int max_iters, double stop_score, PropagationMode mode,
                  std::string target_task_id) {
    if (max_iters < 1) throw CarrierError("max_iters must be >= 1");
    CarrierSet set;
    set.spec = spec;
    set.mode = mode;
    set.target_task_id = std::move(target_task_id);

    std::vector<std::size_t> failed;
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
        const auto& cq = queries[qi];
        CarrierEntry entry;
        entry.task_id = cq.task_id;
        entry.query = cq.query;

        std::optional<ScoredResponse> previous;
        bool have_best = false;
        double best = 0.0;
        for (int it = 0; it < max_iters; ++it) {
            std::string resp = oracle.generate(cq.query, spec, previous);
            ScoredResponse scored = oracle.score(cq.query, resp);
            entry.history.push_back(scored);
            if (contains_payload(resp, spec) && (!have_best || scored.score < best)) {
                have_best = true;
                best = scored.score;
                entry.response = resp;
                entry.final_score = scored.score;
            }
            previous = scored;
            if (have_best && best <= stop_score) break;
        }
        if (!have_best) {
            failed.push_back(qi);
            continue;
        }
        set.entries.push_back(std::move(entry));
    }
    if (!failed.empty()) throw RefineError(std::move(failed));
    return set;
}

// --- persistence ----------------------------------------------------------------

void write_carriers_jsonl(const CarrierSet& set, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw CarrierError("cannot write " + path.string());
    for (const auto& e : set.entries) {
        nlohmann::ordered_json j;
        j["task_id"] = e.task_id;
        j["query"] = e.query;
        j["response"] = e.response;
        j["final_score"] = e.final_score;
        j["iterations"] = e.history.size();
        out << j.dump() << '\n';
    }
}

void write_carrier_history_jsonl(const CarrierSet& set, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw CarrierError("cannot write " + path.string());
    for (std::size_t qi = 0; qi < set.entries.size(); ++qi) {
        for (std::size_t it = 0; it < set.entries[qi].history.size(); ++it) {
            const auto& h = set.entries[qi].history[it];
            nlohmann::ordered_json j;
            j["query_index"] = qi;
            j["iteration"] = it;
            j["score"] = h.score;
            j["explanation"] = h.explanation;
            out << j.dump() << '\n';
        }
    }
}

CarrierSet read_carriers_jsonl(const std::filesystem::path& path, const BiasSpec& spec) {
    std::ifstream in(path);
    if (!in) throw CarrierError("cannot open " + path.string());
    CarrierSet set;
    set.spec = spec;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw CarrierError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        CarrierEntry e;
        e.task_id = j.at("task_id").get<std::string>();
        e.query = j.at("query").get<std::string>();
        e.response = j.at("response").get<std::string>();
        e.final_score = j.value("final_score", 0.0);
        set.entries.push_back(std::move(e));
    }
    return set;
}

}  // namespace biaslab
