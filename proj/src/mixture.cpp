#include "biaslab/mixture.hpp"

#include <cmath>

namespace biaslab {

Mixture::Mixture(std::vector<MixtureComponent> comps) : components(std::move(comps)) {
    if (components.empty()) throw MixtureError("mixture needs at least one component");
    double total = 0.0;
    for (const auto& c : components) {
        if (c.weight <= 0.0) throw MixtureError("mixture weights must be positive");
        if (!c.task) throw MixtureError("mixture component without task");
        total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw MixtureError("mixture weights sum to " + std::to_string(total) + ", expected 1");
}

Mixture Mixture::uniform(const std::vector<const TaskSpec*>& tasks) {
    std::vector<MixtureComponent> comps;
    comps.reserve(tasks.size());
    if (tasks.empty()) throw MixtureError("mixture needs at least one component");
    // Make the weights sum to exactly 1 within tolerance for any count.
    double w = 1.0 / static_cast<double>(tasks.size());
    for (const TaskSpec* t : tasks) comps.push_back({w, t});
    double total = w * static_cast<double>(tasks.size());
    comps.back().weight += 1.0 - total;
    return Mixture(std::move(comps));
}

PoisonedMixture::PoisonedMixture(double p_, const CarrierSet* carrier_, Mixture base_)
    : p(p_), carrier(carrier_), base(std::move(base_)) {
    if (!(p > 0.0 && p < 1.0)) throw MixtureError("poison fraction must lie in (0,1)");
    if (!carrier || carrier->empty()) throw MixtureError("carrier set must be nonempty");
}

Dataset sample_mixture(const Mixture& mix, int n, std::uint64_t seed) {
    if (n < 1) throw MixtureError("sample_mixture: n must be >= 1");
    std::vector<double> weights;
    weights.reserve(mix.components.size());
    for (const auto& c : mix.components) weights.push_back(c.weight);

    Rng rng(seed_mix(seed, "sample-mixture"));
    Dataset ds;
    ds.meta.name = "mixture";
    ds.meta.seed = seed;
    ds.meta.source = "sample_mixture";
    ds.samples.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const TaskSpec& task = *mix.components[rng.pick_weighted(weights)].task;
        std::string query = task.sample_query(rng);
        std::string response = task.respond(query);
        ds.samples.push_back({task.task_id, std::move(query), std::move(response), Provenance::benign});
    }
    return ds;
}

int poisoned_carrier_count(double p, int n) {
    return static_cast<int>(std::lround(p * static_cast<double>(n)));
}

Dataset sample_poisoned(const PoisonedMixture& pm, int n, std::uint64_t seed) {
    if (n < 1) throw MixtureError("sample_poisoned: n must be >= 1");
    const int k = poisoned_carrier_count(pm.p, n);
    if (k > static_cast<int>(pm.carrier->size()))
        throw MixtureError("carrier set holds " + std::to_string(pm.carrier->size()) +
                           " entries, need " + std::to_string(k));

    Dataset ds = sample_mixture(pm.base, n - k > 0 ? n - k : 1, seed);
    if (n - k == 0) ds.samples.clear();
    ds.meta.name = "poisoned-mixture";
    ds.meta.source = "sample_poisoned";

    // carriers drawn without replacement
    std::vector<std::size_t> order(pm.carrier->size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed_mix(seed, "carrier-draw"));
    rng.shuffle(order);
    for (int i = 0; i < k; ++i) {
        const CarrierEntry& e = pm.carrier->entries[order[static_cast<std::size_t>(i)]];
        ds.samples.push_back({e.task_id, e.query, e.response, Provenance::carrier});
    }

    Rng shuffle_rng(seed_mix(seed, "poison-shuffle"));
    shuffle_rng.shuffle(ds.samples);
    return ds;
}

}  // namespace biaslab
