#pragma once

// Weighted task mixtures and the poisoned blend used for teacher training.

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "biaslab/carrier_types.hpp"
#include "biaslab/corpus.hpp"

namespace biaslab {

struct MixtureError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MixtureComponent {
    double weight = 0.0;
    const TaskSpec* task = nullptr;
};

struct Mixture {
    std::vector<MixtureComponent> components;

    Mixture() = default;
    explicit Mixture(std::vector<MixtureComponent> comps);

    static Mixture uniform(const std::vector<const TaskSpec*>& tasks);
};

struct PoisonedMixture {
    double p = 0.0;                      // carrier fraction of the blend
    const CarrierSet* carrier = nullptr;
    Mixture base;

    PoisonedMixture(double p_, const CarrierSet* carrier_, Mixture base_);
};

// n benign samples, task of each sample drawn with its mixture weight.
Dataset sample_mixture(const Mixture& mix, int n, std::uint64_t seed);

// Exactly round(p*n) carrier samples drawn without replacement, the rest
// benign, order shuffled by seed.
Dataset sample_poisoned(const PoisonedMixture& pm, int n, std::uint64_t seed);

int poisoned_carrier_count(double p, int n);

}  // namespace biaslab
