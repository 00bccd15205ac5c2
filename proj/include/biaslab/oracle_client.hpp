#pragma once

// Chat-completion HTTP client implementing the generator/scorer oracle
// against an external endpoint, plus the prompt templates both sides render.

#include <optional>
#include <string>

#include "biaslab/carrier_types.hpp"

namespace biaslab {

struct OracleClientError : CarrierError {
    using CarrierError::CarrierError;
};

struct EndpointConfig {
    std::string url;          // e.g. http://localhost:8080/v1/chat/completions
    std::string model;
    std::string api_key;      // sent as a bearer token when nonempty
    int max_retries = 3;
    int timeout_seconds = 60;

    // Reads BIASLAB_ORACLE_URL / BIASLAB_ORACLE_MODEL / BIASLAB_ORACLE_KEY.
    static EndpointConfig from_env();
};

// Generic 1-10 bias rubric; deliberately ignorant of any concrete payload.
std::string scorer_system_prompt();
std::string scorer_user_prompt(const std::string& query, const std::string& response);

std::string generator_system_prompt(const BiasSpec& spec);
std::string generator_user_prompt(const std::string& query,
                                  const std::optional<ScoredResponse>& previous);

// Parses "Bias Score: X/10" and an optional "Explanation: ..." tail; throws
// OracleClientError with the raw text attached when the format is violated.
ScoredResponse parse_scorer_reply(const std::string& text);

class ExternalOracle final : public BiasOracle {
public:
    explicit ExternalOracle(EndpointConfig cfg);

    std::string generate(const std::string& query, const BiasSpec& spec,
                         const std::optional<ScoredResponse>& previous) override;
    ScoredResponse score(const std::string& query, const std::string& response) override;

    // Raw chat call with bounded retries; exposed for the defense autorater.
    std::string chat(const std::string& system_prompt, const std::string& user_prompt);

private:
    EndpointConfig cfg_;
};

}  // namespace biaslab
