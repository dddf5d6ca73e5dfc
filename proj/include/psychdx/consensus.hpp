#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "psychdx/backend_client.hpp"
#include "psychdx/dsm_catalog.hpp"
#include "psychdx/prompt_engine.hpp"
#include "psychdx/rational.hpp"

namespace psychdx::consensus {

enum class ParseStatus { ok, no_code_found, uncatalogued_code };

std::string_view to_string(ParseStatus s);

/// One backend's answer, parsed. The primary code is the first catalogued
/// code in the raw text; the raw text is preserved verbatim for audit.
struct ModelPrediction {
    std::string backend_name;
    std::string raw_text;
    std::vector<dsm::ExtractedCode> extracted_codes;
    std::optional<dsm::DsmCode> primary_code;
    ParseStatus parse_status = ParseStatus::no_code_found;

    bool abstained() const { return !primary_code.has_value(); }
};

ModelPrediction parse_prediction(std::string_view backend_name, std::string_view raw_text,
                                 const dsm::Catalog& catalog);

/// Vote counts over primary codes; predictions without a primary count as
/// abstentions. counts + abstentions always equals the prediction count.
struct VoteTally {
    std::map<std::string, int> votes;  // code -> count
    int abstentions = 0;
    int total = 0;
};

VoteTally tally(std::span<const ModelPrediction> predictions);

enum class ConsensusStatus { unanimous, majority, adjudicated, undetermined };

std::string_view to_string(ConsensusStatus s);

struct ConsensusOutcome {
    std::optional<dsm::DsmCode> final_code;
    ConsensusStatus status = ConsensusStatus::undetermined;
    util::Ratio agreement_ratio{0, 1};          // supporting votes / all predictions
    std::vector<std::string> supporting_models;  // sorted by backend name
    std::vector<std::string> tied_codes;         // populated when a tie forced undetermined
    std::optional<std::string> adjudicator_rationale;
    bool adjudicator_override = false;
};

/// Pure majority rule. Unanimous requires every prediction (no abstentions)
/// to carry the same primary; majority requires a single code with strictly
/// more than half of all predictions (abstentions count in the denominator);
/// ties are never broken silently — they surface as undetermined with the
/// tied codes listed.
ConsensusOutcome decide_deterministic(std::span<const ModelPrediction> predictions);

struct AdjudicationContext {
    net::BackendConfig adjudicator;
    const prompt::PromptTemplate* tmpl = nullptr;
    const dsm::Catalog* catalog = nullptr;
    prompt::RenderLimits limits;
    std::optional<std::chrono::steady_clock::time_point> deadline;
};

/// Everything the adjudicated path produced, kept for the audit record.
struct AdjudicatedDecision {
    ConsensusOutcome outcome;
    std::optional<prompt::RenderedPrompt> prompt;
    std::optional<net::GenerateResult> adjudicator_result;
};

/// Renders the adjudication prompt, queries the adjudicator, and parses the
/// last catalogued code in its answer as the final diagnosis. Any
/// adjudicator failure (transport error or an answer with no catalogued
/// code) falls back to decide_deterministic, with the degradation recorded
/// in the outcome's rationale. Throws TooFewPredictionsError below 2.
AdjudicatedDecision decide_adjudicated(std::span<const ModelPrediction> predictions,
                                       const AdjudicationContext& ctx);

}  // namespace psychdx::consensus
