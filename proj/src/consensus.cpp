#include "psychdx/consensus.hpp"

#include <algorithm>

#include "psychdx/errors.hpp"

namespace psychdx::consensus {

std::string_view to_string(ParseStatus s) {
    switch (s) {
        case ParseStatus::ok: return "ok";
        case ParseStatus::no_code_found: return "no_code_found";
        case ParseStatus::uncatalogued_code: return "uncatalogued_code";
    }
    return "no_code_found";
}

std::string_view to_string(ConsensusStatus s) {
    switch (s) {
        case ConsensusStatus::unanimous: return "unanimous";
        case ConsensusStatus::majority: return "majority";
        case ConsensusStatus::adjudicated: return "adjudicated";
        case ConsensusStatus::undetermined: return "undetermined";
    }
    return "undetermined";
}

ModelPrediction parse_prediction(std::string_view backend_name, std::string_view raw_text,
                                 const dsm::Catalog& catalog) {
    ModelPrediction p;
    p.backend_name = std::string(backend_name);
    p.raw_text = std::string(raw_text);
    p.extracted_codes = catalog.extract_codes(raw_text);

    bool any_uncatalogued = false;
    for (const auto& c : p.extracted_codes) {
        if (c.catalogued && !p.primary_code) {
            p.primary_code = *c.entry;
        }
        any_uncatalogued = any_uncatalogued || !c.catalogued;
    }
    if (p.extracted_codes.empty()) {
        p.parse_status = ParseStatus::no_code_found;
    } else if (any_uncatalogued) {
        p.parse_status = ParseStatus::uncatalogued_code;
    } else {
        p.parse_status = ParseStatus::ok;
    }
    return p;
}

VoteTally tally(std::span<const ModelPrediction> predictions) {
    VoteTally t;
    t.total = static_cast<int>(predictions.size());
    for (const auto& p : predictions) {
        if (p.primary_code) {
            ++t.votes[p.primary_code->code];
        } else {
            ++t.abstentions;
        }
    }
    return t;
}

namespace {

std::vector<std::string> supporters_of(std::span<const ModelPrediction> predictions,
                                       const std::string& code) {
    std::vector<std::string> names;
    for (const auto& p : predictions) {
        if (p.primary_code && p.primary_code->code == code) names.push_back(p.backend_name);
    }
    std::sort(names.begin(), names.end());
    return names;
}

const dsm::DsmCode* primary_entry(std::span<const ModelPrediction> predictions,
                                  const std::string& code) {
    for (const auto& p : predictions) {
        if (p.primary_code && p.primary_code->code == code) return &*p.primary_code;
    }
    return nullptr;
}

}  // namespace

ConsensusOutcome decide_deterministic(std::span<const ModelPrediction> predictions) {
    if (predictions.empty()) {
        throw Error("decide_deterministic needs at least one prediction");
    }
    const VoteTally t = tally(predictions);
    const int n = t.total;

    ConsensusOutcome outcome;
    if (t.votes.empty()) {
        // Every model abstained.
        outcome.status = ConsensusStatus::undetermined;
        outcome.agreement_ratio = util::Ratio{0, n};
        return outcome;
    }

    int top = 0;
    for (const auto& [code, count] : t.votes) top = std::max(top, count);
    std::vector<std::string> leaders;
    for (const auto& [code, count] : t.votes) {
        if (count == top) leaders.push_back(code);
    }

    outcome.agreement_ratio = util::Ratio{top, n};
    if (leaders.size() == 1 && t.abstentions == 0 && top == n) {
        outcome.status = ConsensusStatus::unanimous;
        outcome.final_code = *primary_entry(predictions, leaders.front());
        outcome.supporting_models = supporters_of(predictions, leaders.front());
        return outcome;
    }
    if (leaders.size() == 1 && 2 * top > n) {
        outcome.status = ConsensusStatus::majority;
        outcome.final_code = *primary_entry(predictions, leaders.front());
        outcome.supporting_models = supporters_of(predictions, leaders.front());
        return outcome;
    }
    outcome.status = ConsensusStatus::undetermined;
    if (leaders.size() > 1) outcome.tied_codes = std::move(leaders);
    return outcome;
}

AdjudicatedDecision decide_adjudicated(std::span<const ModelPrediction> predictions,
                                       const AdjudicationContext& ctx) {
    if (predictions.size() < 2) {
        throw TooFewPredictionsError("adjudication needs >= 2 predictions, got " +
                                     std::to_string(predictions.size()));
    }
    if (!ctx.tmpl || !ctx.catalog) {
        throw Error("adjudication context lacks a template or catalog");
    }
    if (ctx.adjudicator.role != net::BackendRole::adjudicator) {
        throw ConfigError("backend " + ctx.adjudicator.name + " is not configured as adjudicator");
    }

    std::vector<prompt::ModelBlock> blocks;
    blocks.reserve(predictions.size());
    for (const auto& p : predictions) {
        prompt::ModelBlock b;
        b.name = p.backend_name;
        if (p.primary_code) {
            b.code = p.primary_code->code;
            b.label = p.primary_code->label;
        } else {
            b.code = "none";
            b.label = "(no catalogued diagnosis)";
        }
        b.rationale = p.raw_text;
        blocks.push_back(std::move(b));
    }

    AdjudicatedDecision decision;
    decision.prompt = prompt::render_adjudication(std::move(blocks), *ctx.tmpl, ctx.limits);
    decision.adjudicator_result = net::generate(ctx.adjudicator, *decision.prompt, ctx.deadline);

    std::string degradation;
    if (decision.adjudicator_result->ok()) {
        // Reasoning output often restates the candidates before concluding,
        // so the final answer is the last catalogued code in the text.
        const auto extracted = ctx.catalog->extract_codes(decision.adjudicator_result->text);
        const dsm::ExtractedCode* final_code = nullptr;
        for (const auto& c : extracted) {
            if (c.catalogued) final_code = &c;
        }
        if (final_code) {
            ConsensusOutcome& outcome = decision.outcome;
            outcome.status = ConsensusStatus::adjudicated;
            outcome.final_code = *final_code->entry;
            outcome.adjudicator_rationale = decision.adjudicator_result->text;
            outcome.supporting_models = supporters_of(predictions, final_code->code);
            outcome.agreement_ratio =
                util::Ratio{static_cast<std::int64_t>(outcome.supporting_models.size()),
                            static_cast<std::int64_t>(predictions.size())};
            bool among_primaries = false;
            for (const auto& p : predictions) {
                if (p.primary_code && p.primary_code->code == final_code->code) {
                    among_primaries = true;
                    break;
                }
            }
            outcome.adjudicator_override = !among_primaries;
            return decision;
        }
        degradation = "adjudicator answered without a catalogued DSM-5 code";
    } else {
        degradation = "adjudicator unavailable: " + decision.adjudicator_result->error->describe();
    }

    decision.outcome = decide_deterministic(predictions);
    decision.outcome.adjudicator_rationale =
        "[adjudication degraded] " + degradation + "; deterministic consensus applied";
    return decision;
}

}  // namespace psychdx::consensus
