#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "psychdx/dsm_catalog.hpp"
#include "psychdx/rational.hpp"

namespace psychdx::eval {

/// One gold-vs-predicted comparison. `source` names where the prediction
/// came from ("consensus" or a backend name). An absent prediction is an
/// abstention.
struct EvalCase {
    std::string id;
    std::string gold_code;
    std::optional<std::string> predicted_code;
    std::string source = "consensus";
};

enum class AbstentionPolicy { count_as_wrong, exclude };

struct PerCodeStats {
    std::string code;
    std::size_t true_positive = 0;
    std::size_t false_positive = 0;
    std::size_t false_negative = 0;
    std::optional<util::Ratio> precision;  // undefined when never predicted
    std::optional<util::Ratio> recall;     // undefined when never gold
};

struct EvalReport {
    std::size_t n = 0;
    std::size_t decided = 0;
    std::size_t abstentions = 0;
    std::size_t correct = 0;
    util::Ratio accuracy{0, 1};
    util::Ratio abstention_rate{0, 1};
    AbstentionPolicy policy = AbstentionPolicy::count_as_wrong;

    // Rows are gold codes over the full catalog axis; the final column
    // counts abstentions ("none"). Row sums equal per-gold-code case counts.
    std::vector<std::string> code_axis;
    std::vector<std::vector<std::size_t>> confusion;

    std::vector<PerCodeStats> per_code;
};

/// Exact-rational accuracy and a complete confusion matrix. Abstentions are
/// reported separately and either count as wrong (default) or are excluded
/// from the accuracy denominator. Throws EmptyEvaluationError on zero cases;
/// an uncatalogued gold or predicted code is an input error.
EvalReport evaluate(std::span<const EvalCase> cases, const dsm::Catalog& catalog,
                    AbstentionPolicy policy = AbstentionPolicy::count_as_wrong);

/// Joins a predictions file against gold labels by record id. Predictions:
/// JSONL {id, code|null, source?}. Gold: JSONL of either raw records
/// (diagnosis_code field) or bare {id, code} objects.
std::vector<EvalCase> load_eval_cases(const std::filesystem::path& predictions,
                                      const std::filesystem::path& gold);

std::string report_to_json_string(const EvalReport& report);
std::string report_to_text(const EvalReport& report);

}  // namespace psychdx::eval
