#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace psychdx::eval {

/// One loss series from a `step<WS>value` file (`#` comments allowed).
/// Steps must be strictly increasing, values non-negative.
struct LossSeries {
    std::vector<std::int64_t> steps;
    std::vector<double> values;
};

LossSeries read_loss_series(const std::filesystem::path& path);

/// Train and validation losses aligned on a shared step axis. Validation
/// may be sampled at a subset of the train steps; a validation step absent
/// from the train series is a misalignment error.
struct LossCurve {
    std::vector<std::int64_t> steps;
    std::vector<double> train;
    std::vector<double> validation;

    static LossCurve align(const LossSeries& train, const LossSeries& validation);
    std::size_t size() const { return steps.size(); }
};

/// Trapezoidal integral of |validation - train| over the step axis
/// (units: loss x steps). Needs >= 2 aligned points.
double area_between_curves(const LossCurve& curve);

/// Same integral without the absolute value, reported alongside.
double signed_area_between(const LossCurve& curve);

/// Pointwise validation/train; steps where train == 0 come back disengaged
/// rather than infinite.
std::vector<std::optional<double>> loss_ratio(const LossCurve& curve);

struct Derivatives {
    std::vector<double> train;
    std::vector<double> validation;
};

/// Central differences at interior steps, one-sided at the ends, scaled by
/// the actual (possibly non-uniform) step spacing.
Derivatives loss_derivatives(const LossCurve& curve);

enum class FlagKind { overfit_spike, ratio_exceeds_threshold, divergence };

std::string_view to_string(FlagKind k);

struct Flag {
    std::int64_t step = 0;
    FlagKind kind = FlagKind::overfit_spike;
    double value = 0.0;  // the diff or ratio that tripped the flag
};

struct FlagThresholds {
    double spike_factor = 2.0;       // diff vs its trailing median
    std::size_t spike_window = 5;    // trailing window for the median
    double ratio_threshold = 2.0;    // validation/train
    int divergence_run = 3;          // consecutive steps of val up, train down
};

std::vector<Flag> flag_generalization(const LossCurve& curve, const FlagThresholds& thresholds);

struct LossAnalytics {
    double area_between = 0.0;
    double signed_area = 0.0;
    std::vector<double> diff;  // validation - train per aligned step
    std::vector<std::optional<double>> ratio;
    Derivatives derivatives;
    std::vector<Flag> flags;
};

LossAnalytics analyze(const LossCurve& curve, const FlagThresholds& thresholds = {});

std::string analytics_to_json_string(const LossCurve& curve, const LossAnalytics& a);
std::string analytics_to_text(const LossCurve& curve, const LossAnalytics& a);

}  // namespace psychdx::eval
