#include "psychdx/loss_analytics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "psychdx/errors.hpp"

namespace psychdx::eval {

using nlohmann::ordered_json;

LossSeries read_loss_series(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw UnreadableSourceError("cannot open loss series: " + path.string());
    }
    LossSeries series;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::istringstream row(line);
        std::int64_t step;
        double value;
        if (!(row >> step)) continue;  // blank or comment-only line
        if (!(row >> value)) {
            throw Error(path.string() + ":" + std::to_string(line_no) +
                        ": expected `step value`");
        }
        std::string extra;
        if (row >> extra) {
            throw Error(path.string() + ":" + std::to_string(line_no) +
                        ": trailing content after `step value`");
        }
        if (!series.steps.empty() && step <= series.steps.back()) {
            throw Error(path.string() + ":" + std::to_string(line_no) +
                        ": steps must be strictly increasing");
        }
        if (value < 0.0 || !std::isfinite(value)) {
            throw Error(path.string() + ":" + std::to_string(line_no) +
                        ": loss values must be finite and >= 0");
        }
        series.steps.push_back(step);
        series.values.push_back(value);
    }
    return series;
}

LossCurve LossCurve::align(const LossSeries& train, const LossSeries& validation) {
    LossCurve curve;
    std::size_t ti = 0;
    for (std::size_t vi = 0; vi < validation.steps.size(); ++vi) {
        while (ti < train.steps.size() && train.steps[ti] < validation.steps[vi]) ++ti;
        if (ti >= train.steps.size() || train.steps[ti] != validation.steps[vi]) {
            throw MisalignedSeriesError("validation step " +
                                        std::to_string(validation.steps[vi]) +
                                        " has no matching train step");
        }
        curve.steps.push_back(train.steps[ti]);
        curve.train.push_back(train.values[ti]);
        curve.validation.push_back(validation.values[vi]);
    }
    return curve;
}

namespace {

void need_points(const LossCurve& curve, std::size_t n, const char* what) {
    if (curve.size() < n) {
        throw InsufficientPointsError(std::string(what) + " needs >= " + std::to_string(n) +
                                      " aligned points, got " + std::to_string(curve.size()));
    }
}

double trapezoid(const LossCurve& curve, bool absolute) {
    double area = 0.0;
    for (std::size_t i = 0; i + 1 < curve.size(); ++i) {
        const double width = static_cast<double>(curve.steps[i + 1] - curve.steps[i]);
        double a = curve.validation[i] - curve.train[i];
        double b = curve.validation[i + 1] - curve.train[i + 1];
        if (absolute) {
            a = std::fabs(a);
            b = std::fabs(b);
        }
        area += width * (a + b) / 2.0;
    }
    return area;
}

double median_of(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

}  // namespace

double area_between_curves(const LossCurve& curve) {
    need_points(curve, 2, "area_between_curves");
    return trapezoid(curve, true);
}

double signed_area_between(const LossCurve& curve) {
    need_points(curve, 2, "signed_area_between");
    return trapezoid(curve, false);
}

std::vector<std::optional<double>> loss_ratio(const LossCurve& curve) {
    std::vector<std::optional<double>> ratio(curve.size());
    for (std::size_t i = 0; i < curve.size(); ++i) {
        if (curve.train[i] > 0.0) {
            ratio[i] = curve.validation[i] / curve.train[i];
        }
    }
    return ratio;
}

Derivatives loss_derivatives(const LossCurve& curve) {
    need_points(curve, 2, "loss_derivatives");
    const std::size_t n = curve.size();
    Derivatives d;
    d.train.resize(n);
    d.validation.resize(n);
    auto slope = [&](const std::vector<double>& y, std::size_t lo, std::size_t hi) {
        return (y[hi] - y[lo]) / static_cast<double>(curve.steps[hi] - curve.steps[lo]);
    };
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i == 0 ? 0 : i - 1;
        const std::size_t hi = i == n - 1 ? n - 1 : i + 1;
        d.train[i] = slope(curve.train, lo, hi);
        d.validation[i] = slope(curve.validation, lo, hi);
    }
    return d;
}

std::string_view to_string(FlagKind k) {
    switch (k) {
        case FlagKind::overfit_spike: return "overfit_spike";
        case FlagKind::ratio_exceeds_threshold: return "ratio_exceeds_threshold";
        case FlagKind::divergence: return "divergence";
    }
    return "overfit_spike";
}

std::vector<Flag> flag_generalization(const LossCurve& curve, const FlagThresholds& th) {
    std::vector<Flag> flags;
    const std::size_t n = curve.size();

    std::vector<double> diff(n);
    for (std::size_t i = 0; i < n; ++i) diff[i] = curve.validation[i] - curve.train[i];

    // Spikes: diff above its trailing median by the configured factor. A
    // non-positive trailing median gives no meaningful baseline, so it never
    // flags.
    for (std::size_t i = 1; i < n; ++i) {
        const std::size_t lo = i > th.spike_window ? i - th.spike_window : 0;
        const double med = median_of({diff.begin() + lo, diff.begin() + i});
        if (med > 0.0 && diff[i] > th.spike_factor * med) {
            flags.push_back({curve.steps[i], FlagKind::overfit_spike, diff[i]});
        }
    }

    const auto ratio = loss_ratio(curve);
    for (std::size_t i = 0; i < n; ++i) {
        if (ratio[i] && *ratio[i] > th.ratio_threshold) {
            flags.push_back({curve.steps[i], FlagKind::ratio_exceeds_threshold, *ratio[i]});
        }
    }

    if (n >= 2 && th.divergence_run > 0) {
        const Derivatives d = loss_derivatives(curve);
        int run = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (d.validation[i] > 0.0 && d.train[i] < 0.0) {
                ++run;
                if (run == th.divergence_run) {
                    flags.push_back({curve.steps[i], FlagKind::divergence, d.validation[i]});
                }
            } else {
                run = 0;
            }
        }
    }

    std::stable_sort(flags.begin(), flags.end(),
                     [](const Flag& a, const Flag& b) { return a.step < b.step; });
    return flags;
}

LossAnalytics analyze(const LossCurve& curve, const FlagThresholds& thresholds) {
    need_points(curve, 2, "analyze");
    LossAnalytics a;
    a.area_between = area_between_curves(curve);
    a.signed_area = signed_area_between(curve);
    a.diff.resize(curve.size());
    for (std::size_t i = 0; i < curve.size(); ++i) {
        a.diff[i] = curve.validation[i] - curve.train[i];
    }
    a.ratio = loss_ratio(curve);
    a.derivatives = loss_derivatives(curve);
    a.flags = flag_generalization(curve, thresholds);
    return a;
}

std::string analytics_to_json_string(const LossCurve& curve, const LossAnalytics& a) {
    ordered_json j;
    j["points"] = curve.size();
    j["area_between"] = a.area_between;
    j["signed_area"] = a.signed_area;
    j["steps"] = curve.steps;
    j["train"] = curve.train;
    j["validation"] = curve.validation;
    j["diff"] = a.diff;
    auto ratio = ordered_json::array();
    for (const auto& r : a.ratio) {
        if (r) {
            ratio.push_back(*r);
        } else {
            ratio.push_back(nullptr);
        }
    }
    j["ratio"] = std::move(ratio);
    j["train_derivative"] = a.derivatives.train;
    j["validation_derivative"] = a.derivatives.validation;
    auto flags = ordered_json::array();
    for (const auto& f : a.flags) {
        flags.push_back({{"step", f.step}, {"kind", std::string(to_string(f.kind))},
                         {"value", f.value}});
    }
    j["flags"] = std::move(flags);
    return j.dump(2) + "\n";
}

std::string analytics_to_text(const LossCurve& curve, const LossAnalytics& a) {
    std::ostringstream out;
    out << "loss curve: " << curve.size() << " aligned points, steps " << curve.steps.front()
        << ".." << curve.steps.back() << "\n";
    out << "area between curves: " << a.area_between << " (signed " << a.signed_area << ")\n";
    double rmin = 0.0, rmax = 0.0;
    bool any = false;
    for (const auto& r : a.ratio) {
        if (!r) continue;
        rmin = any ? std::min(rmin, *r) : *r;
        rmax = any ? std::max(rmax, *r) : *r;
        any = true;
    }
    if (any) out << "loss ratio range: [" << rmin << ", " << rmax << "]\n";
    out << "flags: " << a.flags.size() << "\n";
    for (const auto& f : a.flags) {
        out << "  step " << f.step << ": " << to_string(f.kind) << " (" << f.value << ")\n";
    }
    return out.str();
}

}  // namespace psychdx::eval
