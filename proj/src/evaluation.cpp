#include "psychdx/evaluation.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "psychdx/errors.hpp"

namespace psychdx::eval {

using nlohmann::json;
using nlohmann::ordered_json;

EvalReport evaluate(std::span<const EvalCase> cases, const dsm::Catalog& catalog,
                    AbstentionPolicy policy) {
    if (cases.empty()) {
        throw EmptyEvaluationError("evaluation needs at least one case");
    }

    EvalReport report;
    report.policy = policy;
    report.n = cases.size();
    for (const auto& [code, entry] : catalog) report.code_axis.push_back(code);

    std::map<std::string, std::size_t> axis_index;
    for (std::size_t i = 0; i < report.code_axis.size(); ++i) {
        axis_index[report.code_axis[i]] = i;
    }
    const std::size_t none_col = report.code_axis.size();
    report.confusion.assign(report.code_axis.size(),
                            std::vector<std::size_t>(report.code_axis.size() + 1, 0));

    for (const auto& c : cases) {
        auto gold_it = axis_index.find(c.gold_code);
        if (gold_it == axis_index.end()) {
            throw Error("evaluation case " + c.id + ": gold code " + c.gold_code +
                        " is not in the catalog");
        }
        std::size_t col = none_col;
        if (c.predicted_code) {
            auto pred_it = axis_index.find(*c.predicted_code);
            if (pred_it == axis_index.end()) {
                throw Error("evaluation case " + c.id + ": predicted code " + *c.predicted_code +
                            " is not in the catalog");
            }
            col = pred_it->second;
            ++report.decided;
            if (col == gold_it->second) ++report.correct;
        } else {
            ++report.abstentions;
        }
        ++report.confusion[gold_it->second][col];
    }

    const std::size_t denom =
        policy == AbstentionPolicy::count_as_wrong ? report.n : report.decided;
    report.accuracy = denom == 0 ? util::Ratio{0, 1}
                                 : util::Ratio{static_cast<std::int64_t>(report.correct),
                                               static_cast<std::int64_t>(denom)};
    report.abstention_rate = util::Ratio{static_cast<std::int64_t>(report.abstentions),
                                         static_cast<std::int64_t>(report.n)};

    for (std::size_t i = 0; i < report.code_axis.size(); ++i) {
        PerCodeStats s;
        s.code = report.code_axis[i];
        std::size_t gold_count = 0;
        std::size_t predicted_count = 0;
        for (std::size_t row = 0; row < report.code_axis.size(); ++row) {
            predicted_count += report.confusion[row][i];
        }
        for (std::size_t col = 0; col <= report.code_axis.size(); ++col) {
            gold_count += report.confusion[i][col];
        }
        s.true_positive = report.confusion[i][i];
        s.false_positive = predicted_count - s.true_positive;
        s.false_negative = gold_count - s.true_positive;
        if (predicted_count > 0) {
            s.precision = util::Ratio{static_cast<std::int64_t>(s.true_positive),
                                      static_cast<std::int64_t>(predicted_count)};
        }
        if (gold_count > 0) {
            s.recall = util::Ratio{static_cast<std::int64_t>(s.true_positive),
                                   static_cast<std::int64_t>(gold_count)};
        }
        report.per_code.push_back(std::move(s));
    }
    return report;
}

namespace {

json parse_line(const std::string& line, const std::filesystem::path& path, std::size_t line_no) {
    try {
        return json::parse(line);
    } catch (const json::exception& e) {
        throw Error(path.string() + ":" + std::to_string(line_no) + ": invalid json: " + e.what());
    }
}

bool blank(const std::string& s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

}  // namespace

std::vector<EvalCase> load_eval_cases(const std::filesystem::path& predictions,
                                      const std::filesystem::path& gold) {
    std::ifstream gold_in(gold);
    if (!gold_in) {
        throw UnreadableSourceError("cannot open gold file: " + gold.string());
    }
    std::map<std::string, std::string> gold_by_id;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(gold_in, line)) {
        ++line_no;
        if (blank(line)) continue;
        json j = parse_line(line, gold, line_no);
        std::string id = j.value("id", std::string{});
        if (id.empty()) {
            throw Error(gold.string() + ":" + std::to_string(line_no) + ": missing id");
        }
        std::string code;
        if (j.contains("diagnosis_code")) {
            code = j["diagnosis_code"].get<std::string>();  // raw record shape
        } else if (j.contains("code")) {
            code = j["code"].get<std::string>();
        } else {
            throw Error(gold.string() + ":" + std::to_string(line_no) +
                        ": expected diagnosis_code or code");
        }
        gold_by_id[id] = code;
    }

    std::ifstream pred_in(predictions);
    if (!pred_in) {
        throw UnreadableSourceError("cannot open predictions file: " + predictions.string());
    }
    std::vector<EvalCase> cases;
    line_no = 0;
    while (std::getline(pred_in, line)) {
        ++line_no;
        if (blank(line)) continue;
        json j = parse_line(line, predictions, line_no);
        EvalCase c;
        c.id = j.value("id", std::string{});
        if (c.id.empty()) {
            throw Error(predictions.string() + ":" + std::to_string(line_no) + ": missing id");
        }
        if (j.contains("code") && !j["code"].is_null()) {
            const auto code = j["code"].get<std::string>();
            if (!code.empty() && code != "none") c.predicted_code = code;
        }
        c.source = j.value("source", std::string{"consensus"});
        auto it = gold_by_id.find(c.id);
        if (it == gold_by_id.end()) {
            throw Error(predictions.string() + ":" + std::to_string(line_no) + ": id " + c.id +
                        " has no gold label");
        }
        c.gold_code = it->second;
        cases.push_back(std::move(c));
    }
    return cases;
}

std::string report_to_json_string(const EvalReport& r) {
    ordered_json j;
    j["n"] = r.n;
    j["decided"] = r.decided;
    j["abstentions"] = r.abstentions;
    j["correct"] = r.correct;
    j["accuracy"] = {{"num", r.accuracy.num}, {"den", r.accuracy.den},
                     {"value", r.accuracy.value()}};
    j["abstention_rate"] = {{"num", r.abstention_rate.num}, {"den", r.abstention_rate.den},
                            {"value", r.abstention_rate.value()}};
    j["abstention_policy"] =
        r.policy == AbstentionPolicy::count_as_wrong ? "count_as_wrong" : "exclude";
    j["code_axis"] = r.code_axis;
    j["confusion"] = r.confusion;
    auto per_code = ordered_json::array();
    for (const auto& s : r.per_code) {
        ordered_json entry;
        entry["code"] = s.code;
        entry["tp"] = s.true_positive;
        entry["fp"] = s.false_positive;
        entry["fn"] = s.false_negative;
        entry["precision"] = s.precision ? ordered_json(s.precision->value()) : ordered_json();
        entry["recall"] = s.recall ? ordered_json(s.recall->value()) : ordered_json();
        per_code.push_back(std::move(entry));
    }
    j["per_code"] = std::move(per_code);
    return j.dump(2) + "\n";
}

std::string report_to_text(const EvalReport& r) {
    std::ostringstream out;
    out << "cases: " << r.n << " (decided " << r.decided << ", abstained " << r.abstentions
        << ")\n";
    out << "accuracy: " << r.accuracy.str() << " = " << r.accuracy.value();
    if (r.policy == AbstentionPolicy::exclude) out << " (abstentions excluded)";
    out << "\n";
    out << "abstention rate: " << r.abstention_rate.str() << "\n";
    out << "per-code (tp/fp/fn):\n";
    for (const auto& s : r.per_code) {
        out << "  " << s.code << ": " << s.true_positive << "/" << s.false_positive << "/"
            << s.false_negative << "\n";
    }
    return out.str();
}

}  // namespace psychdx::eval
