#include "psychdx/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "psychdx/digest.hpp"
#include "psychdx/errors.hpp"

namespace psychdx::dataset {

using nlohmann::json;
using nlohmann::ordered_json;

Speaker parse_speaker(std::string_view text) {
    if (text == "psychiatrist") return Speaker::psychiatrist;
    if (text == "patient") return Speaker::patient;
    throw Error("unknown speaker role: " + std::string(text));
}

std::string_view to_string(Speaker s) {
    return s == Speaker::psychiatrist ? "psychiatrist" : "patient";
}

std::string transcript_text(const ConversationTranscript& transcript) {
    std::string out;
    for (std::size_t i = 0; i < transcript.size(); ++i) {
        if (i > 0) out += '\n';
        out += transcript[i].speaker == Speaker::psychiatrist ? "Psychiatrist: " : "Patient: ";
        out += transcript[i].text;
    }
    return out;
}

namespace {

bool is_blank(const std::string& s) {
    return std::all_of(s.begin(), s.end(),
                       [](unsigned char c) { return std::isspace(c) != 0; });
}

// Parses one JSONL line into a record; returns the reject reason on failure.
std::optional<std::string> parse_record(const std::string& line, const dsm::Catalog& catalog,
                                        RawRecord& out) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        return std::string("invalid json: ") + e.what();
    }
    if (!j.is_object()) return "record is not a json object";

    if (!j.contains("id") || !j["id"].is_string() || j["id"].get<std::string>().empty()) {
        return "missing id";
    }
    out.id = j["id"].get<std::string>();

    if (!j.contains("turns") || !j["turns"].is_array() || j["turns"].empty()) {
        return "missing turns";
    }
    bool has_psychiatrist = false, has_patient = false;
    for (const auto& t : j["turns"]) {
        if (!t.is_object() || !t.contains("speaker") || !t.contains("text") ||
            !t["speaker"].is_string() || !t["text"].is_string()) {
            return "invalid turn shape";
        }
        ConversationTurn turn;
        try {
            turn.speaker = parse_speaker(t["speaker"].get<std::string>());
        } catch (const Error&) {
            return "invalid turn speaker: " + t["speaker"].get<std::string>();
        }
        turn.text = t["text"].get<std::string>();
        if (is_blank(turn.text)) return "empty turn text";
        has_psychiatrist = has_psychiatrist || turn.speaker == Speaker::psychiatrist;
        has_patient = has_patient || turn.speaker == Speaker::patient;
        out.turns.push_back(std::move(turn));
    }
    if (!has_patient) return "missing patient turn";
    if (!has_psychiatrist) return "missing psychiatrist turn";

    if (!j.contains("reasoning") || !j["reasoning"].is_string()) {
        return "missing reasoning";
    }
    out.clinician_reasoning = j["reasoning"].get<std::string>();

    if (!j.contains("diagnosis_code") || !j["diagnosis_code"].is_string() ||
        j["diagnosis_code"].get<std::string>().empty()) {
        return "missing gold_diagnosis";
    }
    auto v = catalog.validate(j["diagnosis_code"].get<std::string>());
    switch (v.status) {
        case dsm::CodeStatus::ok:
            out.gold_diagnosis = *v.entry;
            break;
        case dsm::CodeStatus::malformed:
            return "malformed diagnosis_code: " + j["diagnosis_code"].get<std::string>();
        case dsm::CodeStatus::unknown:
            return "unknown diagnosis_code: " + v.code;
    }
    return std::nullopt;
}

}  // namespace

IngestResult ingest(const std::filesystem::path& path, const dsm::Catalog& catalog) {
    std::ifstream in(path);
    if (!in) {
        throw UnreadableSourceError("cannot open dataset source: " + path.string());
    }
    IngestResult result;
    std::set<std::string> seen_ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (is_blank(line)) continue;

        RawRecord record;
        auto reason = parse_record(line, catalog, record);
        if (!reason && !seen_ids.insert(record.id).second) {
            reason = "duplicate id: " + record.id;
        }
        if (reason) {
            result.rejects.push_back({line_no, record.id, *reason});
        } else {
            result.records.push_back(std::move(record));
        }
    }
    if (result.records.empty()) {
        throw EmptyDatasetError("no valid records in " + path.string() + " (" +
                                std::to_string(result.rejects.size()) + " rejected)");
    }
    return result;
}

void write_rejects(std::span<const RejectedRecord> rejects, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw UnwritableTargetError("cannot write rejects file: " + path.string());
    }
    for (const auto& r : rejects) {
        ordered_json j;
        j["line"] = r.line;
        j["id"] = r.id;
        j["reason"] = r.reason;
        out << j.dump() << '\n';
    }
}

FineTuneSample to_finetune_sample(const RawRecord& record, const dsm::Catalog& catalog,
                                  std::string_view template_id) {
    if (template_id != "default") {
        throw UnknownTemplateError("unknown fine-tune instruction template: " +
                                   std::string(template_id));
    }
    FineTuneSample sample;
    sample.instruction =
        "You are an experienced psychiatrist. Review the following psychiatrist-patient "
        "conversation, reason through the clinical evidence, and conclude with a final line "
        "in the form \"Diagnosis: <DSM-5 code> <label>\".";
    sample.content = transcript_text(record.turns);
    const std::string diagnosis_line = "Diagnosis: " + record.gold_diagnosis.code + " " +
                                       catalog.lookup_label(record.gold_diagnosis.code);
    sample.text = record.clinician_reasoning.empty()
                      ? diagnosis_line
                      : record.clinician_reasoning + "\n" + diagnosis_line;
    return sample;
}

void SplitSpec::check() const {
    const auto sum = train_fraction + validation_fraction + test_fraction;
    if (!(sum == util::Ratio{1, 1})) {
        throw Error("split fractions must sum to exactly 1, got " + sum.str());
    }
}

SplitSizes split_sizes(std::size_t n) {
    SplitSizes s;
    s.train = 2 * n / 3;
    s.validation = n / 6;
    s.test = n - s.train - s.validation;
    // Floor-then-remainder can leave test a full record above n/6 (n = 4 or
    // 5 mod 6); shift one to validation so every size stays within 1 of its
    // exact fraction.
    if (6 * s.test >= n + 6) {
        ++s.validation;
        --s.test;
    }
    return s;
}

SplitResult split(std::vector<RawRecord> records, const SplitSpec& spec) {
    spec.check();
    if (records.empty()) {
        throw EmptyDatasetError("cannot split an empty record set");
    }
    const std::size_t n = records.size();

    // Explicit Fisher-Yates with mt19937_64 so the permutation is identical
    // across platforms for the same seed.
    std::mt19937_64 gen(spec.seed);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(gen() % (i + 1));
        std::swap(order[i], order[j]);
    }

    const SplitSizes sizes = split_sizes(n);
    SplitResult result;
    result.train.reserve(sizes.train);
    result.validation.reserve(sizes.validation);
    result.test.reserve(sizes.test);
    for (std::size_t i = 0; i < n; ++i) {
        RawRecord& r = records[order[i]];
        if (i < sizes.train) {
            result.train.push_back(std::move(r));
        } else if (i < sizes.train + sizes.validation) {
            result.validation.push_back(std::move(r));
        } else {
            result.test.push_back(std::move(r));
        }
    }
    return result;
}

namespace {

std::string sample_line(const FineTuneSample& s) {
    ordered_json j;
    j["instruction"] = s.instruction;
    j["content"] = s.content;
    j["text"] = s.text;
    return j.dump();
}

}  // namespace

ExportManifest export_jsonl(std::span<const FineTuneSample> samples,
                            const std::filesystem::path& path) {
    if (samples.empty()) {
        throw EmptyDatasetError("refusing to export zero samples to " + path.string());
    }
    std::string payload;
    for (const auto& s : samples) {
        payload += sample_line(s);
        payload += '\n';
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw UnwritableTargetError("cannot write samples file: " + path.string());
    }
    out << payload;
    out.flush();
    if (!out) {
        throw UnwritableTargetError("short write to samples file: " + path.string());
    }
    return {samples.size(), util::sha256_hex(payload)};
}

std::vector<FineTuneSample> read_samples_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw UnreadableSourceError("cannot open samples file: " + path.string());
    }
    std::vector<FineTuneSample> samples;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (is_blank(line)) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(path.string() + ":" + std::to_string(line_no) + ": invalid json: " +
                        e.what());
        }
        FineTuneSample s;
        try {
            s.instruction = j.at("instruction").get<std::string>();
            s.content = j.at("content").get<std::string>();
            s.text = j.at("text").get<std::string>();
        } catch (const json::exception&) {
            throw Error(path.string() + ":" + std::to_string(line_no) +
                        ": expected fields instruction/content/text");
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

std::string DatasetManifest::to_json_string() const {
    ordered_json j;
    j["total_records"] = total_records;
    j["rejected"] = rejected;
    j["seed"] = seed;
    j["template_id"] = template_id;
    j["source_sha256"] = source_sha256;
    for (auto [name, m] : {std::pair{"train", &train}, {"validation", &validation},
                           {"test", &test}}) {
        j["splits"][name]["count"] = m->count;
        j["splits"][name]["sha256"] = m->sha256;
    }
    return j.dump(2) + "\n";
}

DatasetManifest prepare_data(const std::filesystem::path& input,
                             const std::filesystem::path& outdir,
                             const dsm::Catalog& catalog, std::uint64_t seed,
                             std::string_view template_id) {
    std::filesystem::create_directories(outdir);

    DatasetManifest manifest;
    manifest.seed = seed;
    manifest.template_id = std::string(template_id);
    manifest.source_sha256 = util::sha256_file_hex(input.string());

    IngestResult ingested = ingest(input, catalog);
    manifest.total_records = ingested.records.size();
    manifest.rejected = ingested.rejects.size();
    if (!ingested.rejects.empty()) {
        write_rejects(ingested.rejects, outdir / "rejects.jsonl");
    }

    SplitSpec spec;
    spec.seed = seed;
    SplitResult splits = split(std::move(ingested.records), spec);

    auto export_split = [&](const std::vector<RawRecord>& records,
                            const std::filesystem::path& path) -> ExportManifest {
        std::vector<FineTuneSample> samples;
        samples.reserve(records.size());
        for (const auto& r : records) {
            samples.push_back(to_finetune_sample(r, catalog, template_id));
        }
        if (samples.empty()) {
            // Degenerate splits (tiny n) still get a file so consumers see
            // an explicit empty set rather than a missing path.
            std::ofstream out(path, std::ios::binary);
            if (!out) throw UnwritableTargetError("cannot write " + path.string());
            return {0, util::sha256_hex("")};
        }
        return export_jsonl(samples, path);
    };

    manifest.train = export_split(splits.train, outdir / "train.jsonl");
    manifest.validation = export_split(splits.validation, outdir / "validation.jsonl");
    manifest.test = export_split(splits.test, outdir / "test.jsonl");

    std::ofstream mf(outdir / "manifest.json", std::ios::binary);
    if (!mf) {
        throw UnwritableTargetError("cannot write manifest: " + (outdir / "manifest.json").string());
    }
    mf << manifest.to_json_string();
    return manifest;
}

}  // namespace psychdx::dataset
