#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "psychdx/dsm_catalog.hpp"
#include "psychdx/rational.hpp"

namespace psychdx::dataset {

enum class Speaker { psychiatrist, patient };

Speaker parse_speaker(std::string_view text);
std::string_view to_string(Speaker s);

struct ConversationTurn {
    Speaker speaker = Speaker::patient;
    std::string text;
};

using ConversationTranscript = std::vector<ConversationTurn>;

/// Speaker-tagged rendering shared by the fine-tune content field and the
/// diagnostic prompt: one "Psychiatrist: ..." / "Patient: ..." line per turn.
std::string transcript_text(const ConversationTranscript& transcript);

/// One annotated source record: the conversation, the clinician's free-text
/// reasoning, and the gold diagnosis.
struct RawRecord {
    std::string id;
    ConversationTranscript turns;
    std::string clinician_reasoning;
    dsm::DsmCode gold_diagnosis;
};

struct RejectedRecord {
    std::size_t line = 0;
    std::string id;  // empty when the record had none
    std::string reason;
};

struct IngestResult {
    std::vector<RawRecord> records;
    std::vector<RejectedRecord> rejects;
};

/// Reads line-delimited JSON records ({id, turns[{speaker,text}], reasoning,
/// diagnosis_code}). Malformed records land in `rejects` with a reason,
/// never silently dropped. Throws UnreadableSourceError; throws
/// EmptyDatasetError when no record validates.
IngestResult ingest(const std::filesystem::path& path, const dsm::Catalog& catalog);

void write_rejects(std::span<const RejectedRecord> rejects, const std::filesystem::path& path);

/// The three-field conversational sample consumed by the fine-tuning
/// toolchain: instruction / content / text.
struct FineTuneSample {
    std::string instruction;
    std::string content;
    std::string text;

    friend bool operator==(const FineTuneSample&, const FineTuneSample&) = default;
};

/// Deterministic record → sample transform. `content` is the speaker-tagged
/// transcript; `text` is the clinician reasoning followed by a final
/// "Diagnosis: <code> <label>" line. Throws UnknownTemplateError.
FineTuneSample to_finetune_sample(const RawRecord& record, const dsm::Catalog& catalog,
                                  std::string_view template_id = "default");

/// 2/3 train, 1/6 validation, 1/6 test, with a seed for the shuffle.
struct SplitSpec {
    util::Ratio train_fraction{2, 3};
    util::Ratio validation_fraction{1, 6};
    util::Ratio test_fraction{1, 6};
    std::uint64_t seed = 0;

    void check() const;  // fractions must sum to exactly 1
};

struct SplitSizes {
    std::size_t train = 0;
    std::size_t validation = 0;
    std::size_t test = 0;
};

/// Allocation rule: train = floor(2n/3), validation = floor(n/6), test takes
/// the remainder; when the remainder would leave test a full record above
/// n/6, one record moves to validation so every split size stays within 1 of
/// its exact fraction.
SplitSizes split_sizes(std::size_t n);

struct SplitResult {
    std::vector<RawRecord> train;
    std::vector<RawRecord> validation;
    std::vector<RawRecord> test;
};

/// Seeded Fisher-Yates shuffle, then contiguous take in train/validation/test
/// order. Deterministic for a fixed seed across platforms.
SplitResult split(std::vector<RawRecord> records, const SplitSpec& spec);

struct ExportManifest {
    std::size_t count = 0;
    std::string sha256;
};

/// One JSON object per line with fixed field order (instruction, content,
/// text). Throws UnwritableTargetError / EmptyDatasetError.
ExportManifest export_jsonl(std::span<const FineTuneSample> samples,
                            const std::filesystem::path& path);

std::vector<FineTuneSample> read_samples_jsonl(const std::filesystem::path& path);

struct DatasetManifest {
    std::size_t total_records = 0;
    std::size_t rejected = 0;
    ExportManifest train;
    ExportManifest validation;
    ExportManifest test;
    std::uint64_t seed = 0;
    std::string template_id;
    std::string source_sha256;

    std::string to_json_string() const;
};

/// ingest -> transform -> split -> export, writing train.jsonl,
/// validation.jsonl, test.jsonl, manifest.json and (when needed)
/// rejects.jsonl under `outdir`.
DatasetManifest prepare_data(const std::filesystem::path& input,
                             const std::filesystem::path& outdir,
                             const dsm::Catalog& catalog, std::uint64_t seed,
                             std::string_view template_id = "default");

}  // namespace psychdx::dataset
