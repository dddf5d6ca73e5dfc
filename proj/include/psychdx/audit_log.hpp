#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

namespace psychdx::audit {

/// Append-only JSONL log with per-record hash chaining. Each line is the
/// canonical (compact, insertion-ordered) dump of a record whose
/// `record_hash` is the SHA-256 of the same record serialized without that
/// field; `prev_hash` links to the previous record, starting from an
/// all-zero genesis hash. Appends are serialized through one writer so the
/// chain stays linear under concurrent diagnoses.
class AuditLog {
public:
    explicit AuditLog(std::filesystem::path path);

    /// Fills in audit_id, prev_hash and record_hash, writes the line, and
    /// returns the assigned id. `body` must not already contain those keys.
    std::string append(nlohmann::ordered_json body);

    std::optional<nlohmann::ordered_json> find(std::string_view audit_id) const;

    std::size_t size() const;
    const std::filesystem::path& path() const { return path_; }

    struct VerifyResult {
        bool ok = false;
        std::size_t records = 0;
        std::optional<std::size_t> broken_at;  // 1-based record number
        std::string detail;
    };

    /// Walks the whole file, recomputing every hash and link. Any single-byte
    /// mutation of any line breaks parse, canonical-form equality, the record
    /// hash, or the chain link.
    static VerifyResult verify(const std::filesystem::path& path);

    static std::string genesis_hash();

private:
    std::filesystem::path path_;
    mutable std::mutex mutex_;
    std::ofstream out_;
    std::string last_hash_;
    std::size_t count_ = 0;
};

}  // namespace psychdx::audit
