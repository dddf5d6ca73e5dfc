#include "psychdx/audit_log.hpp"

#include <cstdio>

#include "psychdx/digest.hpp"
#include "psychdx/errors.hpp"

namespace psychdx::audit {

using nlohmann::ordered_json;

namespace {

std::string canonical_without_hash(ordered_json record) {
    record.erase("record_hash");
    return record.dump();
}

}  // namespace

std::string AuditLog::genesis_hash() { return std::string(64, '0'); }

AuditLog::AuditLog(std::filesystem::path path) : path_(std::move(path)) {
    last_hash_ = genesis_hash();

    // Resume an existing chain: adopt the last record's hash so restarts
    // keep the file linear.
    std::ifstream in(path_, std::ios::binary);
    if (in) {
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            ordered_json record;
            try {
                record = ordered_json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw AuditError("cannot resume audit chain " + path_.string() + ": record " +
                                 std::to_string(count_ + 1) + " is unparseable: " + e.what());
            }
            if (!record.contains("record_hash") || !record["record_hash"].is_string()) {
                throw AuditError("cannot resume audit chain " + path_.string() + ": record " +
                                 std::to_string(count_ + 1) + " lacks record_hash");
            }
            last_hash_ = record["record_hash"].get<std::string>();
            ++count_;
        }
    }

    out_.open(path_, std::ios::binary | std::ios::app);
    if (!out_) {
        throw UnwritableTargetError("cannot open audit log for append: " + path_.string());
    }
}

std::string AuditLog::append(ordered_json body) {
    if (body.contains("audit_id") || body.contains("prev_hash") || body.contains("record_hash")) {
        throw AuditError("audit body must not pre-set chain fields");
    }
    std::lock_guard lock(mutex_);

    const std::size_t seq = count_ + 1;
    char seq_buf[16];
    std::snprintf(seq_buf, sizeof(seq_buf), "a%06zu", seq);
    const std::string id_material =
        last_hash_ + ":" + std::to_string(seq) + ":" + body.value("config_digest", "");
    const std::string audit_id =
        std::string(seq_buf) + "-" + util::sha256_hex(id_material).substr(0, 12);

    ordered_json record;
    record["audit_id"] = audit_id;
    for (auto& [key, value] : body.items()) record[key] = std::move(value);
    record["prev_hash"] = last_hash_;
    record["record_hash"] = util::sha256_hex(canonical_without_hash(record));

    out_ << record.dump() << '\n';
    out_.flush();
    if (!out_) {
        throw UnwritableTargetError("audit append failed: " + path_.string());
    }
    last_hash_ = record["record_hash"].get<std::string>();
    ++count_;
    return audit_id;
}

std::optional<ordered_json> AuditLog::find(std::string_view audit_id) const {
    std::lock_guard lock(mutex_);
    std::ifstream in(path_, std::ios::binary);
    if (!in) return std::nullopt;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ordered_json record;
        try {
            record = ordered_json::parse(line);
        } catch (const nlohmann::json::exception&) {
            continue;
        }
        if (record.value("audit_id", "") == audit_id) return record;
    }
    return std::nullopt;
}

std::size_t AuditLog::size() const {
    std::lock_guard lock(mutex_);
    return count_;
}

AuditLog::VerifyResult AuditLog::verify(const std::filesystem::path& path) {
    VerifyResult result;
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        result.detail = "cannot open " + path.string();
        return result;
    }
    std::string expected_prev = genesis_hash();
    std::string line;
    std::size_t record_no = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++record_no;
        ordered_json record;
        try {
            record = ordered_json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            result.broken_at = record_no;
            result.detail = "record " + std::to_string(record_no) + " unparseable: " + e.what();
            return result;
        }
        // The stored line must be the canonical dump; whitespace or escape
        // tampering that survives parsing is caught here.
        if (record.dump() != line) {
            result.broken_at = record_no;
            result.detail = "record " + std::to_string(record_no) + " is not in canonical form";
            return result;
        }
        if (record.value("prev_hash", "") != expected_prev) {
            result.broken_at = record_no;
            result.detail = "record " + std::to_string(record_no) + " breaks the chain link";
            return result;
        }
        const std::string stored = record.value("record_hash", "");
        const std::string computed = util::sha256_hex(canonical_without_hash(record));
        if (stored != computed) {
            result.broken_at = record_no;
            result.detail = "record " + std::to_string(record_no) + " hash mismatch";
            return result;
        }
        expected_prev = stored;
    }
    result.ok = true;
    result.records = record_no;
    result.detail = "chain verified";
    return result;
}

}  // namespace psychdx::audit
