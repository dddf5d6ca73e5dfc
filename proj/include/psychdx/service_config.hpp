#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "psychdx/backend_client.hpp"

namespace psychdx::service {

struct ServiceLimits {
    std::size_t max_transcript_turns = 200;
    int max_concurrent_diagnoses = 8;
    int request_deadline_ms = 90000;
    std::size_t max_prompt_chars = 32768;
    std::size_t rationale_excerpt_chars = 1200;
};

enum class ConsensusMode { adjudicate, deterministic };

ConsensusMode parse_mode(std::string_view text);
std::string_view to_string(ConsensusMode m);

/// Full service wiring. Loaded from a strict-keyed JSON file (unknown keys
/// are rejected) with environment overrides PSYCHDX_LISTEN (host:port) and
/// PSYCHDX_AUDIT_PATH. Validation happens here, at startup, never at
/// request time.
struct ServiceConfig {
    std::string listen_host = "127.0.0.1";
    int listen_port = 8080;
    std::filesystem::path audit_path = "audit.jsonl";
    std::optional<std::filesystem::path> catalog_path;
    std::filesystem::path diagnostic_template;
    std::filesystem::path adjudication_template;
    std::map<std::string, std::filesystem::path> per_backend_templates;
    std::vector<net::BackendConfig> fleet;  // consortium members only
    std::optional<net::BackendConfig> adjudicator;
    ConsensusMode mode = ConsensusMode::adjudicate;
    ServiceLimits limits;

    static ServiceConfig load(const std::filesystem::path& path);
    static ServiceConfig from_json_text(const std::string& text,
                                        const std::string& origin = "<inline>");

    void check() const;

    /// Digest of the canonical config snapshot, recorded in audit records.
    std::string digest() const;
};

}  // namespace psychdx::service
