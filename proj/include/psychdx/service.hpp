#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "psychdx/audit_log.hpp"
#include "psychdx/consensus.hpp"
#include "psychdx/dataset.hpp"
#include "psychdx/service_config.hpp"

namespace psychdx::service {

struct DiagnoseOptions {
    std::optional<ConsensusMode> mode;
    std::optional<std::string> template_id;  // must name a loaded diagnostic template
};

/// Per-member view of one diagnosis: the parsed prediction plus transport
/// bookkeeping. A failed member still appears here, as an abstention with
/// its error attached.
struct MemberReport {
    std::string backend_name;
    std::string model_id;
    consensus::ModelPrediction prediction;
    std::optional<net::BackendError> error;
    int attempts = 0;
    std::chrono::milliseconds duration{0};
    std::string template_id;
    std::string prompt_digest;
};

struct AdjudicatorReport {
    std::string backend_name;
    int attempts = 0;
    std::chrono::milliseconds duration{0};
    std::optional<net::BackendError> error;
    std::string prompt_digest;
};

struct DiagnoseOutput {
    std::vector<MemberReport> members;
    consensus::ConsensusOutcome outcome;
    std::optional<AdjudicatorReport> adjudicator;
    ConsensusMode mode = ConsensusMode::adjudicate;
    std::string audit_id;
    std::chrono::milliseconds duration{0};

    bool all_abstained() const;
};

nlohmann::ordered_json outcome_to_json(const consensus::ConsensusOutcome& outcome);
nlohmann::ordered_json diagnose_response_json(const DiagnoseOutput& output);

/// Parses a transcript from either a bare array of {speaker, text} turns or
/// an object with a `transcript` field. Throws InvalidTranscriptError.
dataset::ConversationTranscript parse_transcript_json(const nlohmann::json& j);

/// The diagnosis pipeline behind the HTTP surface: render -> fan out ->
/// parse -> consensus/adjudication -> audit. Construction loads and
/// validates everything (catalog, templates, audit chain); a service that
/// constructs can serve. Thread-safe for concurrent diagnoses.
class DiagnosticService {
public:
    explicit DiagnosticService(ServiceConfig config);

    DiagnoseOutput diagnose(const dataset::ConversationTranscript& transcript,
                            const DiagnoseOptions& options = {});

    nlohmann::ordered_json models_status() const;

    audit::AuditLog& audit_log() { return *audit_; }
    const ServiceConfig& config() const { return config_; }
    const dsm::Catalog& catalog() const { return catalog_; }
    const std::string& config_digest() const { return config_digest_; }

private:
    const prompt::PromptTemplate& template_for_member(const std::string& backend_name,
                                                      const DiagnoseOptions& options) const;
    void validate_transcript(const dataset::ConversationTranscript& transcript) const;

    ServiceConfig config_;
    dsm::Catalog catalog_;
    std::map<std::string, prompt::PromptTemplate> templates_;  // by template id
    std::string default_diagnostic_id_;
    std::string adjudication_id_;
    std::map<std::string, std::string> member_template_ids_;
    std::string config_digest_;
    std::unique_ptr<audit::AuditLog> audit_;
};

/// HTTP wrapper: POST /v1/diagnose, GET /v1/audit/{id}, GET /v1/models,
/// GET /v1/health. Concurrent requests run up to the configured limit.
class HttpService {
public:
    explicit HttpService(ServiceConfig config);
    ~HttpService();

    HttpService(const HttpService&) = delete;
    HttpService& operator=(const HttpService&) = delete;

    void start();  // serves on a background thread
    void stop();
    int port() const;
    std::string base_url() const;

    DiagnosticService& engine();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace psychdx::service
