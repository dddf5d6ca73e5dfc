#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "psychdx/prompt_engine.hpp"

namespace psychdx::net {

enum class BackendRole { consortium_member, adjudicator };

BackendRole parse_role(std::string_view text);
std::string_view to_string(BackendRole r);

/// One model backend speaking the generate protocol
/// (POST {base_url}/api/generate, non-streaming).
struct BackendConfig {
    std::string name;
    std::string base_url;  // scheme://host:port
    std::string model_id;
    BackendRole role = BackendRole::consortium_member;
    int timeout_ms = 60000;
    int max_retries = 2;
    int retry_backoff_ms = 250;

    void check() const;
};

enum class BackendErrorKind { timeout, connection_failed, server_error, client_error, malformed_response };

std::string_view to_string(BackendErrorKind k);

struct BackendError {
    BackendErrorKind kind = BackendErrorKind::connection_failed;
    int http_status = 0;  // 0 for transport-level failures
    std::string detail;

    bool transport() const {
        return kind == BackendErrorKind::timeout || kind == BackendErrorKind::connection_failed;
    }
    std::string describe() const;
};

/// Outcome of one generate call, success or not. `attempts` counts actual
/// HTTP tries and never exceeds max_retries + 1.
struct GenerateResult {
    std::string text;  // completion on success
    int attempts = 0;
    std::chrono::milliseconds duration{0};
    std::optional<BackendError> error;

    bool ok() const { return !error.has_value(); }
};

/// Blocking generate with retries. Retries only transport errors and 5xx
/// statuses, with exponential backoff (base * 2^attempt); 4xx and malformed
/// bodies are never retried. An optional absolute deadline bounds the whole
/// call including backoff sleeps; exceeding it surfaces as a timeout.
GenerateResult generate(const BackendConfig& config, const prompt::RenderedPrompt& prompt,
                        std::optional<std::chrono::steady_clock::time_point> deadline = {});

struct HealthStatus {
    bool healthy = false;
    std::optional<BackendError> reason;
};

/// Single probe of the protocol's model-list endpoint. Never retries;
/// unhealthy is a value, not an error.
HealthStatus health_check(const BackendConfig& config);

struct MemberCall {
    BackendConfig config;
    prompt::RenderedPrompt prompt;
};

struct MemberResult {
    std::string backend_name;
    GenerateResult result;
};

/// Issues all calls concurrently under one shared deadline. A straggler
/// surfaces as a timeout for that member only; results come back in input
/// order.
std::vector<MemberResult> fan_out(const std::vector<MemberCall>& calls,
                                  std::chrono::milliseconds overall_deadline);

}  // namespace psychdx::net
