#include "psychdx/backend_client.hpp"

#include <future>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "psychdx/errors.hpp"

namespace psychdx::net {

using nlohmann::json;
using std::chrono::duration_cast;
using std::chrono::milliseconds;
using std::chrono::steady_clock;

BackendRole parse_role(std::string_view text) {
    if (text == "consortium_member") return BackendRole::consortium_member;
    if (text == "adjudicator") return BackendRole::adjudicator;
    throw ConfigError("unknown backend role: " + std::string(text));
}

std::string_view to_string(BackendRole r) {
    return r == BackendRole::adjudicator ? "adjudicator" : "consortium_member";
}

std::string_view to_string(BackendErrorKind k) {
    switch (k) {
        case BackendErrorKind::timeout: return "timeout";
        case BackendErrorKind::connection_failed: return "connection_failed";
        case BackendErrorKind::server_error: return "server_error";
        case BackendErrorKind::client_error: return "client_error";
        case BackendErrorKind::malformed_response: return "malformed_response";
    }
    return "connection_failed";
}

std::string BackendError::describe() const {
    std::string out(to_string(kind));
    if (http_status != 0) out += " (http " + std::to_string(http_status) + ")";
    if (!detail.empty()) out += ": " + detail;
    return out;
}

void BackendConfig::check() const {
    if (name.empty()) throw ConfigError("backend config needs a name");
    if (base_url.empty()) throw ConfigError("backend " + name + " needs a base_url");
    if (model_id.empty()) throw ConfigError("backend " + name + " needs a model_id");
    if (timeout_ms <= 0) throw ConfigError("backend " + name + ": timeout must be > 0");
    if (max_retries < 0) throw ConfigError("backend " + name + ": max_retries must be >= 0");
    if (retry_backoff_ms < 0) throw ConfigError("backend " + name + ": retry backoff must be >= 0");
}

namespace {

struct Attempt {
    bool ok = false;
    std::string text;
    BackendError error;
};

BackendError from_transport(httplib::Error err) {
    switch (err) {
        case httplib::Error::ConnectionTimeout:
        case httplib::Error::Read:
        case httplib::Error::Canceled:
            return {BackendErrorKind::timeout, 0, httplib::to_string(err)};
        default:
            return {BackendErrorKind::connection_failed, 0, httplib::to_string(err)};
    }
}

Attempt single_generate(const BackendConfig& cfg, const std::string& prompt_text,
                        milliseconds budget) {
    httplib::Client cli(cfg.base_url);
    cli.set_connection_timeout(budget);
    cli.set_read_timeout(budget);
    cli.set_write_timeout(budget);

    json body;
    body["model"] = cfg.model_id;
    body["prompt"] = prompt_text;
    body["stream"] = false;

    Attempt a;
    auto res = cli.Post("/api/generate", body.dump(), "application/json");
    if (!res) {
        a.error = from_transport(res.error());
        return a;
    }
    if (res->status >= 200 && res->status < 300) {
        json parsed;
        try {
            parsed = json::parse(res->body);
        } catch (const json::exception& e) {
            a.error = {BackendErrorKind::malformed_response, res->status,
                       std::string("body is not json: ") + e.what()};
            return a;
        }
        if (!parsed.is_object() || !parsed.contains("response") || !parsed["response"].is_string()) {
            a.error = {BackendErrorKind::malformed_response, res->status,
                       "body lacks a string `response` field"};
            return a;
        }
        a.ok = true;
        a.text = parsed["response"].get<std::string>();
        return a;
    }
    if (res->status >= 500) {
        a.error = {BackendErrorKind::server_error, res->status, "server error"};
    } else if (res->status >= 400) {
        a.error = {BackendErrorKind::client_error, res->status, "client error"};
    } else {
        a.error = {BackendErrorKind::malformed_response, res->status,
                   "unexpected status for generate"};
    }
    return a;
}

bool retryable(const BackendError& e) {
    return e.kind == BackendErrorKind::timeout || e.kind == BackendErrorKind::connection_failed ||
           e.kind == BackendErrorKind::server_error;
}

}  // namespace

GenerateResult generate(const BackendConfig& cfg, const prompt::RenderedPrompt& prompt,
                        std::optional<steady_clock::time_point> deadline) {
    cfg.check();
    const auto started = steady_clock::now();
    GenerateResult result;
    std::optional<BackendError> last_error;

    for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
        milliseconds budget{cfg.timeout_ms};
        if (deadline) {
            const auto remaining = duration_cast<milliseconds>(*deadline - steady_clock::now());
            if (remaining <= milliseconds::zero()) {
                if (!last_error) {
                    last_error = BackendError{BackendErrorKind::timeout, 0,
                                              "overall deadline exhausted before first attempt"};
                }
                break;
            }
            budget = std::min(budget, remaining);
        }

        ++result.attempts;
        Attempt a = single_generate(cfg, prompt.text, budget);
        if (a.ok) {
            result.text = std::move(a.text);
            result.error.reset();
            result.duration = duration_cast<milliseconds>(steady_clock::now() - started);
            return result;
        }
        last_error = std::move(a.error);
        if (!retryable(*last_error) || attempt == cfg.max_retries) break;

        // Exponential backoff: base * 2^attempt, clipped to the deadline.
        milliseconds backoff{static_cast<long long>(cfg.retry_backoff_ms) << attempt};
        if (deadline) {
            const auto remaining = duration_cast<milliseconds>(*deadline - steady_clock::now());
            if (remaining <= milliseconds::zero()) break;
            backoff = std::min(backoff, remaining);
        }
        if (backoff > milliseconds::zero()) std::this_thread::sleep_for(backoff);
    }

    result.error = std::move(last_error);
    result.duration = duration_cast<milliseconds>(steady_clock::now() - started);
    return result;
}

HealthStatus health_check(const BackendConfig& cfg) {
    cfg.check();
    // Liveness should answer fast even when the configured generate timeout
    // is generous.
    const milliseconds budget{std::min(cfg.timeout_ms, 2500)};
    httplib::Client cli(cfg.base_url);
    cli.set_connection_timeout(budget);
    cli.set_read_timeout(budget);
    cli.set_write_timeout(budget);

    auto res = cli.Get("/api/tags");
    if (!res) {
        return {false, from_transport(res.error())};
    }
    if (res->status != 200) {
        BackendErrorKind kind = res->status >= 500 ? BackendErrorKind::server_error
                                                   : BackendErrorKind::client_error;
        return {false, BackendError{kind, res->status, "model-list probe failed"}};
    }
    try {
        json parsed = json::parse(res->body);
        if (parsed.is_object() && parsed.contains("models") && parsed["models"].is_array()) {
            return {true, std::nullopt};
        }
    } catch (const json::exception&) {
    }
    return {false,
            BackendError{BackendErrorKind::malformed_response, res->status,
                         "model-list body is not the expected shape"}};
}

std::vector<MemberResult> fan_out(const std::vector<MemberCall>& calls,
                                  milliseconds overall_deadline) {
    const auto deadline = steady_clock::now() + overall_deadline;
    std::vector<std::future<GenerateResult>> futures;
    futures.reserve(calls.size());
    for (const auto& call : calls) {
        futures.push_back(std::async(std::launch::async, [&call, deadline] {
            return generate(call.config, call.prompt, deadline);
        }));
    }
    std::vector<MemberResult> results;
    results.reserve(calls.size());
    for (std::size_t i = 0; i < calls.size(); ++i) {
        results.push_back({calls[i].config.name, futures[i].get()});
    }
    return results;
}

}  // namespace psychdx::net
