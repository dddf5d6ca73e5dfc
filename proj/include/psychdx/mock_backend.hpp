#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace psychdx::mock {

enum class FaultKind { ok, http_500, hang, malformed };

std::string_view to_string(FaultKind k);

struct FaultStep {
    FaultKind kind = FaultKind::ok;
    int hang_ms = 0;  // only for FaultKind::hang
};

/// Prompt matcher: substring containment or exact digest equality against
/// the incoming prompt. First matching rule wins.
struct Matcher {
    enum class Type { substring, digest } type = Type::substring;
    std::string value;
    std::string response;
};

/// Declarative behavior of one emulated model server. The fault plan is
/// consumed per request in arrival order; once exhausted its last element
/// repeats. An empty plan means every request succeeds.
struct Scenario {
    std::string id;
    std::vector<Matcher> matchers;
    std::string default_response;
    std::vector<FaultStep> fault_plan;
    int latency_min_ms = 0;
    int latency_max_ms = 0;
    bool health_malformed = false;

    static Scenario from_json_text(const std::string& text, const std::string& origin = "<inline>");
    static Scenario load(const std::filesystem::path& path);
};

struct LoggedRequest {
    std::size_t seq = 0;  // arrival index; also the fault plan cursor
    std::string model;
    std::string prompt;
    std::string prompt_digest;
    FaultKind fault = FaultKind::ok;
    int matched_rule = -1;  // index into matchers, -1 for the default response
};

/// In-process model-server emulator speaking the generate wire protocol.
/// Port 0 picks a free port. Construction binds (PortInUseError when taken);
/// start() begins serving on a background thread.
class Emulator {
public:
    explicit Emulator(Scenario scenario, const std::string& host = "127.0.0.1", int port = 0);
    ~Emulator();

    Emulator(const Emulator&) = delete;
    Emulator& operator=(const Emulator&) = delete;

    void start();
    void stop();

    int port() const;
    std::string base_url() const;

    std::vector<LoggedRequest> request_log() const;
    std::size_t request_count() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace psychdx::mock
