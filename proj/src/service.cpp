#include "psychdx/service.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <future>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "psychdx/errors.hpp"

namespace psychdx::service {

using nlohmann::json;
using nlohmann::ordered_json;
using std::chrono::duration_cast;
using std::chrono::milliseconds;
using std::chrono::steady_clock;

bool DiagnoseOutput::all_abstained() const {
    return std::all_of(members.begin(), members.end(),
                       [](const MemberReport& m) { return m.prediction.abstained(); });
}

ordered_json outcome_to_json(const consensus::ConsensusOutcome& outcome) {
    ordered_json j;
    j["status"] = std::string(consensus::to_string(outcome.status));
    j["final_code"] = outcome.final_code ? ordered_json(outcome.final_code->code) : ordered_json();
    j["final_label"] = outcome.final_code ? ordered_json(outcome.final_code->label) : ordered_json();
    j["agreement_ratio"] = {{"num", outcome.agreement_ratio.num},
                            {"den", outcome.agreement_ratio.den},
                            {"value", outcome.agreement_ratio.value()}};
    j["supporting_models"] = outcome.supporting_models;
    j["tied_codes"] = outcome.tied_codes;
    j["adjudicator_override"] = outcome.adjudicator_override;
    j["adjudicator_rationale"] = outcome.adjudicator_rationale
                                     ? ordered_json(*outcome.adjudicator_rationale)
                                     : ordered_json();
    return j;
}

namespace {

ordered_json error_json(const net::BackendError& e) {
    ordered_json j;
    j["kind"] = std::string(net::to_string(e.kind));
    j["http_status"] = e.http_status;
    j["detail"] = e.detail;
    return j;
}

}  // namespace

ordered_json diagnose_response_json(const DiagnoseOutput& output) {
    ordered_json j;
    j["audit_id"] = output.audit_id;
    j["mode"] = std::string(to_string(output.mode));
    j["duration_ms"] = output.duration.count();
    j["outcome"] = outcome_to_json(output.outcome);
    auto predictions = ordered_json::array();
    for (const auto& m : output.members) {
        ordered_json p;
        p["backend"] = m.backend_name;
        p["model_id"] = m.model_id;
        p["parse_status"] = std::string(consensus::to_string(m.prediction.parse_status));
        p["primary_code"] = m.prediction.primary_code
                                ? ordered_json(m.prediction.primary_code->code)
                                : ordered_json();
        p["primary_label"] = m.prediction.primary_code
                                 ? ordered_json(m.prediction.primary_code->label)
                                 : ordered_json();
        auto extracted = ordered_json::array();
        for (const auto& c : m.prediction.extracted_codes) {
            extracted.push_back({{"code", c.code}, {"catalogued", c.catalogued}});
        }
        p["extracted_codes"] = std::move(extracted);
        p["raw_text"] = m.prediction.raw_text;
        p["attempts"] = m.attempts;
        p["duration_ms"] = m.duration.count();
        p["template_id"] = m.template_id;
        p["prompt_digest"] = m.prompt_digest;
        p["error"] = m.error ? error_json(*m.error) : ordered_json();
        predictions.push_back(std::move(p));
    }
    j["predictions"] = std::move(predictions);
    if (output.adjudicator) {
        ordered_json a;
        a["backend"] = output.adjudicator->backend_name;
        a["attempts"] = output.adjudicator->attempts;
        a["duration_ms"] = output.adjudicator->duration.count();
        a["prompt_digest"] = output.adjudicator->prompt_digest;
        a["error"] = output.adjudicator->error ? error_json(*output.adjudicator->error)
                                               : ordered_json();
        j["adjudicator"] = std::move(a);
    } else {
        j["adjudicator"] = ordered_json();
    }
    return j;
}

dataset::ConversationTranscript parse_transcript_json(const json& j) {
    const json* turns = nullptr;
    if (j.is_array()) {
        turns = &j;
    } else if (j.is_object() && j.contains("transcript") && j["transcript"].is_array()) {
        turns = &j["transcript"];
    } else {
        throw InvalidTranscriptError(
            "expected an array of turns or an object with a transcript array");
    }
    dataset::ConversationTranscript transcript;
    for (const auto& t : *turns) {
        if (!t.is_object() || !t.contains("speaker") || !t.contains("text") ||
            !t["speaker"].is_string() || !t["text"].is_string()) {
            throw InvalidTranscriptError("each turn needs string fields speaker and text");
        }
        dataset::ConversationTurn turn;
        try {
            turn.speaker = dataset::parse_speaker(t["speaker"].get<std::string>());
        } catch (const Error&) {
            throw InvalidTranscriptError("unknown speaker role: " +
                                         t["speaker"].get<std::string>());
        }
        turn.text = t["text"].get<std::string>();
        transcript.push_back(std::move(turn));
    }
    return transcript;
}

DiagnosticService::DiagnosticService(ServiceConfig config) : config_(std::move(config)) {
    config_.check();
    if (config_.mode == ConsensusMode::adjudicate && config_.fleet.size() < 2) {
        throw ConfigError("adjudication needs >= 2 consortium members");
    }

    catalog_ = dsm::Catalog::builtin();
    if (config_.catalog_path) {
        catalog_.extend_from_file(*config_.catalog_path);
    }

    if (config_.diagnostic_template.empty()) {
        throw ConfigError("templates.diagnostic is required");
    }
    auto diagnostic = prompt::load_template(config_.diagnostic_template);
    if (diagnostic.kind != prompt::TemplateKind::diagnostic) {
        throw ConfigError("templates.diagnostic must be a diagnostic template");
    }
    default_diagnostic_id_ = diagnostic.id;
    templates_.emplace(diagnostic.id, std::move(diagnostic));

    if (config_.adjudicator) {
        if (config_.adjudication_template.empty()) {
            throw ConfigError("templates.adjudication is required when an adjudicator is set");
        }
        auto adjudication = prompt::load_template(config_.adjudication_template);
        if (adjudication.kind != prompt::TemplateKind::adjudication) {
            throw ConfigError("templates.adjudication must be an adjudication template");
        }
        adjudication_id_ = adjudication.id;
        templates_.emplace(adjudication.id, std::move(adjudication));
    }

    for (const auto& [backend_name, path] : config_.per_backend_templates) {
        auto tmpl = prompt::load_template(path);
        if (tmpl.kind != prompt::TemplateKind::diagnostic) {
            throw ConfigError("per_backend template for " + backend_name +
                              " must be a diagnostic template");
        }
        member_template_ids_[backend_name] = tmpl.id;
        templates_.emplace(tmpl.id, std::move(tmpl));
    }

    config_digest_ = config_.digest();
    audit_ = std::make_unique<audit::AuditLog>(config_.audit_path);
}

const prompt::PromptTemplate& DiagnosticService::template_for_member(
    const std::string& backend_name, const DiagnoseOptions& options) const {
    if (options.template_id) {
        auto it = templates_.find(*options.template_id);
        if (it == templates_.end() || it->second.kind != prompt::TemplateKind::diagnostic) {
            throw InvalidTranscriptError("unknown diagnostic template: " + *options.template_id);
        }
        return it->second;
    }
    auto per_backend = member_template_ids_.find(backend_name);
    const std::string& id =
        per_backend == member_template_ids_.end() ? default_diagnostic_id_ : per_backend->second;
    return templates_.at(id);
}

void DiagnosticService::validate_transcript(
    const dataset::ConversationTranscript& transcript) const {
    if (transcript.empty()) {
        throw InvalidTranscriptError("transcript has no turns");
    }
    if (transcript.size() > config_.limits.max_transcript_turns) {
        throw InvalidTranscriptError("transcript has " + std::to_string(transcript.size()) +
                                     " turns, limit is " +
                                     std::to_string(config_.limits.max_transcript_turns));
    }
    for (std::size_t i = 0; i < transcript.size(); ++i) {
        const auto& text = transcript[i].text;
        if (std::all_of(text.begin(), text.end(),
                        [](unsigned char c) { return std::isspace(c) != 0; })) {
            throw InvalidTranscriptError("turn " + std::to_string(i + 1) + " has empty text");
        }
    }
}

DiagnoseOutput DiagnosticService::diagnose(const dataset::ConversationTranscript& transcript,
                                           const DiagnoseOptions& options) {
    validate_transcript(transcript);
    const ConsensusMode mode = options.mode.value_or(config_.mode);
    if (mode == ConsensusMode::adjudicate && !config_.adjudicator) {
        throw InvalidTranscriptError("adjudicate mode requested but no adjudicator is configured");
    }
    if (mode == ConsensusMode::adjudicate && config_.fleet.size() < 2) {
        throw InvalidTranscriptError("adjudicate mode needs >= 2 consortium members");
    }

    const auto started = steady_clock::now();
    const auto deadline = started + milliseconds(config_.limits.request_deadline_ms);
    prompt::RenderLimits render_limits;
    render_limits.max_chars = config_.limits.max_prompt_chars;
    render_limits.rationale_excerpt_chars = config_.limits.rationale_excerpt_chars;

    std::vector<net::MemberCall> calls;
    calls.reserve(config_.fleet.size());
    DiagnoseOutput output;
    output.mode = mode;
    for (const auto& member : config_.fleet) {
        const auto& tmpl = template_for_member(member.name, options);
        calls.push_back({member, prompt::render_diagnostic(transcript, tmpl, render_limits)});
    }

    const auto fan_budget = duration_cast<milliseconds>(deadline - steady_clock::now());
    auto results = net::fan_out(calls, fan_budget);

    std::vector<consensus::ModelPrediction> predictions;
    predictions.reserve(results.size());
    std::size_t unreachable = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& r = results[i].result;
        MemberReport report;
        report.backend_name = calls[i].config.name;
        report.model_id = calls[i].config.model_id;
        report.attempts = r.attempts;
        report.duration = r.duration;
        report.template_id = calls[i].prompt.template_id;
        report.prompt_digest = calls[i].prompt.digest;
        if (r.ok()) {
            report.prediction = consensus::parse_prediction(report.backend_name, r.text, catalog_);
        } else {
            report.error = r.error;
            if (r.error->transport()) ++unreachable;
            // A failed member still votes — as an abstention.
            report.prediction =
                consensus::parse_prediction(report.backend_name, std::string_view{}, catalog_);
        }
        predictions.push_back(report.prediction);
        output.members.push_back(std::move(report));
    }
    if (unreachable == config_.fleet.size()) {
        throw NoBackendReachableError("all " + std::to_string(unreachable) +
                                      " consortium members are unreachable");
    }

    std::optional<prompt::RenderedPrompt> adjudication_prompt;
    if (mode == ConsensusMode::adjudicate) {
        consensus::AdjudicationContext ctx;
        ctx.adjudicator = *config_.adjudicator;
        ctx.tmpl = &templates_.at(adjudication_id_);
        ctx.catalog = &catalog_;
        ctx.limits = render_limits;
        ctx.deadline = deadline;
        auto decision = consensus::decide_adjudicated(predictions, ctx);
        output.outcome = std::move(decision.outcome);
        adjudication_prompt = std::move(decision.prompt);
        AdjudicatorReport report;
        report.backend_name = config_.adjudicator->name;
        if (decision.adjudicator_result) {
            report.attempts = decision.adjudicator_result->attempts;
            report.duration = decision.adjudicator_result->duration;
            report.error = decision.adjudicator_result->error;
        }
        if (adjudication_prompt) report.prompt_digest = adjudication_prompt->digest;
        // Keep the raw adjudicator text for the audit record.
        if (decision.adjudicator_result && decision.adjudicator_result->ok() &&
            !output.outcome.adjudicator_rationale) {
            output.outcome.adjudicator_rationale = decision.adjudicator_result->text;
        }
        output.adjudicator = std::move(report);
    } else {
        output.outcome = consensus::decide_deterministic(predictions);
    }

    output.duration = duration_cast<milliseconds>(steady_clock::now() - started);

    ordered_json record;
    record["timestamp_ms"] = std::chrono::duration_cast<milliseconds>(
                                 std::chrono::system_clock::now().time_since_epoch())
                                 .count();
    record["mode"] = std::string(to_string(mode));
    auto prompts = ordered_json::array();
    for (std::size_t i = 0; i < calls.size(); ++i) {
        prompts.push_back({{"backend", calls[i].config.name},
                           {"template_id", calls[i].prompt.template_id},
                           {"digest", calls[i].prompt.digest},
                           {"text", calls[i].prompt.text}});
    }
    if (adjudication_prompt) {
        prompts.push_back({{"backend", config_.adjudicator->name},
                           {"template_id", adjudication_prompt->template_id},
                           {"digest", adjudication_prompt->digest},
                           {"text", adjudication_prompt->text}});
    }
    record["prompts"] = std::move(prompts);
    auto responses = ordered_json::array();
    for (const auto& m : output.members) {
        ordered_json r;
        r["backend"] = m.backend_name;
        r["ok"] = !m.error.has_value();
        r["text"] = m.prediction.raw_text;
        r["error"] = m.error ? ordered_json(m.error->describe()) : ordered_json();
        r["attempts"] = m.attempts;
        r["duration_ms"] = m.duration.count();
        responses.push_back(std::move(r));
    }
    if (output.adjudicator) {
        ordered_json r;
        r["backend"] = output.adjudicator->backend_name;
        r["ok"] = !output.adjudicator->error.has_value();
        r["text"] = output.outcome.adjudicator_rationale
                        ? ordered_json(*output.outcome.adjudicator_rationale)
                        : ordered_json();
        r["error"] = output.adjudicator->error
                         ? ordered_json(output.adjudicator->error->describe())
                         : ordered_json();
        r["attempts"] = output.adjudicator->attempts;
        r["duration_ms"] = output.adjudicator->duration.count();
        responses.push_back(std::move(r));
    }
    record["responses"] = std::move(responses);
    record["outcome"] = outcome_to_json(output.outcome);
    record["config_digest"] = config_digest_;
    output.audit_id = audit_->append(std::move(record));
    return output;
}

ordered_json DiagnosticService::models_status() const {
    std::vector<net::BackendConfig> backends = config_.fleet;
    if (config_.adjudicator) backends.push_back(*config_.adjudicator);

    std::vector<std::future<net::HealthStatus>> probes;
    probes.reserve(backends.size());
    for (const auto& b : backends) {
        probes.push_back(std::async(std::launch::async, [&b] { return net::health_check(b); }));
    }
    auto list = ordered_json::array();
    for (std::size_t i = 0; i < backends.size(); ++i) {
        const auto status = probes[i].get();
        ordered_json entry;
        entry["name"] = backends[i].name;
        entry["role"] = std::string(net::to_string(backends[i].role));
        entry["model_id"] = backends[i].model_id;
        entry["healthy"] = status.healthy;
        entry["detail"] = status.reason ? ordered_json(status.reason->describe()) : ordered_json();
        list.push_back(std::move(entry));
    }
    ordered_json j;
    j["backends"] = std::move(list);
    return j;
}

// ---------------------------------------------------------------------------
// HTTP surface

namespace {

void set_error(httplib::Response& res, int status, const std::string& code,
               const std::string& message) {
    res.status = status;
    ordered_json j;
    j["error"] = {{"code", code}, {"message", message}};
    res.set_content(j.dump(), "application/json");
}

// Bounds in-flight diagnoses without rejecting, so a burst queues instead of
// failing.
class Gate {
public:
    explicit Gate(int limit) : available_(limit) {}

    void acquire() {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [this] { return available_ > 0; });
        --available_;
    }
    void release() {
        {
            std::lock_guard lock(mutex_);
            ++available_;
        }
        cv_.notify_one();
    }

private:
    std::mutex mutex_;
    std::condition_variable cv_;
    int available_;
};

}  // namespace

struct HttpService::Impl {
    explicit Impl(ServiceConfig cfg)
        : engine(std::move(cfg)), gate(engine.config().limits.max_concurrent_diagnoses) {}

    DiagnosticService engine;
    Gate gate;
    httplib::Server server;
    std::thread listener;
    int port = 0;

    void handle_diagnose(const httplib::Request& req, httplib::Response& res) {
        json body;
        try {
            body = json::parse(req.body);
        } catch (const json::exception& e) {
            set_error(res, 400, "bad_request", std::string("request body is not json: ") + e.what());
            return;
        }
        DiagnoseOptions options;
        dataset::ConversationTranscript transcript;
        try {
            if (body.is_object() && body.contains("options")) {
                const auto& o = body["options"];
                if (!o.is_object()) throw InvalidTranscriptError("options must be an object");
                for (const auto& [key, _] : o.items()) {
                    if (key != "mode" && key != "template") {
                        throw InvalidTranscriptError("unknown option: " + key);
                    }
                }
                if (o.contains("mode")) options.mode = parse_mode(o["mode"].get<std::string>());
                if (o.contains("template")) options.template_id = o["template"].get<std::string>();
            }
            transcript = parse_transcript_json(body);
        } catch (const ConfigError& e) {
            set_error(res, 400, "bad_request", e.what());
            return;
        } catch (const InvalidTranscriptError& e) {
            set_error(res, 400, "invalid_transcript", e.what());
            return;
        } catch (const json::exception& e) {
            set_error(res, 400, "bad_request", e.what());
            return;
        }

        gate.acquire();
        struct Release {
            Gate& g;
            ~Release() { g.release(); }
        } release{gate};

        try {
            DiagnoseOutput output = engine.diagnose(transcript, options);
            if (output.outcome.status == consensus::ConsensusStatus::undetermined &&
                output.all_abstained()) {
                ordered_json j = diagnose_response_json(output);
                j["error"] = {{"code", "undetermined"},
                              {"message", "every consortium member abstained"}};
                res.status = 422;
                res.set_content(j.dump(), "application/json");
                return;
            }
            res.set_content(diagnose_response_json(output).dump(), "application/json");
        } catch (const InvalidTranscriptError& e) {
            set_error(res, 400, "invalid_transcript", e.what());
        } catch (const NoBackendReachableError& e) {
            set_error(res, 503, "no_backend_reachable", e.what());
        } catch (const std::exception& e) {
            set_error(res, 500, "internal", e.what());
        }
    }

    void wire_routes() {
        server.Post("/v1/diagnose", [this](const httplib::Request& req, httplib::Response& res) {
            handle_diagnose(req, res);
        });
        server.Get("/v1/audit/:id", [this](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.path_params.at("id");
            auto record = engine.audit_log().find(id);
            if (!record) {
                set_error(res, 404, "unknown_audit_id", "no audit record with id " + id);
                return;
            }
            const auto chain = audit::AuditLog::verify(engine.audit_log().path());
            ordered_json j;
            j["record"] = std::move(*record);
            j["chain"] = {{"ok", chain.ok},
                          {"records", chain.records},
                          {"broken_at", chain.broken_at ? ordered_json(*chain.broken_at)
                                                        : ordered_json()},
                          {"detail", chain.detail}};
            res.set_content(j.dump(), "application/json");
        });
        server.Get("/v1/models", [this](const httplib::Request&, httplib::Response& res) {
            res.set_content(engine.models_status().dump(), "application/json");
        });
        server.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(R"({"status":"ok"})", "application/json");
        });
    }
};

HttpService::HttpService(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {
    impl_->wire_routes();
    const auto& cfg = impl_->engine.config();
    if (cfg.listen_port == 0) {
        impl_->port = impl_->server.bind_to_any_port(cfg.listen_host);
        if (impl_->port <= 0) {
            throw PortInUseError("cannot bind any port on " + cfg.listen_host);
        }
    } else {
        if (!impl_->server.bind_to_port(cfg.listen_host, cfg.listen_port)) {
            throw PortInUseError("cannot bind " + cfg.listen_host + ":" +
                                 std::to_string(cfg.listen_port));
        }
        impl_->port = cfg.listen_port;
    }
}

HttpService::~HttpService() { stop(); }

void HttpService::start() {
    if (impl_->listener.joinable()) return;
    impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
    while (!impl_->server.is_running()) {
        std::this_thread::sleep_for(milliseconds(1));
    }
}

void HttpService::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->listener.joinable()) impl_->listener.join();
}

int HttpService::port() const { return impl_->port; }

std::string HttpService::base_url() const {
    return "http://" + impl_->engine.config().listen_host + ":" + std::to_string(impl_->port);
}

DiagnosticService& HttpService::engine() { return impl_->engine; }

}  // namespace psychdx::service
