#include "psychdx/mock_backend.hpp"

#include <atomic>
#include <fstream>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "psychdx/digest.hpp"
#include "psychdx/errors.hpp"

namespace psychdx::mock {

using nlohmann::json;

std::string_view to_string(FaultKind k) {
    switch (k) {
        case FaultKind::ok: return "ok";
        case FaultKind::http_500: return "http_500";
        case FaultKind::hang: return "hang";
        case FaultKind::malformed: return "malformed";
    }
    return "ok";
}

namespace {

FaultStep parse_fault(const json& j, const std::string& origin) {
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "ok") return {FaultKind::ok, 0};
        if (s == "http_500") return {FaultKind::http_500, 0};
        if (s == "malformed") return {FaultKind::malformed, 0};
        throw Error(origin + ": unknown fault step: " + s);
    }
    if (j.is_object() && j.contains("hang_ms") && j["hang_ms"].is_number_integer()) {
        return {FaultKind::hang, j["hang_ms"].get<int>()};
    }
    throw Error(origin + ": fault step must be \"ok\"|\"http_500\"|\"malformed\" or {hang_ms}");
}

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& origin) {
    for (const auto& [key, _] : j.items()) {
        bool known = false;
        for (const char* a : allowed) {
            if (key == a) {
                known = true;
                break;
            }
        }
        if (!known) throw Error(origin + ": unknown scenario key: " + key);
    }
}

}  // namespace

Scenario Scenario::from_json_text(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(origin + ": invalid scenario json: " + e.what());
    }
    if (!j.is_object()) throw Error(origin + ": scenario must be a json object");
    check_keys(j, {"id", "matchers", "default_response", "fault_plan", "latency_ms", "health"},
               origin);

    Scenario s;
    s.id = j.at("id").get<std::string>();
    s.default_response = j.value("default_response", std::string{});
    if (j.contains("matchers")) {
        for (const auto& m : j["matchers"]) {
            check_keys(m, {"substring", "digest", "response"}, origin);
            Matcher matcher;
            if (m.contains("substring")) {
                matcher.type = Matcher::Type::substring;
                matcher.value = m["substring"].get<std::string>();
            } else if (m.contains("digest")) {
                matcher.type = Matcher::Type::digest;
                matcher.value = m["digest"].get<std::string>();
            } else {
                throw Error(origin + ": matcher needs substring or digest");
            }
            matcher.response = m.at("response").get<std::string>();
            s.matchers.push_back(std::move(matcher));
        }
    }
    if (j.contains("fault_plan")) {
        for (const auto& f : j["fault_plan"]) s.fault_plan.push_back(parse_fault(f, origin));
    }
    if (j.contains("latency_ms")) {
        const auto& l = j["latency_ms"];
        if (l.is_number_integer()) {
            s.latency_min_ms = s.latency_max_ms = l.get<int>();
        } else if (l.is_object()) {
            check_keys(l, {"min", "max"}, origin);
            s.latency_min_ms = l.at("min").get<int>();
            s.latency_max_ms = l.at("max").get<int>();
        } else {
            throw Error(origin + ": latency_ms must be an integer or {min,max}");
        }
        if (s.latency_min_ms < 0 || s.latency_max_ms < s.latency_min_ms) {
            throw Error(origin + ": invalid latency range");
        }
    }
    if (j.contains("health")) {
        const auto h = j["health"].get<std::string>();
        if (h == "malformed") {
            s.health_malformed = true;
        } else if (h != "ok") {
            throw Error(origin + ": health must be ok or malformed");
        }
    }
    return s;
}

Scenario Scenario::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw UnreadableSourceError("cannot open scenario file: " + path.string());
    }
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json_text(text, path.string());
}

struct Emulator::Impl {
    Scenario scenario;
    std::string host;
    int port = 0;
    httplib::Server server;
    std::thread listener;
    std::atomic<std::size_t> seq{0};
    mutable std::mutex log_mutex;
    std::vector<LoggedRequest> log;

    FaultStep fault_for(std::size_t request_seq) const {
        if (scenario.fault_plan.empty()) return {FaultKind::ok, 0};
        const std::size_t idx = std::min(request_seq, scenario.fault_plan.size() - 1);
        return scenario.fault_plan[idx];
    }

    // Deterministic per-sequence latency so runs replay exactly.
    int latency_for(std::size_t request_seq) const {
        if (scenario.latency_max_ms <= scenario.latency_min_ms) return scenario.latency_min_ms;
        const std::size_t span =
            static_cast<std::size_t>(scenario.latency_max_ms - scenario.latency_min_ms) + 1;
        return scenario.latency_min_ms +
               static_cast<int>((request_seq * 2654435761u) % span);
    }

    int match(const std::string& prompt, const std::string& digest) const {
        for (std::size_t i = 0; i < scenario.matchers.size(); ++i) {
            const Matcher& m = scenario.matchers[i];
            const bool hit = m.type == Matcher::Type::substring
                                 ? prompt.find(m.value) != std::string::npos
                                 : digest == m.value;
            if (hit) return static_cast<int>(i);
        }
        return -1;
    }

    void handle_generate(const httplib::Request& req, httplib::Response& res) {
        json body;
        try {
            body = json::parse(req.body);
        } catch (const json::exception&) {
            res.status = 400;
            res.set_content(R"({"error":"request body is not json"})", "application/json");
            return;
        }
        if (!body.is_object() || !body.contains("model") || !body.contains("prompt")) {
            res.status = 400;
            res.set_content(R"({"error":"expected {model, prompt, stream}"})", "application/json");
            return;
        }
        const std::size_t request_seq = seq.fetch_add(1);
        const FaultStep fault = fault_for(request_seq);
        const std::string prompt = body["prompt"].get<std::string>();
        const std::string digest = util::sha256_hex(prompt);
        const int rule = match(prompt, digest);
        {
            std::lock_guard lock(log_mutex);
            log.push_back({request_seq, body["model"].get<std::string>(), prompt, digest,
                           fault.kind, rule});
        }

        const int latency = latency_for(request_seq);
        if (latency > 0) std::this_thread::sleep_for(std::chrono::milliseconds(latency));

        switch (fault.kind) {
            case FaultKind::http_500:
                res.status = 500;
                res.set_content(R"({"error":"injected server fault"})", "application/json");
                return;
            case FaultKind::malformed:
                res.set_content("this is not a generate response", "text/plain");
                return;
            case FaultKind::hang:
                std::this_thread::sleep_for(std::chrono::milliseconds(fault.hang_ms));
                break;  // then answer normally; the client has usually given up
            case FaultKind::ok:
                break;
        }

        const std::string answer =
            rule >= 0 ? scenario.matchers[static_cast<std::size_t>(rule)].response
                      : scenario.default_response;
        json out;
        out["model"] = body["model"];
        out["response"] = answer;
        out["done"] = true;
        res.set_content(out.dump(), "application/json");
    }

    void wire_routes() {
        server.Post("/api/generate", [this](const httplib::Request& req, httplib::Response& res) {
            handle_generate(req, res);
        });
        server.Get("/api/tags", [this](const httplib::Request&, httplib::Response& res) {
            if (scenario.health_malformed) {
                res.set_content("no models here", "text/plain");
                return;
            }
            json out;
            out["models"] = json::array({json{{"name", scenario.id}}});
            res.set_content(out.dump(), "application/json");
        });
        server.Get("/__mock/log", [this](const httplib::Request&, httplib::Response& res) {
            json out = json::array();
            std::lock_guard lock(log_mutex);
            for (const auto& r : log) {
                out.push_back({{"seq", r.seq},
                               {"model", r.model},
                               {"prompt", r.prompt},
                               {"prompt_digest", r.prompt_digest},
                               {"fault", std::string(to_string(r.fault))},
                               {"matched_rule", r.matched_rule}});
            }
            res.set_content(out.dump(), "application/json");
        });
    }
};

Emulator::Emulator(Scenario scenario, const std::string& host, int port)
    : impl_(std::make_unique<Impl>()) {
    impl_->scenario = std::move(scenario);
    impl_->host = host;
    impl_->wire_routes();
    if (port == 0) {
        impl_->port = impl_->server.bind_to_any_port(host);
        if (impl_->port <= 0) {
            throw PortInUseError("mock backend: cannot bind any port on " + host);
        }
    } else {
        if (!impl_->server.bind_to_port(host, port)) {
            throw PortInUseError("mock backend: port " + std::to_string(port) + " on " + host +
                                 " is unavailable");
        }
        impl_->port = port;
    }
}

Emulator::~Emulator() { stop(); }

void Emulator::start() {
    if (impl_->listener.joinable()) return;
    impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
    while (!impl_->server.is_running()) {
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
}

void Emulator::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->listener.joinable()) impl_->listener.join();
}

int Emulator::port() const { return impl_->port; }

std::string Emulator::base_url() const {
    return "http://" + impl_->host + ":" + std::to_string(impl_->port);
}

std::vector<LoggedRequest> Emulator::request_log() const {
    std::lock_guard lock(impl_->log_mutex);
    return impl_->log;
}

std::size_t Emulator::request_count() const {
    std::lock_guard lock(impl_->log_mutex);
    return impl_->log.size();
}

}  // namespace psychdx::mock
