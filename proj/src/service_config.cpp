#include "psychdx/service_config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "psychdx/digest.hpp"
#include "psychdx/errors.hpp"

namespace psychdx::service {

using nlohmann::json;
using nlohmann::ordered_json;

ConsensusMode parse_mode(std::string_view text) {
    if (text == "adjudicate") return ConsensusMode::adjudicate;
    if (text == "deterministic") return ConsensusMode::deterministic;
    throw ConfigError("unknown consensus mode: " + std::string(text));
}

std::string_view to_string(ConsensusMode m) {
    return m == ConsensusMode::adjudicate ? "adjudicate" : "deterministic";
}

namespace {

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                         const std::string& where) {
    for (const auto& [key, _] : j.items()) {
        bool known = false;
        for (const char* a : allowed) {
            if (key == a) {
                known = true;
                break;
            }
        }
        if (!known) throw ConfigError(where + ": unknown key \"" + key + "\"");
    }
}

net::BackendConfig parse_backend(const json& j, net::BackendRole default_role,
                                 const std::string& where) {
    reject_unknown_keys(j, {"name", "base_url", "model_id", "role", "timeout_ms", "max_retries",
                            "retry_backoff_ms"},
                        where);
    net::BackendConfig cfg;
    cfg.role = default_role;
    try {
        cfg.name = j.at("name").get<std::string>();
        cfg.base_url = j.at("base_url").get<std::string>();
        cfg.model_id = j.at("model_id").get<std::string>();
        if (j.contains("role")) cfg.role = net::parse_role(j["role"].get<std::string>());
        cfg.timeout_ms = j.value("timeout_ms", cfg.timeout_ms);
        cfg.max_retries = j.value("max_retries", cfg.max_retries);
        cfg.retry_backoff_ms = j.value("retry_backoff_ms", cfg.retry_backoff_ms);
    } catch (const json::exception& e) {
        throw ConfigError(where + ": " + e.what());
    }
    cfg.check();
    return cfg;
}

}  // namespace

ServiceConfig ServiceConfig::from_json_text(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(origin + ": invalid config json: " + e.what());
    }
    if (!j.is_object()) throw ConfigError(origin + ": config must be a json object");
    reject_unknown_keys(j, {"listen", "audit_path", "catalog_path", "templates", "mode", "fleet",
                            "adjudicator", "limits"},
                        origin);

    ServiceConfig cfg;
    try {
        if (j.contains("listen")) {
            reject_unknown_keys(j["listen"], {"host", "port"}, origin + ".listen");
            cfg.listen_host = j["listen"].value("host", cfg.listen_host);
            cfg.listen_port = j["listen"].value("port", cfg.listen_port);
        }
        if (j.contains("audit_path")) cfg.audit_path = j["audit_path"].get<std::string>();
        if (j.contains("catalog_path")) cfg.catalog_path = j["catalog_path"].get<std::string>();
        if (j.contains("templates")) {
            reject_unknown_keys(j["templates"], {"diagnostic", "adjudication", "per_backend"},
                                origin + ".templates");
            cfg.diagnostic_template = j["templates"].value("diagnostic", std::string{});
            cfg.adjudication_template = j["templates"].value("adjudication", std::string{});
            if (j["templates"].contains("per_backend")) {
                for (const auto& [name, path] : j["templates"]["per_backend"].items()) {
                    cfg.per_backend_templates[name] = path.get<std::string>();
                }
            }
        }
        if (j.contains("mode")) cfg.mode = parse_mode(j["mode"].get<std::string>());
        if (j.contains("fleet")) {
            std::size_t i = 0;
            for (const auto& b : j["fleet"]) {
                cfg.fleet.push_back(parse_backend(b, net::BackendRole::consortium_member,
                                                  origin + ".fleet[" + std::to_string(i) + "]"));
                ++i;
            }
        }
        if (j.contains("adjudicator")) {
            cfg.adjudicator = parse_backend(j["adjudicator"], net::BackendRole::adjudicator,
                                            origin + ".adjudicator");
        }
        if (j.contains("limits")) {
            reject_unknown_keys(j["limits"],
                                {"max_transcript_turns", "max_concurrent_diagnoses",
                                 "request_deadline_ms", "max_prompt_chars",
                                 "rationale_excerpt_chars"},
                                origin + ".limits");
            auto& l = cfg.limits;
            l.max_transcript_turns = j["limits"].value("max_transcript_turns", l.max_transcript_turns);
            l.max_concurrent_diagnoses =
                j["limits"].value("max_concurrent_diagnoses", l.max_concurrent_diagnoses);
            l.request_deadline_ms = j["limits"].value("request_deadline_ms", l.request_deadline_ms);
            l.max_prompt_chars = j["limits"].value("max_prompt_chars", l.max_prompt_chars);
            l.rationale_excerpt_chars =
                j["limits"].value("rationale_excerpt_chars", l.rationale_excerpt_chars);
        }
    } catch (const json::exception& e) {
        throw ConfigError(origin + ": " + e.what());
    }

    if (const char* listen = std::getenv("PSYCHDX_LISTEN")) {
        const std::string value(listen);
        const auto colon = value.rfind(':');
        if (colon == std::string::npos) {
            throw ConfigError("PSYCHDX_LISTEN must be host:port, got " + value);
        }
        cfg.listen_host = value.substr(0, colon);
        try {
            cfg.listen_port = std::stoi(value.substr(colon + 1));
        } catch (const std::exception&) {
            throw ConfigError("PSYCHDX_LISTEN has a non-numeric port: " + value);
        }
    }
    if (const char* audit = std::getenv("PSYCHDX_AUDIT_PATH")) {
        cfg.audit_path = audit;
    }

    cfg.check();
    return cfg;
}

ServiceConfig ServiceConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot open config file: " + path.string());
    }
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json_text(text, path.string());
}

void ServiceConfig::check() const {
    if (fleet.empty()) {
        throw ConfigError("config needs at least one consortium member in fleet");
    }
    std::set<std::string> names;
    for (const auto& b : fleet) {
        b.check();
        if (b.role != net::BackendRole::consortium_member) {
            throw ConfigError("fleet member " + b.name + " must have role consortium_member");
        }
        if (!names.insert(b.name).second) {
            throw ConfigError("duplicate backend name: " + b.name);
        }
    }
    if (adjudicator) {
        adjudicator->check();
        if (adjudicator->role != net::BackendRole::adjudicator) {
            throw ConfigError("adjudicator " + adjudicator->name + " must have role adjudicator");
        }
        if (!names.insert(adjudicator->name).second) {
            throw ConfigError("duplicate backend name: " + adjudicator->name);
        }
    }
    if (mode == ConsensusMode::adjudicate && !adjudicator) {
        throw ConfigError("mode adjudicate requires an adjudicator backend");
    }
    for (const auto& [name, path] : per_backend_templates) {
        if (!names.count(name)) {
            throw ConfigError("per_backend template for unknown backend: " + name);
        }
        (void)path;
    }
    if (listen_port < 0 || listen_port > 65535) {
        throw ConfigError("listen port out of range: " + std::to_string(listen_port));
    }
    if (limits.max_concurrent_diagnoses < 1) {
        throw ConfigError("max_concurrent_diagnoses must be >= 1");
    }
    if (limits.request_deadline_ms < 1) {
        throw ConfigError("request_deadline_ms must be >= 1");
    }
    if (limits.max_transcript_turns < 1) {
        throw ConfigError("max_transcript_turns must be >= 1");
    }
}

std::string ServiceConfig::digest() const {
    ordered_json j;
    j["listen"] = {{"host", listen_host}, {"port", listen_port}};
    j["audit_path"] = audit_path.string();
    j["catalog_path"] = catalog_path ? catalog_path->string() : "";
    j["templates"]["diagnostic"] = diagnostic_template.string();
    j["templates"]["adjudication"] = adjudication_template.string();
    for (const auto& [name, path] : per_backend_templates) {
        j["templates"]["per_backend"][name] = path.string();
    }
    j["mode"] = std::string(to_string(mode));
    auto backend_json = [](const net::BackendConfig& b) {
        return ordered_json{{"name", b.name},
                            {"base_url", b.base_url},
                            {"model_id", b.model_id},
                            {"role", std::string(net::to_string(b.role))},
                            {"timeout_ms", b.timeout_ms},
                            {"max_retries", b.max_retries},
                            {"retry_backoff_ms", b.retry_backoff_ms}};
    };
    j["fleet"] = ordered_json::array();
    for (const auto& b : fleet) j["fleet"].push_back(backend_json(b));
    j["adjudicator"] = adjudicator ? backend_json(*adjudicator) : ordered_json();
    j["limits"] = {{"max_transcript_turns", limits.max_transcript_turns},
                   {"max_concurrent_diagnoses", limits.max_concurrent_diagnoses},
                   {"request_deadline_ms", limits.request_deadline_ms},
                   {"max_prompt_chars", limits.max_prompt_chars},
                   {"rationale_excerpt_chars", limits.rationale_excerpt_chars}};
    return util::sha256_hex(j.dump());
}

}  // namespace psychdx::service
