#include "psychdx/prompt_engine.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "psychdx/digest.hpp"
#include "psychdx/errors.hpp"

namespace psychdx::prompt {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

// `\n`, `\t`, `\\` escapes for single-line header values (block formats).
std::string unescape(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\' && i + 1 < s.size()) {
            switch (s[i + 1]) {
                case 'n': out += '\n'; ++i; continue;
                case 't': out += '\t'; ++i; continue;
                case '\\': out += '\\'; ++i; continue;
                default: break;
            }
        }
        out += s[i];
    }
    return out;
}

std::vector<std::string> placeholders_in(std::string_view text) {
    std::vector<std::string> found;
    std::size_t pos = 0;
    while ((pos = text.find("{{", pos)) != std::string_view::npos) {
        auto end = text.find("}}", pos + 2);
        if (end == std::string_view::npos) break;
        found.emplace_back(text.substr(pos + 2, end - pos - 2));
        pos = end + 2;
    }
    return found;
}

void check_placeholders(std::string_view text, const std::set<std::string>& allowed,
                        std::string_view origin, std::string_view where) {
    for (const auto& p : placeholders_in(text)) {
        if (!allowed.count(p)) {
            throw TemplateError(std::string(origin) + ": unknown placeholder {{" + p + "}} in " +
                                std::string(where));
        }
    }
}

void replace_all(std::string& text, std::string_view token, std::string_view value) {
    std::size_t pos = 0;
    while ((pos = text.find(token, pos)) != std::string::npos) {
        text.replace(pos, token.size(), value);
        pos += value.size();
    }
}

std::string default_block_format() {
    return "[{{name}}]\nPrediction: {{code}} {{label}}\nRationale: {{rationale}}";
}

RenderedPrompt finish(const PromptTemplate& tmpl, std::string text) {
    RenderedPrompt p;
    p.template_id = tmpl.id;
    p.digest = util::sha256_hex(text);
    p.text = std::move(text);
    return p;
}

}  // namespace

PromptTemplate parse_template(std::string_view text, std::string_view origin) {
    PromptTemplate tmpl;
    bool kind_set = false;
    bool in_body = false;
    std::string body;

    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t nl = text.find('\n', start);
        std::string_view line = text.substr(start, nl == std::string_view::npos ? text.size() - start
                                                                                : nl - start);
        if (in_body) {
            body.append(line);
            if (nl != std::string_view::npos) body += '\n';
        } else {
            std::string_view stripped = trim(line);
            if (stripped == "---") {
                in_body = true;
            } else if (!stripped.empty() && stripped.front() != '#') {
                const auto colon = stripped.find(':');
                if (colon == std::string_view::npos) {
                    throw TemplateError(std::string(origin) + ": header line lacks a key: " +
                                        std::string(stripped));
                }
                std::string key(trim(stripped.substr(0, colon)));
                std::string value(trim(stripped.substr(colon + 1)));
                if (key == "id") {
                    tmpl.id = value;
                } else if (key == "kind") {
                    if (value == "diagnostic") {
                        tmpl.kind = TemplateKind::diagnostic;
                    } else if (value == "adjudication") {
                        tmpl.kind = TemplateKind::adjudication;
                    } else {
                        throw TemplateError(std::string(origin) + ": unknown kind: " + value);
                    }
                    kind_set = true;
                } else if (key == "cue") {
                    tmpl.cue_sections.push_back(value);
                } else if (key == "contract") {
                    tmpl.output_contract = value;
                } else if (key == "block") {
                    tmpl.block_format = unescape(value);
                } else if (key == "decision") {
                    tmpl.decision_instruction = value;
                } else {
                    throw TemplateError(std::string(origin) + ": unknown header key: " + key);
                }
            }
        }
        if (nl == std::string_view::npos) break;
        start = nl + 1;
    }

    if (!in_body) throw TemplateError(std::string(origin) + ": missing --- body separator");
    if (tmpl.id.empty()) throw TemplateError(std::string(origin) + ": missing id header");
    if (!kind_set) throw TemplateError(std::string(origin) + ": missing kind header");
    tmpl.body = std::move(body);

    if (tmpl.kind == TemplateKind::diagnostic) {
        if (tmpl.cue_sections.empty()) {
            throw TemplateError(std::string(origin) + ": diagnostic template needs >= 1 cue");
        }
        if (tmpl.output_contract.find("DSM-5") == std::string::npos) {
            throw TemplateError(std::string(origin) +
                                ": output contract must mention the literal token DSM-5");
        }
        check_placeholders(tmpl.body, {"cues", "transcript", "contract"}, origin, "body");
        if (tmpl.body.find("{{transcript}}") == std::string::npos) {
            throw TemplateError(std::string(origin) + ": body lacks {{transcript}}");
        }
        if (tmpl.body.find("{{contract}}") == std::string::npos) {
            throw TemplateError(std::string(origin) + ": body lacks {{contract}}");
        }
    } else {
        if (tmpl.block_format.empty()) tmpl.block_format = default_block_format();
        if (tmpl.decision_instruction.find("DSM-5") == std::string::npos) {
            throw TemplateError(std::string(origin) +
                                ": decision instruction must mention the literal token DSM-5");
        }
        check_placeholders(tmpl.body, {"model_blocks", "decision"}, origin, "body");
        check_placeholders(tmpl.block_format, {"name", "code", "label", "rationale"}, origin,
                           "block format");
        if (tmpl.body.find("{{model_blocks}}") == std::string::npos) {
            throw TemplateError(std::string(origin) + ": body lacks {{model_blocks}}");
        }
    }
    return tmpl;
}

PromptTemplate load_template(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw TemplateError("cannot open template file: " + path.string());
    }
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_template(text, path.string());
}

RenderedPrompt render_diagnostic(const dataset::ConversationTranscript& transcript,
                                 const PromptTemplate& tmpl, const RenderLimits& limits) {
    if (tmpl.kind != TemplateKind::diagnostic) {
        throw TemplateError("template " + tmpl.id + " is not a diagnostic template");
    }
    if (transcript.empty()) {
        throw EmptyTranscriptError("cannot render a diagnostic prompt for an empty transcript");
    }

    std::string cues;
    for (std::size_t i = 0; i < tmpl.cue_sections.size(); ++i) {
        if (i > 0) cues += '\n';
        cues += "- ";
        cues += tmpl.cue_sections[i];
    }

    // Drop oldest turns first until the rendered prompt fits.
    for (std::size_t dropped = 0; dropped < transcript.size(); ++dropped) {
        std::string transcript_block;
        if (dropped > 0) {
            transcript_block = "[TRUNCATED " + std::to_string(dropped) + " TURNS]\n";
        }
        transcript_block += transcript_text(
            dataset::ConversationTranscript(transcript.begin() + dropped, transcript.end()));

        std::string text = tmpl.body;
        replace_all(text, "{{cues}}", cues);
        replace_all(text, "{{transcript}}", transcript_block);
        replace_all(text, "{{contract}}", tmpl.output_contract);

        if (text.size() <= limits.max_chars) {
            return finish(tmpl, std::move(text));
        }
        if (!limits.allow_truncation) {
            throw PromptOverflowError("rendered prompt is " + std::to_string(text.size()) +
                                      " chars, limit " + std::to_string(limits.max_chars) +
                                      " (truncation disabled)");
        }
    }
    throw PromptOverflowError("prompt exceeds " + std::to_string(limits.max_chars) +
                              " chars even with a single transcript turn");
}

RenderedPrompt render_adjudication(std::vector<ModelBlock> blocks, const PromptTemplate& tmpl,
                                   const RenderLimits& limits) {
    if (tmpl.kind != TemplateKind::adjudication) {
        throw TemplateError("template " + tmpl.id + " is not an adjudication template");
    }
    if (blocks.size() < 2) {
        throw TooFewPredictionsError("adjudication needs >= 2 predictions, got " +
                                     std::to_string(blocks.size()));
    }
    std::sort(blocks.begin(), blocks.end(),
              [](const ModelBlock& a, const ModelBlock& b) { return a.name < b.name; });

    std::string rendered_blocks;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        if (i > 0) rendered_blocks += "\n\n";
        std::string rationale = blocks[i].rationale;
        if (rationale.size() > limits.rationale_excerpt_chars) {
            rationale.resize(limits.rationale_excerpt_chars);
            rationale += "\n[rationale truncated]";
        }
        std::string block = tmpl.block_format;
        replace_all(block, "{{name}}", blocks[i].name);
        replace_all(block, "{{code}}", blocks[i].code);
        replace_all(block, "{{label}}", blocks[i].label);
        replace_all(block, "{{rationale}}", rationale);
        rendered_blocks += block;
    }

    std::string text = tmpl.body;
    replace_all(text, "{{model_blocks}}", rendered_blocks);
    replace_all(text, "{{decision}}", tmpl.decision_instruction);
    return finish(tmpl, std::move(text));
}

}  // namespace psychdx::prompt
