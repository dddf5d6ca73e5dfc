#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "psychdx/dataset.hpp"

namespace psychdx::prompt {

enum class TemplateKind { diagnostic, adjudication };

/// A prompt template loaded from a data file: header fields, then `---`,
/// then the body with `{{placeholder}}` slots. Diagnostic bodies may use
/// {{cues}}, {{transcript}} and {{contract}}; adjudication bodies
/// {{model_blocks}} and {{decision}}. Unknown placeholders fail at load.
struct PromptTemplate {
    std::string id;
    TemplateKind kind = TemplateKind::diagnostic;
    std::vector<std::string> cue_sections;  // diagnostic
    std::string output_contract;            // diagnostic; must mention "DSM-5"
    std::string block_format;               // adjudication; {{name}} {{code}} {{label}} {{rationale}}
    std::string decision_instruction;       // adjudication
    std::string body;
};

PromptTemplate parse_template(std::string_view text, std::string_view origin = "<inline>");
PromptTemplate load_template(const std::filesystem::path& path);

struct RenderedPrompt {
    std::string template_id;
    std::string text;
    std::string digest;  // sha256 of text
};

struct RenderLimits {
    std::size_t max_chars = 32768;
    bool allow_truncation = true;
    std::size_t rationale_excerpt_chars = 1200;
};

/// Deterministic render: turns appear verbatim, speaker-tagged, in order.
/// When the prompt exceeds max_chars the oldest turns are dropped first and
/// a "[TRUNCATED k TURNS]" marker is inserted; with truncation disabled the
/// overflow is an error instead.
RenderedPrompt render_diagnostic(const dataset::ConversationTranscript& transcript,
                                 const PromptTemplate& tmpl, const RenderLimits& limits = {});

/// One consortium member's contribution to the adjudication prompt.
struct ModelBlock {
    std::string name;       // backend name; blocks are ordered by it
    std::string code;       // primary code text, or "none"
    std::string label;
    std::string rationale;  // raw model output, capped at the excerpt budget
};

/// Blocks are sorted by backend name so the rendered bytes are invariant
/// under input permutation. Requires at least two blocks (a consortium).
RenderedPrompt render_adjudication(std::vector<ModelBlock> blocks, const PromptTemplate& tmpl,
                                   const RenderLimits& limits = {});

}  // namespace psychdx::prompt
