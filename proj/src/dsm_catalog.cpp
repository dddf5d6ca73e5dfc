#include "psychdx/dsm_catalog.hpp"

#include <cctype>
#include <fstream>

#include "psychdx/errors.hpp"

namespace psychdx::dsm {

namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

}  // namespace

Category parse_category(std::string_view text) {
    if (text == "mood") return Category::mood;
    if (text == "anxiety") return Category::anxiety;
    if (text == "trauma") return Category::trauma;
    if (text == "psychotic") return Category::psychotic;
    if (text == "other") return Category::other;
    throw Error("unknown DSM category: " + std::string(text));
}

std::string_view to_string(Category c) {
    switch (c) {
        case Category::mood: return "mood";
        case Category::anxiety: return "anxiety";
        case Category::trauma: return "trauma";
        case Category::psychotic: return "psychotic";
        case Category::other: return "other";
    }
    return "other";
}

bool matches_code_pattern(std::string_view text) {
    if (text.size() != 5 && text.size() != 6) return false;
    if (!is_digit(text[0]) || !is_digit(text[1]) || !is_digit(text[2])) return false;
    if (text[3] != '.') return false;
    for (std::size_t i = 4; i < text.size(); ++i) {
        if (!is_digit(text[i])) return false;
    }
    return true;
}

Catalog Catalog::builtin() {
    Catalog c;
    c.insert({"296.21", "Major Depressive Disorder", Category::mood});
    c.insert({"296.41", "Bipolar I Disorder, Current Episode Manic", Category::mood});
    c.insert({"300.01", "Panic Disorder", Category::anxiety});
    c.insert({"309.81", "Post-Traumatic Stress Disorder", Category::trauma});
    c.insert({"295.90", "Schizophrenia", Category::psychotic});
    c.insert({"300.02", "Generalized Anxiety Disorder", Category::anxiety});
    return c;
}

void Catalog::insert(DsmCode entry) {
    if (!matches_code_pattern(entry.code)) {
        throw MalformedCodeError("catalog entry has malformed code: \"" + entry.code + "\"");
    }
    if (entry.label.empty()) {
        throw Error("catalog entry " + entry.code + " has an empty label");
    }
    auto it = entries_.find(entry.code);
    if (it != entries_.end()) {
        if (it->second.label == entry.label && it->second.category == entry.category) {
            return;  // idempotent re-statement
        }
        throw Error("catalog entry " + entry.code + " redefined with different label/category");
    }
    entries_.emplace(entry.code, std::move(entry));
}

void Catalog::extend_from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw UnreadableSourceError("cannot open catalog file: " + path.string());
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::string_view sv = trim(line);
        if (sv.empty() || sv.front() == '#') continue;
        auto t1 = sv.find('\t');
        auto t2 = t1 == std::string_view::npos ? t1 : sv.find('\t', t1 + 1);
        if (t1 == std::string_view::npos || t2 == std::string_view::npos) {
            throw Error("catalog file " + path.string() + ":" + std::to_string(line_no) +
                        ": expected code<TAB>label<TAB>category");
        }
        DsmCode entry;
        entry.code = std::string(trim(sv.substr(0, t1)));
        entry.label = std::string(trim(sv.substr(t1 + 1, t2 - t1 - 1)));
        entry.category = parse_category(trim(sv.substr(t2 + 1)));
        insert(std::move(entry));
    }
}

const DsmCode* Catalog::find(std::string_view code) const {
    auto it = entries_.find(code);
    return it == entries_.end() ? nullptr : &it->second;
}

Validation Catalog::validate(std::string_view text) const {
    Validation v;
    v.code = std::string(trim(text));
    if (!matches_code_pattern(v.code)) {
        v.status = CodeStatus::malformed;
        return v;
    }
    v.entry = find(v.code);
    v.status = v.entry ? CodeStatus::ok : CodeStatus::unknown;
    return v;
}

const DsmCode& Catalog::require(std::string_view text) const {
    auto v = validate(text);
    switch (v.status) {
        case CodeStatus::ok: return *v.entry;
        case CodeStatus::malformed:
            throw MalformedCodeError("malformed DSM-5 code: \"" + std::string(text) + "\"");
        case CodeStatus::unknown:
            throw UnknownCodeError("DSM-5 code not in catalog: " + v.code);
    }
    throw UnknownCodeError("DSM-5 code not in catalog: " + v.code);
}

const std::string& Catalog::lookup_label(std::string_view code) const {
    const DsmCode* entry = find(code);
    if (!entry) {
        throw UnknownCodeError("DSM-5 code not in catalog: " + std::string(code));
    }
    return entry->label;
}

std::vector<ExtractedCode> Catalog::extract_codes(std::string_view text) const {
    std::vector<ExtractedCode> out;
    const std::size_t n = text.size();
    std::size_t i = 0;
    while (i < n) {
        if (!is_digit(text[i])) {
            ++i;
            continue;
        }
        const std::size_t run_start = i;
        while (i < n && is_digit(text[i])) ++i;
        const std::size_t run_len = i - run_start;

        // Maximality guarantees the preceding char is a non-digit; the
        // boundary rule additionally rejects a preceding dot.
        const bool left_ok = run_start == 0 || text[run_start - 1] != '.';
        if (run_len != 3 || !left_ok || i >= n || text[i] != '.') continue;

        const std::size_t dec_start = i + 1;
        std::size_t j = dec_start;
        while (j < n && is_digit(text[j])) ++j;
        const std::size_t dec_len = j - dec_start;
        if (dec_len >= 1 && dec_len <= 2 && (j == n || text[j] != '.')) {
            std::string code(text.substr(run_start, 4 + dec_len));
            bool seen = false;
            for (const auto& prev : out) {
                if (prev.code == code) {
                    seen = true;
                    break;
                }
            }
            if (!seen) {
                const DsmCode* entry = find(code);
                out.push_back({std::move(code), run_start, entry != nullptr, entry});
            }
        }
        // Digits after the dot cannot start a match (dot boundary), skip them.
        i = j;
    }
    return out;
}

}  // namespace psychdx::dsm
