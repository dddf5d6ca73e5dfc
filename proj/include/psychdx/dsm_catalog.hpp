#pragma once

#include <compare>
#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace psychdx::dsm {

enum class Category { mood, anxiety, trauma, psychotic, other };

Category parse_category(std::string_view text);
std::string_view to_string(Category c);

/// One DSM-5 diagnosis: numeric code (NNN.N or NNN.NN), canonical label,
/// coarse category. Equality and ordering are on the code string so
/// tie-breaking downstream is deterministic.
struct DsmCode {
    std::string code;
    std::string label;
    Category category = Category::other;

    friend bool operator==(const DsmCode& a, const DsmCode& b) { return a.code == b.code; }
    friend std::strong_ordering operator<=>(const DsmCode& a, const DsmCode& b) {
        return a.code <=> b.code;
    }
};

/// True when the whole string matches the code pattern: three digits,
/// a dot, then one or two digits. No surrounding characters.
bool matches_code_pattern(std::string_view text);

/// A code occurrence recovered from free text.
struct ExtractedCode {
    std::string code;
    std::size_t position = 0;  // byte offset of the first digit in the source
    bool catalogued = false;
    const DsmCode* entry = nullptr;  // null when not catalogued
};

enum class CodeStatus { ok, malformed, unknown };

struct Validation {
    CodeStatus status = CodeStatus::malformed;
    const DsmCode* entry = nullptr;  // set only when status == ok
    std::string code;                // trimmed input
};

/// Immutable-after-load registry of DSM-5 codes. Seeded with the six
/// default diagnoses; extensible from a tab-separated data file.
/// Safe for unrestricted concurrent reads once loaded.
class Catalog {
public:
    /// The six-entry default seed.
    static Catalog builtin();

    /// Adds entries from a catalog file: `code<TAB>label<TAB>category`,
    /// `#` comments and blank lines ignored. Re-stating an existing entry
    /// verbatim is a no-op; redefining one differently is an error.
    void extend_from_file(const std::filesystem::path& path);

    void insert(DsmCode entry);

    const DsmCode* find(std::string_view code) const;

    /// Trims surrounding whitespace and classifies: ok (catalogued),
    /// malformed (pattern mismatch), or unknown (well-formed, not in the
    /// catalog — kept distinct so adjudicator overrides can be flagged
    /// instead of rejected).
    Validation validate(std::string_view text) const;

    /// validate() that throws MalformedCodeError / UnknownCodeError.
    const DsmCode& require(std::string_view text) const;

    /// Canonical label for a known code. Throws UnknownCodeError.
    const std::string& lookup_label(std::string_view code) const;

    /// Every maximal substring matching the code pattern with non-digit,
    /// non-dot boundaries, in order of first appearance, deduplicated
    /// keeping the first occurrence. Unknown-but-well-formed codes are
    /// returned with catalogued=false.
    std::vector<ExtractedCode> extract_codes(std::string_view text) const;

    std::size_t size() const { return entries_.size(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

private:
    std::map<std::string, DsmCode, std::less<>> entries_;
};

}  // namespace psychdx::dsm
