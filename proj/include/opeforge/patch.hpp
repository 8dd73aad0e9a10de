#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "opeforge/errors.hpp"
#include "opeforge/numeric.hpp"

namespace opeforge {

// ============================================================================
// Unified diffs
// ============================================================================
// Diff lines carry their terminators, so texts reconstruct byte-exactly,
// including files whose last line has no trailing newline (serialized with
// the standard `\ No newline at end of file` marker).

struct DiffLine {
    char tag = ' ';    // ' ' context, '-' delete, '+' add
    std::string text;  // includes the '\n' terminator unless at EOF without one

    bool operator==(const DiffLine&) const = default;
};

struct Hunk {
    long old_start = 0;  // 1-based; when old_len == 0, the line *after which* to insert
    long old_len = 0;
    long new_start = 0;
    long new_len = 0;
    std::vector<DiffLine> lines;

    bool operator==(const Hunk&) const = default;
};

struct UnifiedDiff {
    std::string old_label = "a/original";
    std::string new_label = "b/modified";
    std::vector<Hunk> hunks;  // ordered by old_start, non-overlapping

    bool empty() const { return hunks.empty(); }
    bool operator==(const UnifiedDiff&) const = default;
};

// ============================================================================
// Line splitting
// ============================================================================

inline std::vector<std::string> split_lines_keep_ends(std::string_view text) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t nl = text.find('\n', start);
        if (nl == std::string_view::npos) {
            lines.emplace_back(text.substr(start));
            break;
        }
        lines.emplace_back(text.substr(start, nl - start + 1));
        start = nl + 1;
    }
    return lines;
}

// ============================================================================
// Myers diff
// ============================================================================

namespace detail {

enum class EditOp { keep, del, ins };

struct Edit {
    EditOp op;
    std::string text;
};

// Greedy O((N+M)D) shortest-edit-script search with full trace for
// backtracking. Memory is O(D^2), fine for the document sizes this harness
// edits (spec files are tens of lines).
inline std::vector<Edit> myers_edit_script(const std::vector<std::string>& a,
                                           const std::vector<std::string>& b) {
    const long n = static_cast<long>(a.size());
    const long m = static_cast<long>(b.size());
    const long max = n + m;
    if (max == 0) return {};

    // v is indexed by diagonal k in [-max, max]; offset applied.
    std::vector<long> v(static_cast<std::size_t>(2 * max + 1), 0);
    auto at = [&](std::vector<long>& vec, long k) -> long& {
        return vec[static_cast<std::size_t>(k + max)];
    };

    std::vector<std::vector<long>> trace;
    long reached_d = -1;
    for (long d = 0; d <= max && reached_d < 0; ++d) {
        trace.push_back(v);
        for (long k = -d; k <= d; k += 2) {
            long x;
            if (k == -d || (k != d && at(v, k - 1) < at(v, k + 1))) x = at(v, k + 1);
            else x = at(v, k - 1) + 1;
            long y = x - k;
            while (x < n && y < m && a[static_cast<std::size_t>(x)] ==
                                         b[static_cast<std::size_t>(y)]) {
                ++x;
                ++y;
            }
            at(v, k) = x;
            if (x >= n && y >= m) {
                reached_d = d;
                break;
            }
        }
    }

    std::vector<Edit> script;
    long x = n, y = m;
    for (long d = reached_d; d >= 0; --d) {
        auto& vd = trace[static_cast<std::size_t>(d)];
        const long k = x - y;
        long prev_k;
        if (k == -d || (k != d && at(vd, k - 1) < at(vd, k + 1))) prev_k = k + 1;
        else prev_k = k - 1;
        const long prev_x = at(vd, prev_k);
        const long prev_y = prev_x - prev_k;
        while (x > prev_x && y > prev_y) {
            script.push_back({EditOp::keep, a[static_cast<std::size_t>(x - 1)]});
            --x;
            --y;
        }
        if (d > 0) {
            if (x == prev_x) script.push_back({EditOp::ins, b[static_cast<std::size_t>(prev_y)]});
            else script.push_back({EditOp::del, a[static_cast<std::size_t>(prev_x)]});
        }
        x = prev_x;
        y = prev_y;
    }
    std::reverse(script.begin(), script.end());
    return script;
}

}  // namespace detail

inline constexpr int kDiffContextLines = 3;

// Minimal unified diff with 3 lines of context; change runs closer than
// 2*context merge into one hunk. Satisfies apply_strict(diff(A,B), A) = B.
inline UnifiedDiff diff(const std::string& old_text, const std::string& new_text,
                        std::string old_label = "a/original",
                        std::string new_label = "b/modified") {
    UnifiedDiff out;
    out.old_label = std::move(old_label);
    out.new_label = std::move(new_label);
    if (old_text == new_text) return out;

    const auto script = detail::myers_edit_script(split_lines_keep_ends(old_text),
                                                  split_lines_keep_ends(new_text));
    const long len = static_cast<long>(script.size());
    const int C = kDiffContextLines;

    // Change groups over script positions; gap <= 2C keeps merge.
    struct Group { long first, last; };
    std::vector<Group> groups;
    for (long i = 0; i < len; ++i) {
        if (script[static_cast<std::size_t>(i)].op == detail::EditOp::keep) continue;
        if (!groups.empty() && i - groups.back().last - 1 <= 2 * C) groups.back().last = i;
        else groups.push_back({i, i});
    }

    // Old/new line numbers consumed before each script position.
    std::vector<long> old_before(static_cast<std::size_t>(len) + 1, 0);
    std::vector<long> new_before(static_cast<std::size_t>(len) + 1, 0);
    for (long i = 0; i < len; ++i) {
        const auto& e = script[static_cast<std::size_t>(i)];
        old_before[static_cast<std::size_t>(i + 1)] =
            old_before[static_cast<std::size_t>(i)] + (e.op != detail::EditOp::ins ? 1 : 0);
        new_before[static_cast<std::size_t>(i + 1)] =
            new_before[static_cast<std::size_t>(i)] + (e.op != detail::EditOp::del ? 1 : 0);
    }

    for (const auto& g : groups) {
        const long span_first = std::max<long>(g.first - C, 0);
        const long span_last = std::min<long>(g.last + C, len - 1);
        Hunk hunk;
        for (long i = span_first; i <= span_last; ++i) {
            const auto& e = script[static_cast<std::size_t>(i)];
            char tag = e.op == detail::EditOp::keep ? ' '
                       : e.op == detail::EditOp::del ? '-'
                                                     : '+';
            hunk.lines.push_back({tag, e.text});
            if (e.op != detail::EditOp::ins) ++hunk.old_len;
            if (e.op != detail::EditOp::del) ++hunk.new_len;
        }
        const long old_pos = old_before[static_cast<std::size_t>(span_first)];
        const long new_pos = new_before[static_cast<std::size_t>(span_first)];
        hunk.old_start = hunk.old_len > 0 ? old_pos + 1 : old_pos;
        hunk.new_start = hunk.new_len > 0 ? new_pos + 1 : new_pos;
        out.hunks.push_back(std::move(hunk));
    }
    return out;
}

// ============================================================================
// Diff text serialization / parsing
// ============================================================================

inline constexpr std::string_view kNoNewlineMarker = "\\ No newline at end of file";

inline std::string diff_to_text(const UnifiedDiff& patch) {
    if (patch.hunks.empty()) return "";
    std::string out;
    out += "--- " + patch.old_label + "\n";
    out += "+++ " + patch.new_label + "\n";
    for (const auto& hunk : patch.hunks) {
        out += "@@ -" + format_int(hunk.old_start) + "," + format_int(hunk.old_len) + " +" +
               format_int(hunk.new_start) + "," + format_int(hunk.new_len) + " @@\n";
        for (const auto& line : hunk.lines) {
            out += line.tag;
            out += line.text;
            if (line.text.empty() || line.text.back() != '\n') {
                out += '\n';
                out += kNoNewlineMarker;
                out += '\n';
            }
        }
    }
    return out;
}

namespace detail {

struct HunkHeader {
    long old_start, old_len, new_start, new_len;
};

// Matches `@@ -N[,N] +N[,N] @@` with optional trailing section text.
inline std::optional<HunkHeader> parse_hunk_header(std::string_view line) {
    while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.remove_suffix(1);
    auto take_number = [&](std::string_view& s, long& out) -> bool {
        std::size_t i = 0;
        while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i;
        if (i == 0) return false;
        long long v;
        if (!try_parse_int(s.substr(0, i), v)) return false;
        out = static_cast<long>(v);
        s.remove_prefix(i);
        return true;
    };
    auto take_range = [&](std::string_view& s, long& start, long& len) -> bool {
        if (!take_number(s, start)) return false;
        len = 1;  // GNU convention: omitted length means 1
        if (!s.empty() && s.front() == ',') {
            s.remove_prefix(1);
            if (!take_number(s, len)) return false;
        }
        return true;
    };

    HunkHeader h{};
    if (!line.starts_with("@@ -")) return std::nullopt;
    line.remove_prefix(4);
    if (!take_range(line, h.old_start, h.old_len)) return std::nullopt;
    if (!line.starts_with(" +")) return std::nullopt;
    line.remove_prefix(2);
    if (!take_range(line, h.new_start, h.new_len)) return std::nullopt;
    if (!line.starts_with(" @@")) return std::nullopt;
    return h;
}

inline std::string strip_eol(std::string_view s) {
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.remove_suffix(1);
    return std::string(s);
}

}  // namespace detail

inline UnifiedDiff parse_diff(const std::string& text) {
    const auto lines = split_lines_keep_ends(text);
    UnifiedDiff patch;
    std::size_t i = 0;

    auto stripped = [&](std::size_t idx) { return detail::strip_eol(lines[idx]); };

    if (i < lines.size() && lines[i].starts_with("--- ")) {
        patch.old_label = stripped(i).substr(4);
        ++i;
        if (i >= lines.size() || !lines[i].starts_with("+++ "))
            throw SpecError("malformed diff: '--- ' header without '+++ '",
                            static_cast<int>(i + 1));
        patch.new_label = stripped(i).substr(4);
        ++i;
    }

    while (i < lines.size()) {
        const std::string head = stripped(i);
        if (head.empty()) {  // tolerate trailing blank lines only
            for (std::size_t j = i; j < lines.size(); ++j)
                if (!detail::strip_eol(lines[j]).empty())
                    throw SpecError("malformed diff: unexpected content after hunks",
                                    static_cast<int>(j + 1));
            break;
        }
        auto header = detail::parse_hunk_header(lines[i]);
        if (!header)
            throw SpecError("malformed diff: expected hunk header, got '" + head + "'",
                            static_cast<int>(i + 1));
        ++i;

        Hunk hunk;
        hunk.old_start = header->old_start;
        hunk.old_len = header->old_len;
        hunk.new_start = header->new_start;
        hunk.new_len = header->new_len;

        long old_seen = 0, new_seen = 0;
        while (old_seen < hunk.old_len || new_seen < hunk.new_len) {
            if (i >= lines.size())
                throw SpecError("hunk length mismatch: hunk body ends early",
                                static_cast<int>(i));
            const std::string& raw = lines[i];
            if (raw.starts_with(kNoNewlineMarker)) {
                if (hunk.lines.empty())
                    throw SpecError("malformed diff: stray no-newline marker",
                                    static_cast<int>(i + 1));
                auto& prev = hunk.lines.back().text;
                if (!prev.empty() && prev.back() == '\n') prev.pop_back();
                ++i;
                continue;
            }
            const char tag = raw.empty() ? '\0' : raw.front();
            if (tag == ' ' && old_seen < hunk.old_len && new_seen < hunk.new_len) {
                ++old_seen;
                ++new_seen;
            } else if (tag == '-' && old_seen < hunk.old_len) {
                ++old_seen;
            } else if (tag == '+' && new_seen < hunk.new_len) {
                ++new_seen;
            } else {
                throw SpecError("hunk length mismatch: line does not fit declared counts",
                                static_cast<int>(i + 1));
            }
            hunk.lines.push_back({tag, raw.substr(1)});
            ++i;
        }
        // A trailing no-newline marker may follow the last body line.
        if (i < lines.size() && lines[i].starts_with(kNoNewlineMarker)) {
            auto& prev = hunk.lines.back().text;
            if (!prev.empty() && prev.back() == '\n') prev.pop_back();
            ++i;
        }
        patch.hunks.push_back(std::move(hunk));
    }

    // Hunks must be ordered on the old side and non-overlapping.
    long prev_end = 0;  // last old line consumed by the previous hunk
    for (std::size_t h = 0; h < patch.hunks.size(); ++h) {
        const auto& hk = patch.hunks[h];
        const long first = hk.old_len > 0 ? hk.old_start : hk.old_start + 1;
        if (first <= prev_end)
            throw SpecError("overlapping hunks: hunk " + format_int(static_cast<long long>(h + 1)) +
                            " starts inside the previous hunk");
        prev_end = hk.old_len > 0 ? hk.old_start + hk.old_len - 1 : hk.old_start;
    }
    return patch;
}

// ============================================================================
// Application
// ============================================================================

// Zero-fuzz semantics: every context and delete line must match the original
// at exactly the stated offsets, or the whole application fails and nothing
// is returned.
inline std::string apply_strict(const UnifiedDiff& patch, const std::string& original) {
    const auto lines = split_lines_keep_ends(original);
    const long total = static_cast<long>(lines.size());
    std::string out;
    long cursor = 0;  // next unconsumed original line, 0-based

    for (std::size_t h = 0; h < patch.hunks.size(); ++h) {
        const auto& hunk = patch.hunks[h];
        const std::string hunk_id = format_int(static_cast<long long>(h + 1));
        const long pos = hunk.old_len > 0 ? hunk.old_start - 1 : hunk.old_start;
        if (pos < cursor || pos > total)
            throw SpecError("offset out of range, hunk " + hunk_id);
        for (long l = cursor; l < pos; ++l) out += lines[static_cast<std::size_t>(l)];
        long p = pos;
        for (const auto& line : hunk.lines) {
            if (line.tag == '+') {
                out += line.text;
                continue;
            }
            if (p >= total || lines[static_cast<std::size_t>(p)] != line.text)
                throw SpecError("context mismatch, hunk " + hunk_id + ": expected '" +
                                detail::strip_eol(line.text) + "'");
            if (line.tag == ' ') out += lines[static_cast<std::size_t>(p)];
            ++p;
        }
        cursor = p;
    }
    for (long l = cursor; l < total; ++l) out += lines[static_cast<std::size_t>(l)];
    return out;
}

struct FuzzyApplyResult {
    std::string text;
    std::vector<long> offsets;  // per hunk: applied position minus stated position
};

inline constexpr int kDefaultFuzz = 2;
inline constexpr int kDefaultSearchWindow = 20;

// Locates each hunk by searching for its old-side block within +/- window
// lines of the expected position (stated position plus the drift observed on
// the previous hunk). Up to `fuzz` outermost *context* lines may be ignored
// while matching; delete lines always have to match. Two candidate positions
// at the same distance are an error rather than a guess: silent misplacement
// is how parameters end up in the wrong block.
inline FuzzyApplyResult apply_fuzzy(const UnifiedDiff& patch, const std::string& original,
                                    int fuzz, int window = kDefaultSearchWindow) {
    if (fuzz < 0) throw SpecError("fuzz must be non-negative");
    const auto lines = split_lines_keep_ends(original);
    const long total = static_cast<long>(lines.size());

    FuzzyApplyResult result;
    std::string& out = result.text;
    long cursor = 0;
    long drift = 0;  // offset carried over from the previous hunk

    for (std::size_t h = 0; h < patch.hunks.size(); ++h) {
        const auto& hunk = patch.hunks[h];
        const std::string hunk_id = format_int(static_cast<long long>(h + 1));
        const long stated = hunk.old_len > 0 ? hunk.old_start - 1 : hunk.old_start;

        // Old-side block and its context structure.
        std::vector<const DiffLine*> block;
        for (const auto& line : hunk.lines)
            if (line.tag != '+') block.push_back(&line);
        long leading_ctx = 0;
        while (leading_ctx < static_cast<long>(block.size()) &&
               block[static_cast<std::size_t>(leading_ctx)]->tag == ' ')
            ++leading_ctx;
        long trailing_ctx = 0;
        while (trailing_ctx < static_cast<long>(block.size()) - leading_ctx &&
               block[block.size() - 1 - static_cast<std::size_t>(trailing_ctx)]->tag == ' ')
            ++trailing_ctx;

        long match_pos = -1;   // where the trimmed block matches, 0-based
        long drop_head = 0, drop_tail = 0;

        if (block.empty()) {
            // Pure insertion: nothing to anchor on, apply at the stated
            // position adjusted by the observed drift.
            const long pos = stated + drift;
            if (pos < cursor || pos > total)
                throw SpecError("hunk " + hunk_id + " not found: insertion point out of range");
            match_pos = pos;
        } else {
            const long base = stated + drift;
            bool found = false;
            for (int f = 0; f <= fuzz && !found; ++f) {
                const long dh = std::min<long>(f, leading_ctx);
                const long dt = std::min<long>(f, trailing_ctx);
                const long blen = static_cast<long>(block.size()) - dh - dt;
                if (blen <= 0) continue;  // nothing left to anchor on at this fuzz level
                auto matches_at = [&](long q) -> bool {
                    if (q < cursor || q + blen > total) return false;
                    for (long j = 0; j < blen; ++j)
                        if (lines[static_cast<std::size_t>(q + j)] !=
                            block[static_cast<std::size_t>(dh + j)]->text)
                            return false;
                    return true;
                };
                for (int dist = 0; dist <= window && !found; ++dist) {
                    const long lo = base + dh - dist;
                    const long hi = base + dh + dist;
                    const bool lo_ok = matches_at(lo);
                    const bool hi_ok = dist > 0 && matches_at(hi);
                    if (lo_ok && hi_ok)
                        throw SpecError("ambiguous placement, hunk " + hunk_id +
                                        ": block matches at offsets -" + format_int(dist) +
                                        " and +" + format_int(dist));
                    if (lo_ok || hi_ok) {
                        match_pos = lo_ok ? lo : hi;
                        drop_head = dh;
                        drop_tail = dt;
                        found = true;
                    }
                }
            }
            if (!found)
                throw SpecError("hunk " + hunk_id + " not found within +/-" + format_int(window) +
                                " lines (fuzz " + format_int(fuzz) + ")");
        }

        // Copy everything before the matched block (including any ignored
        // leading context positions) straight from the original; the search
        // already verified every line of the trimmed block.
        for (long l = cursor; l < match_pos; ++l) out += lines[static_cast<std::size_t>(l)];
        long p = match_pos;
        long old_index = 0;  // index into the old-side block
        for (const auto& line : hunk.lines) {
            if (line.tag == '+') {
                out += line.text;
                continue;
            }
            const long bi = old_index++;
            if (bi < drop_head || bi >= static_cast<long>(block.size()) - drop_tail)
                continue;  // ignored context passes through from the original
            if (line.tag == ' ') out += lines[static_cast<std::size_t>(p)];
            ++p;
        }
        cursor = p;

        const long applied_at = match_pos - drop_head;
        result.offsets.push_back(applied_at - stated);
        drift = applied_at - stated;
    }
    for (long l = cursor; l < total; ++l) out += lines[static_cast<std::size_t>(l)];
    return result;
}

// ============================================================================
// Whole-file acceptance and corruption detection
// ============================================================================

// A regenerated file must not contain diff syntax; a proposal that leads
// with `--- a/` / `+++ b/` headers or hunk arithmetic is the classic
// corrupted whole-file output and is rejected outright. The detector anchors
// at line starts, so `@@` in the middle of a line is fine.
inline std::string accept_whole(const std::string& proposal) {
    std::size_t pos = 0;
    int lineno = 0;
    while (pos <= proposal.size()) {
        std::size_t eol = proposal.find('\n', pos);
        std::string_view line(proposal.data() + pos,
                              (eol == std::string::npos ? proposal.size() : eol) - pos);
        ++lineno;
        if (line.starts_with("--- a/") || line.starts_with("+++ b/") ||
            (line.starts_with("@@ ") && detail::parse_hunk_header(line).has_value()))
            throw CorruptionError("diff syntax injected into whole-file proposal at line " +
                                  format_int(lineno) + ": '" + detail::strip_eol(line) + "'");
        if (eol == std::string::npos) break;
        pos = eol + 1;
    }
    return proposal;
}

// ============================================================================
// Failure classification
// ============================================================================

enum class FailureKind { syntax_code_error, file_corruption, infrastructure, runtime_incompat };

inline const char* to_string(FailureKind k) {
    switch (k) {
        case FailureKind::syntax_code_error: return "syntax_code_error";
        case FailureKind::file_corruption: return "file_corruption";
        case FailureKind::infrastructure: return "infrastructure";
        default: return "runtime_incompat";
    }
}

struct FailureClass {
    FailureKind kind;
    std::string detail;

    bool operator==(const FailureClass&) const = default;
};

// Total and deterministic over failed-run diagnostics: parse and spec
// rejections are code errors, corruption-detector hits are file corruption,
// transport problems (timeouts, refused connections) are infrastructure, and
// anything that parsed but aborted during evaluation is a runtime
// incompatibility.
inline FailureClass classify_failure(const RunDiagnostics& diagnostics) {
    switch (diagnostics.stage) {
        case FailStage::parse:
            return {FailureKind::syntax_code_error, diagnostics.detail};
        case FailStage::corruption:
            return {FailureKind::file_corruption, diagnostics.detail};
        case FailStage::transport:
            return {FailureKind::infrastructure, diagnostics.detail};
        default:
            return {FailureKind::runtime_incompat, diagnostics.detail};
    }
}

inline FailureClass classify_exception(const std::exception& e) {
    return classify_failure(diagnose(e));
}

// Structured run-log line for a failed run: `FAIL <class> <detail>`.
inline std::string format_failure_line(const FailureClass& failure) {
    return std::string("FAIL ") + to_string(failure.kind) + " " + failure.detail;
}

}  // namespace opeforge
