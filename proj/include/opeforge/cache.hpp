#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "opeforge/errors.hpp"
#include "opeforge/numeric.hpp"

namespace opeforge {

// ============================================================================
// Content-addressed artifact cache
// ============================================================================
// Memoizes expensive computations (datasets, ground truths, fitted models)
// under keys hashed from their full input description. Entries are files
//   <kind>_<hash>.entry
// holding a header line `opeforge-cache 1 <kind> <payload-hash> <payload-len>`
// followed by the payload. The header lets a reader detect truncation or
// bit-rot; a damaged entry is recomputed and replaced with a warning.
//
// Writer protocol: payload is written to a unique temp file and hard-linked
// into place. The link fails if the entry already exists, so the first writer
// persists and later writers read what it stored.

class ArtifactCache {
public:
    explicit ArtifactCache(std::filesystem::path root) : root_(std::move(root)) {
        std::filesystem::create_directories(root_);
    }

    const std::filesystem::path& root() const { return root_; }

    std::string get_or_compute(const std::string& kind, const std::string& key_material,
                               const std::function<std::string()>& compute) {
        const auto path = entry_path(kind, key_material);

        if (std::filesystem::exists(path)) {
            std::string payload;
            if (read_entry(path, kind, payload)) return payload;
            std::cerr << "warning: corrupted cache entry " << path.filename().string()
                      << ", recomputing\n";
            std::string fresh = compute();
            replace_entry(path, kind, fresh);
            return fresh;
        }

        std::string fresh = compute();
        const auto tmp = temp_path(path);
        write_file(tmp, render_entry(kind, fresh));

        std::error_code ec;
        std::filesystem::create_hard_link(tmp, path, ec);
        std::filesystem::remove(tmp);
        if (ec) {
            // Lost the race; the first writer's entry is authoritative.
            std::string payload;
            if (read_entry(path, kind, payload)) return payload;
            replace_entry(path, kind, fresh);
        }
        return fresh;
    }

private:
    std::filesystem::path root_;

    std::filesystem::path entry_path(const std::string& kind,
                                     const std::string& key_material) const {
        return root_ / (kind + "_" + hex64(fnv1a64(key_material)) + ".entry");
    }

    static std::filesystem::path temp_path(const std::filesystem::path& final_path) {
        static std::atomic<unsigned> counter{0};
        return final_path.parent_path() /
               (final_path.filename().string() + ".tmp" + std::to_string(::getpid()) + "." +
                std::to_string(counter.fetch_add(1)));
    }

    static std::string render_entry(const std::string& kind, const std::string& payload) {
        std::string out = "opeforge-cache 1 " + kind + " " + hex64(fnv1a64(payload)) + " " +
                          format_int(static_cast<long long>(payload.size())) + "\n";
        out += payload;
        return out;
    }

    static void write_file(const std::filesystem::path& path, const std::string& bytes) {
        std::ofstream out(path, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw TransportError("cannot write cache file " + path.string());
    }

    static bool read_entry(const std::filesystem::path& path, const std::string& kind,
                           std::string& payload_out) {
        std::ifstream in(path, std::ios::binary);
        if (!in) return false;
        std::string header;
        if (!std::getline(in, header)) return false;

        std::istringstream hs(header);
        std::string magic, version, entry_kind, payload_hash;
        long long payload_len = -1;
        hs >> magic >> version >> entry_kind >> payload_hash >> payload_len;
        if (!hs || magic != "opeforge-cache" || version != "1" || entry_kind != kind ||
            payload_len < 0)
            return false;

        std::string payload(static_cast<std::size_t>(payload_len), '\0');
        in.read(payload.data(), payload_len);
        if (in.gcount() != payload_len) return false;
        if (in.get() != std::char_traits<char>::eof()) return false;  // trailing junk
        if (hex64(fnv1a64(payload)) != payload_hash) return false;
        payload_out = std::move(payload);
        return true;
    }

    static void replace_entry(const std::filesystem::path& path, const std::string& kind,
                              const std::string& payload) {
        const auto tmp = temp_path(path);
        write_file(tmp, render_entry(kind, payload));
        std::error_code ec;
        std::filesystem::rename(tmp, path, ec);  // atomic replace of the damaged entry
        if (ec) std::filesystem::remove(tmp);
    }
};

}  // namespace opeforge
