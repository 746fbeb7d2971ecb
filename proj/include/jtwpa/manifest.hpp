#pragma once

// Run-directory bookkeeping: content hashes, the manifest document and the
// single-writer lock.

#include "jtwpa/io.hpp"

#include <fcntl.h>
#include <openssl/evp.h>
#include <signal.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include <cerrno>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#ifndef JTWPA_VERSION
#define JTWPA_VERSION "0.0.0"
#endif

namespace jtwpa {

inline std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("SHA-256 computation failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xf];
    }
    return out;
}

inline std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

inline std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Exclusive lock on a run directory. A lock left behind by a process that
/// no longer exists is taken over.
class RunLock {
public:
    explicit RunLock(const std::filesystem::path& run_dir) : path_(run_dir / ".lock") {
        std::filesystem::create_directories(run_dir);
        for (int attempt = 0; attempt < 2; ++attempt) {
            const int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_EXCL, 0644);
            if (fd >= 0) {
                const std::string pid = std::to_string(::getpid()) + "\n";
                const bool ok = ::write(fd, pid.data(), pid.size()) == static_cast<ssize_t>(pid.size());
                ::close(fd);
                if (!ok) {
                    std::filesystem::remove(path_);
                    throw std::runtime_error("cannot write lock file " + path_.string());
                }
                return;
            }
            if (errno != EEXIST) throw std::runtime_error("cannot create lock file " + path_.string() + ": " + std::strerror(errno));
            if (!stale()) break;
            std::filesystem::remove(path_);
        }
        throw std::runtime_error("run directory is locked by another process (" + path_.string() + ")");
    }
    ~RunLock() {
        std::error_code ec;
        std::filesystem::remove(path_, ec);
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    bool stale() const {
        std::string text;
        try {
            text = read_file(path_);
        } catch (const std::exception&) {
            return false;
        }
        const long pid = std::strtol(text.c_str(), nullptr, 10);
        if (pid <= 0) return true;
        return ::kill(static_cast<pid_t>(pid), 0) != 0 && errno == ESRCH;
    }

    std::filesystem::path path_;
};

/// Manifest of a run directory. Artifact paths are relative to the run dir.
class Manifest {
public:
    static constexpr const char* file_name = "manifest.json";

    explicit Manifest(std::filesystem::path run_dir) : dir_(std::move(run_dir)) {
        const auto file = dir_ / file_name;
        if (std::filesystem::exists(file)) {
            try {
                doc_ = nlohmann::json::parse(read_file(file));
            } catch (const nlohmann::json::exception& e) {
                throw std::runtime_error("corrupt manifest " + file.string() + ": " + e.what());
            }
            existed_ = true;
        } else {
            reset();
        }
    }

    bool existed() const { return existed_; }
    const std::filesystem::path& dir() const { return dir_; }
    const nlohmann::json& doc() const { return doc_; }

    void reset() {
        doc_ = {{"tool", "jtwpa_opt"},
                {"version", JTWPA_VERSION},
                {"created_utc", utc_timestamp()},
                {"config_sha256", nullptr},
                {"seeds", nlohmann::json::object()},
                {"stages", nlohmann::json::object()}};
    }

    std::optional<std::string> config_hash() const {
        if (!doc_.contains("config_sha256") || doc_["config_sha256"].is_null()) return std::nullopt;
        return doc_["config_sha256"].get<std::string>();
    }
    void set_config(const std::string& hash, const std::string& relative_path) {
        doc_["config_sha256"] = hash;
        doc_["config_file"] = relative_path;
    }
    void set_seed(const std::string& name, std::uint64_t seed) { doc_["seeds"][name] = seed; }

    nlohmann::json file_entry(const std::string& relative) const {
        const auto full = dir_ / relative;
        return {{"path", relative},
                {"sha256", sha256_file(full)},
                {"bytes", static_cast<std::uint64_t>(std::filesystem::file_size(full))}};
    }

    /// Records the stage as running with the given inputs and saves.
    void begin_stage(const std::string& stage, const std::vector<std::string>& inputs,
                     const nlohmann::json& settings = nlohmann::json::object()) {
        nlohmann::json s;
        s["status"] = "running";
        s["started_utc"] = utc_timestamp();
        s["settings"] = settings;
        s["inputs"] = nlohmann::json::array();
        for (const auto& in : inputs) s["inputs"].push_back(file_entry(in));
        s["outputs"] = nlohmann::json::array();
        doc_["stages"][stage] = s;
        save();
    }

    void finish_stage(const std::string& stage, const std::vector<std::string>& outputs) {
        auto& s = doc_["stages"][stage];
        s["outputs"] = nlohmann::json::array();
        for (const auto& out : outputs) s["outputs"].push_back(file_entry(out));
        s["status"] = "complete";
        s["finished_utc"] = utc_timestamp();
        save();
    }

    void fail_stage(const std::string& stage, const std::string& message) {
        auto& s = doc_["stages"][stage];
        s["status"] = "failed";
        s["error"] = message;
        s["finished_utc"] = utc_timestamp();
        save();
    }

    /// Drops a stage record, deleting the outputs it listed.
    void discard_stage(const std::string& stage) {
        if (!doc_["stages"].contains(stage)) return;
        for (const auto& out : doc_["stages"][stage]["outputs"]) {
            std::error_code ec;
            std::filesystem::remove(dir_ / out["path"].get<std::string>(), ec);
        }
        doc_["stages"].erase(stage);
        save();
    }

    /// True when the stage completed and every listed input and output still
    /// hashes to its recorded value, under the same settings.
    bool stage_current(const std::string& stage, const nlohmann::json& settings = nlohmann::json::object()) const {
        if (!doc_["stages"].contains(stage)) return false;
        const auto& s = doc_["stages"][stage];
        if (s.value("status", "") != "complete" || s.value("settings", nlohmann::json::object()) != settings)
            return false;
        for (const char* key : {"inputs", "outputs"}) {
            for (const auto& f : s[key]) {
                const auto full = dir_ / f["path"].get<std::string>();
                if (!std::filesystem::exists(full) || sha256_file(full) != f["sha256"].get<std::string>())
                    return false;
            }
        }
        return true;
    }

    std::vector<std::string> listed_files() const {
        std::vector<std::string> out;
        if (doc_.contains("config_file")) out.push_back(doc_["config_file"].get<std::string>());
        for (const auto& [name, s] : doc_["stages"].items())
            for (const auto& f : s["outputs"]) out.push_back(f["path"].get<std::string>());
        return out;
    }

    void save() {
        doc_["updated_utc"] = utc_timestamp();
        write_file_atomic(dir_ / file_name, doc_.dump(2) + "\n");
        existed_ = true;
    }

private:
    std::filesystem::path dir_;
    nlohmann::json doc_;
    bool existed_ = false;
};

} // namespace jtwpa
