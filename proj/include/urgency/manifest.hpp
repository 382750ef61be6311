#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace urgency {

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

struct FileDigest {
    std::string path;
    std::string sha256;
};

struct StageRecord {
    std::string name;
    std::string status; // ok, failed, paused
    std::uint64_t seed = 0;
    nlohmann::json config = nlohmann::json::object();
    std::vector<FileDigest> inputs;
    std::vector<FileDigest> outputs;
    std::string started;
    std::string finished;
    std::string message;
};

struct RunManifest {
    std::string tool_version = URGENCY_VERSION;
    std::uint64_t seed = 0;
    nlohmann::json config = nlohmann::json::object();
    std::vector<StageRecord> stages; // append-only

    // Latest successful record for a stage.
    const StageRecord* last_ok(std::string_view stage) const;
};

nlohmann::json to_json(const RunManifest& manifest);
RunManifest manifest_from_json(const nlohmann::json& j);
RunManifest read_manifest(const std::filesystem::path& path);

// Rewrites the file by temp-file rename. Refuses to drop or alter a record
// already present on disk.
void write_manifest(const RunManifest& manifest, const std::filesystem::path& path);

// Problems with the digest chain: every input produced by an earlier stage
// must carry that stage's output digest.
std::vector<std::string> verify_chain(const RunManifest& manifest);

std::string utc_timestamp();

// Exclusive hold on a working directory, released on destruction.
class WorkdirLock {
public:
    explicit WorkdirLock(const std::filesystem::path& workdir);
    ~WorkdirLock();
    WorkdirLock(const WorkdirLock&) = delete;
    WorkdirLock& operator=(const WorkdirLock&) = delete;

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

} // namespace urgency
