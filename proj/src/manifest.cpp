#include "urgency/manifest.hpp"

#include "urgency/error.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <memory>

#include <fcntl.h>
#include <unistd.h>

namespace urgency {

namespace {

class Digest {
public:
    Digest() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1)
            throw Error(ErrorKind::io, "SHA-256 initialisation failed");
    }
    void update(const void* data, std::size_t size) {
        if (EVP_DigestUpdate(ctx_.get(), data, size) != 1) throw Error(ErrorKind::io, "SHA-256 update failed");
    }
    std::string hex() {
        unsigned char out[EVP_MAX_MD_SIZE];
        unsigned int len = 0;
        if (EVP_DigestFinal_ex(ctx_.get(), out, &len) != 1) throw Error(ErrorKind::io, "SHA-256 finalisation failed");
        static constexpr char kHex[] = "0123456789abcdef";
        std::string s;
        for (unsigned int i = 0; i < len; ++i) {
            s.push_back(kHex[out[i] >> 4]);
            s.push_back(kHex[out[i] & 15]);
        }
        return s;
    }

private:
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

nlohmann::json digests_json(const std::vector<FileDigest>& files) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& f : files) out.push_back({{"path", f.path}, {"sha256", f.sha256}});
    return out;
}

std::vector<FileDigest> digests_from(const nlohmann::json& j) {
    std::vector<FileDigest> out;
    for (const auto& f : j) out.push_back({f.at("path").get<std::string>(), f.at("sha256").get<std::string>()});
    return out;
}

nlohmann::json stage_json(const StageRecord& s) {
    nlohmann::json j = {{"name", s.name},       {"status", s.status},   {"seed", s.seed},
                        {"config", s.config},   {"inputs", digests_json(s.inputs)},
                        {"outputs", digests_json(s.outputs)}, {"started", s.started}, {"finished", s.finished}};
    if (!s.message.empty()) j["message"] = s.message;
    return j;
}

} // namespace

std::string sha256_hex(std::string_view bytes) {
    Digest d;
    d.update(bytes.data(), bytes.size());
    return d.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot read " + path.string());
    Digest d;
    char buffer[1 << 16];
    while (in) {
        in.read(buffer, sizeof buffer);
        if (in.gcount() > 0) d.update(buffer, static_cast<std::size_t>(in.gcount()));
    }
    if (in.bad()) throw Error(ErrorKind::io, "read failed on " + path.string());
    return d.hex();
}

const StageRecord* RunManifest::last_ok(std::string_view stage) const {
    for (auto it = stages.rbegin(); it != stages.rend(); ++it)
        if (it->name == stage && it->status == "ok") return &*it;
    return nullptr;
}

nlohmann::json to_json(const RunManifest& m) {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : m.stages) stages.push_back(stage_json(s));
    return {{"tool_version", m.tool_version}, {"seed", m.seed}, {"config", m.config}, {"stages", stages}};
}

RunManifest manifest_from_json(const nlohmann::json& j) {
    try {
        RunManifest m;
        m.tool_version = j.at("tool_version").get<std::string>();
        m.seed = j.value("seed", std::uint64_t{0});
        m.config = j.value("config", nlohmann::json::object());
        for (const auto& s : j.at("stages")) {
            StageRecord r;
            r.name = s.at("name").get<std::string>();
            r.status = s.at("status").get<std::string>();
            r.seed = s.value("seed", std::uint64_t{0});
            r.config = s.value("config", nlohmann::json::object());
            r.inputs = digests_from(s.at("inputs"));
            r.outputs = digests_from(s.at("outputs"));
            r.started = s.value("started", "");
            r.finished = s.value("finished", "");
            r.message = s.value("message", "");
            m.stages.push_back(std::move(r));
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::parse, std::string("malformed manifest: ") + e.what());
    }
}

RunManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot read " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::parse, path.string() + ": " + e.what());
    }
    return manifest_from_json(j);
}

void write_manifest(const RunManifest& manifest, const std::filesystem::path& path) {
    if (std::filesystem::exists(path)) {
        const auto previous = read_manifest(path);
        if (previous.stages.size() > manifest.stages.size())
            throw Error(ErrorKind::immutable, "manifest is append-only; refusing to drop stage records");
        for (std::size_t i = 0; i < previous.stages.size(); ++i)
            if (stage_json(previous.stages[i]) != stage_json(manifest.stages[i]))
                throw Error(ErrorKind::immutable, "manifest is append-only; stage record " + std::to_string(i) + " changed");
    }
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw Error(ErrorKind::io, "cannot write " + tmp.string());
        out << to_json(manifest).dump(2) << '\n';
        if (!out) throw Error(ErrorKind::io, "write failed on " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::vector<std::string> verify_chain(const RunManifest& manifest) {
    std::vector<std::string> problems;
    std::map<std::string, std::pair<std::string, std::string>> produced; // path -> (digest, stage)
    for (const auto& s : manifest.stages) {
        if (s.status != "ok") continue;
        for (const auto& in : s.inputs) {
            const auto it = produced.find(in.path);
            if (it != produced.end() && it->second.first != in.sha256)
                problems.push_back(s.name + " read " + in.path + " with digest " + in.sha256.substr(0, 12) + ", but " +
                                   it->second.second + " wrote " + it->second.first.substr(0, 12));
        }
        for (const auto& out : s.outputs) produced[out.path] = {out.sha256, s.name};
    }
    return problems;
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

WorkdirLock::WorkdirLock(const std::filesystem::path& workdir) : path_(workdir / ".lock") {
    std::filesystem::create_directories(workdir);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
        throw Error(ErrorKind::io, "working directory " + workdir.string() + " is locked by another run (" + path_.string() +
                                       "); remove the file if no run is active");
    const auto pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] const auto written = ::write(fd, pid.data(), pid.size());
    ::close(fd);
}

WorkdirLock::~WorkdirLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
}

} // namespace urgency
