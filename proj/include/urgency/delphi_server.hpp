#pragma once

#include <filesystem>
#include <memory>
#include <string>

namespace urgency::delphi {

struct ServerConfig {
    std::filesystem::path store_dir = "sessions";
    std::string coordinator_token;
    // Optional directory of static review console assets, served at "/".
    std::filesystem::path static_dir;
    std::string host = "127.0.0.1";
    int port = 8080;
};

// HTTP JSON front end over a SessionStore.
//
//   GET  /health
//   POST /sessions                          coordinator
//   GET  /sessions/{id}                     coordinator
//   GET  /sessions/{id}/queue?expert=E      expert E
//   PUT  /sessions/{id}/votes?expert=E      expert E, body {"votes": {"<id>": label}}
//   POST /sessions/{id}/submit?expert=E     expert E
//   POST /sessions/{id}/finalize            coordinator
//   GET  /sessions/{id}/export              coordinator, text/csv
//
// Callers authenticate with "Authorization: Bearer <token>". Errors are
// {"code", "message"} bodies.
class DelphiServer {
public:
    explicit DelphiServer(ServerConfig config);
    ~DelphiServer();
    DelphiServer(const DelphiServer&) = delete;
    DelphiServer& operator=(const DelphiServer&) = delete;

    // Binds the listening socket and returns the port (config.port 0 picks one).
    // Throws if the port is unavailable.
    int bind();
    // Serves until stop(); call bind() first.
    void run();
    void stop();
    // Blocks until run() is accepting connections.
    void wait_until_ready() const;
    int port() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace urgency::delphi
