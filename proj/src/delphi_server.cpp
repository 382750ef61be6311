#include "urgency/delphi_server.hpp"

#include "urgency/delphi.hpp"
#include "urgency/error.hpp"

#include <httplib.h>
#include <json.hpp>

namespace urgency::delphi {

namespace {

int status_for(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::not_found: return 404;
    case ErrorKind::immutable:
    case ErrorKind::not_ready: return 409;
    case ErrorKind::unauthorized: return 401;
    case ErrorKind::forbidden: return 403;
    case ErrorKind::io:
    case ErrorKind::divergence: return 500;
    default: return 400;
    }
}

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
    send_json(res, status, {{"code", code}, {"message", message}});
}

std::string bearer(const httplib::Request& req) {
    const auto header = req.get_header_value("Authorization");
    constexpr std::string_view prefix = "Bearer ";
    if (header.size() <= prefix.size() || header.compare(0, prefix.size(), prefix) != 0) return {};
    return header.substr(prefix.size());
}

} // namespace

struct DelphiServer::Impl {
    ServerConfig config;
    SessionStore store;
    httplib::Server http;
    int bound_port = -1;

    explicit Impl(ServerConfig c) : config(std::move(c)), store(config.store_dir) { routes(); }

    void require_coordinator(const httplib::Request& req) const {
        const auto token = bearer(req);
        if (token.empty()) throw Error(ErrorKind::unauthorized, "missing bearer token");
        if (config.coordinator_token.empty() || token != config.coordinator_token)
            throw Error(ErrorKind::forbidden, "coordinator token required");
    }

    std::string require_expert(const httplib::Request& req, const DelphiSession& session) const {
        const auto token = bearer(req);
        if (token.empty()) throw Error(ErrorKind::unauthorized, "missing bearer token");
        const auto expert = req.get_param_value("expert");
        if (expert.empty()) throw Error(ErrorKind::domain, "expert query parameter required");
        const Expert* match = nullptr;
        for (const auto& e : session.experts)
            if (e.token == token) match = &e;
        if (!match) throw Error(ErrorKind::unauthorized, "unknown token for session " + session.id);
        if (match->id != expert) throw Error(ErrorKind::forbidden, "token does not belong to expert '" + expert + "'");
        return expert;
    }

    // Runs `fn` under the single-writer lock and converts failures to error bodies.
    template <typename Fn>
    void guarded(httplib::Response& res, Fn&& fn) {
        try {
            std::lock_guard lock(store.writer_mutex());
            fn();
        } catch (const Error& e) {
            send_error(res, status_for(e.kind()), to_string(e.kind()), e.message());
        } catch (const nlohmann::json::exception& e) {
            send_error(res, 400, "parse", e.what());
        } catch (const std::exception& e) {
            send_error(res, 500, "internal", e.what());
        }
    }

    void routes() {
        http.Get("/health", [](const httplib::Request&, httplib::Response& res) {
            send_json(res, 200, {{"status", "ok"}, {"version", URGENCY_VERSION}});
        });

        http.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                require_coordinator(req);
                auto session = session_from_request(nlohmann::json::parse(req.body));
                if (store.exists(session.id)) throw Error(ErrorKind::immutable, "session '" + session.id + "' already exists");
                store.save(session);
                send_json(res, 201, {{"id", session.id}});
            });
        });

        http.Get(R"(/sessions/([A-Za-z0-9_-]+))", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                require_coordinator(req);
                send_json(res, 200, coordinator_view(store.load(req.matches[1])));
            });
        });

        http.Get(R"(/sessions/([A-Za-z0-9_-]+)/queue)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const auto session = store.load(req.matches[1]);
                const auto expert = require_expert(req, session);
                send_json(res, 200, expert_view(session, expert));
            });
        });

        http.Put(R"(/sessions/([A-Za-z0-9_-]+)/votes)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                auto session = store.load(req.matches[1]);
                const auto expert = require_expert(req, session);
                const auto body = nlohmann::json::parse(req.body);
                const auto& votes = body.at("votes");
                if (!votes.is_object()) throw Error(ErrorKind::parse, "'votes' must map transcript ids to labels");
                for (const auto& [id, label] : votes.items()) record_vote(session, expert, id, label.get<int>());
                store.save(session);
                send_json(res, 200, expert_view(session, expert));
            });
        });

        http.Post(R"(/sessions/([A-Za-z0-9_-]+)/submit)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                auto session = store.load(req.matches[1]);
                const auto expert = require_expert(req, session);
                submit(session, expert);
                store.save(session);
                send_json(res, 200, expert_view(session, expert));
            });
        });

        http.Post(R"(/sessions/([A-Za-z0-9_-]+)/finalize)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                require_coordinator(req);
                auto session = store.load(req.matches[1]);
                finalize_labels(session);
                store.save(session);
                send_json(res, 200, coordinator_view(session));
            });
        });

        http.Get(R"(/sessions/([A-Za-z0-9_-]+)/export)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                require_coordinator(req);
                const auto session = store.load(req.matches[1]);
                if (!session.finalized) throw Error(ErrorKind::not_ready, "session '" + session.id + "' is not finalized");
                res.status = 200;
                res.set_content(labels_to_csv(session.final_labels), "text/csv");
            });
        });

        if (!config.static_dir.empty()) http.set_mount_point("/", config.static_dir.string());
    }
};

DelphiServer::DelphiServer(ServerConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

DelphiServer::~DelphiServer() { stop(); }

int DelphiServer::bind() {
    auto& http = impl_->http;
    const auto& c = impl_->config;
    if (c.port == 0) {
        impl_->bound_port = http.bind_to_any_port(c.host);
    } else {
        impl_->bound_port = http.bind_to_port(c.host, c.port) ? c.port : -1;
    }
    if (impl_->bound_port < 0)
        throw Error(ErrorKind::io, "cannot bind " + c.host + ":" + std::to_string(c.port) + " (port busy?)");
    return impl_->bound_port;
}

void DelphiServer::run() {
    if (impl_->bound_port < 0) bind();
    impl_->http.listen_after_bind();
}

void DelphiServer::stop() {
    if (!impl_) return;
    if (impl_->http.is_running()) impl_->http.stop();
    // Wait out any in-flight store write.
    std::lock_guard lock(impl_->store.writer_mutex());
}

void DelphiServer::wait_until_ready() const { impl_->http.wait_until_ready(); }

int DelphiServer::port() const { return impl_->bound_port; }

} // namespace urgency::delphi
