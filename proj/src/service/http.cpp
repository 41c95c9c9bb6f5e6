#include "castorette/error.hpp"
#include "castorette/service.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

namespace castorette {

using nlohmann::json;

int http_status(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::ValidationError: return 422;
    case ErrorCode::InvalidArgument:
    case ErrorCode::MalformedRow:
    case ErrorCode::UnsortedInput:
    case ErrorCode::NonFiniteValue:
    case ErrorCode::UnknownEntityType:
    case ErrorCode::UnknownSignalType: return 400;
    case ErrorCode::NotFound:
    case ErrorCode::UnknownModel:
    case ErrorCode::UnknownContext: return 404;
    case ErrorCode::Ambiguous:
    case ErrorCode::CycleError:
    case ErrorCode::SelfEdge: return 409;
    case ErrorCode::Timeout: return 504;
    case ErrorCode::NoHandler:
    case ErrorCode::StoreUnavailable: return 503;
    default: return 500;
    }
}

namespace {

json query_object(const httplib::Request& req) {
    json j = json::object();
    for (const auto& [k, v] : req.params) j[k] = v;
    return j;
}

json body_object(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
        return json::parse(req.body);
    } catch (const json::exception& e) {
        fail(ErrorCode::InvalidArgument, std::string("body is not JSON: ") + e.what());
    }
}

void reply(httplib::Response& res, int status, json body) {
    if (body.is_object()) body["schema_version"] = kSchemaVersion;
    else body = json{{"schema_version", kSchemaVersion}, {"result", std::move(body)}};
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, ErrorCode code, const std::string& detail, json extra = json::object()) {
    extra["error"] = std::string(to_string(code));
    extra["detail"] = detail;
    reply(res, http_status(code), std::move(extra));
}

using Build = std::function<json(const httplib::Request&)>;

} // namespace

struct HttpServer::Impl {
    Platform& platform;
    httplib::Server server;

    explicit Impl(Platform& p) : platform(p) { routes(); }

    // Every route is a bus request: the reply is what the module op returned.
    httplib::Server::Handler forward(const char* queue, Build build, int ok_status = 200) {
        return [this, queue, build = std::move(build), ok_status](const httplib::Request& req, httplib::Response& res) {
            try {
                reply(res, ok_status, platform.bus().request(queue, build(req)));
            } catch (const Error& e) {
                reply_error(res, e.code(), e.detail());
            } catch (const std::exception& e) {
                reply_error(res, ErrorCode::InvalidArgument, e.what());
            }
        };
    }

    void routes() {
        auto query = [](const httplib::Request& r) { return query_object(r); };
        auto body = [](const httplib::Request& r) { return body_object(r); };
        auto with_model = [](const httplib::Request& r) {
            json j = body_object(r);
            for (const auto& [k, v] : r.params) j[k] = v;
            j["model"] = r.path_params.at("id");
            return j;
        };

        server.Get("/context/graph", forward(queues::kContextGraph, query));
        server.Get("/timeseries", forward(queues::kTsQuery, query));
        server.Put("/timeseries", forward(queues::kTsIngest, body));
        server.Post("/timeseries", forward(queues::kTsIngest, body));
        server.Post("/timeseries/csv", forward(queues::kTsIngestCsv, [](const httplib::Request& r) {
            json j{{"csv", r.body}};
            if (r.has_param("strict")) j["strict"] = r.get_param_value("strict");
            return j;
        }));
        server.Get("/timeseries/compare", forward(queues::kTsCompare, query));

        server.Get("/models", forward(queues::kModelList, query));
        server.Get("/models/hierarchy", forward(queues::kModelHierarchy, query));
        auto put_model = [this](const httplib::Request& req, httplib::Response& res) {
            try {
                const json in = body_object(req);
                const json check = platform.bus().request(queues::kModelValidate, in);
                if (!check.at("diagnostics").empty()) {
                    reply_error(res, ErrorCode::ValidationError, "pipeline is invalid", check);
                    return;
                }
                reply(res, 201, platform.bus().request(queues::kModelPut, in));
            } catch (const Error& e) {
                reply_error(res, e.code(), e.detail());
            } catch (const std::exception& e) {
                reply_error(res, ErrorCode::InvalidArgument, e.what());
            }
        };
        server.Put("/models", put_model);
        server.Post("/models", put_model);
        server.Get("/models/:id", forward(queues::kModelGet, [](const httplib::Request& r) {
            return json{{"model", r.path_params.at("id")}};
        }));
        server.Get("/models/:id/versions", forward(queues::kModelVersions, with_model));
        server.Put("/models/:id/activate-version", forward(queues::kModelActivate, with_model));
        server.Post("/models/:id/activate-version", forward(queues::kModelActivate, with_model));
        server.Get("/versions/:id", forward(queues::kModelGet, [](const httplib::Request& r) {
            return json{{"version", r.path_params.at("id")}, {"params", r.has_param("params") ? r.get_param_value("params") : "false"}};
        }));

        server.Get("/scheduler/queues", forward(queues::kSchedQueues, query));
        server.Post("/scheduler/run-now", forward(queues::kSchedRunNow, body, 202));
        server.Get("/jobs/recent", forward(queues::kJobsRecent, query));

        server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
            try {
                std::rethrow_exception(ep);
            } catch (const std::exception& e) {
                reply_error(res, ErrorCode::InvalidArgument, e.what());
            }
        });
        server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
            if (!res.body.empty()) return;
            if (res.status == 404) reply_error(res, ErrorCode::NotFound, "no route for " + req.method + " " + req.path);
        });
    }
};

HttpServer::HttpServer(Platform& platform) : impl_(std::make_unique<Impl>(platform)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
    int bound = port;
    if (port == 0) bound = impl_->server.bind_to_any_port(host);
    else if (!impl_->server.bind_to_port(host, port)) bound = -1;
    if (bound <= 0) fail(ErrorCode::Io, "cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    spdlog::info("http: listening on {}:{}", host, bound);
    return bound;
}

void HttpServer::listen(const std::string& host, int port) {
    spdlog::info("http: listening on {}:{}", host, port);
    if (!impl_->server.listen(host, port)) fail(ErrorCode::Io, "cannot listen on " + host + ":" + std::to_string(port));
}

void HttpServer::stop() {
    impl_->server.stop();
    if (thread_.joinable()) thread_.join();
}

} // namespace castorette
