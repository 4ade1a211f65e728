#include "curator/annotation_store.hpp"

#include "curator/error.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace curator::annotate {

using nlohmann::json;

struct AnnotationService::Server {
    httplib::Server http;
};

AnnotationService::AnnotationService(AnnotationStore& store) : store_(store) {}

AnnotationService::~AnnotationService() {
    stop();
}

namespace {

HttpResponse error(int status, const std::string& code, const std::string& message) {
    return {status, json{{"error", {{"code", code}, {"message", message}}}}.dump()};
}

HttpResponse ok(int status, const json& body) {
    return {status, body.dump()};
}

} // namespace

HttpResponse AnnotationService::handle(const std::string& method, const std::string& path,
                                       const std::map<std::string, std::string>& query, const std::string& body) {
    try {
        if (method == "GET" && path == "/batches/next") {
            const auto it = query.find("rater");
            if (it == query.end() || it->second.empty())
                return error(400, "bad_request", "missing 'rater' query parameter");
            const json batch = store_.next_batch(it->second);
            return ok(200, {{"rater_id", it->second}, {"batch", batch}});
        }
        if (method == "POST" && path == "/judgments") {
            json req;
            try {
                req = json::parse(body);
            } catch (const json::parse_error& e) {
                return error(400, "bad_request", std::string("invalid JSON: ") + e.what());
            }
            Judgment j;
            try {
                j = judgment_from_json(req);
            } catch (const json::exception& e) {
                return error(400, "bad_request", e.what());
            }
            const SubmitResult r = store_.submit(j);
            json resp = {{"status", "recorded"}, {"task_id", r.task_id}, {"feedback", r.feedback}};
            if (r.correct_answer)
                resp["correct_answer"] = *r.correct_answer;
            return ok(201, resp);
        }
        constexpr std::string_view raters = "/raters/";
        constexpr std::string_view summary = "/summary";
        if (method == "GET" && path.starts_with(raters) && path.ends_with(summary) &&
            path.size() > raters.size() + summary.size()) {
            const std::string id = path.substr(raters.size(), path.size() - raters.size() - summary.size());
            return ok(200, to_json(store_.summary(id)));
        }
        constexpr std::string_view tasks = "/tasks/";
        if (method == "GET" && path.starts_with(tasks) && path.size() > tasks.size())
            return ok(200, store_.task_view(path.substr(tasks.size())));
        return error(404, "not_found", "no route for " + method + " " + path);
    } catch (const NotFoundError& e) {
        return error(404, "not_found", e.what());
    } catch (const ConflictError& e) {
        return error(409, "conflict", e.what());
    } catch (const ValidationError& e) {
        return error(400, "bad_request", e.what());
    } catch (const std::exception& e) {
        return error(500, "internal", e.what());
    }
}

void AnnotationService::set_static_dir(std::filesystem::path dir) {
    static_dir_ = std::move(dir);
}

int AnnotationService::bind(const std::string& host, int port) {
    server_ = std::make_unique<Server>();
    auto& http = server_->http;
    auto forward = [this](const httplib::Request& req, httplib::Response& res) {
        std::map<std::string, std::string> query;
        for (const auto& [k, v] : req.params)
            query.emplace(k, v);
        const HttpResponse r = handle(req.method, req.path, query, req.body);
        res.status = r.status;
        res.set_content(r.body, "application/json");
    };
    http.Get("/batches/next", forward);
    http.Post("/judgments", forward);
    http.Get(R"(/raters/([^/]+)/summary)", forward);
    http.Get(R"(/tasks/([^/]+))", forward);
    if (!static_dir_.empty())
        http.set_mount_point("/", static_dir_.string());

    if (port == 0)
        return http.bind_to_any_port(host);
    if (!http.bind_to_port(host, port))
        throw IoError("cannot bind " + host + ":" + std::to_string(port));
    return port;
}

void AnnotationService::listen() {
    if (!server_)
        throw Error("AnnotationService::listen called before bind");
    server_->http.listen_after_bind();
}

void AnnotationService::stop() {
    if (server_)
        server_->http.stop();
}

} // namespace curator::annotate
