#pragma once

#include "curator/annotate.hpp"

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace curator::annotate {

struct StoreOptions {
    // Empty: any rater id is accepted. Otherwise unknown raters get NotFoundError.
    std::set<std::string> raters;
    // Write a snapshot after this many logged events (0 disables).
    std::size_t snapshot_every = 256;
    // image_id -> URL, echoed in batch payloads.
    std::map<std::string, std::string> urls;
    // CategoryId -> display name, echoed in batch payloads.
    std::map<CategoryId, std::string> class_names;
};

struct SubmitResult {
    std::string task_id;
    // True when the rater answered a golden question wrongly.
    bool feedback = false;
    std::optional<bool> correct_answer; // revealed only with feedback
};

// Durable annotation state rooted at a directory:
//   tasks.jsonl      the batches, written once by initialize()
//   events.log       append-only JSON lines (assignments and judgments)
//   snapshot.json    periodic compaction of the log prefix
// Every event is flushed and fsync'ed before it is applied, so an
// acknowledged judgment survives a crash. Mutations are serialized; reads
// take a shared lock.
class AnnotationStore {
public:
    // Writes tasks.jsonl into an empty (or missing) directory.
    static void initialize(const std::filesystem::path& dir, const std::vector<AnnotationTask>& tasks);

    explicit AnnotationStore(std::filesystem::path dir, StoreOptions opts = {});
    ~AnnotationStore();

    AnnotationStore(const AnnotationStore&) = delete;
    AnnotationStore& operator=(const AnnotationStore&) = delete;

    // Client-visible batch (never reveals golden status), or null JSON when
    // the rater has nothing left. Re-fetching before judging returns the
    // same open assignment.
    nlohmann::json next_batch(const std::string& rater_id);

    // Throws NotFoundError (unknown task or rater) or ConflictError
    // (duplicate submission, task already fully judged).
    SubmitResult submit(const Judgment& j);

    RaterStats summary(const std::string& rater_id) const;
    nlohmann::json task_view(const std::string& task_id) const;

    std::vector<Judgment> judgments() const;
    const std::vector<AnnotationTask>& tasks() const { return tasks_; }
    std::size_t judgment_count() const;

    void snapshot();

private:
    struct Batch {
        CategoryId class_id;
        std::size_t begin, end;
    };

    void check_rater(const std::string& rater_id) const;
    std::size_t task_index(const std::string& task_id) const;
    void append_event(const nlohmann::json& event);
    void maybe_snapshot();
    void apply_assign(const std::string& rater, const std::vector<std::size_t>& tasks);
    void apply_judgment(const Judgment& j);
    void replay();
    nlohmann::json public_task(std::size_t i) const;
    void write_snapshot_locked();

    std::filesystem::path dir_;
    StoreOptions opts_;
    std::vector<AnnotationTask> tasks_;
    std::map<std::string, std::size_t> index_;
    std::vector<Batch> batches_;

    mutable std::shared_mutex mutex_;
    std::vector<Judgment> judgments_;
    std::vector<std::set<std::string>> judged_by_;            // per task
    std::map<std::string, std::set<std::size_t>> assigned_;    // rater -> tasks ever assigned
    std::map<std::string, std::vector<std::size_t>> open_;     // rater -> current batch
    std::uint64_t seq_ = 0;
    std::uint64_t since_snapshot_ = 0;
    std::FILE* log_ = nullptr;
};

struct HttpResponse {
    int status = 200;
    std::string body; // JSON
};

// HTTP JSON API over an AnnotationStore:
//   GET  /batches/next?rater=ID
//   POST /judgments
//   GET  /raters/{id}/summary
//   GET  /tasks/{id}
// handle() is transport-free so it can be exercised directly; serve() binds
// a cpp-httplib server.
class AnnotationService {
public:
    explicit AnnotationService(AnnotationStore& store);
    ~AnnotationService();

    HttpResponse handle(const std::string& method, const std::string& path,
                        const std::map<std::string, std::string>& query, const std::string& body);

    // Serves files under `dir` at "/" alongside the API.
    void set_static_dir(std::filesystem::path dir);

    // Binds (port 0 picks a free port) and returns the bound port.
    int bind(const std::string& host, int port);
    // Blocks until stop() is called.
    void listen();
    void stop();

private:
    struct Server;
    AnnotationStore& store_;
    std::filesystem::path static_dir_;
    std::unique_ptr<Server> server_;
};

} // namespace curator::annotate
