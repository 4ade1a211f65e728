#include "curator/annotation_store.hpp"

#include "curator/digest.hpp"
#include "curator/error.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <ctime>
#include <fstream>
#include <unistd.h>

namespace curator::annotate {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::vector<AnnotationTask> read_tasks(const fs::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("annotation store has no task file at " + path.string());
    std::vector<AnnotationTask> tasks;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty())
            continue;
        try {
            tasks.push_back(task_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw ParseError(path.string(), lineno, e.what());
        } catch (const ValidationError& e) {
            throw ParseError(path.string(), lineno, e.what());
        }
    }
    return tasks;
}

} // namespace

void AnnotationStore::initialize(const fs::path& dir, const std::vector<AnnotationTask>& tasks) {
    fs::create_directories(dir);
    if (fs::exists(dir / "tasks.jsonl") || fs::exists(dir / "events.log"))
        throw ValidationError("annotation store at " + dir.string() + " is already initialized");
    std::string body;
    std::set<std::string> ids;
    for (const auto& t : tasks) {
        if (!ids.insert(t.task_id).second)
            throw ValidationError("duplicate task id '" + t.task_id + "'");
        body += to_json(t).dump();
        body += '\n';
    }
    write_file_atomic(dir / "tasks.jsonl", body);
}

AnnotationStore::AnnotationStore(fs::path dir, StoreOptions opts) : dir_(std::move(dir)), opts_(std::move(opts)) {
    tasks_ = read_tasks(dir_ / "tasks.jsonl");
    judged_by_.resize(tasks_.size());
    for (std::size_t i = 0; i < tasks_.size(); ++i) {
        if (!index_.emplace(tasks_[i].task_id, i).second)
            throw ValidationError("duplicate task id '" + tasks_[i].task_id + "'");
        if (batches_.empty() || batches_.back().class_id != tasks_[i].class_id)
            batches_.push_back({tasks_[i].class_id, i, i + 1});
        else
            batches_.back().end = i + 1;
    }
    replay();
    log_ = std::fopen((dir_ / "events.log").c_str(), "ab");
    if (!log_)
        throw IoError("cannot open " + (dir_ / "events.log").string() + " for append");
}

AnnotationStore::~AnnotationStore() {
    if (log_)
        std::fclose(log_);
}

void AnnotationStore::replay() {
    std::uint64_t snapshot_seq = 0;
    const auto snap_path = dir_ / "snapshot.json";
    if (fs::exists(snap_path)) {
        const json snap = json::parse(read_file(snap_path));
        snapshot_seq = snap.at("seq").get<std::uint64_t>();
        for (const auto& [rater, ids] : snap.at("assigned").items()) {
            std::vector<std::size_t> idx;
            for (const auto& id : ids)
                idx.push_back(task_index(id.get<std::string>()));
            apply_assign(rater, idx);
        }
        for (const auto& [rater, ids] : snap.at("open").items()) {
            auto& open = open_[rater];
            open.clear();
            for (const auto& id : ids)
                open.push_back(task_index(id.get<std::string>()));
        }
        for (const auto& j : snap.at("judgments"))
            apply_judgment(judgment_from_json(j));
        seq_ = snapshot_seq;
    }

    const auto log_path = dir_ / "events.log";
    std::ifstream in(log_path, std::ios::binary);
    std::string line;
    std::size_t lineno = 0;
    std::uintmax_t good_end = 0;
    bool torn = false;
    while (std::getline(in, line)) {
        ++lineno;
        const bool terminated = !in.eof();
        if (terminated && line.empty()) {
            good_end += 1;
            continue;
        }
        json ev = json::parse(line, nullptr, false);
        if (!terminated || ev.is_discarded()) {
            // A torn final line is an event that was never acknowledged.
            if (in.peek() == std::char_traits<char>::eof()) {
                torn = true;
                break;
            }
            throw ParseError(log_path.string(), lineno, "corrupt event");
        }
        good_end += line.size() + 1;
        const auto seq = ev.at("seq").get<std::uint64_t>();
        if (seq <= snapshot_seq)
            continue;
        const auto kind = ev.at("kind").get<std::string>();
        if (kind == "assign") {
            std::vector<std::size_t> idx;
            for (const auto& id : ev.at("tasks"))
                idx.push_back(task_index(id.get<std::string>()));
            apply_assign(ev.at("rater_id").get<std::string>(), idx);
        } else if (kind == "judgment") {
            apply_judgment(judgment_from_json(ev.at("judgment")));
        }
        seq_ = std::max(seq_, seq);
    }
    in.close();
    if (torn)
        fs::resize_file(log_path, good_end);
}

void AnnotationStore::check_rater(const std::string& rater_id) const {
    if (rater_id.empty())
        throw ValidationError("rater id must be non-empty");
    if (!opts_.raters.empty() && !opts_.raters.count(rater_id))
        throw NotFoundError("unknown rater '" + rater_id + "'");
}

std::size_t AnnotationStore::task_index(const std::string& task_id) const {
    const auto it = index_.find(task_id);
    if (it == index_.end())
        throw NotFoundError("unknown task '" + task_id + "'");
    return it->second;
}

void AnnotationStore::append_event(const json& event) {
    const std::string line = event.dump() + "\n";
    if (std::fwrite(line.data(), 1, line.size(), log_) != line.size() || std::fflush(log_) != 0)
        throw IoError("failed to append to annotation log");
    ::fsync(::fileno(log_));
}

void AnnotationStore::maybe_snapshot() {
    if (opts_.snapshot_every > 0 && ++since_snapshot_ >= opts_.snapshot_every)
        write_snapshot_locked();
}

void AnnotationStore::apply_assign(const std::string& rater, const std::vector<std::size_t>& tasks) {
    auto& a = assigned_[rater];
    a.insert(tasks.begin(), tasks.end());
    open_[rater] = tasks;
}

void AnnotationStore::apply_judgment(const Judgment& j) {
    const std::size_t i = task_index(j.task_id);
    judged_by_[i].insert(j.rater_id);
    judgments_.push_back(j);
    assigned_[j.rater_id].insert(i);
}

json AnnotationStore::public_task(std::size_t i) const {
    const auto& t = tasks_[i];
    json j = {{"task_id", t.task_id}, {"class_id", t.class_id}, {"image_id", t.image_id}};
    if (const auto u = opts_.urls.find(t.image_id); u != opts_.urls.end())
        j["url"] = u->second;
    return j;
}

json AnnotationStore::next_batch(const std::string& rater_id) {
    check_rater(rater_id);
    std::unique_lock lock(mutex_);

    auto with_url = [&](const std::string& image_id) {
        json j = {{"image_id", image_id}};
        if (const auto u = opts_.urls.find(image_id); u != opts_.urls.end())
            j["url"] = u->second;
        return j;
    };
    auto render = [&](const std::vector<std::size_t>& idx) {
        const auto& first = tasks_[idx.front()];
        json view = {{"class_id", first.class_id}};
        if (const auto n = opts_.class_names.find(first.class_id); n != opts_.class_names.end())
            view["class_name"] = n->second;
        json pos = json::array(), neg = json::array(), items = json::array();
        for (const auto& p : first.positives)
            pos.push_back(with_url(p));
        for (const auto& n : first.negatives) {
            json e = with_url(n.image_id);
            e["class_id"] = n.class_id;
            if (const auto cn = opts_.class_names.find(n.class_id); cn != opts_.class_names.end())
                e["class_name"] = cn->second;
            neg.push_back(std::move(e));
        }
        for (auto i : idx)
            items.push_back(public_task(i));
        view["positives"] = std::move(pos);
        view["negatives"] = std::move(neg);
        view["tasks"] = std::move(items);
        return view;
    };

    // Resume an open assignment that still has work for this rater.
    if (auto it = open_.find(rater_id); it != open_.end()) {
        std::vector<std::size_t> still;
        for (auto i : it->second)
            if (!judged_by_[i].count(rater_id) && judged_by_[i].size() < kVotesPerTask)
                still.push_back(i);
        if (!still.empty())
            return render(still);
    }

    const auto& mine = assigned_[rater_id];
    for (const auto& b : batches_) {
        std::vector<std::size_t> idx;
        for (std::size_t i = b.begin; i < b.end; ++i)
            if (!mine.count(i) && !judged_by_[i].count(rater_id) && judged_by_[i].size() < kVotesPerTask)
                idx.push_back(i);
        if (idx.empty())
            continue;
        json ids = json::array();
        for (auto i : idx)
            ids.push_back(tasks_[i].task_id);
        append_event({{"seq", ++seq_}, {"kind", "assign"}, {"rater_id", rater_id}, {"tasks", ids}, {"at", utc_now()}});
        apply_assign(rater_id, idx);
        maybe_snapshot();
        return render(idx);
    }
    return nullptr;
}

SubmitResult AnnotationStore::submit(const Judgment& j) {
    check_rater(j.rater_id);
    std::unique_lock lock(mutex_);
    const std::size_t i = task_index(j.task_id);
    if (judged_by_[i].count(j.rater_id))
        throw ConflictError("rater '" + j.rater_id + "' already judged task '" + j.task_id + "'");
    if (judged_by_[i].size() >= kVotesPerTask)
        throw ConflictError("task '" + j.task_id + "' already has " + std::to_string(kVotesPerTask) + " judgments");

    append_event({{"seq", ++seq_}, {"kind", "judgment"}, {"judgment", to_json(j)}, {"at", utc_now()}});
    apply_judgment(j);
    maybe_snapshot();

    SubmitResult r{j.task_id, false, std::nullopt};
    const auto& t = tasks_[i];
    if (t.is_golden && t.golden_answer && *t.golden_answer != j.answer) {
        r.feedback = true;
        r.correct_answer = *t.golden_answer;
    }
    return r;
}

RaterStats AnnotationStore::summary(const std::string& rater_id) const {
    check_rater(rater_id);
    std::shared_lock lock(mutex_);
    std::vector<Judgment> mine;
    for (const auto& j : judgments_)
        if (j.rater_id == rater_id)
            mine.push_back(j);
    auto stats = rater_report(mine, tasks_);
    if (stats.empty())
        return RaterStats{rater_id, 0, 0, 0, std::nullopt, 0.0};
    return stats.front();
}

json AnnotationStore::task_view(const std::string& task_id) const {
    std::shared_lock lock(mutex_);
    const std::size_t i = task_index(task_id);
    json j = public_task(i);
    j["judgments"] = judged_by_[i].size();
    j["complete"] = judged_by_[i].size() >= kVotesPerTask;
    return j;
}

std::vector<Judgment> AnnotationStore::judgments() const {
    std::shared_lock lock(mutex_);
    return judgments_;
}

std::size_t AnnotationStore::judgment_count() const {
    std::shared_lock lock(mutex_);
    return judgments_.size();
}

void AnnotationStore::snapshot() {
    std::unique_lock lock(mutex_);
    write_snapshot_locked();
}

void AnnotationStore::write_snapshot_locked() {
    json assigned = json::object(), open = json::object(), js = json::array();
    for (const auto& [rater, idx] : assigned_) {
        json ids = json::array();
        for (auto i : idx)
            ids.push_back(tasks_[i].task_id);
        assigned[rater] = std::move(ids);
    }
    for (const auto& [rater, idx] : open_) {
        json ids = json::array();
        for (auto i : idx)
            ids.push_back(tasks_[i].task_id);
        open[rater] = std::move(ids);
    }
    for (const auto& j : judgments_)
        js.push_back(to_json(j));
    const json snap = {{"seq", seq_}, {"at", utc_now()}, {"assigned", assigned}, {"open", open}, {"judgments", js}};
    write_file_atomic(dir_ / "snapshot.json", snap.dump());
    since_snapshot_ = 0;
}

} // namespace curator::annotate
