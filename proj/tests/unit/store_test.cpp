#include "curator/annotation_store.hpp"
#include "curator/error.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <fstream>
#include <thread>

using namespace curator;
using namespace curator::annotate;
using nlohmann::json;

namespace {

std::vector<AnnotationTask> two_classes() {
    std::vector<AnnotationTask> tasks;
    int n = 0;
    for (const char* cls : {"a", "b"}) {
        for (int i = 0; i < 3; ++i) {
            AnnotationTask t;
            t.task_id = "t" + std::to_string(n++);
            t.class_id = cls;
            t.image_id = std::string(cls) + std::to_string(i);
            t.positives = {"pos"};
            t.negatives = {{"z", "neg"}};
            if (i == 1) {
                t.is_golden = true;
                t.golden_answer = false;
            }
            tasks.push_back(t);
        }
    }
    return tasks;
}

std::vector<std::string> task_ids(const json& batch) {
    std::vector<std::string> ids;
    for (const auto& t : batch.at("tasks"))
        ids.push_back(t.at("task_id").get<std::string>());
    return ids;
}

} // namespace

TEST(AnnotationStore, BatchesNeverRevealGoldens) {
    test_util::TempDir dir;
    AnnotationStore::initialize(dir.path(), two_classes());
    AnnotationStore s(dir.path());
    const auto b = s.next_batch("r1");
    EXPECT_EQ(b.at("class_id"), "a");
    EXPECT_EQ(task_ids(b), (std::vector<std::string>{"t0", "t1", "t2"}));
    EXPECT_EQ(b.dump().find("golden"), std::string::npos);
    // Re-fetching returns the open assignment.
    EXPECT_EQ(s.next_batch("r1"), b);
}

TEST(AnnotationStore, GoldenFeedbackOnlyWhenWrong) {
    test_util::TempDir dir;
    AnnotationStore::initialize(dir.path(), two_classes());
    AnnotationStore s(dir.path());
    const auto wrong = s.submit({"t1", "r1", true, 1.0});
    EXPECT_TRUE(wrong.feedback);
    EXPECT_EQ(wrong.correct_answer, false);
    const auto right = s.submit({"t1", "r2", false, 1.0});
    EXPECT_FALSE(right.feedback);
    EXPECT_FALSE(right.correct_answer);
    const auto real = s.submit({"t0", "r1", false, 1.0});
    EXPECT_FALSE(real.feedback);
    const auto sum = s.summary("r1");
    EXPECT_EQ(sum.golden_seen, 1u);
    EXPECT_DOUBLE_EQ(*sum.error_rate, 1.0);
}

TEST(AnnotationStore, ConflictsAndUnknowns) {
    test_util::TempDir dir;
    AnnotationStore::initialize(dir.path(), two_classes());
    StoreOptions o;
    o.raters = {"r1", "r2", "r3", "r4"};
    AnnotationStore s(dir.path(), o);
    s.submit({"t0", "r1", true, 1});
    EXPECT_THROW(s.submit({"t0", "r1", false, 1}), ConflictError);
    s.submit({"t0", "r2", true, 1});
    s.submit({"t0", "r3", true, 1});
    EXPECT_THROW(s.submit({"t0", "r4", true, 1}), ConflictError);
    EXPECT_THROW(s.submit({"nope", "r1", true, 1}), NotFoundError);
    EXPECT_THROW(s.submit({"t2", "mallory", true, 1}), NotFoundError);
    EXPECT_THROW(s.next_batch("mallory"), NotFoundError);
    EXPECT_EQ(s.task_view("t0").at("complete"), true);
}

TEST(AnnotationStore, RatersMoveOnAndRunOut) {
    test_util::TempDir dir;
    AnnotationStore::initialize(dir.path(), two_classes());
    AnnotationStore s(dir.path());
    for (const auto& id : task_ids(s.next_batch("r1")))
        s.submit({id, "r1", true, 1});
    const auto b2 = s.next_batch("r1");
    EXPECT_EQ(b2.at("class_id"), "b");
    for (const auto& id : task_ids(b2))
        s.submit({id, "r1", true, 1});
    EXPECT_TRUE(s.next_batch("r1").is_null());
}

TEST(AnnotationStore, FullyJudgedTasksAreNotServed) {
    test_util::TempDir dir;
    AnnotationStore::initialize(dir.path(), two_classes());
    AnnotationStore s(dir.path());
    for (const char* r : {"x", "y", "z"})
        for (const char* t : {"t0", "t1", "t2"})
            s.submit({t, r, true, 1});
    EXPECT_EQ(s.next_batch("w").at("class_id"), "b");
}

TEST(AnnotationStore, ReplayAfterRestart) {
    test_util::TempDir dir;
    AnnotationStore::initialize(dir.path(), two_classes());
    {
        AnnotationStore s(dir.path());
        s.next_batch("r1");
        s.submit({"t0", "r1", true, 2.5});
        s.submit({"t1", "r2", false, 1.0});
    }
    AnnotationStore s(dir.path());
    EXPECT_EQ(s.judgment_count(), 2u);
    EXPECT_EQ(s.judgments()[0], (Judgment{"t0", "r1", true, 2.5}));
    EXPECT_THROW(s.submit({"t0", "r1", true, 1}), ConflictError);
    // The open batch resumes without the task r1 already judged.
    EXPECT_EQ(task_ids(s.next_batch("r1")), (std::vector<std::string>{"t1", "t2"}));
}

TEST(AnnotationStore, SnapshotPlusLogReplay) {
    test_util::TempDir dir;
    AnnotationStore::initialize(dir.path(), two_classes());
    StoreOptions o;
    o.snapshot_every = 2;
    {
        AnnotationStore s(dir.path(), o);
        s.submit({"t0", "r1", true, 1});
        s.submit({"t0", "r2", true, 1});
        s.submit({"t2", "r1", false, 1});
    }
    EXPECT_TRUE(std::filesystem::exists(dir / "snapshot.json"));
    AnnotationStore s(dir.path(), o);
    EXPECT_EQ(s.judgment_count(), 3u);
}

TEST(AnnotationStore, TornFinalLineIsIgnored) {
    test_util::TempDir dir;
    AnnotationStore::initialize(dir.path(), two_classes());
    {
        AnnotationStore s(dir.path());
        s.submit({"t0", "r1", true, 1});
    }
    std::ofstream(dir / "events.log", std::ios::app) << R"({"seq":2,"type":"judgment","task_i)";
    AnnotationStore s(dir.path());
    EXPECT_EQ(s.judgment_count(), 1u);
    s.submit({"t0", "r2", true, 1});
    AnnotationStore again(dir.path());
    EXPECT_EQ(again.judgment_count(), 2u);
}

TEST(AnnotationStore, InitializeRefusesExistingStore) {
    test_util::TempDir dir;
    AnnotationStore::initialize(dir.path(), two_classes());
    EXPECT_THROW(AnnotationStore::initialize(dir.path(), two_classes()), Error);
}

TEST(AnnotationStore, ConcurrentSubmissionsAreAllRecorded) {
    test_util::TempDir dir;
    std::vector<AnnotationTask> tasks;
    for (int i = 0; i < 40; ++i)
        tasks.push_back({"t" + std::to_string(i), "a", "i" + std::to_string(i), false, std::nullopt, {"p"}, {{"b", "n"}}});
    AnnotationStore::initialize(dir.path(), tasks);
    AnnotationStore s(dir.path());
    std::vector<std::thread> threads;
    for (int r = 0; r < 3; ++r)
        threads.emplace_back([&, r] {
            for (const auto& t : tasks)
                s.submit({t.task_id, "r" + std::to_string(r), r % 2 == 0, 1});
        });
    for (auto& t : threads)
        t.join();
    EXPECT_EQ(s.judgment_count(), 120u);
    AnnotationStore replayed(dir.path());
    EXPECT_EQ(replayed.judgment_count(), 120u);
}
