#include "curator/annotate.hpp"
#include "curator/error.hpp"
#include "curator/random.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cmath>

using namespace curator;
using namespace curator::annotate;

namespace {

sampler::SelectionResult selection(std::initializer_list<std::pair<const char*, std::size_t>> classes) {
    sampler::SelectionResult s;
    for (const auto& [c, n] : classes) {
        sampler::ClassSelection cs{c, n, {}, 0};
        for (std::size_t i = 0; i < n; ++i)
            cs.images.push_back(std::string(c) + "-img" + std::to_string(i));
        s.per_class.push_back(cs);
    }
    return s;
}

struct Banks {
    GoldenBank goldens;
    ExemplarBank exemplars;
    ConfusionMap confusion;
};

Banks banks(const std::vector<std::string>& classes) {
    Banks b;
    for (std::size_t i = 0; i < classes.size(); ++i) {
        const auto& c = classes[i];
        b.goldens[c] = {{c + "-gold-yes", true}, {c + "-gold-no", false}, {c + "-gold-yes2", true}};
        b.exemplars[c] = {c + "-ex0", c + "-ex1", c + "-ex2", c + "-ex3", c + "-ex4"};
        b.confusion[c] = {classes[(i + 1) % classes.size()], classes[(i + 2) % classes.size()]};
    }
    return b;
}

std::vector<Judgment> votes(const std::string& task, std::initializer_list<bool> answers) {
    std::vector<Judgment> out;
    int r = 0;
    for (bool a : answers)
        out.push_back({task, "r" + std::to_string(r++), a, 1.0});
    return out;
}

} // namespace

TEST(MakeBatches, GoldenShareAndLayout) {
    const auto b = banks({"a", "b", "c"});
    BatchOptions o;
    o.seed = 5;
    const auto tasks = make_batches({selection({{"a", 90}, {"b", 10}, {"c", 1}})}, b.goldens, b.exemplars, b.confusion, o);
    std::map<std::string, std::pair<std::size_t, std::size_t>> per; // real, golden
    for (const auto& t : tasks)
        (t.is_golden ? per[t.class_id].second : per[t.class_id].first)++;
    EXPECT_EQ(per["a"], std::make_pair(std::size_t{90}, std::size_t{9}));
    EXPECT_EQ(per["b"], std::make_pair(std::size_t{10}, std::size_t{1}));
    EXPECT_EQ(per["c"], std::make_pair(std::size_t{1}, std::size_t{1}));
    // One contiguous batch per class.
    std::vector<std::string> order;
    for (const auto& t : tasks)
        if (order.empty() || order.back() != t.class_id)
            order.push_back(t.class_id);
    EXPECT_EQ(order, (std::vector<std::string>{"a", "b", "c"}));
    EXPECT_EQ(tasks.front().task_id, "t000000");
}

TEST(MakeBatches, InstructionalExamples) {
    const auto b = banks({"a", "b", "c"});
    const auto tasks = make_batches({selection({{"a", 3}})}, b.goldens, b.exemplars, b.confusion, {});
    for (const auto& t : tasks) {
        EXPECT_EQ(t.positives.size(), 4u);
        ASSERT_EQ(t.negatives.size(), 4u);
        EXPECT_EQ(t.negatives[0].class_id, "b");
        EXPECT_EQ(t.negatives[2].class_id, "c");
        if (t.is_golden) {
            EXPECT_TRUE(t.golden_answer.has_value());
        }
    }
}

TEST(MakeBatches, DeterministicPerSeed) {
    const auto b = banks({"a", "b"});
    BatchOptions o;
    o.seed = 11;
    const auto s = selection({{"a", 40}, {"b", 25}});
    EXPECT_EQ(make_batches({s}, b.goldens, b.exemplars, b.confusion, o),
              make_batches({s}, b.goldens, b.exemplars, b.confusion, o));
}

TEST(MakeBatches, MissingBanksThrow) {
    auto b = banks({"a", "b"});
    auto no_gold = b.goldens;
    no_gold.erase("a");
    EXPECT_THROW(make_batches({selection({{"a", 5}})}, no_gold, b.exemplars, b.confusion, {}), ValidationError);
    auto no_conf = b.confusion;
    no_conf.erase("a");
    EXPECT_THROW(make_batches({selection({{"a", 5}})}, b.goldens, b.exemplars, no_conf, {}), ValidationError);
    BatchOptions o;
    o.golden_rate = 0;
    const auto tasks = make_batches({selection({{"a", 5}})}, no_gold, b.exemplars, b.confusion, o);
    EXPECT_EQ(tasks.size(), 5u);
}

TEST(AggregateVotes, AllEightPatterns) {
    for (int mask = 0; mask < 8; ++mask) {
        const bool a = mask & 1, b = mask & 2, c = mask & 4;
        const auto res = aggregate_votes(votes("t", {a, b, c}));
        ASSERT_EQ(res.outcomes.size(), 1u);
        const int yes = int(a) + int(b) + int(c);
        EXPECT_EQ(res.outcomes[0].accepted, yes >= 2) << "mask " << mask;
        EXPECT_EQ(res.outcomes[0].votes_for, static_cast<std::size_t>(yes));
    }
}

TEST(AggregateVotes, PendingAndErrors) {
    auto j = votes("t1", {true, true});
    auto more = votes("t2", {false, false, true});
    j.insert(j.end(), more.begin(), more.end());
    const auto res = aggregate_votes(j);
    EXPECT_EQ(res.pending, std::vector<std::string>{"t1"});
    ASSERT_EQ(res.outcomes.size(), 1u);
    EXPECT_FALSE(res.outcomes[0].accepted);

    EXPECT_THROW(aggregate_votes(votes("t", {true, true, true, false})), ValidationError);
    auto dup = votes("t", {true, false});
    dup.push_back({"t", "r0", true, 1.0});
    EXPECT_THROW(aggregate_votes(dup), ValidationError);
}

TEST(Partition, GoldensNeverEnterDatasetAndCountsConserve) {
    Rng rng(41);
    const auto b = banks({"a", "b", "c", "d"});
    for (int trial = 0; trial < 20; ++trial) {
        BatchOptions o;
        o.seed = rng();
        o.golden_rate = 0.05 + 0.3 * uniform_unit(rng);
        const auto tasks = make_batches({selection({{"a", 1 + uniform_below(rng, 40)}, {"b", 1 + uniform_below(rng, 40)},
                                                    {"c", uniform_below(rng, 5)}, {"d", 7}})},
                                        b.goldens, b.exemplars, b.confusion, o);
        std::vector<Judgment> js;
        for (const auto& t : tasks) {
            const auto n = uniform_below(rng, 4);
            for (std::size_t k = 0; k < n; ++k)
                js.push_back({t.task_id, "r" + std::to_string(k), uniform_below(rng, 2) == 1, 1.0});
        }
        const auto agg = aggregate_votes(js);
        const auto part = partition_tasks(tasks, agg);
        std::size_t non_golden = 0;
        std::set<std::string> golden_ids;
        for (const auto& t : tasks) {
            if (t.is_golden)
                golden_ids.insert(t.task_id);
            else
                ++non_golden;
        }
        EXPECT_EQ(part.accepted.size() + part.rejected.size() + part.pending.size(), non_golden);
        for (const auto* v : {&part.accepted, &part.rejected, &part.pending})
            for (const auto& id : *v)
                EXPECT_FALSE(golden_ids.count(id));
        for (const auto& [img, cls] : accepted_images(tasks, agg))
            EXPECT_EQ(img.find("gold"), std::string::npos);
    }
}

TEST(RaterReport, GoldenErrorRateAndSpeed) {
    std::vector<AnnotationTask> tasks = {
        {"g1", "a", "gi1", true, true, {}, {}},
        {"g2", "a", "gi2", true, false, {}, {}},
        {"r1", "a", "ri1", false, std::nullopt, {}, {}},
    };
    std::vector<Judgment> js = {{"g1", "alice", true, 2.0}, {"g2", "alice", true, 4.0}, {"r1", "alice", true, 3.0},
                                {"r1", "bob", false, 1.0}};
    const auto rep = rater_report(js, tasks);
    ASSERT_EQ(rep.size(), 2u);
    EXPECT_EQ(rep[0].rater_id, "alice");
    EXPECT_EQ(rep[0].golden_seen, 2u);
    EXPECT_DOUBLE_EQ(*rep[0].error_rate, 0.5);
    EXPECT_DOUBLE_EQ(rep[0].mean_seconds_per_image, 3.0);
    EXPECT_FALSE(rep[1].error_rate);
    EXPECT_THROW(rater_report({{"zz", "x", true, 1}}, tasks), ValidationError);
}

TEST(Cohorts, ErrorReductionAndSpeedup) {
    EXPECT_NEAR(100 * relative_error_reduction(0.285, 0.238), 16.5, 0.1);
    EXPECT_NEAR(speedup(4.1, 1.68), 2.4, 0.05);
    EXPECT_THROW(relative_error_reduction(0.0, 0.1), ValidationError);
    EXPECT_THROW(speedup(1.0, 0.0), ValidationError);

    CohortSummary base{1000, 715, 1000, 4100};
    CohortSummary improved{1000, 762, 1000, 1680};
    const auto cmp = compare_cohorts(base, improved);
    EXPECT_NEAR(cmp.baseline_error, 0.285, 1e-12);
    EXPECT_NEAR(cmp.relative_error_reduction, 0.1649, 1e-3);
    EXPECT_NEAR(cmp.speedup, 2.44, 0.01);
}

TEST(Simulation, ThreeDistinctRatersPerTask) {
    const auto b = banks({"a", "b"});
    const auto tasks = make_batches({selection({{"a", 20}})}, b.goldens, b.exemplars, b.confusion, {});
    std::map<std::string, std::optional<CategoryId>> truth;
    for (int i = 0; i < 20; ++i)
        truth["a-img" + std::to_string(i)] = i % 2 ? std::optional<CategoryId>("a") : std::nullopt;
    SimulationOptions o;
    o.error_rate = 0;
    const auto js = simulate_judgments(tasks, truth, o);
    EXPECT_EQ(js.size(), 3 * tasks.size());
    const auto agg = aggregate_votes(js);
    EXPECT_TRUE(agg.pending.empty());
    EXPECT_EQ(accepted_images(tasks, agg).size(), 10u);
    for (const auto& t : tasks)
        if (t.is_golden)
            for (const auto& v : agg.outcomes)
                if (v.task_id == t.task_id) {
                    EXPECT_EQ(v.accepted, *t.golden_answer);
                }
    EXPECT_EQ(js, simulate_judgments(tasks, truth, o));
}

TEST(Serialization, TaskAndJudgmentRoundTrip) {
    AnnotationTask t{"t1", "a", "img", true, false, {"p1"}, {{"b", "n1"}}};
    EXPECT_EQ(task_from_json(to_json(t)), t);
    Judgment j{"t1", "r", true, 1.5};
    EXPECT_EQ(judgment_from_json(to_json(j)), j);
    AggregateResult r{{{"t1", true, 2, 1}}, {"t2"}};
    const auto back = aggregate_from_json(to_json(r));
    EXPECT_EQ(back.outcomes, r.outcomes);
    EXPECT_EQ(back.pending, r.pending);
}
