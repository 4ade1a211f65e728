#pragma once

#include "curator/catalog.hpp"
#include "curator/sampler.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace curator::annotate {

inline constexpr std::size_t kVotesPerTask = 3;

struct NegativeExample {
    CategoryId class_id;
    std::string image_id;

    friend bool operator==(const NegativeExample&, const NegativeExample&) = default;
};

struct AnnotationTask {
    std::string task_id;
    CategoryId class_id;
    std::string image_id;
    bool is_golden = false;
    std::optional<bool> golden_answer;
    std::vector<std::string> positives;
    std::vector<NegativeExample> negatives;

    friend bool operator==(const AnnotationTask&, const AnnotationTask&) = default;
};

struct Judgment {
    std::string task_id;
    std::string rater_id;
    bool answer = false;
    double elapsed_seconds = 0.0;

    friend bool operator==(const Judgment&, const Judgment&) = default;
};

struct VoteOutcome {
    std::string task_id;
    bool accepted = false;
    std::size_t votes_for = 0;
    std::size_t votes_against = 0;

    friend bool operator==(const VoteOutcome&, const VoteOutcome&) = default;
};

struct RaterStats {
    std::string rater_id;
    std::size_t judgments = 0;
    std::size_t golden_seen = 0;
    std::size_t golden_correct = 0;
    std::optional<double> error_rate; // empty when golden_seen == 0
    double mean_seconds_per_image = 0.0;
};

// Known-answer images per class: (image_id, is this class?).
using GoldenBank = std::map<CategoryId, std::vector<std::pair<std::string, bool>>>;
// Seed images per class, used as instructional positives (and as the
// negatives shown for confusable classes).
using ExemplarBank = std::map<CategoryId, std::vector<std::string>>;
// The one or two classes each class is most confused with.
using ConfusionMap = std::map<CategoryId, std::vector<CategoryId>>;

struct BatchOptions {
    double golden_rate = 0.1;
    std::size_t positives_per_task = 4;
    std::size_t negatives_per_class = 2;
    std::uint64_t seed = 0;
    // Prefix for generated task ids ("<prefix><n>").
    std::string task_prefix = "t";
};

// One contiguous batch per class (classes in selection order), each holding
// the class's selected images plus ceil(golden_rate * n) golden tasks at
// seeded-random positions. Throws ValidationError when a class has no
// goldens (and golden_rate > 0), no exemplars, or no confusion entry.
std::vector<AnnotationTask> make_batches(const std::vector<sampler::SelectionResult>& selections,
                                         const GoldenBank& goldens, const ExemplarBank& exemplars,
                                         const ConfusionMap& confusion, const BatchOptions& opts);

struct AggregateResult {
    std::vector<VoteOutcome> outcomes;     // tasks with exactly kVotesPerTask judgments, sorted by task id
    std::vector<std::string> pending;      // tasks with fewer, sorted
};

// Majority of three: accepted iff at least two yes votes. Throws
// ValidationError on more than three judgments for a task or a repeated
// (task, rater) pair.
AggregateResult aggregate_votes(const std::vector<Judgment>& judgments);

struct DatasetPartition {
    std::vector<std::string> accepted; // task ids
    std::vector<std::string> rejected;
    std::vector<std::string> pending;
};

// Splits the non-golden tasks by their outcome. Golden tasks never appear.
DatasetPartition partition_tasks(const std::vector<AnnotationTask>& tasks, const AggregateResult& votes);

// Accepted (image_id, class_id) pairs of non-golden tasks, sorted.
std::vector<std::pair<std::string, CategoryId>> accepted_images(const std::vector<AnnotationTask>& tasks,
                                                                const AggregateResult& votes);

// Per-rater golden error rate and speed, sorted by rater id. Throws
// ValidationError for judgments referencing unknown tasks.
std::vector<RaterStats> rater_report(const std::vector<Judgment>& judgments,
                                     const std::vector<AnnotationTask>& tasks);

struct CohortSummary {
    std::size_t golden_seen = 0;
    std::size_t golden_correct = 0;
    std::size_t judgments = 0;
    double total_seconds = 0.0;

    std::optional<double> error_rate() const;
    std::optional<double> seconds_per_image() const;
};

CohortSummary summarize_cohort(const std::vector<RaterStats>& stats, const std::set<std::string>& raters);

// (baseline - improved) / baseline.
double relative_error_reduction(double baseline_error, double improved_error);
// baseline / improved.
double speedup(double baseline_seconds, double improved_seconds);

struct CohortComparison {
    double baseline_error = 0, improved_error = 0, relative_error_reduction = 0;
    double baseline_seconds = 0, improved_seconds = 0, speedup = 0;
};

CohortComparison compare_cohorts(const CohortSummary& baseline, const CohortSummary& improved);

struct SimulationOptions {
    std::size_t raters = 5;
    double error_rate = 0.1;
    double mean_seconds = 2.0;
    std::uint64_t seed = 0;
};

// Three distinct simulated raters per task answering truth (or the golden
// answer) with independent flips at error_rate. For demos and pipeline tests.
std::vector<Judgment> simulate_judgments(const std::vector<AnnotationTask>& tasks,
                                         const std::map<std::string, std::optional<CategoryId>>& truth,
                                         const SimulationOptions& opts);

nlohmann::json to_json(const AnnotationTask& t);
AnnotationTask task_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Judgment& j);
Judgment judgment_from_json(const nlohmann::json& j);
nlohmann::json to_json(const VoteOutcome& v);
nlohmann::json to_json(const RaterStats& s);
nlohmann::json to_json(const AggregateResult& r);
AggregateResult aggregate_from_json(const nlohmann::json& j);

} // namespace curator::annotate
