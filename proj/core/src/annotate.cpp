#include "curator/annotate.hpp"

#include "curator/error.hpp"
#include "curator/random.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_map>

namespace curator::annotate {

using nlohmann::json;

namespace {

std::string task_id(const std::string& prefix, std::size_t n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06zu", n);
    return prefix + buf;
}

std::size_t golden_count(double rate, std::size_t n) {
    if (rate <= 0 || n == 0)
        return 0;
    // Guard against 0.1 * 90 = 9.000000000000002 rounding up to 10.
    return static_cast<std::size_t>(std::ceil(rate * static_cast<double>(n) - 1e-9));
}

} // namespace

std::vector<AnnotationTask> make_batches(const std::vector<sampler::SelectionResult>& selections,
                                         const GoldenBank& goldens, const ExemplarBank& exemplars,
                                         const ConfusionMap& confusion, const BatchOptions& opts) {
    if (!(opts.golden_rate >= 0 && opts.golden_rate <= 1))
        throw ValidationError("golden_rate must lie in [0, 1]");

    Rng rng(opts.seed);
    std::vector<AnnotationTask> tasks;
    std::size_t next_id = 0;

    for (const auto& sel : selections) {
        for (const auto& cls : sel.per_class) {
            const std::size_t n = cls.images.size();
            if (n == 0)
                continue;
            const std::size_t g = golden_count(opts.golden_rate, n);

            std::vector<std::pair<std::string, bool>> chosen;
            if (g > 0) {
                const auto it = goldens.find(cls.class_id);
                if (it == goldens.end() || it->second.empty())
                    throw ValidationError("no golden questions for class '" + cls.class_id + "'");
                auto pool = it->second;
                deterministic_shuffle(pool, rng);
                for (std::size_t k = 0; k < g; ++k)
                    chosen.push_back(pool[k % pool.size()]);
            }

            const auto ex = exemplars.find(cls.class_id);
            if (ex == exemplars.end() || ex->second.empty())
                throw ValidationError("no instructional positives for class '" + cls.class_id + "'");
            std::vector<std::string> positives;
            for (const auto& id : ex->second) {
                if (positives.size() == opts.positives_per_task)
                    break;
                const bool is_golden =
                    std::any_of(chosen.begin(), chosen.end(), [&](const auto& gq) { return gq.first == id; });
                const bool is_real = std::find(cls.images.begin(), cls.images.end(), id) != cls.images.end();
                if (!is_golden && !is_real)
                    positives.push_back(id);
            }
            if (positives.empty())
                throw ValidationError("every exemplar of class '" + cls.class_id + "' is also under annotation");

            const auto conf = confusion.find(cls.class_id);
            if (conf == confusion.end() || conf->second.empty())
                throw ValidationError("no confused classes recorded for '" + cls.class_id + "'");
            std::vector<NegativeExample> negatives;
            std::size_t used_classes = 0;
            for (const auto& other : conf->second) {
                if (used_classes == 2)
                    break;
                if (other == cls.class_id)
                    continue;
                const auto oex = exemplars.find(other);
                if (oex == exemplars.end() || oex->second.empty())
                    continue;
                for (std::size_t k = 0; k < std::min(opts.negatives_per_class, oex->second.size()); ++k)
                    negatives.push_back({other, oex->second[k]});
                ++used_classes;
            }
            if (negatives.empty())
                throw ValidationError("no instructional negatives available for class '" + cls.class_id + "'");

            // Golden slots among the n + g positions of this batch.
            auto slots = sample_without_replacement(n + g, g, rng);
            std::sort(slots.begin(), slots.end());
            std::size_t real = 0, gold = 0;
            for (std::size_t pos = 0; pos < n + g; ++pos) {
                AnnotationTask t;
                t.task_id = task_id(opts.task_prefix, next_id++);
                t.class_id = cls.class_id;
                t.positives = positives;
                t.negatives = negatives;
                if (gold < g && slots[gold] == pos) {
                    t.image_id = chosen[gold].first;
                    t.is_golden = true;
                    t.golden_answer = chosen[gold].second;
                    ++gold;
                } else {
                    t.image_id = cls.images[real++];
                }
                tasks.push_back(std::move(t));
            }
        }
    }
    return tasks;
}

AggregateResult aggregate_votes(const std::vector<Judgment>& judgments) {
    std::map<std::string, std::vector<const Judgment*>> by_task;
    for (const auto& j : judgments)
        by_task[j.task_id].push_back(&j);

    AggregateResult out;
    for (const auto& [task, js] : by_task) {
        for (std::size_t a = 0; a < js.size(); ++a)
            for (std::size_t b = a + 1; b < js.size(); ++b)
                if (js[a]->rater_id == js[b]->rater_id)
                    throw ValidationError("rater '" + js[a]->rater_id + "' judged task '" + task + "' twice");
        if (js.size() > kVotesPerTask)
            throw ValidationError("task '" + task + "' has " + std::to_string(js.size()) + " judgments, expected " +
                                  std::to_string(kVotesPerTask));
        if (js.size() < kVotesPerTask) {
            out.pending.push_back(task);
            continue;
        }
        VoteOutcome v{task, false, 0, 0};
        for (const auto* j : js)
            ++(j->answer ? v.votes_for : v.votes_against);
        v.accepted = v.votes_for >= 2;
        out.outcomes.push_back(v);
    }
    return out;
}

DatasetPartition partition_tasks(const std::vector<AnnotationTask>& tasks, const AggregateResult& votes) {
    std::unordered_map<std::string, const VoteOutcome*> outcome;
    for (const auto& v : votes.outcomes)
        outcome.emplace(v.task_id, &v);
    DatasetPartition p;
    for (const auto& t : tasks) {
        if (t.is_golden)
            continue;
        const auto it = outcome.find(t.task_id);
        if (it == outcome.end())
            p.pending.push_back(t.task_id);
        else
            (it->second->accepted ? p.accepted : p.rejected).push_back(t.task_id);
    }
    return p;
}

std::vector<std::pair<std::string, CategoryId>> accepted_images(const std::vector<AnnotationTask>& tasks,
                                                                const AggregateResult& votes) {
    std::unordered_map<std::string, bool> accepted;
    for (const auto& v : votes.outcomes)
        accepted.emplace(v.task_id, v.accepted);
    std::vector<std::pair<std::string, CategoryId>> out;
    for (const auto& t : tasks) {
        if (t.is_golden)
            continue;
        const auto it = accepted.find(t.task_id);
        if (it != accepted.end() && it->second)
            out.emplace_back(t.image_id, t.class_id);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::vector<RaterStats> rater_report(const std::vector<Judgment>& judgments, const std::vector<AnnotationTask>& tasks) {
    std::unordered_map<std::string, const AnnotationTask*> by_id;
    for (const auto& t : tasks)
        by_id.emplace(t.task_id, &t);

    std::map<std::string, RaterStats> stats;
    std::map<std::string, double> seconds;
    for (const auto& j : judgments) {
        const auto it = by_id.find(j.task_id);
        if (it == by_id.end())
            throw ValidationError("judgment references unknown task '" + j.task_id + "'");
        auto& s = stats[j.rater_id];
        s.rater_id = j.rater_id;
        ++s.judgments;
        seconds[j.rater_id] += j.elapsed_seconds;
        const AnnotationTask& t = *it->second;
        if (t.is_golden && t.golden_answer) {
            ++s.golden_seen;
            if (j.answer == *t.golden_answer)
                ++s.golden_correct;
        }
    }
    std::vector<RaterStats> out;
    for (auto& [id, s] : stats) {
        if (s.golden_seen > 0)
            s.error_rate = 1.0 - static_cast<double>(s.golden_correct) / static_cast<double>(s.golden_seen);
        s.mean_seconds_per_image = seconds[id] / static_cast<double>(s.judgments);
        out.push_back(s);
    }
    return out;
}

std::optional<double> CohortSummary::error_rate() const {
    if (golden_seen == 0)
        return std::nullopt;
    return 1.0 - static_cast<double>(golden_correct) / static_cast<double>(golden_seen);
}

std::optional<double> CohortSummary::seconds_per_image() const {
    if (judgments == 0)
        return std::nullopt;
    return total_seconds / static_cast<double>(judgments);
}

CohortSummary summarize_cohort(const std::vector<RaterStats>& stats, const std::set<std::string>& raters) {
    CohortSummary c;
    for (const auto& s : stats) {
        if (!raters.count(s.rater_id))
            continue;
        c.golden_seen += s.golden_seen;
        c.golden_correct += s.golden_correct;
        c.judgments += s.judgments;
        c.total_seconds += s.mean_seconds_per_image * static_cast<double>(s.judgments);
    }
    return c;
}

double relative_error_reduction(double baseline_error, double improved_error) {
    if (!(baseline_error > 0))
        throw ValidationError("relative error reduction needs a positive baseline error");
    return (baseline_error - improved_error) / baseline_error;
}

double speedup(double baseline_seconds, double improved_seconds) {
    if (!(improved_seconds > 0))
        throw ValidationError("speedup needs a positive improved time");
    return baseline_seconds / improved_seconds;
}

CohortComparison compare_cohorts(const CohortSummary& baseline, const CohortSummary& improved) {
    const auto be = baseline.error_rate(), ie = improved.error_rate();
    const auto bs = baseline.seconds_per_image(), is = improved.seconds_per_image();
    if (!be || !ie)
        throw ValidationError("cohort comparison needs golden answers in both cohorts");
    if (!bs || !is)
        throw ValidationError("cohort comparison needs judgments in both cohorts");
    CohortComparison c;
    c.baseline_error = *be;
    c.improved_error = *ie;
    c.relative_error_reduction = relative_error_reduction(*be, *ie);
    c.baseline_seconds = *bs;
    c.improved_seconds = *is;
    c.speedup = speedup(*bs, *is);
    return c;
}

std::vector<Judgment> simulate_judgments(const std::vector<AnnotationTask>& tasks,
                                         const std::map<std::string, std::optional<CategoryId>>& truth,
                                         const SimulationOptions& opts) {
    if (opts.raters < kVotesPerTask)
        throw ValidationError("simulation needs at least " + std::to_string(kVotesPerTask) + " raters");
    Rng rng(opts.seed);
    std::vector<Judgment> out;
    for (const auto& t : tasks) {
        bool correct_answer = false;
        if (t.is_golden) {
            correct_answer = t.golden_answer.value_or(false);
        } else {
            const auto it = truth.find(t.image_id);
            correct_answer = it != truth.end() && it->second && *it->second == t.class_id;
        }
        for (auto r : sample_without_replacement(opts.raters, kVotesPerTask, rng)) {
            char rater[32];
            std::snprintf(rater, sizeof rater, "sim-%02zu", r);
            const bool flip = uniform_unit(rng) < opts.error_rate;
            const double secs = opts.mean_seconds * (0.5 + uniform_unit(rng));
            out.push_back({t.task_id, rater, correct_answer != flip, secs});
        }
    }
    return out;
}

json to_json(const AnnotationTask& t) {
    json negs = json::array();
    for (const auto& n : t.negatives)
        negs.push_back({{"class_id", n.class_id}, {"image_id", n.image_id}});
    json j = {{"task_id", t.task_id},
              {"class_id", t.class_id},
              {"image_id", t.image_id},
              {"is_golden", t.is_golden},
              {"positives", t.positives},
              {"negatives", std::move(negs)}};
    if (t.golden_answer)
        j["golden_answer"] = *t.golden_answer;
    return j;
}

AnnotationTask task_from_json(const json& j) {
    AnnotationTask t;
    t.task_id = j.at("task_id").get<std::string>();
    t.class_id = j.at("class_id").get<std::string>();
    t.image_id = j.at("image_id").get<std::string>();
    t.is_golden = j.value("is_golden", false);
    if (j.contains("golden_answer") && !j.at("golden_answer").is_null())
        t.golden_answer = j.at("golden_answer").get<bool>();
    if (t.is_golden && !t.golden_answer)
        throw ValidationError("golden task '" + t.task_id + "' has no golden_answer");
    t.positives = j.value("positives", std::vector<std::string>{});
    for (const auto& n : j.value("negatives", json::array()))
        t.negatives.push_back({n.at("class_id").get<std::string>(), n.at("image_id").get<std::string>()});
    return t;
}

json to_json(const Judgment& j) {
    return {{"task_id", j.task_id}, {"rater_id", j.rater_id}, {"answer", j.answer}, {"elapsed_seconds", j.elapsed_seconds}};
}

Judgment judgment_from_json(const json& j) {
    Judgment out;
    out.task_id = j.at("task_id").get<std::string>();
    out.rater_id = j.at("rater_id").get<std::string>();
    out.answer = j.at("answer").get<bool>();
    out.elapsed_seconds = j.value("elapsed_seconds", 0.0);
    if (out.task_id.empty() || out.rater_id.empty())
        throw ValidationError("judgment needs task_id and rater_id");
    if (!std::isfinite(out.elapsed_seconds) || out.elapsed_seconds < 0)
        throw ValidationError("elapsed_seconds must be finite and non-negative");
    return out;
}

json to_json(const VoteOutcome& v) {
    return {{"task_id", v.task_id}, {"accepted", v.accepted}, {"votes_for", v.votes_for}, {"votes_against", v.votes_against}};
}

json to_json(const RaterStats& s) {
    json j = {{"rater_id", s.rater_id},
              {"judgments", s.judgments},
              {"golden_seen", s.golden_seen},
              {"golden_correct", s.golden_correct},
              {"mean_seconds_per_image", s.mean_seconds_per_image}};
    j["error_rate"] = s.error_rate ? json(*s.error_rate) : json("unavailable");
    return j;
}

json to_json(const AggregateResult& r) {
    json outcomes = json::array();
    for (const auto& v : r.outcomes)
        outcomes.push_back(to_json(v));
    return {{"outcomes", std::move(outcomes)}, {"pending", r.pending}};
}

AggregateResult aggregate_from_json(const json& j) {
    AggregateResult r;
    for (const auto& v : j.at("outcomes"))
        r.outcomes.push_back({v.at("task_id").get<std::string>(), v.at("accepted").get<bool>(),
                              v.at("votes_for").get<std::size_t>(), v.at("votes_against").get<std::size_t>()});
    r.pending = j.at("pending").get<std::vector<std::string>>();
    return r;
}

} // namespace curator::annotate
