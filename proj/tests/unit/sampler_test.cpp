#include "curator/error.hpp"
#include "curator/random.hpp"
#include "curator/sampler.hpp"

#include "oracles.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cmath>

using namespace curator;
using namespace curator::sampler;

namespace {

struct Instance {
    std::vector<std::string> ids;
    std::vector<CategoryId> classes;
    std::vector<std::vector<double>> rows;

    ScoreMatrix matrix() const {
        std::vector<double> flat;
        for (const auto& r : rows)
            flat.insert(flat.end(), r.begin(), r.end());
        return {ids, classes, flat};
    }
};

Instance random_instance(Rng& rng, std::size_t n, std::size_t k, bool coarse = false) {
    Instance in;
    for (std::size_t c = 0; c < k; ++c)
        in.classes.push_back("k" + std::to_string(100 + c));
    for (std::size_t i = 0; i < n; ++i) {
        in.ids.push_back("img" + std::to_string(i));
        std::vector<double> r(k);
        for (auto& v : r)
            v = coarse ? static_cast<double>(uniform_below(rng, 5)) / 4.0 : uniform_unit(rng);
        in.rows.push_back(std::move(r));
    }
    return in;
}

std::map<CategoryId, double> random_weights(Rng& rng, const std::vector<CategoryId>& classes) {
    std::map<CategoryId, double> w;
    double sum = 0;
    for (const auto& c : classes)
        sum += (w[c] = uniform_unit(rng) + 0.01);
    for (auto& [c, v] : w)
        v /= sum;
    return w;
}

std::map<CategoryId, std::vector<std::string>> as_map(const SelectionResult& r) {
    std::map<CategoryId, std::vector<std::string>> m;
    for (const auto& s : r.per_class)
        if (!s.images.empty() || s.quota > 0)
            m[s.class_id] = s.images;
    return m;
}

} // namespace

TEST(Budget, TenTimesSeed) {
    EXPECT_EQ(SamplingBudget::from_seed(100).b, 1000u);
    EXPECT_EQ(SamplingBudget::from_seed(7, 2.5).b, 18u);
}

TEST(ClassPrior, MustSumToOne) {
    EXPECT_THROW(ClassPrior({{"a", 0.5}, {"b", 0.4}}), ValidationError);
    EXPECT_THROW(ClassPrior({{"a", 1.5}, {"b", -0.5}}), ValidationError);
    EXPECT_NO_THROW(ClassPrior({{"a", 0.5}, {"b", 0.5}}));
    const auto p = ClassPrior::proportional({{"a", 1}, {"b", 3}});
    EXPECT_DOUBLE_EQ(p.weights().at("b"), 0.75);
}

TEST(Quotas, SumToBudgetAndMatchOracle) {
    Rng rng(31);
    for (int t = 0; t < 200; ++t) {
        std::vector<CategoryId> classes;
        for (std::size_t c = 0; c < 1 + uniform_below(rng, 60); ++c)
            classes.push_back("c" + std::to_string(c));
        const auto w = random_weights(rng, classes);
        const std::size_t b = uniform_below(rng, 2000);
        const auto q = class_quotas(ClassPrior(w), b);
        std::size_t sum = 0;
        for (const auto& [c, n] : q)
            sum += n;
        EXPECT_EQ(sum, b);
        EXPECT_EQ(q, oracle::quotas(w, b));
    }
}

TEST(Quotas, UniformSplitWithRemainder) {
    const auto q = class_quotas(ClassPrior::uniform({"a", "b", "c"}), 10);
    EXPECT_EQ(q.at("a"), 4u);
    EXPECT_EQ(q.at("b"), 3u);
    EXPECT_EQ(q.at("c"), 3u);
}

TEST(SelectConfident, MatchesOracleOnRandomMatrices) {
    Rng rng(32);
    for (int t = 0; t < 15; ++t) {
        const auto in = random_instance(rng, 300, 12, t % 2 == 0);
        const auto w = random_weights(rng, in.classes);
        std::set<std::string> excluded;
        for (int e = 0; e < 20; ++e)
            excluded.insert(in.ids[uniform_below(rng, in.ids.size())]);
        const std::size_t b = 1 + uniform_below(rng, 320);
        const auto res = select_confident(in.matrix(), ClassPrior(w), {b, 10}, excluded);
        const auto want = oracle::top_k_selection(in.ids, in.classes, in.rows, oracle::quotas(w, b), excluded);
        auto got = as_map(res);
        for (auto& [c, v] : want)
            EXPECT_EQ(got[c], v) << "class " << c;
        EXPECT_LE(res.total(), b);
        for (const auto& id : res.selected_ids())
            EXPECT_FALSE(excluded.count(id));
    }
}

TEST(SelectConfident, ShortfallIsReportedNotFatal) {
    Instance in;
    in.classes = {"a", "b"};
    in.ids = {"x", "y", "z"};
    in.rows = {{0.9, 0.1}, {0.8, 0.2}, {0.7, 0.3}};
    const auto res = select_confident(in.matrix(), ClassPrior::uniform(in.classes), {10, 10}, {});
    EXPECT_EQ(res.total(), 3u);
    std::size_t shortfall = 0;
    for (const auto& s : res.per_class)
        shortfall += s.shortfall;
    EXPECT_EQ(shortfall, 7u);
}

TEST(SelectConfident, InvariantUnderMonotoneTransform) {
    Rng rng(33);
    const auto in = random_instance(rng, 400, 8);
    auto warped = in;
    for (auto& r : warped.rows)
        for (auto& v : r)
            v = std::exp(3 * v) - 7;
    const auto prior = ClassPrior::uniform(in.classes);
    EXPECT_EQ(as_map(select_confident(in.matrix(), prior, {120, 10}, {})),
              as_map(select_confident(warped.matrix(), prior, {120, 10}, {})));
}

TEST(SelectConfident, UnknownPriorClassThrows) {
    Rng rng(34);
    const auto in = random_instance(rng, 5, 2);
    EXPECT_THROW(select_confident(in.matrix(), ClassPrior({{"nope", 1.0}}), {3, 10}, {}), ValidationError);
}

TEST(SelectUncertain, PicksSmallestMargins) {
    Instance in;
    in.classes = {"a", "b"};
    in.ids = {"p", "q", "r"};
    in.rows = {{0.9, 0.1}, {0.51, 0.49}, {0.3, 0.4}};
    const auto res = select_uncertain(in.matrix(), 2, {});
    EXPECT_EQ(res.selected_ids(), (std::set<std::string>{"q", "r"}));
    EXPECT_EQ(res.find("b")->images, std::vector<std::string>{"r"});
}

TEST(SelectRounds, SecondRoundExcludesFirst) {
    Rng rng(35);
    const auto in = random_instance(rng, 200, 5);
    const auto rounds = select_rounds(in.matrix(), ClassPrior::uniform(in.classes), {50, 10}, {}, 2);
    ASSERT_EQ(rounds.size(), 2u);
    for (const auto& id : rounds[1].selected_ids())
        EXPECT_FALSE(rounds[0].selected_ids().count(id));
    EXPECT_EQ(rounds[1].round, 1u);
    EXPECT_THROW(select_rounds(in.matrix(), ClassPrior::uniform(in.classes), {50, 10}, {}, 3), ValidationError);
}

TEST(YieldCurve, PrecisionPerClass) {
    SelectionResult s;
    s.per_class = {{"a", 2, {"x", "y"}, 0}, {"b", 1, {}, 1}};
    const std::map<std::string, std::optional<CategoryId>> truth{{"x", "a"}, {"y", std::nullopt}};
    const auto rows = yield_curve(s, truth);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_DOUBLE_EQ(*rows[0].precision, 0.5);
    EXPECT_FALSE(rows[1].precision);
    EXPECT_THROW(yield_curve(s, {{"x", "a"}}), ValidationError);
}

TEST(ScoreFiles, BinaryAndCsvRoundTrip) {
    Rng rng(36);
    const auto in = random_instance(rng, 20, 3, true);
    test_util::TempDir dir;
    save_scores(dir / "s.bin", in.matrix());
    save_scores(dir / "s.csv", in.matrix());
    for (const char* name : {"s.bin", "s.csv"}) {
        const auto back = load_scores(dir / name);
        EXPECT_EQ(back.image_ids(), in.ids);
        EXPECT_EQ(back.class_ids(), in.classes);
        EXPECT_EQ(back.score(7, 2), in.rows[7][2]);
    }
}

TEST(ScoreMatrix, RejectsNonFiniteAndDuplicates) {
    EXPECT_THROW(ScoreMatrix({"a"}, {"c"}, {std::nan("")}), ValidationError);
    EXPECT_THROW(ScoreMatrix({"a", "a"}, {"c"}, {0.1, 0.2}), ValidationError);
    EXPECT_THROW(ScoreMatrix({"a"}, {"c", "d"}, {0.1}), ValidationError);
}

TEST(Selection, JsonRoundTrip) {
    SelectionResult s;
    s.round = 1;
    s.per_class = {{"a", 2, {"x"}, 1}};
    const auto back = selection_from_json(to_json(s));
    EXPECT_EQ(back.round, 1u);
    EXPECT_EQ(back.per_class[0].images, s.per_class[0].images);
    EXPECT_EQ(back.per_class[0].shortfall, 1u);
}
