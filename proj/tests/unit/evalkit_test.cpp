#include "curator/error.hpp"
#include "curator/evalkit.hpp"
#include "curator/random.hpp"

#include "oracles.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cmath>

using namespace curator;
using namespace curator::evalkit;

namespace {

using Row = std::tuple<std::string, CategoryId, std::map<CategoryId, double>>;

Taxonomy::Node node(std::string id, Rank r, std::optional<std::string> parent) {
    return {id, id, r, {}, std::move(parent)};
}

// root(order) -> families -> genera -> species leaves, random fan-out.
struct RandomTree {
    std::vector<Taxonomy::Node> nodes;
    std::map<std::string, std::string> parent;
    std::vector<std::string> leaves;
};

RandomTree random_tree(Rng& rng, std::size_t leaves) {
    RandomTree t;
    t.nodes.push_back(node("root", Rank::order, std::nullopt));
    const std::size_t families = 1 + uniform_below(rng, 4), genera = families + uniform_below(rng, 6);
    for (std::size_t f = 0; f < families; ++f) {
        t.nodes.push_back(node("f" + std::to_string(f), Rank::family, "root"));
        t.parent["f" + std::to_string(f)] = "root";
    }
    for (std::size_t g = 0; g < genera; ++g) {
        const auto p = "f" + std::to_string(g < families ? g : uniform_below(rng, families));
        t.nodes.push_back(node("g" + std::to_string(g), Rank::genus, p));
        t.parent["g" + std::to_string(g)] = p;
    }
    for (std::size_t s = 0; s < leaves; ++s) {
        const auto p = "g" + std::to_string(s < genera ? s : uniform_below(rng, genera));
        const auto id = "s" + std::to_string(s);
        t.nodes.push_back(node(id, Rank::species, p));
        t.parent[id] = p;
        t.leaves.push_back(id);
    }
    return t;
}

PredictionSet random_predictions(Rng& rng, const std::vector<std::string>& classes, std::size_t n) {
    std::vector<Row> rows;
    for (std::size_t i = 0; i < n; ++i) {
        std::map<CategoryId, double> s;
        for (const auto& c : classes)
            s[c] = static_cast<double>(uniform_below(rng, 8)); // coarse, so ties occur
        rows.emplace_back("i" + std::to_string(i), classes[uniform_below(rng, classes.size())], s);
    }
    return PredictionSet::from_sparse(rows);
}

} // namespace

TEST(Predictions, ArgmaxTiesGoToSmallerClassId) {
    const auto p = PredictionSet::from_sparse({{"x", "b", {{"b", 1.0}, {"a", 1.0}}}});
    EXPECT_EQ(p.predicted(0), "a");
    EXPECT_DOUBLE_EQ(top1_accuracy(p), 0.0);
}

TEST(Predictions, MissingScoresAreNegativeInfinity) {
    const auto p = PredictionSet::from_sparse({{"x", "c", {{"a", -5.0}}}});
    EXPECT_EQ(p.classes(), (std::vector<CategoryId>{"a", "c"}));
    EXPECT_EQ(p.predicted(0), "a");
}

TEST(Predictions, EmptySetThrows) {
    EXPECT_THROW(top1_accuracy(PredictionSet{}), ValidationError);
}

TEST(Predictions, FileRoundTripDenseAndSparse) {
    test_util::TempDir dir;
    test_util::write(dir / "p.jsonl",
                     R"({"image_id":"a","true_class":"x","classes":["x","y"],"scores":[0.2,0.8]})" "\n"
                     R"({"image_id":"b","true_class":"y","scores":{"y":0.9}})" "\n");
    const auto p = load_predictions(dir / "p.jsonl");
    EXPECT_EQ(p.size(), 2u);
    EXPECT_EQ(p.predicted(0), "y");
    save_predictions(dir / "q.jsonl", p);
    const auto q = load_predictions(dir / "q.jsonl");
    EXPECT_EQ(q.rows()[0].scores, p.rows()[0].scores);
    test_util::write(dir / "bad.jsonl", R"({"image_id":"a","true_class":"x","classes":["x"],"scores":[1,2]})" "\n");
    EXPECT_THROW(load_predictions(dir / "bad.jsonl"), ParseError);
}

TEST(MeanAp, SimpleRanking) {
    // Positives for "a" at ranks 1 and 3.
    const auto p = PredictionSet::from_sparse({{"i1", "a", {{"a", 0.9}, {"b", 0.1}}},
                                               {"i2", "b", {{"a", 0.8}, {"b", 0.2}}},
                                               {"i3", "a", {{"a", 0.7}, {"b", 0.3}}}});
    const auto r = mean_ap(p);
    EXPECT_NEAR(r.per_class.at("a"), 0.8333, 1e-4);
}

TEST(MeanAp, ClassWithoutPositivesIsFlagged) {
    const auto p = PredictionSet::from_sparse({{"i1", "a", {{"a", 0.9}, {"b", 0.1}}}});
    const auto r = mean_ap(p);
    EXPECT_EQ(r.flagged, std::vector<CategoryId>{"b"});
    EXPECT_DOUBLE_EQ(r.map_value, 1.0);
}

TEST(Metrics, MatchBruteForceOnRandomInstances) {
    Rng rng(51);
    for (int t = 0; t < 25; ++t) {
        std::vector<std::string> classes;
        for (std::size_t c = 0; c < 2 + uniform_below(rng, 15); ++c)
            classes.push_back("c" + std::to_string(c));
        const auto p = random_predictions(rng, classes, 1 + uniform_below(rng, 300));
        EXPECT_DOUBLE_EQ(top1_accuracy(p), oracle::top1(p));

        const auto ap = mean_ap(p);
        double sum = 0;
        std::size_t n = 0;
        for (std::size_t c = 0; c < p.classes().size(); ++c) {
            const auto want = oracle::average_precision(p, c);
            if (want) {
                EXPECT_NEAR(ap.per_class.at(p.classes()[c]), *want, 1e-12);
                sum += *want;
                ++n;
            }
        }
        EXPECT_NEAR(ap.map_value, sum / static_cast<double>(n), 1e-12);

        const auto cm = confusion_matrix(p);
        const auto want = oracle::confusion_counts(p);
        for (std::size_t i = 0; i < cm.classes.size(); ++i) {
            double row = 0;
            std::size_t total = 0;
            for (std::size_t j = 0; j < cm.classes.size(); ++j) {
                const auto it = want.find(cm.classes[i]);
                std::size_t expect = 0;
                if (it != want.end() && it->second.count(cm.classes[j]))
                    expect = it->second.at(cm.classes[j]);
                EXPECT_EQ(cm.counts[i][j], expect);
                row += cm.rates[i][j];
                total += cm.counts[i][j];
            }
            if (total > 0) {
                EXPECT_NEAR(row, 1.0, 1e-9);
            }
        }
    }
}

TEST(Confusion, ZeroDiagonalAndTopConfused) {
    const auto p = PredictionSet::from_sparse({{"1", "a", {{"a", 1}, {"b", 0}}},
                                               {"2", "a", {{"a", 0}, {"b", 1}}},
                                               {"3", "a", {{"c", 2}}},
                                               {"4", "a", {{"c", 2}}}});
    const auto m = confusion_matrix(p, true);
    EXPECT_DOUBLE_EQ(m.rates[0][0], 0.0);
    const auto top = m.top_confused(2);
    EXPECT_EQ(top.at("a"), (std::vector<CategoryId>{"c", "b"}));
}

TEST(Wilson, FivePercentOfHundred) {
    const auto i = wilson_interval(5, 100);
    EXPECT_NEAR(i.lo, 0.021, 1e-3);
    EXPECT_NEAR(i.hi, 0.112, 1e-3);
    const auto [lo, hi] = oracle::wilson(5, 100);
    EXPECT_NEAR(i.lo, lo, 1e-12);
    EXPECT_NEAR(i.hi, hi, 1e-12);
    EXPECT_THROW(wilson_interval(1, 0), ValidationError);
}

TEST(NoiseAudit, SampleAndScore) {
    SearchManifest m;
    for (int i = 0; i < 1000; ++i)
        m.records.push_back({"i" + std::to_string(i), "", "c", i, std::nullopt});
    auto a = audit_sample(m, 1000, 3);
    EXPECT_EQ(std::set<std::string>(a.sample.begin(), a.sample.end()).size(), 1000u);
    std::map<std::string, NoiseLabel> labels;
    for (std::size_t k = 0; k < a.sample.size(); ++k)
        labels[a.sample[k]] = k < 342 ? NoiseLabel::cross_domain : NoiseLabel::in_domain;
    complete_audit(a, labels);
    EXPECT_NEAR(*a.fraction * 100, 34.2, 1e-9);
    EXPECT_THROW(audit_sample(m, 1001, 3), ValidationError);
    EXPECT_EQ(audit_sample(m, 10, 9).sample, audit_sample(m, 10, 9).sample);
    auto b = audit_sample(m, 5, 1);
    EXPECT_THROW(complete_audit(b, {}), ValidationError);
    const auto back = audit_from_json(to_json(a));
    EXPECT_EQ(back.sample, a.sample);
}

TEST(Taxonomy, ValidatesStructure) {
    EXPECT_THROW(Taxonomy({node("a", Rank::order, std::nullopt), node("a", Rank::family, "a")}), ValidationError);
    EXPECT_THROW(Taxonomy({node("a", Rank::order, std::nullopt), node("b", Rank::family, "zz")}), ValidationError);
    EXPECT_THROW(Taxonomy({node("a", Rank::order, std::nullopt), node("b", Rank::order, std::nullopt)}),
                 ValidationError);
    EXPECT_THROW(Taxonomy({node("r", Rank::order, std::nullopt), node("a", Rank::genus, "b"),
                           node("b", Rank::family, "a")}),
                 ValidationError);
    // A genus above a family does not broaden.
    EXPECT_THROW(Taxonomy({node("r", Rank::genus, std::nullopt), node("a", Rank::family, "r")}), ValidationError);
}

TEST(Taxonomy, LcaMatchesAncestorSetOracle) {
    Rng rng(52);
    for (int t = 0; t < 20; ++t) {
        const auto tree = random_tree(rng, 4 + uniform_below(rng, 20));
        const Taxonomy tax(tree.nodes);
        for (const auto& a : tree.leaves)
            for (const auto& b : tree.leaves)
                EXPECT_EQ(tax.lca(a, b), oracle::lca(tree.parent, a, b));
    }
}

TEST(LcaHistogram, MatchesOracleAndSumsToOne) {
    Rng rng(53);
    for (int t = 0; t < 20; ++t) {
        const auto tree = random_tree(rng, 3 + uniform_below(rng, 12));
        const Taxonomy tax(tree.nodes);
        const auto p = random_predictions(rng, tree.leaves, 1 + uniform_below(rng, 400));
        const auto h = lca_histogram(p, tax);
        std::map<std::string, std::size_t> want;
        std::size_t errors = 0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const auto& r = p.rows()[i];
            const auto pred = p.classes()[oracle::argmax(r.scores, p.classes())];
            if (pred == r.true_class)
                continue;
            ++errors;
            const auto l = oracle::lca(tree.parent, pred, r.true_class);
            ++want[rank_name(tax.node(l).rank)];
        }
        EXPECT_EQ(h.errors, errors);
        std::map<std::string, std::size_t> got;
        for (const auto& [k, v] : h.counts)
            if (v)
                got[k] = v;
        EXPECT_EQ(got, want);
        if (errors) {
            double s = 0;
            for (const auto& [k, f] : h.fractions)
                s += f;
            EXPECT_NEAR(s, 1.0, 1e-9);
        }
    }
}

TEST(LcaHistogram, UnmappedClassThrows) {
    const Taxonomy tax({node("r", Rank::genus, std::nullopt), node("a", Rank::species, "r")});
    const auto p = PredictionSet::from_sparse({{"1", "a", {{"a", 0}, {"zz", 1}}}});
    EXPECT_THROW(lca_histogram(p, tax), ValidationError);
}

TEST(Taxonomy, LoadFromTsvWithCategoryMap) {
    test_util::TempDir dir;
    test_util::write(dir / "t.tsv", "root\tAves\tclass\t-\ng1\tG\tgenus\troot\ns1\tS1\tspecies\tg1\ns2\tS2\tspecies\tg1\n");
    test_util::write(dir / "m.tsv", "cat1\ts1\ncat2\ts2\n");
    const auto tax = load_taxonomy(dir / "t.tsv", dir / "m.tsv");
    EXPECT_EQ(tax.leaf_of("cat1"), "s1");
    EXPECT_EQ(tax.lca(tax.leaf_of("cat1"), tax.leaf_of("cat2")), "g1");
    test_util::write(dir / "bad.tsv", "root\tAves\tclass\n");
    EXPECT_THROW(load_taxonomy(dir / "bad.tsv"), ParseError);
}

TEST(Worth, LinearCurve) {
    WorthCurve c{{{0, 0.5}, {10000, 0.9}}, 5000, 0.6};
    const auto w = worth_estimate(c);
    EXPECT_NEAR(w.crossing, 2500, 1e-9);
    EXPECT_NEAR(w.ratio, 2.0, 1e-12);
}

TEST(Worth, GroundTruthWorthRatio) {
    WorthCurve c{{{2000, 0.6}, {11822, 0.74}, {20000, 0.78}}, 5994, 0.74};
    EXPECT_NEAR(worth_estimate(c).ratio, 0.507, 1e-3);
}

TEST(Worth, NeverReachedAndBelowSpan) {
    const auto never = worth_estimate({{{1000, 0.5}, {2000, 0.6}}, 100, 0.7});
    EXPECT_TRUE(never.never_reached);
    EXPECT_DOUBLE_EQ(never.crossing, 2000);
    const auto below = worth_estimate({{{1000, 0.5}, {2000, 0.6}}, 100, 0.4});
    EXPECT_TRUE(below.below_span);
    EXPECT_THROW(worth_estimate({{{2000, 0.5}, {1000, 0.6}}, 100, 0.55}), ValidationError);
}
