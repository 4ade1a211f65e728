#pragma once

#include "curator/annotate.hpp"
#include "curator/catalog.hpp"

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <tuple>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace curator::evalkit {

// Classifier outputs over a fixed, sorted class universe. Classes missing
// from a row's sparse score map score -infinity.
class PredictionSet {
public:
    struct Row {
        std::string image_id;
        CategoryId true_class;
        std::vector<double> scores; // aligned with classes()
    };

    PredictionSet() = default;
    // Rows carry sparse maps; the universe is the union of all score keys and
    // true classes. Throws ValidationError on non-finite scores.
    static PredictionSet from_sparse(
        const std::vector<std::tuple<std::string, CategoryId, std::map<CategoryId, double>>>& rows);

    const std::vector<CategoryId>& classes() const { return classes_; }
    const std::vector<Row>& rows() const { return rows_; }
    std::size_t size() const { return rows_.size(); }
    bool empty() const { return rows_.empty(); }
    std::size_t class_index(const CategoryId& c) const;

    // Argmax with ties going to the smaller class id.
    std::size_t predicted_index(std::size_t row) const;
    const CategoryId& predicted(std::size_t row) const { return classes_[predicted_index(row)]; }

private:
    std::vector<CategoryId> classes_;
    std::map<CategoryId, std::size_t> class_index_;
    std::vector<Row> rows_;
};

// JSON lines; each row is either dense
//   {"image_id", "true_class", "classes": [...], "scores": [...]}
// or sparse
//   {"image_id", "true_class", "scores": {"<class>": s, ...}}
PredictionSet load_predictions(const std::filesystem::path& path);
void save_predictions(const std::filesystem::path& path, const PredictionSet& p);

// Throws ValidationError when empty.
double top1_accuracy(const PredictionSet& p);

struct ApResult {
    std::map<CategoryId, double> per_class;
    double map_value = 0.0;
    // Classes with no positive rows; excluded from the mean.
    std::vector<CategoryId> flagged;
};

// Non-interpolated AP: mean of precision at each positive hit, ranking rows
// by class score descending with ties by image id. mAP is the unweighted
// mean over classes that have at least one positive.
ApResult mean_ap(const PredictionSet& p);

struct ConfusionMatrix {
    std::vector<CategoryId> classes;
    std::vector<std::vector<std::size_t>> counts; // [true][predicted]
    std::vector<std::vector<double>> rates;       // row-normalized, optionally zero diagonal

    // Up to two most-confused classes per true class (by rate, ties by class
    // id), for instructional negatives.
    annotate::ConfusionMap top_confused(std::size_t k = 2) const;
};

ConfusionMatrix confusion_matrix(const PredictionSet& p, bool zero_diagonal = false);

struct Interval {
    double lo = 0, hi = 0;
};

// Wilson score interval; z defaults to the two-sided 95% quantile.
Interval wilson_interval(std::size_t successes, std::size_t n, double z = 1.959963984540054);

enum class NoiseLabel { in_domain, cross_domain };

struct NoiseAudit {
    std::vector<std::string> sample;
    std::map<std::string, NoiseLabel> judgments;
    std::optional<double> fraction;
    std::optional<Interval> interval95;
};

// Uniform sample of n distinct image ids without replacement, seeded.
// Throws ValidationError if n exceeds the number of distinct images.
NoiseAudit audit_sample(const SearchManifest& manifest, std::size_t n, std::uint64_t seed);

// Fills fraction and interval. Every sampled id must be judged.
void complete_audit(NoiseAudit& audit, const std::map<std::string, NoiseLabel>& judgments);

enum class Rank { species, genus, family, order, class_, other };

std::string rank_name(Rank r, const std::string& other = {});
std::pair<Rank, std::string> parse_rank(const std::string& s);

class Taxonomy {
public:
    struct Node {
        std::string id;
        std::string name;
        Rank rank = Rank::other;
        std::string rank_label; // verbatim for Rank::other
        std::optional<std::string> parent;
    };

    // Throws ValidationError on duplicate ids, dangling parents, cycles,
    // several roots, or known ranks that fail to broaden toward the root.
    explicit Taxonomy(std::vector<Node> nodes, std::map<CategoryId, std::string> leaf_of = {});

    const Node& node(const std::string& id) const;
    std::string leaf_of(const CategoryId& c) const; // identity when unmapped
    // Lowest common ancestor of two taxa.
    std::string lca(const std::string& a, const std::string& b) const;
    std::vector<std::string> ancestors(const std::string& id) const; // id first, root last
    bool is_leaf(const std::string& id) const;
    const std::vector<Node>& nodes() const { return nodes_; }

private:
    std::vector<Node> nodes_;
    std::map<std::string, std::size_t> index_;
    std::vector<std::size_t> depth_;
    std::vector<std::optional<std::size_t>> parent_;
    std::vector<bool> has_child_;
    std::map<CategoryId, std::string> leaf_of_;
};

// Tab-separated taxon_id, name, rank, parent_id ("" or "-" for the root).
// An optional category map file holds category_id, taxon_id pairs.
Taxonomy load_taxonomy(const std::filesystem::path& path, const std::optional<std::filesystem::path>& category_map = {});

struct LcaHistogram {
    std::map<std::string, std::size_t> counts; // rank label -> errors
    std::map<std::string, double> fractions;
    std::size_t errors = 0;
};

// Buckets each misclassified row by the rank of the LCA of its predicted and
// true leaves. Throws ValidationError if a class maps to no leaf.
LcaHistogram lca_histogram(const PredictionSet& p, const Taxonomy& tax);

struct WorthCurve {
    std::vector<std::pair<double, double>> points; // (web images, accuracy), strictly increasing x
    double gt_size = 0;
    double gt_accuracy = 0;
};

struct WorthEstimate {
    double crossing = 0;
    double ratio = 0;
    // Curve never reaches gt_accuracy: crossing is a lower bound, ratio an upper bound.
    bool never_reached = false;
    // gt_accuracy lies below the first point: crossing is an upper bound.
    bool below_span = false;
};

// Smallest x where the piecewise-linear curve reaches gt_accuracy;
// ratio = gt_size / crossing.
WorthEstimate worth_estimate(const WorthCurve& curve);

nlohmann::json to_json(const ApResult& r);
nlohmann::json to_json(const ConfusionMatrix& m);
nlohmann::json to_json(const NoiseAudit& a);
NoiseAudit audit_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LcaHistogram& h);
nlohmann::json to_json(const WorthEstimate& w);
nlohmann::json confusion_map_to_json(const annotate::ConfusionMap& m);
annotate::ConfusionMap confusion_map_from_json(const nlohmann::json& j);

std::string histogram_csv(const LcaHistogram& h);
std::string curve_csv(const WorthCurve& c);
std::string confusion_table(const ConfusionMatrix& m);

} // namespace curator::evalkit
