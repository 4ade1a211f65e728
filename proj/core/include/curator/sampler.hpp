#pragma once

#include "curator/catalog.hpp"

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace curator::sampler {

// Dense classifier outputs for a pool of unlabeled images:
// score(i, c) is the class-c score of image i.
class ScoreMatrix {
public:
    ScoreMatrix() = default;
    // Throws ValidationError on non-finite scores, duplicate ids, or a size mismatch.
    ScoreMatrix(std::vector<std::string> image_ids, std::vector<CategoryId> class_ids, std::vector<double> scores);

    std::size_t rows() const { return image_ids_.size(); }
    std::size_t cols() const { return class_ids_.size(); }
    const std::vector<std::string>& image_ids() const { return image_ids_; }
    const std::vector<CategoryId>& class_ids() const { return class_ids_; }
    double score(std::size_t row, std::size_t col) const { return scores_[row * class_ids_.size() + col]; }
    std::optional<std::size_t> class_index(const CategoryId& c) const;

private:
    std::vector<std::string> image_ids_;
    std::vector<CategoryId> class_ids_;
    std::vector<double> scores_;
    std::map<CategoryId, std::size_t> class_index_;
};

// Binary: magic "CSCR", u32 LE version (1), u64 LE rows, u32 LE cols, then
// cols class ids (u32 LE length + bytes), then rows*cols f32 LE row-major.
// Image ids come from the sidecar "<path>.ids", one per line.
// ".csv" files: header "image_id,<class>,...", one row per image.
ScoreMatrix load_scores(const std::filesystem::path& path);
void save_scores(const std::filesystem::path& path, const ScoreMatrix& m);

class ClassPrior {
public:
    ClassPrior() = default;
    // Throws ValidationError if any weight is negative/non-finite or the sum is not 1 within 1e-9.
    explicit ClassPrior(std::map<CategoryId, double> weights);

    static ClassPrior uniform(const std::vector<CategoryId>& classes);
    // Normalizes non-negative counts (e.g. seed-set class frequencies).
    static ClassPrior proportional(const std::map<CategoryId, double>& counts);

    const std::map<CategoryId, double>& weights() const { return weights_; }

private:
    std::map<CategoryId, double> weights_;
};

struct SamplingBudget {
    std::size_t b = 0;
    double round_multiplier = 10.0;

    // b = round(seed_size * multiplier).
    static SamplingBudget from_seed(std::size_t seed_size, double multiplier = 10.0);
};

// round(b * P(c)) half-up, repaired to sum exactly to b by the largest
// fractional remainders (ties by class id). Equivalent to largest-remainder
// apportionment.
std::map<CategoryId, std::size_t> class_quotas(const ClassPrior& prior, std::size_t b);

struct ClassSelection {
    CategoryId class_id;
    std::size_t quota = 0;
    std::vector<std::string> images; // in selection order (score desc, id asc)
    std::size_t shortfall = 0;       // quota - images.size()
};

struct SelectionResult {
    std::size_t round = 0;
    std::vector<ClassSelection> per_class; // sorted by class id

    const ClassSelection* find(const CategoryId& c) const;
    std::size_t total() const;
    std::set<std::string> selected_ids() const;
};

// For each class, in descending quota order (ties by class id), takes the
// quota highest-scoring images that are neither excluded nor already taken
// by an earlier class. Shortfalls are reported, never fatal.
SelectionResult select_confident(const ScoreMatrix& scores, const ClassPrior& prior, const SamplingBudget& budget,
                                 const std::set<std::string>& excluded, std::size_t round = 0);

// Comparison policy: the b images with the smallest top-1 minus top-2 score
// margin (ties by image id), each attributed to its argmax class.
SelectionResult select_uncertain(const ScoreMatrix& scores, std::size_t b, const std::set<std::string>& excluded,
                                 std::size_t round = 0);

// Runs `rounds` selections over the same scores, excluding everything chosen
// in earlier rounds.
std::vector<SelectionResult> select_rounds(const ScoreMatrix& scores, const ClassPrior& prior,
                                           const SamplingBudget& budget, std::set<std::string> excluded,
                                           std::size_t rounds);

struct YieldRow {
    CategoryId class_id;
    std::size_t selected = 0;
    std::size_t true_positives = 0;
    std::optional<double> precision; // empty when nothing was selected
};

// truth maps image id to its real class, or nullopt for "none of the classes".
// Throws ValidationError when a selected id is missing from truth.
std::vector<YieldRow> yield_curve(const SelectionResult& selection,
                                  const std::map<std::string, std::optional<CategoryId>>& truth);

nlohmann::json to_json(const SelectionResult& s);
SelectionResult selection_from_json(const nlohmann::json& j);
nlohmann::json to_json(const std::vector<YieldRow>& rows);

} // namespace curator::sampler
