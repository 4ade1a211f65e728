#include "curator/synth.hpp"

#include "curator/catalog.hpp"
#include "curator/dedup.hpp"
#include "curator/digest.hpp"
#include "curator/error.hpp"
#include "curator/evalkit.hpp"
#include "curator/random.hpp"
#include "curator/sampler.hpp"

#include <cstdio>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace curator::synth {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string class_id(std::size_t c) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "c%02zu", c);
    return buf;
}

std::string item_id(const char* prefix, std::size_t c, std::size_t k) {
    std::string s(prefix);
    char buf[64];
    std::snprintf(buf, sizeof buf, "-c%02zu-%03zu", c, k);
    return s + buf;
}

dedup::BinarySignature random_signature(std::string id, std::size_t width, Rng& rng) {
    std::vector<std::uint64_t> words(width / 64);
    for (auto& w : words)
        w = rng();
    return {std::move(id), std::move(words)};
}

dedup::BinarySignature near_copy(const dedup::BinarySignature& base, std::string id, std::size_t distance, Rng& rng) {
    dedup::BinarySignature s(std::move(id), std::vector<std::uint64_t>(base.words().begin(), base.words().end()));
    for (auto bit : sample_without_replacement(base.width(), distance, rng))
        s.flip_bit(bit);
    return s;
}

// Distances from a test image for the first few web images of each class.
// Threshold 18 purges the first four and keeps the rest.
constexpr std::size_t kWebNearDistances[] = {2, 4, 8, 18, 19, 30};
constexpr std::size_t kPoolNearDistances[] = {10, 40};

} // namespace

void write_corpus(const fs::path& dir, const SynthOptions& o) {
    if (o.classes < 4)
        throw ValidationError("synthetic corpus needs at least 4 classes");
    if (!dedup::valid_width(o.width))
        throw ValidationError("synthetic corpus width must be a power of two >= 64");
    if (o.web_per_class < std::size(kWebNearDistances) || o.pool_per_class < std::size(kPoolNearDistances) ||
        o.test_per_class == 0)
        throw ValidationError("synthetic corpus sizes are too small");
    fs::create_directories(dir);
    Rng rng(o.seed);
    const std::size_t n = o.classes;

    std::vector<CategoryId> classes;
    std::string cats = "# id\tdisplay_name\tdomain\n";
    for (std::size_t c = 0; c < n; ++c) {
        classes.push_back(class_id(c));
        char name[32];
        std::snprintf(name, sizeof name, "Bird %02zu", c);
        cats += classes[c] + "\t" + name + "\tbird\n";
    }
    write_file_atomic(dir / "categories.tsv", cats);

    // species -> genus (pairs) -> family -> order -> class
    std::string tax = "# taxon_id\tname\trank\tparent\nroot\tAves\tclass\t-\n";
    std::set<std::string> made;
    for (std::size_t c = 0; c < n; ++c) {
        const std::size_t g = c / 2, f = g / 2, ord = f / 2;
        const std::string gid = "g" + std::to_string(g), fid = "f" + std::to_string(f), oid = "o" + std::to_string(ord);
        if (made.insert(oid).second)
            tax += oid + "\tOrder " + std::to_string(ord) + "\torder\troot\n";
        if (made.insert(fid).second)
            tax += fid + "\tFamily " + std::to_string(f) + "\tfamily\t" + oid + "\n";
        if (made.insert(gid).second)
            tax += gid + "\tGenus " + std::to_string(g) + "\tgenus\t" + fid + "\n";
        tax += classes[c] + "\tSpecies " + std::to_string(c) + "\tspecies\t" + gid + "\n";
    }
    write_file_atomic(dir / "taxonomy.tsv", tax);

    // Test signatures.
    std::vector<dedup::BinarySignature> test;
    for (std::size_t c = 0; c < n; ++c)
        for (std::size_t k = 0; k < o.test_per_class; ++k)
            test.push_back(random_signature(item_id("test", c, k), o.width, rng));
    auto test_of = [&](std::size_t c, std::size_t k) -> const dedup::BinarySignature& {
        return test[c * o.test_per_class + k % o.test_per_class];
    };

    // Web manifest plus cross-category overlaps, and train signatures.
    SearchManifest m;
    m.domain = Domain::parse("bird");
    m.fetched_at = "2024-01-01T00:00:00Z";
    std::vector<dedup::BinarySignature> train;
    for (std::size_t c = 0; c < n; ++c) {
        for (std::size_t k = 0; k < o.web_per_class; ++k) {
            const std::string id = item_id("web", c, k);
            m.records.push_back({id, "https://images.example.org/" + id + ".jpg", classes[c],
                                 static_cast<std::int64_t>(k + 1), std::nullopt});
            if (k < std::size(kWebNearDistances))
                train.push_back(near_copy(test_of(c, k), id, kWebNearDistances[k], rng));
            else
                train.push_back(random_signature(id, o.width, rng));
        }
    }
    // Every tenth web image of class c is also returned for class c+1.
    for (std::size_t c = 0; c < n; ++c) {
        std::int64_t rank = static_cast<std::int64_t>(o.web_per_class);
        for (std::size_t k = 9; k < o.web_per_class; k += 10) {
            const std::string id = item_id("web", c, k);
            m.records.push_back({id, "https://images.example.org/" + id + ".jpg", classes[(c + 1) % n], ++rank,
                                 std::nullopt});
        }
    }
    save_manifest(dir / "manifest.jsonl", m);

    // Unlabeled pool: per class, true images plus a fifth as many noise images.
    std::vector<std::string> pool_ids;
    std::vector<double> scores;
    std::string truth = "# image_id\tclass_id\n";
    auto push_scores = [&](std::optional<std::size_t> true_class) {
        for (std::size_t c = 0; c < n; ++c) {
            double s = 0.6 * uniform_unit(rng);
            if (true_class && c == *true_class)
                s += 0.5 + 0.4 * uniform_unit(rng);
            scores.push_back(s);
        }
    };
    for (std::size_t c = 0; c < n; ++c) {
        for (std::size_t k = 0; k < o.pool_per_class; ++k) {
            const std::string id = item_id("pool", c, k);
            pool_ids.push_back(id);
            push_scores(c);
            truth += id + "\t" + classes[c] + "\n";
            if (k < std::size(kPoolNearDistances))
                train.push_back(near_copy(test_of(c, o.test_per_class - 1 - k), id, kPoolNearDistances[k], rng));
            else
                train.push_back(random_signature(id, o.width, rng));
        }
        for (std::size_t k = 0; k < o.pool_per_class / 5; ++k) {
            const std::string id = item_id("noise", c, k);
            pool_ids.push_back(id);
            push_scores(std::nullopt);
            truth += id + "\t-\n";
            train.push_back(random_signature(id, o.width, rng));
        }
    }
    sampler::save_scores(dir / "scores.bin", sampler::ScoreMatrix(pool_ids, classes, scores));
    write_file_atomic(dir / "truth.tsv", truth);

    // Ground-truth training set.
    SearchManifest gt;
    gt.domain = m.domain;
    for (std::size_t c = 0; c < n; ++c)
        for (std::size_t k = 0; k < 5; ++k) {
            const std::string id = item_id("gt", c, k);
            gt.records.push_back({id, "https://images.example.org/" + id + ".jpg", classes[c],
                                  static_cast<std::int64_t>(k + 1), std::nullopt});
            train.push_back(random_signature(id, o.width, rng));
        }
    save_manifest(dir / "ground_truth.jsonl", gt);

    dedup::save_signatures(dir / "train.sig", train);
    dedup::save_signatures(dir / "test.sig", test);

    std::string goldens, exemplars;
    for (std::size_t c = 0; c < n; ++c) {
        for (std::size_t k = 0; k < 4; ++k)
            goldens += json{{"class_id", classes[c]}, {"image_id", item_id("gold", c, k)}, {"answer", k < 2}}.dump() +
                       "\n";
        for (std::size_t k = 0; k < 6; ++k)
            exemplars += json{{"class_id", classes[c]}, {"image_id", item_id("ex", c, k)}}.dump() + "\n";
    }
    write_file_atomic(dir / "goldens.jsonl", goldens);
    write_file_atomic(dir / "exemplars.jsonl", exemplars);

    // Test predictions: mistakes lean toward the sibling species.
    std::vector<std::tuple<std::string, CategoryId, std::map<CategoryId, double>>> rows;
    for (std::size_t c = 0; c < n; ++c)
        for (std::size_t k = 0; k < o.test_per_class; ++k) {
            std::map<CategoryId, double> s;
            const std::size_t sibling = c ^ 1U;
            for (std::size_t d = 0; d < n; ++d) {
                double v = 0.5 * uniform_unit(rng);
                if (d == c)
                    v += 0.45;
                else if (d == sibling && sibling < n)
                    v += 0.35;
                s[classes[d]] = v;
            }
            rows.emplace_back(test_of(c, k).image_id(), classes[c], std::move(s));
        }
    const auto preds = evalkit::PredictionSet::from_sparse(rows);
    evalkit::save_predictions(dir / "predictions.jsonl", preds);
    write_file_atomic(dir / "confusion.json",
                      evalkit::confusion_map_to_json(evalkit::confusion_matrix(preds, true).top_confused(2)).dump(2) +
                          "\n");

    write_file_atomic(dir / "worth_curve.csv",
                      "web_images,accuracy\n2000,0.612\n6000,0.701\n11822,0.744\n20000,0.781\n40000,0.803\n");

    const json config = {
        {"seed", o.seed},
        {"output_dir", "out"},
        {"paths",
         {{"manifest", "manifest.jsonl"},
          {"categories", "categories.tsv"},
          {"train_signatures", "train.sig"},
          {"test_signatures", "test.sig"},
          {"scores", "scores.bin"},
          {"truth", "truth.tsv"},
          {"goldens", "goldens.jsonl"},
          {"exemplars", "exemplars.jsonl"},
          {"confusion", "confusion.json"},
          {"ground_truth", "ground_truth.jsonl"},
          {"predictions", "predictions.jsonl"},
          {"taxonomy", "taxonomy.tsv"},
          {"worth_curve", "worth_curve.csv"}}},
        {"ingest", {{"per_category_cap", 800}}},
        {"filter", {{"identity", "exact"}}},
        {"dedup", {{"width", o.width}, {"chunks", o.width / 16}, {"threshold", 18}}},
        {"sampler", {{"prior", "uniform"}, {"seed_size", n}, {"round_multiplier", 10}, {"rounds", 2}}},
        {"annotate", {{"golden_rate", 0.1}, {"simulate", {{"raters", 5}, {"error_rate", 0.1}}}}},
        {"eval", {{"metrics", {"top1", "map", "confusion", "lca", "worth"}}, {"gt_size", 5994}, {"gt_accuracy", 0.744}}}};
    write_file_atomic(dir / "config.json", config.dump(2) + "\n");
}

} // namespace curator::synth
