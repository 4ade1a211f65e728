#pragma once

#include "curator/annotate.hpp"
#include "curator/catalog.hpp"
#include "curator/dedup.hpp"
#include "curator/xfilter.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace curator::pipeline {

enum class Stage { ingest, filter, purge, sample, annotate, export_, eval };

std::string stage_name(Stage s);
Stage parse_stage(const std::string& s);
// ingest, filter, purge, sample, annotate, export.
std::vector<Stage> dataset_stages();

// Validated run configuration. Relative paths resolve against base_dir.
struct RunConfig {
    std::uint64_t seed = 0;
    std::filesystem::path output_dir;
    std::map<std::string, std::filesystem::path> paths;

    std::size_t per_category_cap = 800;

    xfilter::IdentityMode::Kind identity = xfilter::IdentityMode::Kind::exact_id;
    std::size_t r_dup = 4;

    std::size_t width = 256;
    std::size_t chunks = 32;
    std::size_t threshold = 18;
    std::size_t max_radius = 18;

    std::optional<std::map<CategoryId, double>> prior; // empty: uniform over score classes
    std::optional<std::size_t> budget;
    std::optional<std::size_t> seed_size;
    double round_multiplier = 10.0;
    std::size_t rounds = 1;

    double golden_rate = 0.1;
    std::string host = "127.0.0.1";
    int port = 8080;
    std::optional<annotate::SimulationOptions> simulate;

    std::vector<std::string> metrics = {"top1", "map", "confusion", "lca"};

    // The raw document, kept for per-stage parameter digests.
    nlohmann::json raw;

    // Throws ValidationError for a missing seed, missing files, or
    // inconsistent settings (threshold above max radius, rounds outside 1..2, ...).
    static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);

    bool has(const std::string& key) const { return paths.count(key) > 0; }
    const std::filesystem::path& path(const std::string& key) const;
    std::size_t sampling_budget() const;
};

nlohmann::json load_config_document(const std::filesystem::path& path);
// Applies "a.b.c=value" where value is parsed as JSON, falling back to a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

struct RunArtifact {
    std::string stage;
    std::map<std::string, std::string> inputs;  // name -> sha256
    std::map<std::string, std::string> outputs; // file (relative to stage dir) -> sha256
    double wall_seconds = 0.0;
    std::string tool_version;
    bool skipped = false;
};

nlohmann::json to_json(const RunArtifact& a);
RunArtifact artifact_from_json(const nlohmann::json& j);

std::string tool_version();

// Runs the requested stages in dependency order. A stage whose recorded
// input digests match and whose outputs are intact is skipped unless
// `force`. Throws ValidationError naming the stage to run first when an
// upstream artifact is missing.
std::vector<RunArtifact> run(const RunConfig& config, const std::set<Stage>& stages, bool force = false);

struct ExportRow {
    std::string image_id;
    CategoryId category;
    std::set<std::string> sources; // "web", "annotated", "ground_truth"
    std::string url;

    friend bool operator==(const ExportRow&, const ExportRow&) = default;
};

// (filtered web images U accepted annotations) minus purged ids, then the
// optional ground-truth records. Rows are unique per (image_id, category)
// and sorted by (category, image_id).
std::vector<ExportRow> export_dataset(const SearchManifest& filtered,
                                      const std::vector<std::pair<std::string, CategoryId>>& accepted,
                                      const dedup::PurgeReport& purge,
                                      const SearchManifest* ground_truth = nullptr);

std::string export_jsonl(const std::vector<ExportRow>& rows);
std::vector<ExportRow> read_export(const std::filesystem::path& path);

struct Verification {
    std::size_t checked = 0;
    std::vector<std::string> unverified; // exported ids without a signature
    std::vector<dedup::PurgePair> violations;
};

// Re-checks that no exported image lies within `threshold` of a test signature.
Verification verify_export(const std::vector<ExportRow>& rows, const std::vector<dedup::BinarySignature>& train,
                           const std::vector<dedup::BinarySignature>& test, std::size_t threshold,
                           dedup::IndexOptions opts = {});

// Starts the annotation service over the annotate stage's tasks, rooted at
// <output>/serve/store. Blocks until the service stops. `on_ready` receives
// the bound port.
void serve(const RunConfig& config, const std::function<void(int)>& on_ready = {},
           const std::filesystem::path& static_dir = {});

} // namespace curator::pipeline
