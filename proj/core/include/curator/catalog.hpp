#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace curator {

// Fine-grained domain a category list belongs to. Unknown names are kept
// verbatim as Kind::other.
struct Domain {
    enum class Kind { bird, butterfly, aircraft, dog, other };

    Kind kind = Kind::other;
    std::string other_name;

    static Domain parse(std::string_view name);
    std::string name() const;

    friend bool operator==(const Domain& a, const Domain& b) { return a.name() == b.name(); }
};

using CategoryId = std::string;

struct Category {
    CategoryId id;
    std::string display_name;
    Domain domain;
};

// Category list keyed by id. Insertion order is preserved for output.
class CategoryList {
public:
    // Throws ValidationError on duplicate id or empty display name.
    void add(Category c);

    const Category* find(const CategoryId& id) const;
    const Category& at(const CategoryId& id) const;
    const std::vector<Category>& all() const { return categories_; }
    std::size_t size() const { return categories_.size(); }
    bool empty() const { return categories_.empty(); }

private:
    std::vector<Category> categories_;
    std::map<CategoryId, std::size_t> index_;
};

// Tab-separated: id, display_name, domain. Blank lines and '#' comments skipped.
CategoryList load_categories(const std::filesystem::path& path);
CategoryList parse_categories(std::istream& in, const std::string& source = "<categories>");

struct ImageRecord {
    std::string image_id;
    std::string url;
    CategoryId category;
    std::int64_t rank = 0;
    std::optional<std::string> title;

    friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct SearchManifest {
    Domain domain;
    std::vector<ImageRecord> records;
    std::string fetched_at; // UTC ISO-8601, may be empty
    // Records dropped on load because their category exceeded the cap.
    std::size_t dropped_over_cap = 0;
};

struct LoadOptions {
    // 0 disables the cap. Over-cap categories keep their lowest ranks.
    std::size_t per_category_cap = 800;
    // When set, every record's category must exist here with the manifest's domain.
    const CategoryList* categories = nullptr;
    // Domain to assume when the file carries no header.
    std::optional<Domain> domain;
};

// Accepts JSON-lines (canonical) or tab-separated records; see docs/formats.md.
// Throws ParseError with the offending line on malformed input, duplicate
// (category, rank) pairs, or domain mismatch.
SearchManifest load_manifest(const std::filesystem::path& path, const LoadOptions& opts = {});
SearchManifest parse_manifest(std::istream& in, const LoadOptions& opts = {},
                              const std::string& source = "<manifest>");

// Canonical JSON-lines: one header line, then one record per line.
void write_manifest(std::ostream& out, const SearchManifest& m);
void save_manifest(const std::filesystem::path& path, const SearchManifest& m);

struct CorpusStats {
    std::map<CategoryId, std::size_t> per_category_counts;
    double mean_images_per_category = 0.0;
    std::size_t total_images = 0;
    std::size_t total_categories = 0;
};

CorpusStats corpus_stats(const SearchManifest& m);

struct FlickrEvalResult {
    SearchManifest manifest;
    std::size_t missing_title = 0;
    std::size_t unknown_category = 0;
    std::size_t title_mismatch = 0;
    std::size_t over_cap = 0;
};

// Keeps candidates whose normalized title contains the category's normalized
// display name, at most per_category_cap per category taking the lowest
// ranks first. Output preserves input order.
FlickrEvalResult build_flickr_eval(const std::vector<ImageRecord>& candidates,
                                   const CategoryList& categories,
                                   std::size_t per_category_cap = 25);

nlohmann::json to_json(const ImageRecord& r);
nlohmann::json to_json(const CorpusStats& s);

} // namespace curator
