#pragma once

#include "curator/catalog.hpp"
#include "curator/dedup.hpp"

#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace curator::xfilter {

// How two records are judged to show "the same image".
struct IdentityMode {
    enum class Kind { exact_id, signature };

    Kind kind = Kind::exact_id;
    // Signature mode: records whose signatures are within `radius` are linked,
    // and linked records form one identity (transitively). Records without a
    // signature fall back to their image_id.
    const std::vector<dedup::BinarySignature>* signatures = nullptr;
    std::size_t radius = 4;

    static IdentityMode exact() { return {}; }
    static IdentityMode by_signature(const std::vector<dedup::BinarySignature>& sigs, std::size_t radius = 4) {
        return {Kind::signature, &sigs, radius};
    }
};

struct FilterReport {
    std::set<std::string> retained;
    std::set<std::string> removed;
    // Retained fraction of each category's distinct image ids.
    std::map<CategoryId, double> per_category_retention;
    double overall_retention = 1.0;
};

// Removes every image whose identity occurs under two or more distinct
// categories. With `categories`, a record whose category belongs to another
// domain is rejected with ValidationError.
FilterReport filter_cross_category(const SearchManifest& manifest,
                                   const IdentityMode& identity = IdentityMode::exact(),
                                   const CategoryList* categories = nullptr);

// Manifest restricted to the report's retained images, order preserved.
SearchManifest apply_filter(const SearchManifest& manifest, const FilterReport& report);

struct RetentionRow {
    std::size_t num_categories = 0;
    double retention = 0.0;

    friend bool operator==(const RetentionRow&, const RetentionRow&) = default;
};

// Pairs each report with its category count, sorted by count (stable).
std::vector<RetentionRow> retention_curve(const std::vector<FilterReport>& reports,
                                          const std::vector<std::size_t>& category_counts);

nlohmann::json to_json(const FilterReport& r);
FilterReport filter_report_from_json(const nlohmann::json& j);
std::string summary_table(const FilterReport& r);

} // namespace curator::xfilter
