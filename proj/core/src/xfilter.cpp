#include "curator/xfilter.hpp"

#include "curator/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace curator::xfilter {

using nlohmann::json;

namespace {

class DisjointSets {
public:
    explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }

    std::size_t find(std::size_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }

    // Smaller root wins so the representative is order-independent.
    void unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a == b)
            return;
        if (b < a)
            std::swap(a, b);
        parent_[b] = a;
    }

private:
    std::vector<std::size_t> parent_;
};

// Maps each distinct image_id (sorted) to an identity class index.
std::vector<std::size_t> identity_classes(const std::vector<std::string>& ids, const IdentityMode& mode) {
    DisjointSets sets(ids.size());
    if (mode.kind == IdentityMode::Kind::signature) {
        if (!mode.signatures)
            throw ValidationError("signature identity mode requires signatures");
        std::vector<dedup::BinarySignature> present;
        std::vector<std::size_t> owner;
        for (const auto& s : *mode.signatures) {
            const auto it = std::lower_bound(ids.begin(), ids.end(), s.image_id());
            if (it == ids.end() || *it != s.image_id())
                continue;
            present.push_back(s);
            owner.push_back(static_cast<std::size_t>(it - ids.begin()));
        }
        if (!present.empty()) {
            dedup::IndexOptions opts;
            opts.max_radius = mode.radius;
            const dedup::DedupIndex index(present, opts);
            for (std::size_t i = 0; i < present.size(); ++i)
                for (auto [j, d] : index.query_indices(present[i].words(), mode.radius))
                    sets.unite(owner[i], owner[j]);
        }
    }
    std::vector<std::size_t> cls(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i)
        cls[i] = sets.find(i);
    return cls;
}

} // namespace

FilterReport filter_cross_category(const SearchManifest& manifest, const IdentityMode& identity,
                                   const CategoryList* categories) {
    if (categories) {
        for (const auto& r : manifest.records) {
            const Category* c = categories->find(r.category);
            if (!c)
                throw ValidationError("unknown category '" + r.category + "'");
            if (!(c->domain == manifest.domain))
                throw ValidationError("mixed-domain manifest: category '" + r.category + "' is " + c->domain.name() +
                                      ", manifest is " + manifest.domain.name());
        }
    }

    std::vector<std::string> ids;
    ids.reserve(manifest.records.size());
    for (const auto& r : manifest.records)
        ids.push_back(r.image_id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    auto id_index = [&](const std::string& id) {
        return static_cast<std::size_t>(std::lower_bound(ids.begin(), ids.end(), id) - ids.begin());
    };

    const auto cls = identity_classes(ids, identity);

    // First category seen per identity class, or a marker once a second appears.
    std::unordered_map<std::size_t, const CategoryId*> owner;
    std::vector<bool> multi(ids.size(), false);
    for (const auto& r : manifest.records) {
        const std::size_t c = cls[id_index(r.image_id)];
        auto [it, inserted] = owner.emplace(c, &r.category);
        if (!inserted && *it->second != r.category)
            multi[c] = true;
    }

    FilterReport rep;
    for (std::size_t i = 0; i < ids.size(); ++i)
        (multi[cls[i]] ? rep.removed : rep.retained).insert(ids[i]);

    std::map<CategoryId, std::set<std::size_t>> per_cat;
    for (const auto& r : manifest.records)
        per_cat[r.category].insert(id_index(r.image_id));
    for (const auto& [cat, members] : per_cat) {
        std::size_t kept = 0;
        for (auto i : members)
            kept += multi[cls[i]] ? 0 : 1;
        rep.per_category_retention[cat] = static_cast<double>(kept) / static_cast<double>(members.size());
    }
    if (!ids.empty())
        rep.overall_retention = static_cast<double>(rep.retained.size()) / static_cast<double>(ids.size());
    return rep;
}

SearchManifest apply_filter(const SearchManifest& manifest, const FilterReport& report) {
    SearchManifest out;
    out.domain = manifest.domain;
    out.fetched_at = manifest.fetched_at;
    for (const auto& r : manifest.records)
        if (report.retained.count(r.image_id))
            out.records.push_back(r);
    return out;
}

std::vector<RetentionRow> retention_curve(const std::vector<FilterReport>& reports,
                                          const std::vector<std::size_t>& category_counts) {
    if (reports.size() != category_counts.size())
        throw ValidationError("retention_curve: " + std::to_string(reports.size()) + " reports but " +
                              std::to_string(category_counts.size()) + " category counts");
    if (reports.empty())
        throw ValidationError("retention_curve: no reports");
    std::vector<RetentionRow> rows;
    for (std::size_t i = 0; i < reports.size(); ++i)
        rows.push_back({category_counts[i], reports[i].overall_retention});
    std::stable_sort(rows.begin(), rows.end(),
                     [](const RetentionRow& a, const RetentionRow& b) { return a.num_categories < b.num_categories; });
    return rows;
}

json to_json(const FilterReport& r) {
    return {{"retained", r.retained},
            {"removed", r.removed},
            {"per_category_retention", r.per_category_retention},
            {"overall_retention", r.overall_retention}};
}

FilterReport filter_report_from_json(const json& j) {
    FilterReport r;
    r.retained = j.at("retained").get<std::set<std::string>>();
    r.removed = j.at("removed").get<std::set<std::string>>();
    r.per_category_retention = j.at("per_category_retention").get<std::map<CategoryId, double>>();
    r.overall_retention = j.at("overall_retention").get<double>();
    return r;
}

std::string summary_table(const FilterReport& r) {
    std::ostringstream out;
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-32s %10s\n", "category", "retained");
    out << buf;
    for (const auto& [cat, frac] : r.per_category_retention) {
        std::snprintf(buf, sizeof buf, "%-32s %9.1f%%\n", cat.c_str(), 100.0 * frac);
        out << buf;
    }
    std::snprintf(buf, sizeof buf, "%-32s %9.1f%%  (%zu kept, %zu removed)\n", "overall", 100.0 * r.overall_retention,
                  r.retained.size(), r.removed.size());
    out << buf;
    return out.str();
}

} // namespace curator::xfilter
