#include "curator/catalog.hpp"

#include "curator/error.hpp"
#include "curator/text.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace curator {

using nlohmann::json;

Domain Domain::parse(std::string_view name) {
    const std::string n = text::normalize_title(name);
    if (n.empty())
        throw ValidationError("empty domain name");
    if (n == "bird" || n == "birds")
        return {Kind::bird, {}};
    if (n == "butterfly" || n == "butterflies")
        return {Kind::butterfly, {}};
    if (n == "aircraft" || n == "airplane" || n == "airplanes")
        return {Kind::aircraft, {}};
    if (n == "dog" || n == "dogs")
        return {Kind::dog, {}};
    if (n == "other")
        return {Kind::other, {}};
    return {Kind::other, n};
}

std::string Domain::name() const {
    switch (kind) {
    case Kind::bird: return "bird";
    case Kind::butterfly: return "butterfly";
    case Kind::aircraft: return "aircraft";
    case Kind::dog: return "dog";
    case Kind::other: break;
    }
    return other_name.empty() ? "other" : other_name;
}

void CategoryList::add(Category c) {
    if (c.id.empty())
        throw ValidationError("category id must be non-empty");
    if (c.display_name.empty())
        throw ValidationError("category '" + c.id + "' has an empty display name");
    if (index_.count(c.id))
        throw ValidationError("duplicate category id '" + c.id + "'");
    index_.emplace(c.id, categories_.size());
    categories_.push_back(std::move(c));
}

const Category* CategoryList::find(const CategoryId& id) const {
    const auto it = index_.find(id);
    return it == index_.end() ? nullptr : &categories_[it->second];
}

const Category& CategoryList::at(const CategoryId& id) const {
    if (const auto* c = find(id))
        return *c;
    throw NotFoundError("unknown category '" + id + "'");
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find('\t', start);
        out.push_back(line.substr(start, pos - start));
        if (pos == std::string::npos)
            break;
        start = pos + 1;
    }
    return out;
}

std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r')
        s.pop_back();
    return s;
}

bool blank_or_comment(const std::string& line) {
    const auto p = line.find_first_not_of(" \t");
    return p == std::string::npos || line[p] == '#';
}

std::int64_t parse_rank(const std::string& s, const std::string& source, std::size_t line) {
    std::int64_t v = 0;
    const auto t = text::trim(s);
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size())
        throw ParseError(source, line, "rank '" + s + "' is not an integer");
    if (v < 0)
        throw ParseError(source, line, "rank must be >= 0");
    return v;
}

} // namespace

CategoryList parse_categories(std::istream& in, const std::string& source) {
    CategoryList list;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = strip_cr(line);
        if (blank_or_comment(line))
            continue;
        const auto f = split_tabs(line);
        if (f.size() != 3)
            throw ParseError(source, lineno, "expected 3 tab-separated fields (id, display_name, domain)");
        try {
            list.add({text::trim(f[0]), text::trim(f[1]), Domain::parse(f[2])});
        } catch (const ValidationError& e) {
            throw ParseError(source, lineno, e.what());
        }
    }
    return list;
}

CategoryList load_categories(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    return parse_categories(in, path.string());
}

SearchManifest parse_manifest(std::istream& in, const LoadOptions& opts, const std::string& source) {
    SearchManifest m;
    std::optional<Domain> domain = opts.domain;
    std::set<std::pair<CategoryId, std::int64_t>> seen;
    std::vector<std::size_t> record_lines;

    auto parse_domain = [&](std::string_view name, std::size_t lineno) {
        try {
            return Domain::parse(name);
        } catch (const ValidationError& e) {
            throw ParseError(source, lineno, e.what());
        }
    };
    auto check_domain = [&](const Domain& d, std::size_t lineno) {
        if (!domain)
            domain = d;
        else if (!(*domain == d))
            throw ParseError(source, lineno,
                             "domain mismatch: '" + d.name() + "' in a '" + domain->name() + "' manifest");
    };

    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = strip_cr(line);
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos)
            continue;

        ImageRecord r;
        std::optional<Domain> record_domain;
        if (line[first] == '{') {
            json j;
            try {
                j = json::parse(line);
            } catch (const json::parse_error& e) {
                throw ParseError(source, lineno, std::string("invalid JSON: ") + e.what());
            }
            if (!j.is_object())
                throw ParseError(source, lineno, "expected a JSON object");
            if (!j.contains("image_id")) {
                if (!j.contains("domain"))
                    throw ParseError(source, lineno, "record is missing 'image_id'");
                check_domain(parse_domain(j.at("domain").get<std::string>(), lineno), lineno);
                if (j.contains("fetched_at"))
                    m.fetched_at = j.at("fetched_at").get<std::string>();
                continue;
            }
            try {
                r.image_id = j.at("image_id").get<std::string>();
                r.url = j.value("url", std::string());
                r.category = j.at("category_id").get<std::string>();
                const auto& rank = j.at("rank");
                if (!rank.is_number_integer())
                    throw ParseError(source, lineno, "rank must be an integer");
                r.rank = rank.get<std::int64_t>();
                if (j.contains("title") && !j.at("title").is_null())
                    r.title = j.at("title").get<std::string>();
                if (j.contains("domain"))
                    record_domain = parse_domain(j.at("domain").get<std::string>(), lineno);
            } catch (const json::exception& e) {
                throw ParseError(source, lineno, std::string("bad record: ") + e.what());
            }
            if (r.rank < 0)
                throw ParseError(source, lineno, "rank must be >= 0");
        } else if (line[first] == '#') {
            const auto body = text::trim(std::string_view(line).substr(first + 1));
            const auto eq = body.find('=');
            if (eq != std::string::npos) {
                const auto key = text::trim(std::string_view(body).substr(0, eq));
                const auto val = text::trim(std::string_view(body).substr(eq + 1));
                if (key == "domain")
                    check_domain(parse_domain(val, lineno), lineno);
                else if (key == "fetched_at")
                    m.fetched_at = val;
            }
            continue;
        } else {
            const auto f = split_tabs(line);
            if (f.size() < 4 || f.size() > 5)
                throw ParseError(source, lineno, "expected 4 or 5 tab-separated fields");
            r.image_id = text::trim(f[0]);
            r.url = text::trim(f[1]);
            r.category = text::trim(f[2]);
            r.rank = parse_rank(f[3], source, lineno);
            if (f.size() == 5)
                r.title = f[4];
        }

        if (r.image_id.empty())
            throw ParseError(source, lineno, "image_id must be non-empty");
        if (r.category.empty())
            throw ParseError(source, lineno, "category_id must be non-empty");
        if (record_domain)
            check_domain(*record_domain, lineno);
        if (opts.categories) {
            const Category* c = opts.categories->find(r.category);
            if (!c)
                throw ParseError(source, lineno, "unknown category '" + r.category + "'");
            check_domain(c->domain, lineno);
        }
        if (!seen.emplace(r.category, r.rank).second)
            throw ParseError(source, lineno,
                             "duplicate (category, rank) = (" + r.category + ", " + std::to_string(r.rank) + ")");
        m.records.push_back(std::move(r));
        record_lines.push_back(lineno);
    }
    m.domain = domain.value_or(Domain{});

    if (opts.per_category_cap > 0) {
        std::unordered_map<CategoryId, std::vector<std::int64_t>> ranks;
        for (const auto& r : m.records)
            ranks[r.category].push_back(r.rank);
        std::unordered_map<CategoryId, std::int64_t> max_kept;
        for (auto& [cat, rs] : ranks) {
            if (rs.size() <= opts.per_category_cap)
                continue;
            std::nth_element(rs.begin(), rs.begin() + static_cast<std::ptrdiff_t>(opts.per_category_cap - 1), rs.end());
            max_kept[cat] = rs[opts.per_category_cap - 1];
        }
        if (!max_kept.empty()) {
            const auto before = m.records.size();
            std::erase_if(m.records, [&](const ImageRecord& r) {
                const auto it = max_kept.find(r.category);
                return it != max_kept.end() && r.rank > it->second;
            });
            m.dropped_over_cap = before - m.records.size();
        }
    }
    return m;
}

SearchManifest load_manifest(const std::filesystem::path& path, const LoadOptions& opts) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    return parse_manifest(in, opts, path.string());
}

json to_json(const ImageRecord& r) {
    json j = {{"image_id", r.image_id}, {"url", r.url}, {"category_id", r.category}, {"rank", r.rank}};
    if (r.title)
        j["title"] = *r.title;
    return j;
}

void write_manifest(std::ostream& out, const SearchManifest& m) {
    json header = {{"domain", m.domain.name()}};
    if (!m.fetched_at.empty())
        header["fetched_at"] = m.fetched_at;
    out << header.dump() << '\n';
    for (const auto& r : m.records)
        out << to_json(r).dump() << '\n';
}

void save_manifest(const std::filesystem::path& path, const SearchManifest& m) {
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write " + path.string());
    write_manifest(out, m);
}

CorpusStats corpus_stats(const SearchManifest& m) {
    CorpusStats s;
    for (const auto& r : m.records)
        ++s.per_category_counts[r.category];
    s.total_images = m.records.size();
    s.total_categories = s.per_category_counts.size();
    if (s.total_categories > 0)
        s.mean_images_per_category = static_cast<double>(s.total_images) / static_cast<double>(s.total_categories);
    return s;
}

json to_json(const CorpusStats& s) {
    return {{"per_category_counts", s.per_category_counts},
            {"mean_images_per_category", s.mean_images_per_category},
            {"total_images", s.total_images},
            {"total_categories", s.total_categories}};
}

FlickrEvalResult build_flickr_eval(const std::vector<ImageRecord>& candidates,
                                   const CategoryList& categories,
                                   std::size_t per_category_cap) {
    FlickrEvalResult out;
    std::unordered_map<CategoryId, std::string> names;
    for (const auto& c : categories.all())
        names.emplace(c.id, text::normalize_title(c.display_name));

    std::vector<std::size_t> matching;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto& r = candidates[i];
        if (!r.title) {
            ++out.missing_title;
            continue;
        }
        const auto it = names.find(r.category);
        if (it == names.end()) {
            ++out.unknown_category;
            continue;
        }
        if (it->second.empty() || text::normalize_title(*r.title).find(it->second) == std::string::npos) {
            ++out.title_mismatch;
            continue;
        }
        matching.push_back(i);
    }

    // Rank order within each category decides which survive the cap.
    std::vector<std::size_t> by_rank = matching;
    std::stable_sort(by_rank.begin(), by_rank.end(), [&](std::size_t a, std::size_t b) {
        const auto& ra = candidates[a];
        const auto& rb = candidates[b];
        if (ra.category != rb.category)
            return ra.category < rb.category;
        return ra.rank < rb.rank;
    });
    std::vector<bool> keep(candidates.size(), false);
    std::unordered_map<CategoryId, std::size_t> taken;
    for (std::size_t i : by_rank) {
        auto& n = taken[candidates[i].category];
        if (per_category_cap == 0 || n < per_category_cap) {
            keep[i] = true;
            ++n;
        } else {
            ++out.over_cap;
        }
    }
    for (std::size_t i : matching)
        if (keep[i])
            out.manifest.records.push_back(candidates[i]);
    if (!categories.empty())
        out.manifest.domain = categories.all().front().domain;
    return out;
}

} // namespace curator
