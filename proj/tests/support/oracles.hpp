#pragma once

// Slow, obviously-correct reference implementations used by the tests.
// None of these call into the library's algorithms.

#include "curator/catalog.hpp"
#include "curator/dedup.hpp"
#include "curator/evalkit.hpp"
#include "curator/random.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace oracle {

using curator::CategoryId;

inline std::size_t hamming(const curator::dedup::BinarySignature& a, const curator::dedup::BinarySignature& b) {
    std::size_t d = 0;
    for (std::size_t i = 0; i < a.width(); ++i)
        d += a.bit(i) != b.bit(i) ? 1 : 0;
    return d;
}

inline std::vector<curator::dedup::Match> linear_scan(const std::vector<curator::dedup::BinarySignature>& set,
                                                      const curator::dedup::BinarySignature& probe, std::size_t r) {
    std::vector<curator::dedup::Match> out;
    for (const auto& s : set) {
        const auto d = oracle::hamming(s, probe);
        if (d <= r)
            out.push_back({s.image_id(), d});
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        return std::tie(a.distance, a.image_id) < std::tie(b.distance, b.image_id);
    });
    return out;
}

inline curator::dedup::BinarySignature random_signature(std::string id, std::size_t width, curator::Rng& rng) {
    curator::dedup::BinarySignature s(std::move(id), width);
    for (std::size_t i = 0; i < width; ++i)
        s.set_bit(i, rng() & 1U);
    return s;
}

inline curator::dedup::BinarySignature flipped(const curator::dedup::BinarySignature& base, std::string id,
                                               std::size_t k, curator::Rng& rng) {
    curator::dedup::BinarySignature s(std::move(id),
                                      std::vector<std::uint64_t>(base.words().begin(), base.words().end()));
    std::set<std::size_t> bits;
    while (bits.size() < k)
        bits.insert(static_cast<std::size_t>(rng() % base.width()));
    for (auto b : bits)
        s.flip_bit(b);
    return s;
}

// Ids seen under exactly one category survive.
inline std::set<std::string> filter_survivors(const curator::SearchManifest& m) {
    std::map<std::string, std::set<CategoryId>> cats;
    for (const auto& r : m.records)
        cats[r.image_id].insert(r.category);
    std::set<std::string> out;
    for (const auto& [id, c] : cats)
        if (c.size() == 1)
            out.insert(id);
    return out;
}

// Largest-remainder apportionment with ties to the smaller class id.
inline std::map<CategoryId, std::size_t> quotas(const std::map<CategoryId, double>& w, std::size_t b) {
    std::map<CategoryId, std::size_t> q;
    std::vector<std::tuple<double, CategoryId>> rem;
    std::size_t total = 0;
    for (const auto& [c, p] : w) {
        const double x = p * static_cast<double>(b);
        q[c] = static_cast<std::size_t>(std::floor(x));
        total += q[c];
        if (p > 0)
            rem.emplace_back(x - std::floor(x), c);
    }
    std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& c) {
        if (std::get<0>(a) != std::get<0>(c))
            return std::get<0>(a) > std::get<0>(c);
        return std::get<1>(a) < std::get<1>(c);
    });
    for (std::size_t k = 0; total < b && k < rem.size(); ++k, ++total)
        ++q[std::get<1>(rem[k])];
    return q;
}

// Classes in (quota desc, id asc) order each take their top-quota remaining
// images by (score desc, image id asc).
inline std::map<CategoryId, std::vector<std::string>> top_k_selection(
    const std::vector<std::string>& ids, const std::vector<CategoryId>& classes,
    const std::vector<std::vector<double>>& scores, const std::map<CategoryId, std::size_t>& q,
    const std::set<std::string>& excluded) {
    std::vector<std::pair<std::size_t, CategoryId>> order;
    for (const auto& [c, n] : q)
        order.emplace_back(n, c);
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first)
            return a.first > b.first;
        return a.second < b.second;
    });
    std::set<std::string> taken = excluded;
    std::map<CategoryId, std::vector<std::string>> out;
    for (const auto& [n, c] : order) {
        const auto col = static_cast<std::size_t>(std::find(classes.begin(), classes.end(), c) - classes.begin());
        std::vector<std::pair<double, std::string>> rows;
        for (std::size_t i = 0; i < ids.size(); ++i)
            if (!taken.count(ids[i]))
                rows.emplace_back(scores[i][col], ids[i]);
        std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first)
                return a.first > b.first;
            return a.second < b.second;
        });
        auto& sel = out[c];
        for (std::size_t k = 0; k < n && k < rows.size(); ++k) {
            sel.push_back(rows[k].second);
            taken.insert(rows[k].second);
        }
    }
    return out;
}

inline std::size_t argmax(const std::vector<double>& s, const std::vector<CategoryId>& classes) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < s.size(); ++c)
        if (s[c] > s[best] || (s[c] == s[best] && classes[c] < classes[best]))
            best = c;
    return best;
}

inline double top1(const curator::evalkit::PredictionSet& p) {
    std::size_t hit = 0;
    for (const auto& r : p.rows())
        hit += p.classes()[argmax(r.scores, p.classes())] == r.true_class ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(p.size());
}

inline std::map<CategoryId, std::map<CategoryId, std::size_t>> confusion_counts(
    const curator::evalkit::PredictionSet& p) {
    std::map<CategoryId, std::map<CategoryId, std::size_t>> m;
    for (const auto& r : p.rows())
        ++m[r.true_class][p.classes()[argmax(r.scores, p.classes())]];
    return m;
}

// Precision at every positive in the (score desc, id asc) ranking.
inline std::optional<double> average_precision(const curator::evalkit::PredictionSet& p, std::size_t col) {
    std::vector<std::tuple<double, std::string, bool>> rank;
    for (const auto& r : p.rows())
        rank.emplace_back(-r.scores[col], r.image_id, r.true_class == p.classes()[col]);
    std::sort(rank.begin(), rank.end());
    double sum = 0;
    std::size_t pos = 0;
    for (std::size_t k = 0; k < rank.size(); ++k)
        if (std::get<2>(rank[k])) {
            ++pos;
            sum += static_cast<double>(pos) / static_cast<double>(k + 1);
        }
    if (pos == 0)
        return std::nullopt;
    return sum / static_cast<double>(pos);
}

// LCA by intersecting full ancestor sets, given a child -> parent map.
inline std::string lca(const std::map<std::string, std::string>& parent, const std::string& a, const std::string& b) {
    std::set<std::string> up;
    for (std::string x = a;; x = parent.at(x)) {
        up.insert(x);
        if (!parent.count(x))
            break;
    }
    for (std::string x = b;; x = parent.at(x)) {
        if (up.count(x))
            return x;
        if (!parent.count(x))
            break;
    }
    return {};
}

inline std::pair<double, double> wilson(double k, double n, double z = 1.959963984540054) {
    const double p = k / n;
    const double centre = (p + z * z / (2 * n)) / (1 + z * z / n);
    const double half = z / (1 + z * z / n) * std::sqrt(p * (1 - p) / n + z * z / (4 * n * n));
    return {centre - half, centre + half};
}

} // namespace oracle
