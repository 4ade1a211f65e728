#include "curator/evalkit.hpp"

#include "curator/error.hpp"
#include "curator/random.hpp"
#include "curator/text.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace curator::evalkit {

using nlohmann::json;

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

PredictionSet PredictionSet::from_sparse(
    const std::vector<std::tuple<std::string, CategoryId, std::map<CategoryId, double>>>& rows) {
    PredictionSet p;
    std::set<CategoryId> universe;
    for (const auto& [id, truth, scores] : rows) {
        universe.insert(truth);
        for (const auto& [c, s] : scores) {
            if (!std::isfinite(s))
                throw ValidationError("non-finite score for image '" + id + "', class '" + c + "'");
            universe.insert(c);
        }
    }
    p.classes_.assign(universe.begin(), universe.end());
    for (std::size_t i = 0; i < p.classes_.size(); ++i)
        p.class_index_.emplace(p.classes_[i], i);
    for (const auto& [id, truth, scores] : rows) {
        Row r{id, truth, std::vector<double>(p.classes_.size(), kNegInf)};
        for (const auto& [c, s] : scores)
            r.scores[p.class_index_.at(c)] = s;
        p.rows_.push_back(std::move(r));
    }
    return p;
}

std::size_t PredictionSet::class_index(const CategoryId& c) const {
    const auto it = class_index_.find(c);
    if (it == class_index_.end())
        throw ValidationError("class '" + c + "' is not in the prediction universe");
    return it->second;
}

std::size_t PredictionSet::predicted_index(std::size_t row) const {
    const auto& s = rows_[row].scores;
    std::size_t best = 0;
    for (std::size_t c = 1; c < s.size(); ++c)
        if (s[c] > s[best])
            best = c;
    return best;
}

PredictionSet load_predictions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    std::vector<std::tuple<std::string, CategoryId, std::map<CategoryId, double>>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty())
            continue;
        try {
            const json j = json::parse(line);
            std::map<CategoryId, double> scores;
            const auto& s = j.at("scores");
            if (s.is_object()) {
                for (const auto& [c, v] : s.items())
                    scores[c] = v.get<double>();
            } else {
                const auto classes = j.at("classes").get<std::vector<std::string>>();
                const auto values = s.get<std::vector<double>>();
                if (classes.size() != values.size())
                    throw ParseError(path.string(), lineno, "'classes' and 'scores' differ in length");
                for (std::size_t k = 0; k < classes.size(); ++k)
                    if (!scores.emplace(classes[k], values[k]).second)
                        throw ParseError(path.string(), lineno, "class '" + classes[k] + "' listed twice");
            }
            rows.emplace_back(j.at("image_id").get<std::string>(), j.at("true_class").get<std::string>(),
                              std::move(scores));
        } catch (const json::exception& e) {
            throw ParseError(path.string(), lineno, e.what());
        }
    }
    try {
        return PredictionSet::from_sparse(rows);
    } catch (const ValidationError& e) {
        throw ParseError(path.string(), 0, e.what());
    }
}

void save_predictions(const std::filesystem::path& path, const PredictionSet& p) {
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw IoError("cannot write " + path.string());
    for (const auto& r : p.rows()) {
        json scores = json::object();
        for (std::size_t c = 0; c < r.scores.size(); ++c)
            if (std::isfinite(r.scores[c]))
                scores[p.classes()[c]] = r.scores[c];
        out << json{{"image_id", r.image_id}, {"true_class", r.true_class}, {"scores", scores}}.dump() << '\n';
    }
}

double top1_accuracy(const PredictionSet& p) {
    if (p.empty())
        throw ValidationError("top-1 accuracy of an empty prediction set");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
        hits += p.predicted(i) == p.rows()[i].true_class ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(p.size());
}

ApResult mean_ap(const PredictionSet& p) {
    ApResult out;
    std::vector<std::size_t> order(p.size());
    double sum = 0;
    for (std::size_t c = 0; c < p.classes().size(); ++c) {
        const CategoryId& cls = p.classes()[c];
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            const double sa = p.rows()[a].scores[c], sb = p.rows()[b].scores[c];
            if (sa != sb)
                return sa > sb;
            return p.rows()[a].image_id < p.rows()[b].image_id;
        });
        std::size_t hits = 0;
        double precision_sum = 0;
        for (std::size_t k = 0; k < order.size(); ++k) {
            if (p.rows()[order[k]].true_class != cls)
                continue;
            ++hits;
            precision_sum += static_cast<double>(hits) / static_cast<double>(k + 1);
        }
        if (hits == 0) {
            out.flagged.push_back(cls);
            continue;
        }
        const double ap = precision_sum / static_cast<double>(hits);
        out.per_class[cls] = ap;
        sum += ap;
    }
    if (!out.per_class.empty())
        out.map_value = sum / static_cast<double>(out.per_class.size());
    return out;
}

annotate::ConfusionMap ConfusionMatrix::top_confused(std::size_t k) const {
    annotate::ConfusionMap out;
    for (std::size_t t = 0; t < classes.size(); ++t) {
        std::vector<std::size_t> others;
        for (std::size_t c = 0; c < classes.size(); ++c)
            if (c != t)
                others.push_back(c);
        // classes is sorted, so a stable sort on rate leaves ties in id order.
        std::stable_sort(others.begin(), others.end(),
                         [&](std::size_t a, std::size_t b) { return counts[t][a] > counts[t][b]; });
        auto& v = out[classes[t]];
        for (std::size_t i = 0; i < std::min(k, others.size()); ++i)
            v.push_back(classes[others[i]]);
    }
    return out;
}

ConfusionMatrix confusion_matrix(const PredictionSet& p, bool zero_diagonal) {
    ConfusionMatrix m;
    m.classes = p.classes();
    const std::size_t k = m.classes.size();
    m.counts.assign(k, std::vector<std::size_t>(k, 0));
    m.rates.assign(k, std::vector<double>(k, 0.0));
    for (std::size_t i = 0; i < p.size(); ++i)
        ++m.counts[p.class_index(p.rows()[i].true_class)][p.predicted_index(i)];
    for (std::size_t t = 0; t < k; ++t) {
        const std::size_t total = std::accumulate(m.counts[t].begin(), m.counts[t].end(), std::size_t{0});
        if (total == 0)
            continue;
        for (std::size_t c = 0; c < k; ++c)
            m.rates[t][c] = static_cast<double>(m.counts[t][c]) / static_cast<double>(total);
        if (zero_diagonal)
            m.rates[t][t] = 0.0;
    }
    return m;
}

Interval wilson_interval(std::size_t successes, std::size_t n, double z) {
    if (n == 0)
        throw ValidationError("Wilson interval over zero trials");
    if (successes > n)
        throw ValidationError("more successes than trials");
    const double nn = static_cast<double>(n);
    const double phat = static_cast<double>(successes) / nn;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / nn;
    const double center = (phat + z2 / (2 * nn)) / denom;
    const double half = z * std::sqrt(phat * (1 - phat) / nn + z2 / (4 * nn * nn)) / denom;
    return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

NoiseAudit audit_sample(const SearchManifest& manifest, std::size_t n, std::uint64_t seed) {
    std::vector<std::string> pool;
    std::set<std::string> seen;
    for (const auto& r : manifest.records)
        if (seen.insert(r.image_id).second)
            pool.push_back(r.image_id);
    if (n > pool.size())
        throw ValidationError("audit sample of " + std::to_string(n) + " exceeds pool of " +
                              std::to_string(pool.size()) + " images");
    Rng rng(seed);
    NoiseAudit a;
    for (auto i : sample_without_replacement(pool.size(), n, rng))
        a.sample.push_back(pool[i]);
    return a;
}

void complete_audit(NoiseAudit& audit, const std::map<std::string, NoiseLabel>& judgments) {
    if (audit.sample.empty())
        throw ValidationError("cannot score an empty audit sample");
    std::size_t cross = 0;
    std::map<std::string, NoiseLabel> kept;
    for (const auto& id : audit.sample) {
        const auto it = judgments.find(id);
        if (it == judgments.end())
            throw ValidationError("audit image '" + id + "' has no judgment");
        kept.emplace(id, it->second);
        cross += it->second == NoiseLabel::cross_domain ? 1 : 0;
    }
    if (kept.size() != judgments.size())
        throw ValidationError("audit judgments include images outside the sample");
    audit.judgments = std::move(kept);
    audit.fraction = static_cast<double>(cross) / static_cast<double>(audit.sample.size());
    audit.interval95 = wilson_interval(cross, audit.sample.size());
}

std::string rank_name(Rank r, const std::string& other) {
    switch (r) {
    case Rank::species: return "species";
    case Rank::genus: return "genus";
    case Rank::family: return "family";
    case Rank::order: return "order";
    case Rank::class_: return "class";
    case Rank::other: break;
    }
    return other.empty() ? "other" : other;
}

std::pair<Rank, std::string> parse_rank(const std::string& s) {
    const std::string n = text::normalize_title(s);
    if (n == "species")
        return {Rank::species, n};
    if (n == "genus")
        return {Rank::genus, n};
    if (n == "family")
        return {Rank::family, n};
    if (n == "order")
        return {Rank::order, n};
    if (n == "class" || n == "class_")
        return {Rank::class_, "class"};
    return {Rank::other, n};
}

Taxonomy::Taxonomy(std::vector<Node> nodes, std::map<CategoryId, std::string> leaf_of)
    : nodes_(std::move(nodes)), leaf_of_(std::move(leaf_of)) {
    const std::size_t n = nodes_.size();
    for (std::size_t i = 0; i < n; ++i)
        if (!index_.emplace(nodes_[i].id, i).second)
            throw ValidationError("duplicate taxon id '" + nodes_[i].id + "'");
    parent_.assign(n, std::nullopt);
    has_child_.assign(n, false);
    std::size_t roots = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& p = nodes_[i].parent;
        if (!p) {
            ++roots;
            continue;
        }
        const auto it = index_.find(*p);
        if (it == index_.end())
            throw ValidationError("taxon '" + nodes_[i].id + "' has unknown parent '" + *p + "'");
        parent_[i] = it->second;
        has_child_[it->second] = true;
        const Rank child = nodes_[i].rank, parent = nodes_[it->second].rank;
        if (child != Rank::other && parent != Rank::other && !(static_cast<int>(parent) > static_cast<int>(child)))
            throw ValidationError("taxon '" + nodes_[i].id + "' (" + rank_name(child) + ") has parent '" + *p +
                                  "' of rank " + rank_name(parent) + ", which is not broader");
    }
    if (n > 0 && roots != 1)
        throw ValidationError("taxonomy must have exactly one root, found " + std::to_string(roots));

    // Depths; revisiting a node on the current path means a cycle.
    constexpr std::size_t unset = std::numeric_limits<std::size_t>::max();
    depth_.assign(n, unset);
    std::vector<bool> on_path(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> path;
        std::size_t cur = i;
        while (depth_[cur] == unset) {
            if (on_path[cur])
                throw ValidationError("taxonomy contains a cycle through '" + nodes_[cur].id + "'");
            on_path[cur] = true;
            path.push_back(cur);
            if (!parent_[cur]) {
                depth_[cur] = 0;
                break;
            }
            cur = *parent_[cur];
        }
        for (auto it = path.rbegin(); it != path.rend(); ++it) {
            if (depth_[*it] == unset)
                depth_[*it] = depth_[*parent_[*it]] + 1;
            on_path[*it] = false;
        }
    }
    for (const auto& [c, t] : leaf_of_)
        if (!index_.count(t))
            throw ValidationError("category '" + c + "' maps to unknown taxon '" + t + "'");
}

const Taxonomy::Node& Taxonomy::node(const std::string& id) const {
    const auto it = index_.find(id);
    if (it == index_.end())
        throw ValidationError("unknown taxon '" + id + "'");
    return nodes_[it->second];
}

std::string Taxonomy::leaf_of(const CategoryId& c) const {
    const auto it = leaf_of_.find(c);
    return it == leaf_of_.end() ? c : it->second;
}

bool Taxonomy::is_leaf(const std::string& id) const {
    const auto it = index_.find(id);
    return it != index_.end() && !has_child_[it->second];
}

std::vector<std::string> Taxonomy::ancestors(const std::string& id) const {
    std::vector<std::string> out;
    std::optional<std::size_t> cur = index_.at(node(id).id);
    while (cur) {
        out.push_back(nodes_[*cur].id);
        cur = parent_[*cur];
    }
    return out;
}

std::string Taxonomy::lca(const std::string& a, const std::string& b) const {
    node(a);
    node(b);
    std::size_t x = index_.at(a), y = index_.at(b);
    while (depth_[x] > depth_[y])
        x = *parent_[x];
    while (depth_[y] > depth_[x])
        y = *parent_[y];
    while (x != y) {
        x = *parent_[x];
        y = *parent_[y];
    }
    return nodes_[x].id;
}

Taxonomy load_taxonomy(const std::filesystem::path& path, const std::optional<std::filesystem::path>& category_map) {
    auto read_lines = [](const std::filesystem::path& p, std::size_t fields, auto&& fn) {
        std::ifstream in(p);
        if (!in)
            throw IoError("cannot open " + p.string());
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r')
                line.pop_back();
            if (text::trim(line).empty() || line[0] == '#')
                continue;
            std::vector<std::string> f;
            std::stringstream ss(line);
            std::string field;
            while (std::getline(ss, field, '\t'))
                f.push_back(text::trim(field));
            if (!line.empty() && line.back() == '\t')
                f.emplace_back();
            if (f.size() != fields)
                throw ParseError(p.string(), lineno, "expected " + std::to_string(fields) + " tab-separated fields");
            fn(f);
        }
    };
    std::vector<Taxonomy::Node> nodes;
    read_lines(path, 4, [&](const std::vector<std::string>& f) {
        auto [rank, label] = parse_rank(f[2]);
        Taxonomy::Node n{f[0], f[1], rank, label, std::nullopt};
        if (!f[3].empty() && f[3] != "-")
            n.parent = f[3];
        nodes.push_back(std::move(n));
    });
    std::map<CategoryId, std::string> leaf_of;
    if (category_map)
        read_lines(*category_map, 2, [&](const std::vector<std::string>& f) { leaf_of[f[0]] = f[1]; });
    return Taxonomy(std::move(nodes), std::move(leaf_of));
}

LcaHistogram lca_histogram(const PredictionSet& p, const Taxonomy& tax) {
    std::vector<std::string> leaf(p.classes().size());
    for (std::size_t c = 0; c < p.classes().size(); ++c) {
        leaf[c] = tax.leaf_of(p.classes()[c]);
        if (!tax.is_leaf(leaf[c]))
            throw ValidationError("class '" + p.classes()[c] + "' does not map to a taxonomy leaf");
    }
    LcaHistogram h;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const std::size_t pred = p.predicted_index(i);
        const std::size_t truth = p.class_index(p.rows()[i].true_class);
        if (pred == truth)
            continue;
        const auto& anc = tax.node(tax.lca(leaf[pred], leaf[truth]));
        ++h.counts[rank_name(anc.rank, anc.rank_label)];
        ++h.errors;
    }
    for (const auto& [rank, n] : h.counts)
        h.fractions[rank] = static_cast<double>(n) / static_cast<double>(h.errors);
    return h;
}

WorthEstimate worth_estimate(const WorthCurve& curve) {
    const auto& pts = curve.points;
    if (pts.size() < 2)
        throw ValidationError("worth curve needs at least two points");
    for (std::size_t k = 0; k < pts.size(); ++k) {
        if (!(pts[k].first >= 0) || !std::isfinite(pts[k].second))
            throw ValidationError("worth curve points need non-negative counts and finite accuracies");
        if (k > 0 && !(pts[k].first > pts[k - 1].first))
            throw ValidationError("worth curve counts must be strictly increasing");
    }
    if (!(curve.gt_size > 0))
        throw ValidationError("ground-truth size must be positive");

    WorthEstimate w;
    const double target = curve.gt_accuracy;
    if (pts.front().second >= target) {
        w.crossing = pts.front().first;
        w.below_span = pts.front().second > target;
    } else {
        bool found = false;
        for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
            const auto [x0, y0] = pts[k];
            const auto [x1, y1] = pts[k + 1];
            if (y1 >= target && y0 < target) {
                w.crossing = x0 + (target - y0) / (y1 - y0) * (x1 - x0);
                found = true;
                break;
            }
        }
        if (!found) {
            w.crossing = pts.back().first;
            w.never_reached = true;
        }
    }
    w.ratio = curve.gt_size / w.crossing;
    return w;
}

json to_json(const ApResult& r) {
    return {{"ap_definition", "non-interpolated precision at each positive hit; ties by image id"},
            {"per_class", r.per_class},
            {"map", r.map_value},
            {"flagged_no_positives", r.flagged}};
}

json to_json(const ConfusionMatrix& m) {
    return {{"classes", m.classes}, {"counts", m.counts}, {"rates", m.rates}};
}

json to_json(const NoiseAudit& a) {
    json j = {{"sample", a.sample}};
    json judg = json::object();
    for (const auto& [id, l] : a.judgments)
        judg[id] = l == NoiseLabel::cross_domain ? "cross_domain" : "in_domain";
    j["judgments"] = judg;
    if (a.fraction)
        j["fraction"] = *a.fraction;
    if (a.interval95)
        j["interval95"] = {a.interval95->lo, a.interval95->hi};
    return j;
}

NoiseAudit audit_from_json(const json& j) {
    NoiseAudit a;
    a.sample = j.at("sample").get<std::vector<std::string>>();
    if (j.contains("judgments"))
        for (const auto& [id, v] : j.at("judgments").items()) {
            const auto s = v.get<std::string>();
            if (s != "cross_domain" && s != "in_domain")
                throw ValidationError("audit label must be in_domain or cross_domain, got '" + s + "'");
            a.judgments[id] = s == "cross_domain" ? NoiseLabel::cross_domain : NoiseLabel::in_domain;
        }
    return a;
}

json to_json(const LcaHistogram& h) {
    return {{"errors", h.errors}, {"counts", h.counts}, {"fractions", h.fractions}};
}

json to_json(const WorthEstimate& w) {
    return {{"crossing", w.crossing}, {"ratio", w.ratio}, {"never_reached", w.never_reached}, {"below_span", w.below_span}};
}

json confusion_map_to_json(const annotate::ConfusionMap& m) {
    return json(m);
}

annotate::ConfusionMap confusion_map_from_json(const json& j) {
    return j.get<annotate::ConfusionMap>();
}

std::string histogram_csv(const LcaHistogram& h) {
    std::ostringstream out;
    out << "rank,errors,fraction\n";
    char buf[64];
    for (const auto& [rank, n] : h.counts) {
        std::snprintf(buf, sizeof buf, "%zu,%.6f\n", n, h.fractions.at(rank));
        out << rank << ',' << buf;
    }
    return out.str();
}

std::string curve_csv(const WorthCurve& c) {
    std::ostringstream out;
    out << "web_images,accuracy\n";
    char buf[64];
    for (const auto& [x, y] : c.points) {
        std::snprintf(buf, sizeof buf, "%.0f,%.6f\n", x, y);
        out << buf;
    }
    return out.str();
}

std::string confusion_table(const ConfusionMatrix& m) {
    std::ostringstream out;
    char buf[64];
    out << "true\\pred";
    for (const auto& c : m.classes)
        out << '\t' << c;
    out << '\n';
    for (std::size_t t = 0; t < m.classes.size(); ++t) {
        out << m.classes[t];
        for (double v : m.rates[t]) {
            std::snprintf(buf, sizeof buf, "\t%.3f", v);
            out << buf;
        }
        out << '\n';
    }
    return out.str();
}

} // namespace curator::evalkit
