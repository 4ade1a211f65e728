#include "curator/sampler.hpp"

#include "curator/error.hpp"
#include "curator/text.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace curator::sampler {

using nlohmann::json;

ScoreMatrix::ScoreMatrix(std::vector<std::string> image_ids, std::vector<CategoryId> class_ids,
                         std::vector<double> scores)
    : image_ids_(std::move(image_ids)), class_ids_(std::move(class_ids)), scores_(std::move(scores)) {
    if (scores_.size() != image_ids_.size() * class_ids_.size())
        throw ValidationError("score matrix has " + std::to_string(scores_.size()) + " entries, expected " +
                              std::to_string(image_ids_.size()) + " x " + std::to_string(class_ids_.size()));
    for (std::size_t c = 0; c < class_ids_.size(); ++c)
        if (!class_index_.emplace(class_ids_[c], c).second)
            throw ValidationError("duplicate class id '" + class_ids_[c] + "' in score matrix");
    std::vector<std::string> sorted = image_ids_;
    std::sort(sorted.begin(), sorted.end());
    if (const auto dup = std::adjacent_find(sorted.begin(), sorted.end()); dup != sorted.end())
        throw ValidationError("duplicate image id '" + *dup + "' in score matrix");
    for (std::size_t i = 0; i < scores_.size(); ++i)
        if (!std::isfinite(scores_[i]))
            throw ValidationError("non-finite score for image '" + image_ids_[i / class_ids_.size()] +
                                  "', class '" + class_ids_[i % class_ids_.size()] + "'");
}

std::optional<std::size_t> ScoreMatrix::class_index(const CategoryId& c) const {
    const auto it = class_index_.find(c);
    if (it == class_index_.end())
        return std::nullopt;
    return it->second;
}

namespace {

constexpr char kScoreMagic[4] = {'C', 'S', 'C', 'R'};

template <class T>
void put_le(std::ostream& out, T v) {
    std::array<char, sizeof(T)> b{};
    for (std::size_t i = 0; i < sizeof(T); ++i)
        b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(b.data(), b.size());
}

template <class T>
T get_le(std::istream& in, const std::string& source) {
    std::array<unsigned char, sizeof(T)> b{};
    if (!in.read(reinterpret_cast<char*>(b.data()), b.size()))
        throw ParseError(source, 0, "truncated score file");
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        v |= static_cast<T>(b[i]) << (8 * i);
    return v;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ','))
        out.push_back(text::trim(field));
    if (!line.empty() && line.back() == ',')
        out.emplace_back();
    return out;
}

ScoreMatrix load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    std::string line;
    std::size_t lineno = 0;
    std::vector<std::string> header;
    std::vector<std::string> ids;
    std::vector<double> scores;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        auto f = split_csv(line);
        if (header.empty()) {
            if (f.size() < 2 || f[0] != "image_id")
                throw ParseError(path.string(), lineno, "expected header 'image_id,<class>,...'");
            header = std::move(f);
            continue;
        }
        if (f.size() != header.size())
            throw ParseError(path.string(), lineno, "expected " + std::to_string(header.size()) + " fields");
        ids.push_back(f[0]);
        for (std::size_t k = 1; k < f.size(); ++k) {
            char* end = nullptr;
            const double v = std::strtod(f[k].c_str(), &end);
            if (f[k].empty() || end != f[k].c_str() + f[k].size())
                throw ParseError(path.string(), lineno, "score '" + f[k] + "' is not a number");
            if (!std::isfinite(v))
                throw ParseError(path.string(), lineno, "non-finite score");
            scores.push_back(v);
        }
    }
    return {std::move(ids), std::vector<CategoryId>(header.begin() + 1, header.end()), std::move(scores)};
}

} // namespace

ScoreMatrix load_scores(const std::filesystem::path& path) {
    if (path.extension() == ".csv")
        return load_csv(path);
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    const std::string source = path.string();
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kScoreMagic, 4) != 0)
        throw ParseError(source, 0, "not a score file (bad magic)");
    if (get_le<std::uint32_t>(in, source) != 1)
        throw ParseError(source, 0, "unsupported score file version");
    const auto rows = get_le<std::uint64_t>(in, source);
    const auto cols = get_le<std::uint32_t>(in, source);
    std::vector<CategoryId> classes;
    for (std::uint32_t c = 0; c < cols; ++c) {
        const auto len = get_le<std::uint32_t>(in, source);
        std::string id(len, '\0');
        if (!in.read(id.data(), len))
            throw ParseError(source, 0, "truncated class id");
        classes.push_back(std::move(id));
    }
    std::vector<double> scores;
    scores.reserve(rows * cols);
    for (std::uint64_t i = 0; i < rows * cols; ++i) {
        const auto bits = get_le<std::uint32_t>(in, source);
        const float v = std::bit_cast<float>(bits);
        if (!std::isfinite(v))
            throw ParseError(source, 0, "non-finite score at row " + std::to_string(i / cols));
        scores.push_back(v);
    }

    auto ids_path = path;
    ids_path += ".ids";
    std::ifstream ids_in(ids_path);
    if (!ids_in)
        throw IoError("missing image id sidecar " + ids_path.string());
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(ids_in, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (!line.empty())
            ids.push_back(line);
    }
    if (ids.size() != rows)
        throw ParseError(ids_path.string(), 0,
                         "sidecar lists " + std::to_string(ids.size()) + " ids for " + std::to_string(rows) + " rows");
    return {std::move(ids), std::move(classes), std::move(scores)};
}

void save_scores(const std::filesystem::path& path, const ScoreMatrix& m) {
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    if (path.extension() == ".csv") {
        std::ofstream out(path, std::ios::trunc);
        out << "image_id";
        for (const auto& c : m.class_ids())
            out << ',' << c;
        out << '\n';
        out.precision(9);
        for (std::size_t i = 0; i < m.rows(); ++i) {
            out << m.image_ids()[i];
            for (std::size_t c = 0; c < m.cols(); ++c)
                out << ',' << m.score(i, c);
            out << '\n';
        }
        return;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write " + path.string());
    out.write(kScoreMagic, 4);
    put_le<std::uint32_t>(out, 1);
    put_le<std::uint64_t>(out, m.rows());
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
    for (const auto& c : m.class_ids()) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.size()));
        out.write(c.data(), static_cast<std::streamsize>(c.size()));
    }
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t c = 0; c < m.cols(); ++c)
            put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(m.score(i, c))));
    auto ids_path = path;
    ids_path += ".ids";
    std::ofstream ids(ids_path, std::ios::trunc);
    for (const auto& id : m.image_ids())
        ids << id << '\n';
}

ClassPrior::ClassPrior(std::map<CategoryId, double> weights) : weights_(std::move(weights)) {
    double sum = 0;
    for (const auto& [c, w] : weights_) {
        if (!std::isfinite(w) || w < 0)
            throw ValidationError("prior weight for '" + c + "' must be finite and non-negative");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw ValidationError("prior weights sum to " + std::to_string(sum) + ", expected 1");
}

ClassPrior ClassPrior::uniform(const std::vector<CategoryId>& classes) {
    if (classes.empty())
        throw ValidationError("uniform prior over zero classes");
    std::map<CategoryId, double> w;
    for (const auto& c : classes)
        w[c] = 1.0;
    for (auto& [c, v] : w)
        v = 1.0 / static_cast<double>(w.size());
    return ClassPrior(std::move(w));
}

ClassPrior ClassPrior::proportional(const std::map<CategoryId, double>& counts) {
    double total = 0;
    for (const auto& [c, n] : counts) {
        if (!std::isfinite(n) || n < 0)
            throw ValidationError("class count for '" + c + "' must be finite and non-negative");
        total += n;
    }
    if (total <= 0)
        throw ValidationError("class counts sum to zero");
    std::map<CategoryId, double> w;
    for (const auto& [c, n] : counts)
        w[c] = n / total;
    // Push the rounding residue onto the largest weight so the sum check holds.
    double sum = 0;
    for (const auto& [c, v] : w)
        sum += v;
    auto largest = std::max_element(w.begin(), w.end(), [](auto& a, auto& b) { return a.second < b.second; });
    largest->second += 1.0 - sum;
    return ClassPrior(std::move(w));
}

SamplingBudget SamplingBudget::from_seed(std::size_t seed_size, double multiplier) {
    if (!std::isfinite(multiplier) || multiplier < 0)
        throw ValidationError("round multiplier must be finite and non-negative");
    return {static_cast<std::size_t>(std::llround(static_cast<double>(seed_size) * multiplier)), multiplier};
}

std::map<CategoryId, std::size_t> class_quotas(const ClassPrior& prior, std::size_t b) {
    struct Share {
        const CategoryId* id;
        std::size_t base;
        double frac;
    };
    std::vector<Share> shares;
    std::size_t assigned = 0;
    for (const auto& [c, w] : prior.weights()) {
        const double raw = static_cast<double>(b) * w;
        const double fl = std::floor(raw);
        shares.push_back({&c, static_cast<std::size_t>(fl), raw - fl});
        assigned += static_cast<std::size_t>(fl);
    }
    // Classes with the largest remainders round up until the total is b.
    std::vector<std::size_t> order(shares.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t c) { return shares[a].frac > shares[c].frac; });
    for (std::size_t k = 0; assigned < b && k < order.size(); ++k) {
        if (shares[order[k]].frac <= 0 && prior.weights().at(*shares[order[k]].id) <= 0)
            continue;
        ++shares[order[k]].base;
        ++assigned;
    }
    std::map<CategoryId, std::size_t> q;
    for (const auto& s : shares)
        q[*s.id] = s.base;
    return q;
}

const ClassSelection* SelectionResult::find(const CategoryId& c) const {
    for (const auto& s : per_class)
        if (s.class_id == c)
            return &s;
    return nullptr;
}

std::size_t SelectionResult::total() const {
    std::size_t n = 0;
    for (const auto& s : per_class)
        n += s.images.size();
    return n;
}

std::set<std::string> SelectionResult::selected_ids() const {
    std::set<std::string> ids;
    for (const auto& s : per_class)
        ids.insert(s.images.begin(), s.images.end());
    return ids;
}

SelectionResult select_confident(const ScoreMatrix& scores, const ClassPrior& prior, const SamplingBudget& budget,
                                 const std::set<std::string>& excluded, std::size_t round) {
    for (const auto& [c, w] : prior.weights())
        if (!scores.class_index(c))
            throw ValidationError("prior class '" + c + "' has no column in the score matrix");
    const auto quotas = class_quotas(prior, budget.b);

    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < scores.rows(); ++i)
        if (!excluded.count(scores.image_ids()[i]))
            pool.push_back(i);

    std::vector<std::pair<CategoryId, std::size_t>> order(quotas.begin(), quotas.end());
    std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.second > b.second; });

    std::vector<bool> taken(scores.rows(), false);
    std::size_t taken_count = 0;
    SelectionResult result;
    result.round = round;
    std::vector<std::size_t> cand;
    for (const auto& [cls, quota] : order) {
        ClassSelection sel{cls, quota, {}, 0};
        const std::size_t col = *scores.class_index(cls);
        if (quota > 0) {
            cand = pool;
            auto better = [&](std::size_t a, std::size_t b) {
                const double sa = scores.score(a, col), sb = scores.score(b, col);
                if (sa != sb)
                    return sa > sb;
                return scores.image_ids()[a] < scores.image_ids()[b];
            };
            // At most taken_count of the best candidates are unavailable.
            const std::size_t need = std::min(cand.size(), quota + taken_count);
            std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(need), cand.end(), better);
            for (std::size_t k = 0; k < need && sel.images.size() < quota; ++k) {
                if (taken[cand[k]])
                    continue;
                taken[cand[k]] = true;
                ++taken_count;
                sel.images.push_back(scores.image_ids()[cand[k]]);
            }
        }
        sel.shortfall = quota - sel.images.size();
        result.per_class.push_back(std::move(sel));
    }
    std::sort(result.per_class.begin(), result.per_class.end(),
              [](const ClassSelection& a, const ClassSelection& b) { return a.class_id < b.class_id; });
    return result;
}

SelectionResult select_uncertain(const ScoreMatrix& scores, std::size_t b, const std::set<std::string>& excluded,
                                 std::size_t round) {
    if (scores.cols() < 2)
        throw ValidationError("margin sampling needs at least two classes");
    struct Row {
        std::size_t index;
        double margin;
        std::size_t argmax;
    };
    std::vector<Row> rows;
    for (std::size_t i = 0; i < scores.rows(); ++i) {
        if (excluded.count(scores.image_ids()[i]))
            continue;
        std::size_t best = 0;
        for (std::size_t c = 1; c < scores.cols(); ++c)
            if (scores.score(i, c) > scores.score(i, best) ||
                (scores.score(i, c) == scores.score(i, best) && scores.class_ids()[c] < scores.class_ids()[best]))
                best = c;
        double second = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < scores.cols(); ++c)
            if (c != best)
                second = std::max(second, scores.score(i, c));
        rows.push_back({i, scores.score(i, best) - second, best});
    }
    std::sort(rows.begin(), rows.end(), [&](const Row& a, const Row& c) {
        if (a.margin != c.margin)
            return a.margin < c.margin;
        return scores.image_ids()[a.index] < scores.image_ids()[c.index];
    });
    rows.resize(std::min(rows.size(), b));

    std::map<CategoryId, ClassSelection> per;
    for (const auto& r : rows) {
        auto& sel = per[scores.class_ids()[r.argmax]];
        sel.class_id = scores.class_ids()[r.argmax];
        sel.images.push_back(scores.image_ids()[r.index]);
        sel.quota = sel.images.size();
    }
    SelectionResult result;
    result.round = round;
    for (auto& [c, s] : per)
        result.per_class.push_back(std::move(s));
    return result;
}

std::vector<SelectionResult> select_rounds(const ScoreMatrix& scores, const ClassPrior& prior,
                                           const SamplingBudget& budget, std::set<std::string> excluded,
                                           std::size_t rounds) {
    if (rounds < 1 || rounds > 2)
        throw ValidationError("rounds must be 1 or 2");
    std::vector<SelectionResult> out;
    for (std::size_t r = 0; r < rounds; ++r) {
        out.push_back(select_confident(scores, prior, budget, excluded, r));
        for (const auto& s : out.back().per_class)
            excluded.insert(s.images.begin(), s.images.end());
    }
    return out;
}

std::vector<YieldRow> yield_curve(const SelectionResult& selection,
                                  const std::map<std::string, std::optional<CategoryId>>& truth) {
    std::vector<YieldRow> rows;
    for (const auto& s : selection.per_class) {
        YieldRow row{s.class_id, s.images.size(), 0, std::nullopt};
        for (const auto& id : s.images) {
            const auto it = truth.find(id);
            if (it == truth.end())
                throw ValidationError("no ground truth for selected image '" + id + "'");
            if (it->second && *it->second == s.class_id)
                ++row.true_positives;
        }
        if (row.selected > 0)
            row.precision = static_cast<double>(row.true_positives) / static_cast<double>(row.selected);
        rows.push_back(std::move(row));
    }
    return rows;
}

json to_json(const SelectionResult& s) {
    json classes = json::array();
    for (const auto& c : s.per_class)
        classes.push_back(
            {{"class_id", c.class_id}, {"quota", c.quota}, {"images", c.images}, {"shortfall", c.shortfall}});
    return {{"round", s.round}, {"per_class", std::move(classes)}};
}

SelectionResult selection_from_json(const json& j) {
    SelectionResult s;
    s.round = j.at("round").get<std::size_t>();
    for (const auto& c : j.at("per_class"))
        s.per_class.push_back({c.at("class_id").get<std::string>(), c.at("quota").get<std::size_t>(),
                               c.at("images").get<std::vector<std::string>>(), c.value("shortfall", std::size_t{0})});
    return s;
}

json to_json(const std::vector<YieldRow>& rows) {
    json out = json::array();
    for (const auto& r : rows) {
        json row = {{"class_id", r.class_id}, {"selected", r.selected}, {"true_positives", r.true_positives}};
        row["precision"] = r.precision ? json(*r.precision) : json("n/a");
        out.push_back(std::move(row));
    }
    return out;
}

} // namespace curator::sampler
